"""Log-domain Sinkhorn for discrete entropic OT against the reference ``mu x nu``.

The plan is parametrised as ``gamma_ij = mu_i nu_j exp((u_i + v_j - c_ij) / eps)``
and ``c_ij = +inf`` removes the entry from the kernel, which is how the
monotonicity constraint of the ray problems is imposed.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, TextIO

import numpy as np

from . import kernels
from .errors import InfeasibleSupport, NonConvergence
from .measures import CHUNK_ROWS, DiscreteMeasure, Plan, fmt, make_plan


@dataclass(frozen=True)
class SinkhornConfig:
    eps: float
    tol_marginal: float = 1e-9
    max_iter: int = 200_000
    eps_schedule: Optional[Sequence[float]] = None
    # looser target for the intermediate stages of an eps schedule
    stage_tol: float = 1e-6

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.eps_schedule is not None:
            sched = list(self.eps_schedule)
            if not sched or any(b >= a for a, b in zip(sched, sched[1:])):
                raise ValueError("eps_schedule must be strictly decreasing")
            if sched[-1] != self.eps:
                raise ValueError("eps_schedule must end at eps")
            object.__setattr__(self, "eps_schedule", tuple(sched))

    def schedule(self) -> tuple[float, ...]:
        return self.eps_schedule if self.eps_schedule is not None else (self.eps,)


@dataclass
class SinkhornResult:
    u: np.ndarray
    v: np.ndarray
    plan: Plan
    iters: int
    marginal_err: float
    objective: float
    eps: float
    converged: bool = True
    raw_objective: float = field(default=math.nan, repr=False)


def eps_scaling_schedule(eps: float, start: float, factor: float = 0.5) -> list[float]:
    """Geometric schedule ``start, start*factor, ...`` ending exactly at ``eps``."""
    sched = []
    e = start
    while e > eps * (1 + 1e-12):
        sched.append(e)
        e *= factor
    sched.append(eps)
    return sched


def _log(w: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(w)


def gibbs_plan(a, b, C, u, v, eps) -> np.ndarray:
    """Dense ``a_i b_j exp((u_i + v_j - C_ij) / eps)``; zero where ``C`` is infinite."""
    la, lb = _log(a), _log(b)
    out = np.empty(C.shape)
    for s in range(0, C.shape[0], CHUNK_ROWS):
        blk = C[s:s + CHUNK_ROWS]
        with np.errstate(invalid="ignore", over="ignore"):
            E = (la[s:s + CHUNK_ROWS, None] + lb[None, :]) + (u[s:s + CHUNK_ROWS, None] + v[None, :] - blk) / eps
        out[s:s + CHUNK_ROWS] = np.exp(np.where(np.isfinite(blk), E, -np.inf))
    return out


def _check_support(a, b, C):
    fin = np.isfinite(C)
    if np.any(np.isnan(C)) or np.any(C == -np.inf):
        raise ValueError("cost must be real or +inf")
    row_ok = (fin & (b[None, :] > 0)).any(axis=1)
    col_ok = (fin & (a[:, None] > 0)).any(axis=0)
    if np.any(~row_ok & (a > 0)) or np.any(~col_ok & (b > 0)):
        raise InfeasibleSupport("a row or column has no finite-cost entry")
    return fin


def round_to_marginals(P: np.ndarray, a: np.ndarray, b: np.ndarray, finite: Optional[np.ndarray] = None):
    """Project ``P`` onto ``Pi(a, b)``.

    Rows are scaled down to at most ``a``, then columns to at most ``b``, and
    the leftover mass is put back. Without forbidden entries the leftover is
    the rank-one term ``e_r e_c^T / |e_r|_1``. When ``finite`` marks forbidden
    entries, the leftover is instead put back multiplicatively,
    ``P_ij (alpha_i + beta_j)``, which keeps the support of ``P`` and so
    never touches a forbidden cell.

    Returns the rounded matrix and the row/column log-factors applied
    (exact for the scaling steps, first order for the correction).
    """
    P = np.array(P, dtype=float)
    rs = P.sum(axis=1)
    x = np.where(rs > a, a / np.where(rs > 0, rs, 1.0), 1.0)
    P *= x[:, None]
    cs = P.sum(axis=0)
    y = np.where(cs > b, b / np.where(cs > 0, cs, 1.0), 1.0)
    P *= y[None, :]
    er = np.maximum(a - P.sum(axis=1), 0.0)
    ec = np.maximum(b - P.sum(axis=0), 0.0)
    la, lb = np.log(x), np.log(y)
    mass = er.sum()
    if mass <= 0:
        return P, la, lb
    if finite is None or finite.all():
        P += np.outer(er, ec) / mass
        return P, la, lb
    alpha, beta = _multiplicative_correction(P, er, ec)
    P = P * (1.0 + alpha[:, None] + beta[None, :])
    if np.any(P < 0):
        raise FloatingPointError("support-preserving rounding produced negative mass")
    return P, la + np.log1p(alpha), lb + np.log1p(beta)


def _multiplicative_correction(P, er, ec):
    """Solve ``rowsum(P * (alpha + beta)) = er``, ``colsum(...) = ec``."""
    n, m = P.shape
    rs, cs = P.sum(axis=1), P.sum(axis=0)
    M = np.zeros((n + m, n + m))
    M[np.arange(n), np.arange(n)] = rs
    M[n + np.arange(m), n + np.arange(m)] = cs
    M[:n, n:] = P
    M[n:, :n] = P.T
    rhs = np.concatenate([er, ec])
    # one gauge degree of freedom per connected block; lstsq picks min norm
    sol, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    return sol[:n], sol[n:]


def solve(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    cost,
    cfg: SinkhornConfig,
    init: Optional[tuple[np.ndarray, np.ndarray]] = None,
    threads: Optional[int] = None,
    trace: Optional[TextIO] = None,
    trace_every: int = 10,
) -> SinkhornResult:
    """Entropic OT ``min <gamma, c> + eps H(gamma | mu x nu)`` over ``Pi(mu, nu)``.

    Parameters
    ----------
    mu, nu : DiscreteMeasure
        Marginals; only their weights are used.
    cost : ndarray, shape (n, m)
        Real entries or ``+inf``.
    cfg : SinkhornConfig
        Regularisation, tolerance and optional decreasing ``eps`` schedule
        used as a warm start.
    init : tuple of ndarray, optional
        Starting dual potentials ``(u, v)``.
    threads : int, optional
        OpenMP threads for the compiled kernels; defaults to ``$THREADS``.
    trace : file-like, optional
        Receives ``iteration,eps,marginal_err`` CSV rows.

    Returns
    -------
    SinkhornResult
        Duals before rounding, the plan rounded to exact marginals and the
        objective evaluated on the rounded plan.
    """
    a = np.asarray(mu.weights, dtype=float)
    b = np.asarray(nu.weights, dtype=float)
    C = np.ascontiguousarray(cost, dtype=float)
    n, m = C.shape
    finite = _check_support(a, b, C)
    CT = np.ascontiguousarray(C.T)
    la, lb = _log(a), _log(b)
    nthreads = kernels.default_threads() if threads is None else max(1, int(threads))

    if init is None:
        u, v = np.zeros(n), np.zeros(m)
    else:
        u, v = np.array(init[0], dtype=float), np.array(init[1], dtype=float)
    s = np.empty(n)
    t = np.empty(m)
    if trace is not None:
        trace.write("iteration,eps,marginal_err\n")

    total_iters = 0
    err = math.inf
    sched = cfg.schedule()
    for stage, eps in enumerate(sched):
        last = stage == len(sched) - 1
        tol = cfg.tol_marginal if last else max(cfg.tol_marginal, cfg.stage_tol)
        inv = 1.0 / eps
        it = 0
        # columns of the starting iterate are not exact, so measure both sides once
        kernels.lse_rows(CT, la + u * inv, inv, t, nthreads)
        col_err = float(np.abs(b * np.exp(v * inv + t) - b).sum()) if np.all(np.isfinite(v)) else math.inf
        while True:
            kernels.lse_rows(C, lb + v * inv, inv, s, nthreads)
            with np.errstate(over="ignore", invalid="ignore"):
                row_err = float(np.abs(a * np.exp(u * inv + s) - a).sum())
            err = row_err + col_err
            if not math.isfinite(err):
                err = math.inf
            if trace is not None and it % trace_every == 0:
                trace.write(f"{total_iters + it},{fmt(eps)},{fmt(err)}\n")
            if err <= tol or total_iters + it >= cfg.max_iter:
                break
            u = np.where(a > 0, -eps * s, 0.0)
            kernels.lse_rows(CT, la + u * inv, inv, t, nthreads)
            v = np.where(b > 0, -eps * t, 0.0)
            col_err = 0.0
            it += 1
        total_iters += it
        if total_iters >= cfg.max_iter:
            break

    eps = cfg.eps
    converged = err <= cfg.tol_marginal
    if err > 10 * cfg.tol_marginal:
        warnings.warn(
            f"Sinkhorn stopped after {total_iters} iterations with marginal error {err:.3e}",
            NonConvergence,
            stacklevel=2,
        )
    P = gibbs_plan(a, b, C, u, v, eps)
    raw_obj = _objective_dense(P, a, b, C, eps)
    P, _, _ = round_to_marginals(P, a, b, None if finite.all() else finite)
    plan = make_plan(mu, nu, P, tol_marginal=max(1e-10, 10 * err))
    obj = _objective_dense(plan.todense(), a, b, C, eps)
    return SinkhornResult(
        u=u, v=v, plan=plan, iters=total_iters, marginal_err=err, objective=obj,
        eps=eps, converged=converged, raw_objective=raw_obj,
    )


def _objective_dense(P, a, b, C, eps) -> float:
    parts = []
    with np.errstate(divide="ignore", invalid="ignore"):
        for s in range(0, P.shape[0], CHUNK_ROWS):
            blk = P[s:s + CHUNK_ROWS]
            pos = blk > 0
            ref = a[s:s + CHUNK_ROWS, None] * b[None, :]
            c = C[s:s + CHUNK_ROWS]
            parts.append(np.sum(blk[pos] * c[pos]) + eps * np.sum(blk[pos] * np.log(blk[pos] / ref[pos])))
    return float(np.sum(parts))


def eot_value(mu: DiscreteMeasure, nu: DiscreteMeasure, cost, eps: float, **kw) -> float:
    """``EOT_eps(mu, nu)`` for a discrete problem, from the rounded Sinkhorn plan."""
    cfg_kw = {k: kw.pop(k) for k in ("tol_marginal", "max_iter", "eps_schedule") if k in kw}
    return solve(mu, nu, cost, SinkhornConfig(eps=eps, **cfg_kw), **kw).objective
