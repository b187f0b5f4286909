"""Per-ray entropic problems and the entropic Monge plan.

On a product instance every transport ray is a line parallel to the axis,
the ray index measure is the transverse profile ``rho`` and every ray
carries the same conditional marginals ``f1`` and ``g1``. A single 1D
problem therefore determines the coupling on all rays.
"""

from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import (
    CoincidentAtoms,
    InvalidInstance,
    MonotoneInfeasible,
    NonConvergedInput,
)
from .instances import PiecewiseConstantDensity1D, ProductInstance, validate
from .measures import (
    DENSE_LIMIT,
    DiscreteMeasure,
    GridSpec,
    Plan,
    discretize_1d,
    discretize_box,
    fmt,
    rel_entropy,
    tensor_atoms,
)
from .sinkhorn import SinkhornConfig, eps_scaling_schedule, solve

RAY_TOL = 1e-12
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class RayFamily:
    instance: ProductInstance
    segment: tuple[float, float]
    lambda_measure: DiscreteMeasure
    per_ray_source: PiecewiseConstantDensity1D
    per_ray_target: PiecewiseConstantDensity1D
    grid: GridSpec


@dataclass(eq=False)
class RayEOTSolution:
    source_atoms: DiscreteMeasure
    target_atoms: DiscreteMeasure
    kappa: Plan
    objective: float
    constrained: bool
    phi: np.ndarray
    psi: np.ndarray
    monotone_mass_violation: float
    d: int
    h: float
    converged: bool = True
    iters: int = 0
    marginal_err: float = 0.0
    u: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None

    def to_csv(self) -> str:
        s = self.source_atoms.points[:, 0]
        t = self.target_atoms.points[:, 0]
        K = self.kappa.todense()
        buf = io.StringIO()
        buf.write("i,j,s,t,kappa,phi_i,psi_j\n")
        for i in range(len(s)):
            for j in range(len(t)):
                buf.write(",".join([str(i), str(j), fmt(s[i]), fmt(t[j]), fmt(K[i, j]),
                                    fmt(self.phi[i]), fmt(self.psi[j])]) + "\n")
        return buf.getvalue()


def disintegrate(inst: ProductInstance, g: GridSpec) -> RayFamily:
    """Split a product instance into its ray index measure and ray marginals."""
    if not validate(inst).ok:
        raise InvalidInstance("instance failed validation")
    lam = discretize_box(inst.rho, g.h_trans)
    segment = (inst.f1.support_min, inst.g1.support_max)
    return RayFamily(inst, segment, lam, inst.f1, inst.g1, g)


def _line(x) -> np.ndarray:
    if isinstance(x, DiscreteMeasure):
        return x.points[:, 0]
    return np.asarray(x, dtype=float).ravel()


def ray_cost(source_atoms, target_atoms, d: int, constrained: bool) -> np.ndarray:
    """``-(d-1)/2 log|s - t|``, and ``+inf`` on ``s >= t`` when constrained."""
    s = _line(source_atoms)
    t = _line(target_atoms)
    diff = t[None, :] - s[:, None]
    if np.any(diff == 0):
        raise CoincidentAtoms("a source atom coincides with a target atom")
    C = -0.5 * (d - 1) * np.log(np.abs(diff))
    if constrained:
        C[diff <= 0] = np.inf
    return C


def monotone_feasible(src: DiscreteMeasure, tgt: DiscreteMeasure, tol: float = 1e-12) -> bool:
    """Whether some coupling moves every atom strictly to the right.

    Hall's condition on the staircase support: the targets up to ``t`` must
    not outweigh the sources strictly left of ``t``.
    """
    s, a = _line(src), src.weights
    t, b = _line(tgt), tgt.weights
    order = np.argsort(t, kind="stable")
    t, b = t[order], b[order]
    src_left = np.array([a[s < tj].sum() for tj in t])
    return bool(np.all(np.cumsum(b) <= src_left + tol))


_RAY_CACHE: dict[str, "RayEOTSolution"] = {}


def _cache_key(src, tgt, d, constrained, tol, schedule) -> str:
    h = hashlib.sha256()
    for arr in (src.points, src.weights, tgt.points, tgt.weights):
        h.update(np.ascontiguousarray(arr).tobytes())
    h.update(repr((d, constrained, tol, schedule)).encode())
    return h.hexdigest()


def solve_ray(
    family: RayFamily,
    h: float,
    d: int,
    constrained: bool = True,
    tol_marginal: float = RAY_TOL,
    eps_schedule=None,
    threads: Optional[int] = None,
    use_cache: bool = True,
) -> RayEOTSolution:
    """Solve the (optionally monotone-constrained) ray problem on an ``h``-grid.

    The problem is ``min -(d-1)/2 <kappa, log|s-t|> + H(kappa | f~ x g~)``,
    i.e. entropic OT with unit regularisation. With ``constrained=True`` the
    cells ``s >= t`` get infinite cost and so carry no mass at all. All rays
    of a product instance share this one solution; solutions are cached on
    the discretized profiles.
    """
    src = discretize_1d(family.per_ray_source, h)
    tgt = discretize_1d(family.per_ray_target, h)
    return solve_ray_atoms(src, tgt, d, constrained, h=h, tol_marginal=tol_marginal,
                           eps_schedule=eps_schedule, threads=threads, use_cache=use_cache)


def solve_ray_atoms(
    src: DiscreteMeasure,
    tgt: DiscreteMeasure,
    d: int,
    constrained: bool = True,
    h: float = math.nan,
    tol_marginal: float = RAY_TOL,
    eps_schedule=None,
    threads: Optional[int] = None,
    use_cache: bool = True,
) -> RayEOTSolution:
    """Ray problem between given 1D atom sets; see :func:`solve_ray`."""
    if constrained and not monotone_feasible(src, tgt):
        raise MonotoneInfeasible("target mass outruns source mass; no monotone coupling")
    sched = None if eps_schedule is None else tuple(eps_schedule)
    key = _cache_key(src, tgt, d, constrained, tol_marginal, sched)
    if use_cache and key in _RAY_CACHE:
        return _RAY_CACHE[key]
    C = ray_cost(src, tgt, d, constrained)
    res = solve(src, tgt, C, SinkhornConfig(eps=1.0, tol_marginal=tol_marginal, eps_schedule=sched),
                threads=threads)
    kappa = res.plan
    s, t = _line(src), _line(tgt)
    K = kappa.todense()
    violation = float(np.sum(K[s[:, None] >= t[None, :]]))
    shift = float(np.max(res.u))
    sol = RayEOTSolution(
        source_atoms=src,
        target_atoms=tgt,
        kappa=kappa,
        objective=ray_objective(kappa, d),
        constrained=constrained,
        phi=np.exp(res.u - shift),
        psi=np.exp(res.v + shift),
        monotone_mass_violation=violation,
        d=d,
        h=h,
        converged=res.converged,
        iters=res.iters,
        marginal_err=res.marginal_err,
        u=res.u,
        v=res.v,
    )
    if use_cache:
        _RAY_CACHE[key] = sol
    return sol


def solve_ray_warm(family: RayFamily, h: float, d: int, constrained: bool = True, **kw) -> RayEOTSolution:
    """Same problem reached through a decreasing regularisation schedule 8, 4, 2, 1."""
    return solve_ray(family, h, d, constrained, eps_schedule=eps_scaling_schedule(1.0, 8.0), **kw)


def ray_solution_from_kappa(src: DiscreteMeasure, tgt: DiscreteMeasure, kappa, d: int,
                            h: float = math.nan) -> RayEOTSolution:
    """Wrap an arbitrary ray coupling (no duals) so the functionals can score it."""
    plan = kappa if isinstance(kappa, Plan) else Plan(src, tgt, kappa, tol_marginal=1e-10)
    s, t = _line(src), _line(tgt)
    K = plan.todense()
    nan_phi = np.full(len(src), np.nan)
    nan_psi = np.full(len(tgt), np.nan)
    return RayEOTSolution(src, tgt, plan, ray_objective(plan, d), False, nan_phi, nan_psi,
                          float(np.sum(K[s[:, None] >= t[None, :]])), d, h)


def product_ray_solution(family: RayFamily, h: float) -> RayEOTSolution:
    """The independent coupling ``f~ (x) g~`` on the ``h``-grid."""
    src = discretize_1d(family.per_ray_source, h)
    tgt = discretize_1d(family.per_ray_target, h)
    return ray_solution_from_kappa(src, tgt, np.outer(src.weights, tgt.weights), family.instance.d, h)


def ray_objective(kappa: Plan, d: int, two_pi: bool = False) -> float:
    """Ray objective ``-(d-1)/2 <kappa, log(c |s-t|)> + H(kappa | f~ x g~)``.

    ``c = 1`` by default; ``two_pi=True`` uses ``c = 2 pi``.
    """
    s = kappa.row.points[:, 0]
    t = kappa.col.points[:, 0]
    K = kappa.todense()
    pos = K > 0
    dist = np.abs(s[:, None] - t[None, :])[pos]
    logs = np.log(2.0 * math.pi * dist) if two_pi else np.log(dist)
    return float(-0.5 * (d - 1) * np.sum(K[pos] * logs) + rel_entropy(kappa))


@dataclass
class Factorization:
    phi: np.ndarray
    psi: np.ndarray
    max_residual: float
    max_cyclic_residual: float


def _log_ratio(sol: RayEOTSolution) -> tuple[np.ndarray, np.ndarray]:
    """``log(kappa_ij / (f_i g_j))`` and its support mask."""
    K = sol.kappa.todense()
    pos = K > 0
    L = np.full(K.shape, np.nan)
    ref = np.outer(sol.source_atoms.weights, sol.target_atoms.weights)
    L[pos] = np.log(K[pos] / ref[pos])
    return L, pos


def extract_factorization(sol: RayEOTSolution) -> Factorization:
    """Check ``kappa_ij = f_i g_j |s_i - t_j|^((d-1)/2) phi_i psi_j`` on the support.

    ``phi`` is normalised so that ``max log phi = 0``. The cyclic residual is
    the largest ``|L_ij + L_i'j' - L_ij' - L_i'j|`` over 2x2 minors fully
    inside the support, with ``L = log(kappa / (f g |s - t|^((d-1)/2)))``.
    """
    if not sol.converged:
        raise NonConvergedInput("ray solution did not reach its tolerance")
    L, pos = _log_ratio(sol)
    s = sol.source_atoms.points[:, 0]
    t = sol.target_atoms.points[:, 0]
    kern = 0.5 * (sol.d - 1) * np.log(np.abs(s[:, None] - t[None, :]))
    L = L - kern
    resid = L - np.log(sol.phi)[:, None] - np.log(sol.psi)[None, :]
    max_res = float(np.max(np.abs(resid[pos]))) if pos.any() else 0.0
    return Factorization(sol.phi, sol.psi, max_res, cyclic_residual(L, pos))


def cyclic_residual(L: np.ndarray, pos: np.ndarray) -> float:
    # for rows i, i' the minors over columns j, j' in both supports have
    # residual D_j - D_j' with D = L_i - L_i', so the worst one is the range of D
    worst = 0.0
    n = L.shape[0]
    for i in range(n - 1):
        common = pos[i][None, :] & pos[i + 1:]
        D = np.where(common, L[i][None, :] - L[i + 1:], np.nan)
        has = common.sum(axis=1) >= 2
        if has.any():
            rng = np.nanmax(D[has], axis=1) - np.nanmin(D[has], axis=1)
            worst = max(worst, float(rng.max()))
    return worst


def assemble_ray_plan(family: RayFamily, kappa: np.ndarray, src: DiscreteMeasure,
                      tgt: DiscreteMeasure) -> Plan:
    """``lambda (x) kappa``: block ``q`` of the full plan is ``lambda_q * kappa``."""
    lam = family.lambda_measure
    axis = family.instance.axis
    mu_h = tensor_atoms(lam, src, axis)
    nu_h = tensor_atoms(lam, tgt, axis)
    n, m = len(mu_h), len(nu_h)
    if n * m <= DENSE_LIMIT:
        W = np.zeros((n, m))
        ns, nt = len(src), len(tgt)
        for q, lq in enumerate(lam.weights):
            W[q * ns:(q + 1) * ns, q * nt:(q + 1) * nt] = lq * kappa
    else:
        W = sp.kron(sp.diags(lam.weights), sp.coo_matrix(kappa), format="coo")
    return Plan(mu_h, nu_h, W)


def assemble_monge_plan(family: RayFamily, sol: RayEOTSolution) -> Plan:
    """Entropic Monge plan ``gamma_0 = lambda (x) kappa_T`` on the tensor grid."""
    if not sol.constrained:
        raise ValueError("the entropic Monge plan needs the constrained ray solution")
    if not sol.converged:
        raise NonConvergedInput("ray solution did not reach its tolerance")
    return assemble_ray_plan(family, sol.kappa.todense(), sol.source_atoms, sol.target_atoms)


def assemble_product_plan(family: RayFamily, h: float) -> Plan:
    """``lambda (x) (f~ x g~)``: independent coupling on every ray."""
    src = discretize_1d(family.per_ray_source, h)
    tgt = discretize_1d(family.per_ray_target, h)
    return assemble_ray_plan(family, np.outer(src.weights, tgt.weights), src, tgt)


@dataclass
class BlockLipschitz:
    source_piece: int
    target_piece: int
    constant: float


def log_ratio_lipschitz(sol: RayEOTSolution, source_profile: Optional[PiecewiseConstantDensity1D] = None,
                        target_profile: Optional[PiecewiseConstantDensity1D] = None) -> list[BlockLipschitz]:
    """Finite-difference Lipschitz constant of ``log h~`` per piece block.

    ``h~_ij = kappa_ij / (f_i g_j)``; slopes are taken between neighbouring
    atoms of the same source piece (resp. target piece) and only blocks
    with full support are reported. Without the profiles, pieces are
    recovered from jumps wider than the grid step.
    """
    L, pos = _log_ratio(sol)
    s = sol.source_atoms.points[:, 0]
    t = sol.target_atoms.points[:, 0]
    src_piece = _piece_index(s, source_profile, sol.h)
    tgt_piece = _piece_index(t, target_profile, sol.h)
    out = []
    for p in np.unique(src_piece):
        for q in np.unique(tgt_piece):
            I = np.flatnonzero(src_piece == p)
            J = np.flatnonzero(tgt_piece == q)
            if not pos[np.ix_(I, J)].all():
                continue
            B = L[np.ix_(I, J)]
            slopes = [0.0]
            if len(I) > 1:
                slopes.append(np.max(np.abs(np.diff(B, axis=0)) / np.diff(s[I])[:, None]))
            if len(J) > 1:
                slopes.append(np.max(np.abs(np.diff(B, axis=1)) / np.diff(t[J])[None, :]))
            out.append(BlockLipschitz(int(p), int(q), float(max(slopes))))
    return out


def _piece_index(x: np.ndarray, profile: Optional[PiecewiseConstantDensity1D], h: float) -> np.ndarray:
    if profile is not None:
        los = np.array([lo for lo, _, _ in profile.pieces])
        return np.searchsorted(los, x, side="right") - 1
    # neighbouring atoms of one piece are at most h apart
    return np.concatenate([[0], np.cumsum(np.diff(x) > h * (1 + 1e-9))])
