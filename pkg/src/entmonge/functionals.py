"""OT/EOT values, the second-order coefficient ``S`` and the expansion fit."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import MarginalMismatch, SingularFit
from .instances import BoxDensity, PiecewiseConstantDensity1D, ProductInstance
from .measures import Plan, discretize_1d, euclidean, rel_entropy, transport_cost
from .rayeot import RayEOTSolution, ray_objective

IDENTITY_TOL = 1e-12


def density_entropy(rho: Union[BoxDensity, PiecewiseConstantDensity1D]) -> float:
    """``int rho log rho`` for a piecewise-constant density, in closed form.

    Each piece contributes ``mass * log(level)``.
    """
    if isinstance(rho, PiecewiseConstantDensity1D):
        terms = [lev * (hi - lo) * math.log(lev) for lo, hi, lev in rho.pieces]
    else:
        terms = [lev * float(np.prod(np.asarray(hi) - np.asarray(lo))) * math.log(lev)
                 for lo, hi, lev in rho.pieces]
    return math.fsum(terms)


@dataclass
class SFunctionalBreakdown:
    ray_term: float
    f_entropy: float
    g_entropy: float
    f_tilde_term: float
    g_tilde_term: float
    total: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _same_measure(a, b) -> bool:
    return (a.points.shape == b.points.shape
            and np.array_equal(a.points, b.points)
            and np.allclose(a.weights, b.weights, rtol=0, atol=1e-12))


def s_functional(inst: ProductInstance, ray_sol: RayEOTSolution) -> SFunctionalBreakdown:
    """Second-order coefficient of the plan built from the ray coupling ``kappa``.

    ``total = ray_term - H(f)/2 - H(g)/2 + H(f~)/2 + H(g~)/2`` where ``H`` is
    ``int p log p`` and the ray term uses ``log(2 pi |s - t|)``. All rays of a
    product instance carry the same ``kappa`` and ``f~ = f1``, ``g~ = g1``, so
    every term is exact except the ray term, which is summed over the atoms.

    Raises
    ------
    MarginalMismatch
        If the coupling's marginals are not ``f1``, ``g1`` discretized at the
        solution's grid step.
    """
    src = discretize_1d(inst.f1, ray_sol.h)
    tgt = discretize_1d(inst.g1, ray_sol.h)
    kappa = ray_sol.kappa
    if not (_same_measure(src, kappa.row) and _same_measure(tgt, kappa.col)):
        raise MarginalMismatch("ray coupling marginals differ from the instance profiles")
    if kappa.marginal_error() > 1e-10:
        raise MarginalMismatch("ray coupling does not have the stated marginals")
    ray_term = ray_objective(kappa, inst.d, two_pi=True)
    h_rho = density_entropy(inst.rho)
    h_f1 = density_entropy(inst.f1)
    h_g1 = density_entropy(inst.g1)
    f_ent = h_f1 + h_rho
    g_ent = h_g1 + h_rho
    total = ray_term - 0.5 * f_ent - 0.5 * g_ent + 0.5 * h_f1 + 0.5 * h_g1
    # product structure: the four entropy terms collapse to -H(rho)
    assert abs(total - (ray_term - h_rho)) <= IDENTITY_TOL * max(1.0, abs(total))
    return SFunctionalBreakdown(ray_term, f_ent, g_ent, h_f1, h_g1, total)


def c_eps(p: Plan, eps: float) -> float:
    """``C_eps(gamma) = int |x - y| dgamma + eps H(gamma | mu x nu)``."""
    cost = transport_cost(p, euclidean)
    if eps == 0:
        return cost
    return cost + eps * rel_entropy(p)


@dataclass
class ExpansionFit:
    b: float
    c: float
    residuals: list = field(default_factory=list)
    ot_reference: float = 0.0
    eps: list = field(default_factory=list)
    y: list = field(default_factory=list)

    def predict(self, eps) -> np.ndarray:
        eps = np.asarray(eps, dtype=float)
        return self.b * np.log(1.0 / eps) + self.c

    def to_dict(self) -> dict:
        return {
            "b": self.b,
            "c": self.c,
            "residuals": list(self.residuals),
            "ot_reference": self.ot_reference,
            "eps": list(self.eps),
            "y": list(self.y),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def expansion_fit(sweep: Sequence[tuple[float, float]], ot: float) -> ExpansionFit:
    """Least-squares fit of ``(EOT_eps - OT) / eps = b log(1/eps) + c``.

    Parameters
    ----------
    sweep : sequence of (eps, eot)
        At least three points with distinct positive ``eps``.
    ot : float
        Unregularised OT value, held fixed.

    Raises
    ------
    SingularFit
        If fewer than two distinct ``eps`` values make the design rank deficient,
        or fewer than three points are given.
    """
    pts = [(float(e), float(v)) for e, v in sweep]
    if len(pts) < 3:
        raise SingularFit(f"need at least 3 sweep points, got {len(pts)}")
    eps = np.array([e for e, _ in pts])
    if np.any(eps <= 0):
        raise ValueError("eps must be positive")
    if len(np.unique(eps)) < 2:
        raise SingularFit("all eps values coincide")
    eot = np.array([v for _, v in pts])
    y = (eot - ot) / eps
    A = np.column_stack([np.log(1.0 / eps), np.ones_like(eps)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    b, c = float(coef[0]), float(coef[1])
    resid = y - (b * A[:, 0] + c)
    return ExpansionFit(b, c, [float(r) for r in resid], float(ot),
                        [float(e) for e in eps], [float(v) for v in y])
