"""Marginal instances with parallel transport rays.

Every instance here has product densities ``f(x) = f1(x_axis) * rho(x_perp)``
and ``g(y) = g1(y_axis) * rho(y_perp)`` with disjoint longitudinal supports and
``F_f1 >= F_g1`` everywhere. Mass then moves only along lines parallel to the
axis, in the increasing direction, and ``u(x) = -x_axis`` is a Kantorovich
potential for the distance cost.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

from .errors import (
    ConfigError,
    EmptyDensity,
    InvalidDensity,
    InvalidDimension,
    InvalidInstance,
    OverlappingSupports,
)

MASS_TOL = 1e-12
DEFAULT_GAP_MIN = 0.5


@dataclass(frozen=True)
class PiecewiseConstantDensity1D:
    """Probability density on the line, constant on finitely many intervals.

    ``pieces`` holds ``(lo, hi, level)`` triples; they are stored sorted by
    ``lo``.
    """

    pieces: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        if len(self.pieces) == 0:
            raise EmptyDensity("density has no pieces")
        pieces = tuple(
            sorted((float(lo), float(hi), float(lev)) for lo, hi, lev in self.pieces)
        )
        for lo, hi, lev in pieces:
            if not lo < hi:
                raise InvalidDensity(f"empty interval [{lo}, {hi})")
            if not lev > 0:
                raise InvalidDensity(f"non-positive level {lev} on [{lo}, {hi})")
        for (_, hi0, _), (lo1, _, _) in zip(pieces, pieces[1:]):
            if lo1 < hi0:
                raise InvalidDensity("pieces overlap")
        object.__setattr__(self, "pieces", pieces)
        if abs(self.mass() - 1.0) > MASS_TOL:
            raise InvalidDensity(f"total mass {self.mass()!r} != 1")

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "PiecewiseConstantDensity1D":
        return cls(((lo, hi, 1.0 / (hi - lo)),))

    def mass(self) -> float:
        return math.fsum(lev * (hi - lo) for lo, hi, lev in self.pieces)

    def mean(self) -> float:
        return math.fsum(lev * (hi * hi - lo * lo) / 2.0 for lo, hi, lev in self.pieces)

    def cdf(self, t: float) -> float:
        return math.fsum(
            lev * (min(max(t, lo), hi) - lo) for lo, hi, lev in self.pieces
        )

    def breakpoints(self) -> list[float]:
        return sorted({x for lo, hi, _ in self.pieces for x in (lo, hi)})

    @property
    def support_min(self) -> float:
        return self.pieces[0][0]

    @property
    def support_max(self) -> float:
        return self.pieces[-1][1]

    def shifted(self, s: float) -> "PiecewiseConstantDensity1D":
        return PiecewiseConstantDensity1D(
            tuple((lo + s, hi + s, lev) for lo, hi, lev in self.pieces)
        )


def _boxes_overlap(a_lo, a_hi, b_lo, b_hi) -> bool:
    return all(max(al, bl) < min(ah, bh) for al, ah, bl, bh in zip(a_lo, a_hi, b_lo, b_hi))


@dataclass(frozen=True)
class BoxDensity:
    """Piecewise-constant density on axis-aligned boxes in ``R^dimension``."""

    dimension: int
    pieces: tuple[tuple[tuple[float, ...], tuple[float, ...], float], ...]

    def __post_init__(self):
        if self.dimension < 1:
            raise InvalidDimension(f"box density dimension {self.dimension} < 1")
        if len(self.pieces) == 0:
            raise EmptyDensity("density has no boxes")
        pieces = []
        for lo, hi, lev in self.pieces:
            lo = tuple(float(v) for v in lo)
            hi = tuple(float(v) for v in hi)
            if len(lo) != self.dimension or len(hi) != self.dimension:
                raise InvalidDensity("box corner has wrong dimension")
            if not all(a < b for a, b in zip(lo, hi)):
                raise InvalidDensity(f"degenerate box {lo} -> {hi}")
            if not float(lev) > 0:
                raise InvalidDensity(f"non-positive level {lev}")
            pieces.append((lo, hi, float(lev)))
        for (alo, ahi, _), (blo, bhi, _) in itertools.combinations(pieces, 2):
            if _boxes_overlap(alo, ahi, blo, bhi):
                raise InvalidDensity("boxes overlap")
        object.__setattr__(self, "pieces", tuple(pieces))
        if abs(self.mass() - 1.0) > MASS_TOL:
            raise InvalidDensity(f"total mass {self.mass()!r} != 1")

    @classmethod
    def unit_cube(cls, dimension: int) -> "BoxDensity":
        return cls(dimension, (((0.0,) * dimension, (1.0,) * dimension, 1.0),))

    @staticmethod
    def volume(lo, hi) -> float:
        return math.prod(b - a for a, b in zip(lo, hi))

    def mass(self) -> float:
        return math.fsum(lev * self.volume(lo, hi) for lo, hi, lev in self.pieces)


@dataclass(frozen=True)
class ProductInstance:
    """Marginal pair ``f = f1 (x) rho``, ``g = g1 (x) rho`` on ``R^d``."""

    d: int
    f1: PiecewiseConstantDensity1D
    g1: PiecewiseConstantDensity1D
    rho: BoxDensity
    axis: int = 0
    gap_min: float = field(default=DEFAULT_GAP_MIN, compare=False)

    def __post_init__(self):
        if self.d < 2:
            raise InvalidDimension(f"d = {self.d} < 2")
        if not 0 <= self.axis < self.d:
            raise InvalidDimension(f"axis {self.axis} outside [0, {self.d})")
        if self.rho.dimension != self.d - 1:
            raise InvalidDimension(
                f"transverse density has dimension {self.rho.dimension}, expected {self.d - 1}"
            )

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "axis": self.axis,
            "f1": [list(p) for p in self.f1.pieces],
            "g1": [list(p) for p in self.g1.pieces],
            "rho": [[list(lo), list(hi), lev] for lo, hi, lev in self.rho.pieces],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict, gap_min: float = DEFAULT_GAP_MIN) -> "ProductInstance":
        try:
            d = int(doc["d"])
            f1 = PiecewiseConstantDensity1D(tuple(tuple(p) for p in doc["f1"]))
            g1 = PiecewiseConstantDensity1D(tuple(tuple(p) for p in doc["g1"]))
            rho = BoxDensity(d - 1, tuple((tuple(lo), tuple(hi), lev) for lo, hi, lev in doc["rho"]))
            axis = int(doc.get("axis", 0))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvalidDensity | InvalidDimension | EmptyDensity):
                raise
            raise ConfigError(f"malformed instance document: {exc!r}") from exc
        return cls(d=d, f1=f1, g1=g1, rho=rho, axis=axis, gap_min=gap_min)

    @classmethod
    def from_json(cls, text: str, gap_min: float = DEFAULT_GAP_MIN) -> "ProductInstance":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(
                f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
            ) from exc
        return cls.from_dict(doc, gap_min=gap_min)


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    violations: tuple[tuple[str, str], ...]
    dominance_margin: float

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "violations": [list(v) for v in self.violations],
            "dominance_margin": self.dominance_margin,
        }


def make_section62(d: int) -> ProductInstance:
    """Two-component source and target along the first axis.

    Source is uniform (level 1/3) on ``[0,2] u [5,6]`` times the unit cube,
    target on ``[3,4] u [7,9]`` times the unit cube. The leftmost source
    block has to feed both target blocks, so an unconstrained ray coupling
    leaks mass backwards.
    """
    if d < 2:
        raise InvalidDimension(f"d = {d} < 2")
    third = 1.0 / 3.0
    f1 = PiecewiseConstantDensity1D(((0.0, 2.0, third), (5.0, 6.0, third)))
    g1 = PiecewiseConstantDensity1D(((3.0, 4.0, third), (7.0, 9.0, third)))
    return ProductInstance(d=d, f1=f1, g1=g1, rho=BoxDensity.unit_cube(d - 1))


def make_two_boxes(d: int, shift: float) -> ProductInstance:
    """Uniform on ``[0,1]^d`` moved to ``[shift, shift+1] x [0,1]^(d-1)``."""
    if d < 2:
        raise InvalidDimension(f"d = {d} < 2")
    if not shift > 1:
        raise OverlappingSupports(f"shift {shift} <= 1 makes the boxes touch or overlap")
    return ProductInstance(
        d=d,
        f1=PiecewiseConstantDensity1D.uniform(0.0, 1.0),
        g1=PiecewiseConstantDensity1D.uniform(float(shift), float(shift) + 1.0),
        rho=BoxDensity.unit_cube(d - 1),
    )


def support_gap(p: PiecewiseConstantDensity1D, q: PiecewiseConstantDensity1D) -> float:
    """Distance between the supports; non-positive when they intersect."""
    gap = math.inf
    for lo1, hi1, _ in p.pieces:
        for lo2, hi2, _ in q.pieces:
            gap = min(gap, max(lo2 - hi1, lo1 - hi2))
    return gap


def dominance_margin(p: PiecewiseConstantDensity1D, q: PiecewiseConstantDensity1D) -> float:
    # F_p - F_q is piecewise linear, so its minimum sits on a breakpoint
    ts = sorted(set(p.breakpoints()) | set(q.breakpoints()))
    return min(p.cdf(t) - q.cdf(t) for t in ts)


def validate(inst: ProductInstance) -> ValidationReport:
    violations = []
    gap = support_gap(inst.f1, inst.g1)
    if gap <= 0:
        violations.append(("disjoint_supports", f"longitudinal supports intersect (gap {gap!r})"))
    elif gap < inst.gap_min:
        violations.append(("gap_min", f"support gap {gap!r} < gap_min {inst.gap_min!r}"))
    margin = dominance_margin(inst.f1, inst.g1)
    if margin < -MASS_TOL:
        violations.append(
            ("cdf_dominance", f"F_f1 - F_g1 reaches {margin!r}; no monotone coupling exists")
        )
    for name, dens in (("f1", inst.f1), ("g1", inst.g1)):
        if abs(dens.mass() - 1.0) > MASS_TOL:
            violations.append(("mass", f"{name} has mass {dens.mass()!r}"))
    if abs(inst.rho.mass() - 1.0) > MASS_TOL:
        violations.append(("mass", f"rho has mass {inst.rho.mass()!r}"))
    return ValidationReport(ok=not violations, violations=tuple(violations), dominance_margin=margin)


def _require_valid(inst: ProductInstance) -> None:
    report = validate(inst)
    if not report.ok:
        detail = "; ".join(f"{k}: {v}" for k, v in report.violations)
        raise InvalidInstance(detail)


def dual_ot_value(inst: ProductInstance) -> float:
    """Integral of ``u = -x_axis`` against ``f - g``, i.e. the OT cost."""
    _require_valid(inst)
    return inst.g1.mean() - inst.f1.mean()


def certify_potential(inst: ProductInstance, h: float, max_atoms: int = 400) -> float:
    """Duality gap between the exact LP on an ``h``-grid and :func:`dual_ot_value`."""
    from .measures import GridSpec, discretize_instance, pairwise_distances
    from .oracles import lp_ot

    _require_valid(inst)
    mu, nu = discretize_instance(inst, GridSpec(h, h), max_atoms=max_atoms)
    cost = pairwise_distances(mu.points, nu.points)
    lp = lp_ot(mu, nu, cost)
    return abs(lp.value - dual_ot_value(inst))


def load_instance(spec: str | dict, d: int | None = None, shift: float = 3.0) -> ProductInstance:
    """Resolve a built-in name (``section62``, ``two_boxes``) or an inline JSON document."""
    if isinstance(spec, dict):
        return ProductInstance.from_dict(spec)
    if spec == "section62":
        return make_section62(2 if d is None else d)
    if spec == "two_boxes":
        return make_two_boxes(2 if d is None else d, shift)
    return ProductInstance.from_json(spec)
