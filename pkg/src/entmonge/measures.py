"""Discrete measures, couplings and the functionals evaluated on them."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp

from .errors import (
    BudgetExceeded,
    DimensionMismatch,
    EmptyDensity,
    InvalidInstance,
    MarginalMismatch,
)
from .instances import BoxDensity, PiecewiseConstantDensity1D, ProductInstance, validate

MASS_TOL = 1e-12
TOL_MARGINAL = 1e-8
DENSE_LIMIT = 50_000_000
DEFAULT_MAX_ATOMS = 7000
# rows per block in chunked reductions; fixed so that sums do not depend on
# anything but the data
CHUNK_ROWS = 256

CostLike = Union[np.ndarray, Callable[[np.ndarray, np.ndarray], np.ndarray]]


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Weighted atoms in ``R^k``; ``points`` has shape ``(n, k)``."""

    points: np.ndarray
    weights: np.ndarray
    total_mass: float = 1.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.asarray(self.weights, dtype=float).ravel()
        if pts.shape[0] != w.shape[0]:
            raise DimensionMismatch(f"{pts.shape[0]} points but {w.shape[0]} weights")
        if np.any(w < 0):
            raise ValueError("negative weight")
        if abs(w.sum() - self.total_mass) > MASS_TOL:
            raise MarginalMismatch(f"weights sum to {w.sum()!r}, expected {self.total_mass!r}")
        if len(np.unique(pts, axis=0)) != len(pts):
            raise ValueError("atoms are not distinct")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "weights", _frozen(w))

    def __len__(self):
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ",".join(f"x{k}" for k in range(self.dim))
        buf.write(f"idx,{cols},weight\n")
        for i, (p, w) in enumerate(zip(self.points, self.weights)):
            buf.write(",".join([str(i), *(fmt(v) for v in p), fmt(w)]) + "\n")
        return buf.getvalue()


def fmt(x: float) -> str:
    """17 significant digits, locale independent."""
    return format(float(x), ".17g")


class Plan:
    """Nonnegative coupling matrix between two discrete measures.

    ``weights`` is a dense ``(n, m)`` array or a scipy sparse matrix; dense
    storage is used up to ``DENSE_LIMIT`` entries.
    """

    def __init__(self, row: DiscreteMeasure, col: DiscreteMeasure, weights, tol_marginal=TOL_MARGINAL,
                 check=True):
        if sp.issparse(weights):
            weights = sp.coo_matrix(weights)
            weights.sum_duplicates()
            weights.eliminate_zeros()
            shape = weights.shape
        else:
            weights = np.array(weights, dtype=float)
            weights.setflags(write=False)
            shape = weights.shape
        if shape != (len(row), len(col)):
            raise DimensionMismatch(f"plan shape {shape} vs marginals {(len(row), len(col))}")
        self.row = row
        self.col = col
        self.weights = weights
        if check:
            self.check(tol_marginal)

    @property
    def shape(self):
        return self.weights.shape

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.weights)

    def row_sums(self) -> np.ndarray:
        if self.is_sparse:
            return np.bincount(self.weights.row, self.weights.data, minlength=self.shape[0])
        return self.weights.sum(axis=1)

    def col_sums(self) -> np.ndarray:
        if self.is_sparse:
            return np.bincount(self.weights.col, self.weights.data, minlength=self.shape[1])
        return self.weights.sum(axis=0)

    def marginal_error(self) -> float:
        return float(
            np.abs(self.row_sums() - self.row.weights).sum()
            + np.abs(self.col_sums() - self.col.weights).sum()
        )

    def check(self, tol_marginal=TOL_MARGINAL):
        data = self.weights.data if self.is_sparse else self.weights
        if np.any(data < 0) or not np.all(np.isfinite(data)):
            raise ValueError("plan has negative or non-finite entries")
        if np.abs(self.row_sums() - self.row.weights).sum() > tol_marginal:
            raise MarginalMismatch("row marginal violated")
        if np.abs(self.col_sums() - self.col.weights).sum() > tol_marginal:
            raise MarginalMismatch("column marginal violated")

    def entries(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(i, j, w)`` for every strictly positive entry, row-major order."""
        if self.is_sparse:
            w = self.weights.tocsr().tocoo()
            keep = w.data > 0
            return w.row[keep].astype(np.int64), w.col[keep].astype(np.int64), w.data[keep]
        i, j = np.nonzero(self.weights)
        return i, j, self.weights[i, j]

    def todense(self) -> np.ndarray:
        return self.weights.toarray() if self.is_sparse else np.asarray(self.weights)

    def to_csv(self) -> str:
        i, j, w = self.entries()
        d = self.row.dim
        buf = io.StringIO()
        head = ["i", "j", *(f"x{k}" for k in range(d)), *(f"y{k}" for k in range(self.col.dim)), "weight"]
        buf.write(",".join(head) + "\n")
        X, Y = self.row.points, self.col.points
        for a, b, v in zip(i, j, w):
            buf.write(",".join([str(a), str(b), *(fmt(x) for x in X[a]), *(fmt(y) for y in Y[b]), fmt(v)]) + "\n")
        return buf.getvalue()


def make_plan(row: DiscreteMeasure, col: DiscreteMeasure, weights, **kw) -> Plan:
    """Wrap ``weights`` in a :class:`Plan`, densifying small sparse inputs."""
    n, m = len(row), len(col)
    if sp.issparse(weights) and n * m <= DENSE_LIMIT:
        weights = weights.toarray()
    elif not sp.issparse(weights) and n * m > DENSE_LIMIT:
        weights = sp.coo_matrix(weights)
    return Plan(row, col, weights, **kw)


@dataclass(frozen=True)
class GridSpec:
    h_long: float
    h_trans: float

    def __post_init__(self):
        if not (self.h_long > 0 and self.h_trans > 0):
            raise ValueError("grid spacings must be positive")


def _cells(lo: float, hi: float, h: float) -> np.ndarray:
    k = max(1, math.ceil((hi - lo) / h - 1e-9))
    w = (hi - lo) / k
    return lo + w * (np.arange(k) + 0.5), w


def discretize_1d(profile: PiecewiseConstantDensity1D, h: float) -> DiscreteMeasure:
    """Cell-centred atoms, ``ceil(length / h)`` equal cells per piece."""
    if h <= 0:
        raise ValueError("h must be positive")
    if not profile.pieces:
        raise EmptyDensity("empty profile")
    pts, ws = [], []
    for lo, hi, lev in profile.pieces:
        c, w = _cells(lo, hi, h)
        pts.append(c)
        ws.append(np.full(len(c), lev * w))
    w = np.concatenate(ws)
    return DiscreteMeasure(np.concatenate(pts)[:, None], w / w.sum())


def discretize_box(rho: BoxDensity, h: float) -> DiscreteMeasure:
    """Cell centres and masses of a box density on a grid of spacing ``<= h``."""
    centres, masses = [], []
    for lo, hi, lev in rho.pieces:
        axes, widths = zip(*(_cells(a, b, h) for a, b in zip(lo, hi)))
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, rho.dimension)
        centres.append(grid)
        masses.append(np.full(len(grid), lev * math.prod(widths)))
    w = np.concatenate(masses)
    return DiscreteMeasure(np.concatenate(centres), w / w.sum())


def tensor_atoms(lam: DiscreteMeasure, line: DiscreteMeasure, axis: int) -> DiscreteMeasure:
    """Product measure ``lam (x) line`` with the line coordinate at ``axis``.

    Atoms are ordered transverse-major: index ``q * len(line) + i``.
    """
    nq, nl = len(lam), len(line)
    trans = np.repeat(lam.points, nl, axis=0)
    longi = np.tile(line.points[:, 0], nq)
    pts = np.insert(trans, axis, longi, axis=1)
    w = np.outer(lam.weights, line.weights).ravel()
    return DiscreteMeasure(pts, w)


def discretize_instance(inst: ProductInstance, g: GridSpec, max_atoms: int = DEFAULT_MAX_ATOMS):
    """Tensor-grid discretisation ``(mu_h, nu_h)`` of a product instance."""
    if not validate(inst).ok:
        raise InvalidInstance("instance failed validation")
    lam = discretize_box(inst.rho, g.h_trans)
    src = discretize_1d(inst.f1, g.h_long)
    tgt = discretize_1d(inst.g1, g.h_long)
    for line in (src, tgt):
        if len(lam) * len(line) > max_atoms:
            raise BudgetExceeded(f"{len(lam) * len(line)} atoms exceed budget {max_atoms}")
    return tensor_atoms(lam, src, inst.axis), tensor_atoms(lam, tgt, inst.axis)


def pairwise_distances(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Euclidean distance matrix, accumulated coordinate by coordinate."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.shape[1] != Y.shape[1]:
        raise DimensionMismatch("point dimensions differ")
    D = np.zeros((X.shape[0], Y.shape[0]))
    for k in range(X.shape[1]):
        diff = X[:, k, None] - Y[None, :, k]
        D += diff * diff
    return np.sqrt(D, out=D)


def euclidean(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row-wise distance between paired points, for use as a cost handle."""
    return np.sqrt(((x - y) ** 2).sum(axis=1))


def _pair_cost(cost: CostLike, plan: Plan, i, j) -> np.ndarray:
    if callable(cost):
        return cost(plan.row.points[i], plan.col.points[j])
    return np.asarray(cost)[i, j]


def transport_cost(p: Plan, cost: CostLike = euclidean) -> float:
    """``sum_ij gamma_ij c(x_i, y_j)``; ``inf`` if mass sits on an infinite cost."""
    if p.is_sparse:
        i, j, w = p.entries()
        return _safe_dot(w, _pair_cost(cost, p, i, j))
    W = p.weights
    parts = []
    for start in range(0, W.shape[0], CHUNK_ROWS):
        blk = W[start:start + CHUNK_ROWS]
        if callable(cost):
            rows = np.arange(start, start + blk.shape[0])
            C = cost(
                np.repeat(p.row.points[rows], W.shape[1], axis=0),
                np.tile(p.col.points, (len(rows), 1)),
            ).reshape(blk.shape)
        else:
            C = np.asarray(cost)[start:start + CHUNK_ROWS]
        parts.append(_safe_dot(blk.ravel(), C.ravel()))
    return float(np.sum(parts))


def _safe_dot(w: np.ndarray, c: np.ndarray) -> float:
    pos = w > 0
    cw = c[pos]
    if np.any(np.isinf(cw)):
        return math.inf
    return float(np.sum(w[pos] * cw))


def rel_entropy(p: Plan) -> float:
    """``H(gamma | mu (x) nu)`` with ``0 log 0 = 0``; ``inf`` without absolute continuity."""
    a = p.row.weights
    b = p.col.weights
    if p.is_sparse:
        i, j, w = p.entries()
        ref = a[i] * b[j]
        if np.any(ref <= 0):
            return math.inf
        return float(np.sum(w * np.log(w / ref)))
    W = p.weights
    parts = []
    with np.errstate(divide="ignore", invalid="ignore"):
        for start in range(0, W.shape[0], CHUNK_ROWS):
            blk = W[start:start + CHUNK_ROWS]
            ref = a[start:start + CHUNK_ROWS, None] * b[None, :]
            pos = blk > 0
            if np.any(ref[pos] <= 0):
                return math.inf
            parts.append(np.sum(blk[pos] * np.log(blk[pos] / ref[pos])))
    return float(np.sum(parts))


def witness_names(d: int) -> list[str]:
    """Labels of the test-function dictionary, in evaluation order.

    ``1``, then the ``2d`` coordinates ``z_k`` of ``z = (x, y)``, then the
    products ``z_a z_b`` for ``a <= b`` in lexicographic order, then
    ``|x - y|``.
    """
    z = [f"x{k}" for k in range(d)] + [f"y{k}" for k in range(d)]
    names = ["1", *z]
    names += [f"{z[a]}*{z[b]}" for a in range(2 * d) for b in range(a, 2 * d)]
    names.append("|x-y|")
    return names


def witness_moments(p: Plan) -> np.ndarray:
    """Integrals of every dictionary function against ``p``."""
    d = p.row.dim
    X, Y = p.row.points, p.col.points
    r, c = p.row_sums(), p.col_sums()
    if p.is_sparse:
        i, j, w = p.entries()
        Z = np.hstack([X[i], Y[j]])
        lin = np.einsum("k,ka->a", w, Z)
        quad = np.einsum("k,ka,kb->ab", w, Z, Z)
        dist = float(np.sum(w * euclidean(X[i], Y[j])))
        total = float(np.sum(w))
    else:
        W = p.weights
        total = float(np.sum(r))
        # einsum without BLAS keeps the summation order fixed
        lin = np.concatenate([np.einsum("i,ia->a", r, X), np.einsum("j,ja->a", c, Y)])
        xx = np.einsum("i,ia,ib->ab", r, X, X)
        yy = np.einsum("j,ja,jb->ab", c, Y, Y)
        xy = np.einsum("ia,ij,jb->ab", X, W, Y)
        quad = np.block([[xx, xy], [xy.T, yy]])
        dist = transport_cost(p, euclidean)
    iu = np.triu_indices(2 * d)
    return np.concatenate([[total], lin, quad[iu], [dist]])


def witness_discrepancy(p1: Plan, p2: Plan) -> float:
    """Largest gap between the plans' integrals over the fixed dictionary."""
    if p1.row.dim != p2.row.dim or p1.col.dim != p2.col.dim:
        raise DimensionMismatch("plans live in different dimensions")
    return float(np.max(np.abs(witness_moments(p1) - witness_moments(p2))))


def plan_as_measure(p: Plan) -> DiscreteMeasure:
    i, j, w = p.entries()
    pts = np.hstack([p.row.points[i], p.col.points[j]])
    return DiscreteMeasure(pts, w, total_mass=float(np.sum(w)))


def w1_exact(p1: Plan, p2: Plan, max_atoms: int = 400) -> float:
    """Exact 1-Wasserstein distance between the plans as measures on ``R^(2d)``."""
    from .oracles import lp_ot

    if p1.row.dim != p2.row.dim or p1.col.dim != p2.col.dim:
        raise DimensionMismatch("plans live in different dimensions")
    n1 = int(np.count_nonzero(p1.entries()[2]))
    n2 = int(np.count_nonzero(p2.entries()[2]))
    if n1 + n2 > max_atoms:
        raise BudgetExceeded(f"combined support {n1 + n2} > {max_atoms}")
    m1, m2 = plan_as_measure(p1), plan_as_measure(p2)
    # both masses are 1 up to rounding; rescale the second onto the first
    m2 = DiscreteMeasure(m2.points, m2.weights * (m1.total_mass / m2.total_mass), total_mass=m1.total_mass)
    return lp_ot(m1, m2, pairwise_distances(m1.points, m2.points)).value
