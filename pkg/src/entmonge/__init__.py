"""Entropic Monge plans for the distance cost on parallel-ray instances."""

from .functionals import SFunctionalBreakdown, c_eps, expansion_fit, s_functional
from .instances import (
    BoxDensity,
    PiecewiseConstantDensity1D,
    ProductInstance,
    ValidationReport,
    certify_potential,
    dual_ot_value,
    make_section62,
    make_two_boxes,
    validate,
)
from .kernels import BACKEND
from .measures import (
    DiscreteMeasure,
    GridSpec,
    Plan,
    discretize_1d,
    discretize_instance,
    rel_entropy,
    transport_cost,
    w1_exact,
    witness_discrepancy,
)
from .rayeot import (
    RayEOTSolution,
    assemble_monge_plan,
    assemble_product_plan,
    disintegrate,
    extract_factorization,
    solve_ray,
)
from .sinkhorn import SinkhornConfig, SinkhornResult, solve

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BoxDensity",
    "DiscreteMeasure",
    "GridSpec",
    "PiecewiseConstantDensity1D",
    "Plan",
    "ProductInstance",
    "RayEOTSolution",
    "SFunctionalBreakdown",
    "SinkhornConfig",
    "SinkhornResult",
    "ValidationReport",
    "assemble_monge_plan",
    "assemble_product_plan",
    "c_eps",
    "certify_potential",
    "discretize_1d",
    "discretize_instance",
    "disintegrate",
    "dual_ot_value",
    "expansion_fit",
    "extract_factorization",
    "make_section62",
    "make_two_boxes",
    "rel_entropy",
    "s_functional",
    "solve",
    "solve_ray",
    "transport_cost",
    "validate",
    "w1_exact",
    "witness_discrepancy",
]
