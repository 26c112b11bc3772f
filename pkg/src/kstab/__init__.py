"""Toric K-stability toolkit.

Exact rational geometry of moment polytopes, the stability functional and
crease search, Futaki invariants by lattice-point counting and filtrations,
a numerical solver for Abreu's constant-scalar-curvature equation on
segments and boxes, and finite-dimensional Kempf-Ness moment-map flows.
"""

from kstab.futaki import count_and_weigh, expansion, expansion_exact, filtration_futaki
from kstab.geometry import PotentialGrid, abreu_S, guillemin, legendre
from kstab.kempfness import (
    OnePS,
    SphereConfig,
    hm_weight,
    kn_function,
    matrix_flow,
    sphere_flow,
    sphere_moment,
)
from kstab.polytope import (
    BoundaryMeasure,
    DegenerateInputError,
    EmptyClip,
    Facet,
    Polytope,
    clip,
    is_delzant,
    measures,
    parse_polytope_text,
)
from kstab.solver import SolveReport, mabuchi, ray_slope, solve
from kstab.stability import (
    PLConvexFunction,
    StabilityVerdict,
    L,
    crease_search,
    futaki_linear,
    test_configuration,
)

__version__ = "0.1.0"

__all__ = [
    "BoundaryMeasure",
    "DegenerateInputError",
    "EmptyClip",
    "Facet",
    "OnePS",
    "PLConvexFunction",
    "Polytope",
    "PotentialGrid",
    "SolveReport",
    "SphereConfig",
    "StabilityVerdict",
    "L",
    "abreu_S",
    "clip",
    "count_and_weigh",
    "crease_search",
    "expansion",
    "expansion_exact",
    "filtration_futaki",
    "futaki_linear",
    "guillemin",
    "hm_weight",
    "is_delzant",
    "kn_function",
    "legendre",
    "mabuchi",
    "matrix_flow",
    "measures",
    "parse_polytope_text",
    "ray_slope",
    "solve",
    "sphere_flow",
    "sphere_moment",
    "test_configuration",
    "__version__",
]
