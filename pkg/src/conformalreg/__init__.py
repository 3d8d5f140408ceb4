"""Registration of non-isometric genus-zero triangle meshes by jointly
computing a conformal deformation factor and a deformed spectral basis aligned
to the source basis, then extracting a dense point-to-point correspondence."""

from .correspondence import (
    Correspondence,
    ErrorReport,
    conformal_ground_truth,
    functional_map,
    geodesic_errors,
    point_map,
    recover_basis,
)
from .features import (
    FeatureSet,
    heat_features,
    indicator_features,
    normalize_features,
    wks_features,
)
from .fem import DeformedOperators, FemOperators, assemble, deform
from .mesh import TriMesh, face_geometry, first_ring, load_mesh, total_area
from .pursuit import (
    EnergyBreakdown,
    PursuitConfig,
    PursuitProblem,
    PursuitResult,
    PursuitState,
    solve,
    solve_with_reinit,
)
from .spectrum import EigenBasis, lb_basis, reinit_basis
from .stiefel import StiefelOptions, StiefelProblem, cayley_step, minimize

__all__ = [
    "Correspondence",
    "DeformedOperators",
    "EigenBasis",
    "EnergyBreakdown",
    "ErrorReport",
    "FeatureSet",
    "FemOperators",
    "PursuitConfig",
    "PursuitProblem",
    "PursuitResult",
    "PursuitState",
    "StiefelOptions",
    "StiefelProblem",
    "TriMesh",
    "assemble",
    "cayley_step",
    "conformal_ground_truth",
    "deform",
    "face_geometry",
    "first_ring",
    "functional_map",
    "geodesic_errors",
    "heat_features",
    "indicator_features",
    "normalize_features",
    "lb_basis",
    "load_mesh",
    "minimize",
    "point_map",
    "recover_basis",
    "reinit_basis",
    "solve",
    "solve_with_reinit",
    "total_area",
    "wks_features",
]

__version__ = "0.1.0"
