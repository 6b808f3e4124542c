"""Construction and verification of connections on 3-d Carrollian structures."""

__version__ = "0.1.0"

from .carroll import CarrollStructure, EhresmannForm, boost_to_principal, minimal_torsion, torsion_trace
from .classify import (
    check_carrollian_torsion_identity,
    check_lemma_26,
    check_minimal,
    classify_pcs,
    classify_scm,
    verify_vorticity_free_killing,
)
from .connection import (
    AffineConnection,
    build_pcs_connection,
    build_scm_connection,
    covariant_derivative,
    curvature_of,
    torsion_of,
)
from .expr import differentiate, evaluate, parse
from .geometry import Chart, TensorField, build_frame, change_basis, lie_derivative_along_ell, structure_functions
from .policy import Residual, Verdict
from .surface import (
    SurfaceEmbedding,
    b_tensor,
    check_curved_case,
    check_flat_case,
    induced_metric,
    verify_homothety,
)

__all__ = [
    "AffineConnection",
    "CarrollStructure",
    "Chart",
    "EhresmannForm",
    "Residual",
    "SurfaceEmbedding",
    "TensorField",
    "Verdict",
    "b_tensor",
    "boost_to_principal",
    "build_frame",
    "build_pcs_connection",
    "build_scm_connection",
    "change_basis",
    "check_carrollian_torsion_identity",
    "check_curved_case",
    "check_flat_case",
    "check_lemma_26",
    "check_minimal",
    "classify_pcs",
    "classify_scm",
    "covariant_derivative",
    "curvature_of",
    "differentiate",
    "evaluate",
    "induced_metric",
    "lie_derivative_along_ell",
    "minimal_torsion",
    "parse",
    "structure_functions",
    "torsion_of",
    "torsion_trace",
    "verify_homothety",
    "verify_vorticity_free_killing",
]
