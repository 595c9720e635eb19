"""finslerkit: numerical pseudo-Finsler geometry.

Computes metric, torsion, spray and connection objects of a user-declared
Finsler Lagrangian through truncated Taylor (jet) arithmetic, and verifies
pointwise connection identities and integral divergence theorems by
independent-oracle comparison and Gauss-Legendre quadrature.
"""

from .catalog import LagrangianSpec, build_lagrangian, homogeneity_residual
from .connections import (
    FiberVectorField,
    SectionField,
    connection_difference_residual,
    divergence_oap,
    horizontal_div,
    lemma_chain_residual,
    pullback_connection_coeffs,
    pullback_metric_christoffels,
    section_D,
    vertical_gradient_div,
)
from .conservation import (
    SliceSpec,
    conserved_energy,
    evaluated_killing_residual,
    hud_residual,
    killing_residual,
    normalized_killing_is_geodesic,
    pregeodesic_defect,
    two_slice_drift,
)
from .errors import (
    ConfigError,
    DegenerateMetricError,
    EvalError,
    FinslerError,
    GateRefusedError,
    InadmissiblePointError,
    JetDomainError,
    NewtonConvergenceError,
    ParseError,
)
from .expr import parse, eval_jet, eval_float, to_text
from .integration import (
    BoxDomain,
    OrientedFace,
    face_normal,
    induced_volume_weight,
    legendre_invert,
    legendre_map,
    quad_boundary,
    quad_domain,
    verify_divergence_finsler,
    verify_divergence_rund,
)
from .jets import Jet, extract_partial, jet_apply, seed_variables
from .reports import VerificationReport
from .tensors import (
    FiberContext,
    FiberPoint,
    TensorBlock,
    berwald_coeffs,
    cartan_torsion,
    chern_rund_coeffs,
    delta_derivative,
    inverse_metric,
    landsberg,
    mean_cartan_torsion,
    metric,
    nonlinear_connection,
    spray,
    trace_identity_residual,
)

__version__ = "0.1.0"
