"""Contraction metrics for exponentially stable periodic orbits.

The pipeline builds a Riemannian metric M in which the flow of an
autonomous ODE contracts transversally to an attracting cycle, then
certifies the contraction rate pointwise on a sample grid:

1. locate the cycle and its Floquet spectrum (``periodic_orbit``),
2. take a modified real Jordan form of the monodromy and close the
   decomposition Phi(t) = P(t) e^{Bt} (``floquet``),
3. assemble the orbit metric M0 and its phase derivative
   (``orbit_metric``),
4. calibrate the transversal projection chart (``projection_sync``),
5. blend M0 into a globally defined metric e^{2V} M1 (``global_metric``),
6. evaluate the contraction functional L_M (``lm_eval``).

The :mod:`lcmetric.cli` module wires these stages into the ``lcmetric``
command line tool.
"""

from .errors import (
    AmbiguousTrivialMultiplier,
    BadInterval,
    BasisDegenerate,
    BranchJump,
    ChartError,
    CholeskyFail,
    ComplexPairMismatch,
    DecompositionError,
    DefectiveStructureUnresolved,
    DegenerateDenominator,
    EquilibriumFound,
    EvalError,
    FieldUndefined,
    IntegrationError,
    InvariantViolation,
    KindMismatch,
    LcmetricError,
    NeverReachesLevel,
    NoConvergence,
    NoDecayDetected,
    NonFiniteState,
    NoSignChange,
    NotExponentiallyStable,
    OrbitError,
    OutsideBasin,
    OutsideChart,
    SingularF,
    SingularShootingJacobian,
    StepSizeUnderflow,
    TrivialBlockMissing,
)
from .floquet import (
    FloquetDecomposition,
    JordanBlock,
    ModifiedJordanForm,
    assemble,
    block_log,
    eps_prime_for,
    modified_real_jordan,
    reorder_for_orbit,
    verify_spectral_bound,
)
from .global_metric import (
    GlobalMetric,
    VlocReport,
    build_global_metric,
    bump,
    bump_prime,
)
from .lm_eval import (
    LipschitzProbe,
    LmReport,
    MetricFieldHandle,
    ReferenceBasis,
    l_m_at,
    l_m_direct,
    lipschitz_probe,
    reanchor_basis,
)
from .ode_core import (
    OdeSystem,
    Tolerances,
    Trajectory,
    VariationalTrajectory,
    event_root,
    integrate,
    integrate_linear_periodic,
    integrate_variational,
    orbital_derivative,
)
from .orbit_metric import OrbitMetric, build_orbit_metric
from .periodic_orbit import (
    FloquetSpectrum,
    PeriodicOrbit,
    find_orbit,
    floquet_spectrum,
)
from .projection_sync import (
    DecayReport,
    ProjectionChart,
    ProjectionResult,
    SyncPath,
    build_chart,
    distance_d,
    g_eval,
    project,
    sample_tube,
    synchronize,
    theta_dot,
    verify_decay,
)
from .systems import (
    REGISTRY,
    LinearPeriodicSystem,
    default_orbit_guess,
    make_cylinder3d,
    make_linear_periodic,
    make_radial,
    make_system,
    make_vdp,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # errors
    "LcmetricError",
    "IntegrationError",
    "StepSizeUnderflow",
    "NonFiniteState",
    "NoSignChange",
    "FieldUndefined",
    "OrbitError",
    "NoConvergence",
    "SingularShootingJacobian",
    "EquilibriumFound",
    "NotExponentiallyStable",
    "AmbiguousTrivialMultiplier",
    "DecompositionError",
    "DefectiveStructureUnresolved",
    "ComplexPairMismatch",
    "KindMismatch",
    "TrivialBlockMissing",
    "InvariantViolation",
    "ChartError",
    "OutsideChart",
    "DegenerateDenominator",
    "BranchJump",
    "BadInterval",
    "NoDecayDetected",
    "NeverReachesLevel",
    "OutsideBasin",
    "EvalError",
    "SingularF",
    "BasisDegenerate",
    "CholeskyFail",
    # ode_core
    "Tolerances",
    "OdeSystem",
    "Trajectory",
    "VariationalTrajectory",
    "integrate",
    "integrate_variational",
    "integrate_linear_periodic",
    "event_root",
    "orbital_derivative",
    # systems
    "LinearPeriodicSystem",
    "make_radial",
    "make_vdp",
    "make_cylinder3d",
    "make_linear_periodic",
    "REGISTRY",
    "make_system",
    "default_orbit_guess",
    # periodic_orbit
    "PeriodicOrbit",
    "FloquetSpectrum",
    "find_orbit",
    "floquet_spectrum",
    # floquet
    "JordanBlock",
    "ModifiedJordanForm",
    "FloquetDecomposition",
    "eps_prime_for",
    "modified_real_jordan",
    "block_log",
    "verify_spectral_bound",
    "assemble",
    "reorder_for_orbit",
    # orbit_metric
    "OrbitMetric",
    "build_orbit_metric",
    # projection_sync
    "ProjectionResult",
    "ProjectionChart",
    "SyncPath",
    "DecayReport",
    "build_chart",
    "sample_tube",
    "g_eval",
    "project",
    "distance_d",
    "synchronize",
    "theta_dot",
    "verify_decay",
    # global_metric
    "bump",
    "bump_prime",
    "GlobalMetric",
    "VlocReport",
    "build_global_metric",
    # lm_eval
    "MetricFieldHandle",
    "ReferenceBasis",
    "LmReport",
    "LipschitzProbe",
    "l_m_direct",
    "reanchor_basis",
    "l_m_at",
    "lipschitz_probe",
]
