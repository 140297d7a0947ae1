"""Normal-form iteration for Hamiltonians with degenerate normal directions."""

from .counterexample import (
    CounterexampleConfig,
    OscillationReport,
    SplitReport,
    default_eps_grid,
    equilibrium_oscillation,
    verify_split,
)
from .degree import (
    DegreeProblem,
    DegreeResult,
    WeakConvexityReport,
    brouwer_degree,
    find_equilibrium,
    weak_convexity_check,
)
from .engine import (
    EngineParams,
    HypothesisCheck,
    IterationState,
    LieResult,
    NormalForm,
    RunPolicy,
    RunReport,
    StepGeometry,
    StepRecord,
    StructuralConstants,
    check_hypotheses,
    closed_form_geometry,
    decompose_normal_form,
    initial_state,
    kam_step,
    lie_transform,
    literal_initial_geometry,
    run,
    schedule_next,
    structural_constants,
    theorem_exponent,
)
from .errors import (
    BlowUpError,
    ConfigError,
    DivergenceError,
    EquilibriumNotFoundError,
    HypothesisError,
    IllPosedBoundaryError,
    KamforgeError,
    ResonanceError,
    SmallnessError,
)
from .homological import (
    DiophantineParams,
    HomologicalSolution,
    MembershipReport,
    compute_A_rho,
    determinant_lower_bound,
    resonance_membership,
    small_divisor_ok,
    solve_homological,
    split_resonant_average,
)
from .lattice import (
    LatticeConfig,
    LatticeHamiltonian,
    NormalTrajectory,
    TorusDiagnostic,
    Trajectory,
    build_lattice,
    compile_vector_field,
    default_sites,
    integrate_lattice,
    integrate_normal,
    normal_to_lattice,
    separable_power_g,
    site_actions,
    to_normal_coordinates,
    torus_diagnostic,
)
from .measure import (
    FractionEstimate,
    ParameterBox,
    StepLoss,
    excluded_fraction,
    fitted_envelope_constant,
    lipschitz_seminorm,
    sample_box,
    stepwise_loss,
    wilson_interval,
    zone_transect,
)
from .series import (
    Dims,
    GradingCaps,
    Sites,
    TFSeries,
    WeightedNorm,
    dump_lines,
    ellap_norm,
    load_lines,
    majorant_vf_norm,
    monomial,
    poisson_bracket,
    poisson_bracket_split,
    series_product,
    series_product_split,
)

__version__ = "0.1.0"

__all__ = [
    "BlowUpError",
    "ConfigError",
    "CounterexampleConfig",
    "DegreeProblem",
    "DegreeResult",
    "Dims",
    "DiophantineParams",
    "DivergenceError",
    "EngineParams",
    "EquilibriumNotFoundError",
    "FractionEstimate",
    "GradingCaps",
    "HomologicalSolution",
    "HypothesisCheck",
    "HypothesisError",
    "IllPosedBoundaryError",
    "IterationState",
    "KamforgeError",
    "LatticeConfig",
    "LatticeHamiltonian",
    "LieResult",
    "MembershipReport",
    "NormalForm",
    "NormalTrajectory",
    "OscillationReport",
    "ParameterBox",
    "ResonanceError",
    "RunPolicy",
    "RunReport",
    "Sites",
    "SmallnessError",
    "SplitReport",
    "StepGeometry",
    "StepLoss",
    "StepRecord",
    "StructuralConstants",
    "TFSeries",
    "TorusDiagnostic",
    "Trajectory",
    "WeakConvexityReport",
    "WeightedNorm",
    "brouwer_degree",
    "build_lattice",
    "check_hypotheses",
    "closed_form_geometry",
    "compile_vector_field",
    "compute_A_rho",
    "decompose_normal_form",
    "default_eps_grid",
    "default_sites",
    "determinant_lower_bound",
    "dump_lines",
    "ellap_norm",
    "equilibrium_oscillation",
    "excluded_fraction",
    "find_equilibrium",
    "fitted_envelope_constant",
    "initial_state",
    "integrate_lattice",
    "integrate_normal",
    "kam_step",
    "lie_transform",
    "lipschitz_seminorm",
    "literal_initial_geometry",
    "load_lines",
    "majorant_vf_norm",
    "monomial",
    "normal_to_lattice",
    "poisson_bracket",
    "poisson_bracket_split",
    "resonance_membership",
    "run",
    "sample_box",
    "schedule_next",
    "separable_power_g",
    "series_product",
    "series_product_split",
    "site_actions",
    "small_divisor_ok",
    "solve_homological",
    "split_resonant_average",
    "stepwise_loss",
    "structural_constants",
    "theorem_exponent",
    "to_normal_coordinates",
    "torus_diagnostic",
    "verify_split",
    "weak_convexity_check",
    "wilson_interval",
    "zone_transect",
]
