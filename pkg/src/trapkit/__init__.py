"""Tools for certifying and quantifying trapped dynamics of finite Markov chains."""

from .chain import (
    FiniteChain,
    ProbabilityVector,
    SubChain,
    adjoint,
    chain_from_dict,
    chain_to_dict,
    continuous_chain,
    discrete_chain,
    evolve,
    load_chain,
    point_mass,
    restrict,
    save_chain,
    stationary_measure,
    validate,
)
from .certification import (
    CertificateParameters,
    CertificateVerification,
    ExponentialityReport,
    TrapCertificate,
    certificate_arithmetic,
    certify,
    check_escape,
    check_recurrence,
    check_thermalization,
    compute_basin,
    escape_functional,
    exponentiality_report,
    geometric_grid,
    verify_certificate_bounds,
)
from .errors import (
    AllCensored,
    BoundViolation,
    ChainFormatError,
    DimensionMismatch,
    DisconnectedTrap,
    EmptyComplement,
    EmptySample,
    EmptySet,
    ExtinctMass,
    InternalBoundViolation,
    InvalidChain,
    InvalidDistribution,
    LumpingViolation,
    NonConvergence,
    NonIntegerTime,
    NotApplicable,
    NotBirthDeath,
    SingularSystem,
    TooLarge,
    TrapkitError,
    ZeroConditioning,
    ZeroMass,
    ZeroMassState,
)
from .hitting import (
    ResistanceProfile,
    SurvivalCurve,
    expected_local_time,
    hitting_probability_before,
    mean_hitting_time,
    resistance_profile,
    return_vs_hit_probability,
    survival_function,
)
from .measures import (
    ConditionedMeasureResult,
    QuasiStationaryResult,
    TrapPartition,
    conditioned_evolution,
    distance_profile,
    doubly_conditioned_evolution,
    empirical_measure,
    pairwise_distance,
    quasi_stationary,
    restricted_invariant,
    tv_distance,
)
from .models import (
    AsymptoticsRow,
    BirthDeathSpec,
    ReturnBoundRow,
    TiarSpec,
    barrier_weights,
    birth_death_asymptotics_check,
    birth_death_spec,
    build_barrier_walk,
    build_birth_death,
    build_birth_death_half,
    build_tiar_full,
    build_tiar_projection,
    project_and_verify_lumping,
    return_bound_table,
    sigma,
    tiar_permutations,
    tiar_projection_invariant,
    tiar_spec,
)
from .montecarlo import (
    EmpiricalSurvival,
    SamplerConfig,
    ks_statistic,
    occupation_frequencies,
    sample_hitting_times,
    simulate_trajectories,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
