"""sdelab: simulation and verification lab for stochastic delay equations.

Segment-space simulation of retarded, neutral, and jump delay equations,
analytic decay-rate calculators (Halanay- and Razumikhin-style), empirical
mixing/ergodicity estimators, and sampled verification of the dissipation
conditions the decay theory rests on.
"""

from .errors import (
    ConfigError,
    DivergenceError,
    DomainError,
    EstimationError,
    FixedPointError,
    ModelContractError,
    NumericalError,
    SdelabError,
)
from .paths import (
    DistanceBracket,
    SearchParams,
    Segment,
    SegmentKind,
    TimeChange,
    evaluate,
    evaluate_left,
    homeomorphism_norm,
    identity_time_change,
    modulus_of_continuity,
    segment_from_csv,
    segment_to_csv,
    skorohod_distance,
    sup_norm,
    uniform_distance,
)
from .models import (
    ConstantMark,
    DiscreteMarks,
    Distributed,
    GaussianMarks,
    MarkLaw,
    ModelClass,
    ModelSpec,
    PointConstant,
    PointVariable,
    UniformInterval,
    UniformSigns,
    delay_atoms,
    delayed_value,
    jump_linear,
    linear_retarded,
    neutral_linear,
)
from .noise import NoiseStream
from .engine import (
    SimConfig,
    Trajectory,
    extract_segment,
    extract_segment_left,
    sample_poisson_measure,
    simulate,
    simulate_coupled,
    trajectory_to_csv,
)
from .rates import (
    RateReport,
    halanay_rate,
    mixing_rate_estimate,
    neutral_mixing_exponent,
    razumikhin_bound_curve,
    razumikhin_gamma,
)
from .ergodics import (
    Functional,
    MixingReport,
    MomentReport,
    kurtz_diagnostic,
    mixing_check,
    moment_bound_check,
    tightness_diagnostic,
    time_average,
)
from .conditions import (
    SegmentPairSampler,
    Verdict,
    VerdictStatus,
    check_drift_dissipation,
    check_diffusion_domination,
    check_jump_conditions,
    check_neutral_conditions,
    replay_witness,
)

__version__ = "0.1.0"
