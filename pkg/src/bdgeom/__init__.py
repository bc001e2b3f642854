"""Event-driven simulator and verification suite for spatial birth-death
point processes with local geometric statistics."""

from .functionals import (
    ConfigError,
    LocalFunctional,
    NeighborhoodMap,
    from_selector,
    make_clique,
    make_morse,
    make_subgraph,
    neighborhood_from_selector,
    validate_functional,
)
from .geometry import (
    Circumball,
    DegenerateGeometryError,
    GridIndex,
    Metric,
    circumball,
)
from .process import (
    Configuration,
    Density,
    Event,
    EventStream,
    MarkedPoint,
    SimulationConfig,
    alive_count_path,
    density_from_spec,
    sample_marked,
    sample_stationary,
    simulate_events,
    slice_at,
)
from .statistics import (
    SubsetTracker,
    TimeSeries,
    count_pairs_within,
    evaluate_statistic,
    replay,
    sample_path,
)
from .theory import (
    CovarianceModel,
    IntegralEstimate,
    TruncationError,
    covariance_curve,
    exclusive_mixture_model,
    factorial_tail,
    mean_moment,
    mixture_model,
    overlap_moment,
    rate_integral,
    simulate_ou_superposition,
    statistic_mean_variance,
    unit_ball_volume,
    vacancy_rate_integral,
)
from .verify import (
    CovarianceEstimate,
    IntersectionPattern,
    MeckeResult,
    estimate_covariance,
    euler_characteristic,
    kolmogorov_distance,
    mecke_check,
    poisson_chi_square,
)

__version__ = "0.1.0"

__all__ = [
    "Circumball",
    "Configuration",
    "ConfigError",
    "CovarianceEstimate",
    "CovarianceModel",
    "DegenerateGeometryError",
    "Density",
    "Event",
    "EventStream",
    "GridIndex",
    "IntegralEstimate",
    "IntersectionPattern",
    "LocalFunctional",
    "MarkedPoint",
    "MeckeResult",
    "Metric",
    "NeighborhoodMap",
    "SimulationConfig",
    "SubsetTracker",
    "TimeSeries",
    "TruncationError",
    "alive_count_path",
    "circumball",
    "count_pairs_within",
    "covariance_curve",
    "density_from_spec",
    "estimate_covariance",
    "euler_characteristic",
    "evaluate_statistic",
    "exclusive_mixture_model",
    "factorial_tail",
    "from_selector",
    "kolmogorov_distance",
    "make_clique",
    "make_morse",
    "make_subgraph",
    "mean_moment",
    "mecke_check",
    "mixture_model",
    "neighborhood_from_selector",
    "overlap_moment",
    "poisson_chi_square",
    "rate_integral",
    "replay",
    "sample_marked",
    "sample_path",
    "sample_stationary",
    "simulate_events",
    "simulate_ou_superposition",
    "slice_at",
    "statistic_mean_variance",
    "unit_ball_volume",
    "vacancy_rate_integral",
    "validate_functional",
]
