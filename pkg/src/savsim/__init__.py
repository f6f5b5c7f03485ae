"""savsim: deterministic shared automated vehicle fleet simulation over
zone-based city scenarios, with urban-form measurement, boundary alignment,
and cross-city regression analysis."""

from .demand import (
    DepartureHistogram,
    TripRequest,
    default_departure_histogram,
    intrazonal_distance,
    read_trips,
    synthesize_trips,
    write_trips,
)
from .engine import (
    Event,
    PooledPlan,
    SimulationResult,
    Vehicle,
    pooling_feasible,
    read_eventlog,
    run_simulation,
    write_eventlog,
    write_simresult,
)
from .geoalign import (
    AlignmentResult,
    CityGeometry,
    CitySelection,
    GeoAlignError,
    align_boundary,
    geometry_from_scenario,
    intra_city_trip_share,
    polygon_from_rings,
    select_cities,
)
from .metrics import (
    PerformanceMetrics,
    audit_detours,
    audit_waits,
    compute_performance,
    replay_log,
    write_performance_csv,
)
from .pipeline import (
    SweepSpec,
    fit_city_models,
    run_batch,
    run_sweep,
    run_threshold_study,
)
from .router import SkimSet, build_skims
from .scenario import (
    BlockGroupAttrs,
    Link,
    Network,
    ODMatrix,
    PeriodSchedule,
    Scenario,
    ScenarioError,
    SimConfig,
    Zone,
    generate_synthetic_city,
    load_scenario,
    validate_scenario,
    write_scenario,
)
from .seeding import derive_seed
from .stats import (
    MoransResult,
    RegressionResult,
    StatsError,
    coeff_ttest,
    kurtosis,
    morans_i,
    ols,
    stepwise_select,
    transform_variables,
    vif,
)
from .urbanform import (
    UrbanFormError,
    UrbanFormVector,
    build_urbanform_vector,
    job_house_entropy,
    urbanform_columns,
    weighted_global_clustering,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentResult",
    "BlockGroupAttrs",
    "CityGeometry",
    "CitySelection",
    "DepartureHistogram",
    "Event",
    "GeoAlignError",
    "Link",
    "MoransResult",
    "Network",
    "ODMatrix",
    "PerformanceMetrics",
    "PeriodSchedule",
    "PooledPlan",
    "RegressionResult",
    "Scenario",
    "ScenarioError",
    "SimConfig",
    "SimulationResult",
    "SkimSet",
    "StatsError",
    "SweepSpec",
    "TripRequest",
    "UrbanFormError",
    "UrbanFormVector",
    "Vehicle",
    "Zone",
    "align_boundary",
    "audit_detours",
    "audit_waits",
    "build_skims",
    "build_urbanform_vector",
    "coeff_ttest",
    "compute_performance",
    "default_departure_histogram",
    "derive_seed",
    "fit_city_models",
    "generate_synthetic_city",
    "geometry_from_scenario",
    "intra_city_trip_share",
    "intrazonal_distance",
    "job_house_entropy",
    "kurtosis",
    "load_scenario",
    "morans_i",
    "ols",
    "polygon_from_rings",
    "pooling_feasible",
    "read_eventlog",
    "read_trips",
    "replay_log",
    "run_batch",
    "run_simulation",
    "run_sweep",
    "run_threshold_study",
    "select_cities",
    "stepwise_select",
    "synthesize_trips",
    "transform_variables",
    "urbanform_columns",
    "validate_scenario",
    "vif",
    "weighted_global_clustering",
    "write_eventlog",
    "write_performance_csv",
    "write_scenario",
    "write_simresult",
    "write_trips",
]
