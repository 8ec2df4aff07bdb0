"""Tail-index estimation, extreme-quantile normal ranges and outlier screening
for datasets too large to hold in memory, via averaged subsample estimators."""

__version__ = "0.1.0"

from .detect import SuspectedSet, detection_rate, screen
from .errors import (
    ConfigError,
    DataError,
    DegeneracyError,
    NoExceedancesError,
    SubtailError,
    TauTooLargeError,
)
from .estimators import (
    METHODS,
    AmlEstimate,
    DesignParams,
    averaged_estimate,
    empirical_quantile,
    mle_subsample,
    moment_gamma,
    moment_subsample,
    per_subsample_thresholds,
    pwm_gamma,
    pwm_subsample,
    real_data_level,
    subsample_count,
    threshold_level,
)
from .inference import (
    ConfidenceInterval,
    NormalRange,
    confidence_interval,
    normal_range,
    quantile_bound,
)
from .sampler import (
    DelimitedTextSource,
    FixedWidthBinarySource,
    InMemorySource,
    SubsamplePlan,
    SubsampleSet,
    count_records,
    describe,
    draw_subsamples,
    open_source,
)
from .simlab import ExperimentConfig, derive_design, run_experiment, run_study
from .tailmodel import Frechet, Pareto, StudentT, parse_model
