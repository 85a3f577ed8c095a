"""Budgeted one-bit holdout validation for adaptive hypothesis testing."""

from .analysts import (
    FreedmanAdversary,
    PlantedAnalyst,
    RandomSearchAnalyst,
    SessionResult,
    StopReason,
    ols_fit,
    run_session,
)
from .core import (
    PRNG_ID,
    Dataset,
    DataPartition,
    GlobalNull,
    PlantedLinear,
    RngStream,
    Sample,
    empirical_mean_loss,
    partition,
    sample_dataset,
    truncate,
)
from .errors import (
    BudgetExceededError,
    ConfigError,
    EmptyDataError,
    HoldoutError,
    LockedError,
    PoolExhaustedError,
    TestTooWeakError,
)
from .mechanisms import (
    GenericHoldout,
    LockReason,
    Mode,
    NaiveDisclosure,
    ThresholdoutBaseline,
    estimate_confidence,
    naive_disclosure_query,
    new_generic_holdout,
)
from .simharness import ExperimentConfig, estimate_fwer, estimate_power, run_replication, wilson_ci
from .testkit import (
    BudgetSpec,
    CorrelationTest,
    GappedLossTest,
    calibrate_correlation_null,
    hoeffding_p_bound,
    make_correlation_test,
    make_linear_loss,
    per_test_alpha,
    required_holdout_size,
)

__version__ = "0.1.0"
