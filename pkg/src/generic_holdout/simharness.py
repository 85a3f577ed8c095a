"""Seeded Monte Carlo estimation of false-discovery rates and power.

Replication ``i`` of a config draws all of its randomness from the substream
``(i,)`` of the config's root seed, so results never depend on how many
workers ran the replications or in which order they finished.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from scipy import stats

from .analysts import (
    FreedmanAdversary,
    PlantedAnalyst,
    RandomSearchAnalyst,
    StopImmediately,
    StopReason,
    run_session,
)
from .core import DistributionModel, PlantedLinear, RngStream, partition, sample_dataset
from .errors import ConfigError, DomainError
from .mechanisms import (
    FreshSplitHoldout,
    GenericHoldout,
    Mode,
    NaiveDisclosure,
    ThresholdoutBaseline,
    transcript_digest,
)
from .testkit import BudgetSpec, CalibrationTable

MECHANISMS = ("generic", "naive_disclosure", "fresh_split", "thresholdout")
ANALYSTS = ("random_search", "freedman", "planted", "stop")

# substream labels inside one replication
_DATA, _SPLIT, _MECH, _ANALYST = 0, 1, 2, 3


@dataclass(frozen=True)
class ExperimentConfig:
    model: DistributionModel
    n_total: int
    holdout_size: int
    s_max: int
    k_max: int
    p0: float
    mechanism: str = "generic"
    analyst: str = "random_search"
    replications: int = 1
    root_seed: int = 0
    mechanism_params: dict = field(default_factory=dict)
    analyst_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if not 0 <= self.holdout_size <= self.n_total:
            raise ConfigError(f"holdout_size {self.holdout_size} outside [0, n_total={self.n_total}]")
        if self.mechanism not in MECHANISMS:
            raise ConfigError(f"unknown mechanism {self.mechanism!r}; expected one of {MECHANISMS}")
        if self.analyst not in ANALYSTS:
            raise ConfigError(f"unknown analyst {self.analyst!r}; expected one of {ANALYSTS}")
        try:
            BudgetSpec(self.s_max, self.k_max, self.p0)
        except DomainError as err:
            raise ConfigError(str(err)) from None

    @property
    def budget(self) -> BudgetSpec:
        return BudgetSpec(self.s_max, self.k_max, self.p0)


@dataclass(frozen=True)
class ReplicationOutcome:
    rep_index: int
    queries_used: int
    confirmations: int
    false_confirmations: int
    true_confirmations: int
    stop_reason: StopReason
    transcript_digest: str


def _default_family(config: ExperimentConfig) -> str:
    return "correlation" if config.mechanism in ("naive_disclosure", "thresholdout") else "gapped"


def build_analyst(config: ExperimentConfig):
    params = dict(config.analyst_params)
    d = config.model.d
    kind = config.analyst
    if kind == "random_search":
        return RandomSearchAnalyst(d, family=params.get("family", "gapped"))
    if kind == "freedman":
        return FreedmanAdversary(d, family=params.get("family", _default_family(config)))
    if kind == "planted":
        return PlantedAnalyst(family=params.get("family", "gapped"))
    return StopImmediately()


_calibration_cache: dict[str, CalibrationTable] = {}


def _load_calibration(path: str | None) -> CalibrationTable | None:
    if path is None:
        return None
    if path not in _calibration_cache:
        with open(path) as fh:
            _calibration_cache[path] = CalibrationTable.from_json(json.load(fh))
    return _calibration_cache[path]


def build_mechanism(config: ExperimentConfig, exploration, holdout, rng: RngStream):
    params = dict(config.mechanism_params)
    kind = config.mechanism
    if kind == "generic":
        return GenericHoldout(
            holdout,
            config.s_max,
            config.k_max,
            config.p0,
            mode=Mode(params.get("mode", Mode.STOP_ON_CONFIRMS.value)),
            calibration=_load_calibration(params.get("calibration")),
            quiet=True,
        )
    if kind == "naive_disclosure":
        return NaiveDisclosure(holdout)
    if kind == "fresh_split":
        return FreshSplitHoldout(holdout, params.get("test_size", max(1, holdout.size // max(config.s_max, 1))))
    return ThresholdoutBaseline(
        holdout,
        exploration,
        rng,
        threshold=params.get("threshold", 0.05),
        noise_scale=params.get("noise_scale", 0.03),
        budget=params.get("budget"),
    )


def run_replication(config: ExperimentConfig, rep_index: int) -> ReplicationOutcome:
    """One independent draw: data, split, mechanism, analyst, session."""
    if not 0 <= rep_index < config.replications:
        raise DomainError(f"rep_index {rep_index} outside [0, {config.replications})")
    stream = RngStream(config.root_seed).child(rep_index)
    data = sample_dataset(config.model, config.n_total, stream.child(_DATA))
    split = partition(data, config.holdout_size, stream.child(_SPLIT))
    mech = build_mechanism(config, split.exploration, split.holdout, stream.child(_MECH))
    session = run_session(
        build_analyst(config),
        mech,
        split.exploration,
        config.model,
        stream.child(_ANALYST),
        k_max=config.k_max if not isinstance(mech, GenericHoldout) else None,
        max_queries=config.s_max,
    )
    return ReplicationOutcome(
        rep_index=rep_index,
        queries_used=session.queries_used,
        confirmations=len(session.confirmed),
        false_confirmations=session.false_confirmations,
        true_confirmations=session.true_confirmations,
        stop_reason=session.stop_reason,
        transcript_digest=transcript_digest(session.transcript),
    )


def _run_range(args) -> list[ReplicationOutcome]:
    config, start, stop = args
    return [run_replication(config, i) for i in range(start, stop)]


def resolve_workers(workers: int | None) -> int:
    if workers is None:
        workers = int(os.environ.get("GH_THREADS", "1") or 1)
    return max(1, int(workers))


def run_replications(config: ExperimentConfig, workers: int | None = None) -> list[ReplicationOutcome]:
    """All replications of ``config``, ordered by rep_index.

    ``workers`` > 1 fans contiguous index ranges out to worker processes;
    the outcome list is identical either way.
    """
    R = config.replications
    workers = min(resolve_workers(workers), R)
    if workers == 1:
        return _run_range((config, 0, R))
    step = math.ceil(R / (workers * 4))
    chunks = [(config, a, min(a + step, R)) for a in range(0, R, step)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_run_range, chunks))
    outcomes = [o for part in parts for o in part]
    outcomes.sort(key=lambda o: o.rep_index)
    return outcomes


# --------------------------------------------------------------------------
# estimates


def wilson_ci(successes: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials < 1 or not 0 <= successes <= trials:
        raise DomainError(f"need 0 <= successes <= trials and trials >= 1, got {successes}/{trials}")
    if not 0.0 < level < 1.0:
        raise DomainError(f"level must lie in (0, 1), got {level}")
    z = float(stats.norm.ppf(0.5 + level / 2.0))
    n = trials
    p = successes / n
    z2 = z * z
    denom = 1.0 + z2 / n
    center = (p + z2 / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / denom
    lo = 0.0 if successes == 0 else max(0.0, center - half)
    hi = 1.0 if successes == trials else min(1.0, center + half)
    return lo, hi


def mc_sigma(p: float, R: int) -> float:
    return math.sqrt(p * (1.0 - p) / R)


@dataclass(frozen=True)
class FwerEstimate:
    false_discovery_rate: float
    wilson_95: tuple[float, float]
    theoretical_bound: float
    bound_satisfied: bool
    events: int
    replications: int
    outcomes: tuple[ReplicationOutcome, ...] = field(default=(), repr=False, compare=False)

    @property
    def slack_limit(self) -> float:
        return self.theoretical_bound + 3.0 * mc_sigma(self.theoretical_bound, self.replications)


@dataclass(frozen=True)
class PowerEstimate:
    power: float
    wilson_95: tuple[float, float]
    events: int
    replications: int
    outcomes: tuple[ReplicationOutcome, ...] = field(default=(), repr=False, compare=False)


def fwer_from_outcomes(config: ExperimentConfig, outcomes) -> FwerEstimate:
    R = len(outcomes)
    events = sum(1 for o in outcomes if o.false_confirmations > 0)
    rate = events / R
    # s^k * alpha = p0 under uniform allocation
    bound = config.p0
    satisfied = rate <= bound + 3.0 * mc_sigma(bound, R)
    return FwerEstimate(rate, wilson_ci(events, R), bound, satisfied, events, R, tuple(outcomes))


def estimate_fwer(config: ExperimentConfig, workers: int | None = None) -> FwerEstimate:
    """Fraction of replications with at least one false confirmation."""
    if not config.model.is_global_null:
        raise ConfigError("FWER estimation needs a global-null model (every hypothesis false)")
    return fwer_from_outcomes(config, run_replications(config, workers))


def power_from_outcomes(outcomes) -> PowerEstimate:
    R = len(outcomes)
    events = sum(1 for o in outcomes if o.true_confirmations > 0)
    return PowerEstimate(events / R, wilson_ci(events, R), events, R, tuple(outcomes))


def estimate_power(config: ExperimentConfig, workers: int | None = None) -> PowerEstimate:
    """Fraction of replications ending with at least one true confirmation."""
    if not isinstance(config.model, PlantedLinear):
        raise ConfigError("power estimation needs a planted-signal model")
    return power_from_outcomes(run_replications(config, workers))


def combined_digest(outcomes) -> str:
    h = hashlib.sha256()
    for o in outcomes:
        h.update(f"{o.rep_index}:{o.transcript_digest};".encode())
    return h.hexdigest()


__all__ = [
    "ExperimentConfig",
    "FwerEstimate",
    "PowerEstimate",
    "ReplicationOutcome",
    "estimate_fwer",
    "estimate_power",
    "run_replication",
    "run_replications",
    "wilson_ci",
]
