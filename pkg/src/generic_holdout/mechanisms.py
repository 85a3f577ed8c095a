"""Holdout mechanisms: the budgeted one-bit oracle and the leaky baselines.

:class:`GenericHoldout` answers each validation query with a single bit and
locks itself once its stopping rule fires.  The baselines answer with real
numbers and exist only as foils for the adaptive analysts:

* :class:`NaiveDisclosure` reveals the exact holdout statistic, unbudgeted.
* :class:`FreshSplitHoldout` spends a new chunk of data on every query.
* :class:`ThresholdoutBaseline` is a behavioural simplification of the
  reusable-holdout mechanism (noisy comparison against the exploration set).
"""

from __future__ import annotations

import enum
import hashlib
import math
import warnings
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .core import Dataset, LossFunction, RngStream, empirical_mean_loss, mean_of
from .errors import (
    BudgetExceededError,
    DomainError,
    EmptyDataError,
    LockedError,
    OverfitBudgetExhausted,
    PoolExhaustedError,
    SizeError,
    TestTooWeakError,
)
from .testkit import (
    BudgetSpec,
    CalibrationTable,
    CorrelationTest,
    GappedLossTest,
    required_holdout_size,
)

HypothesisTest = Union[GappedLossTest, CorrelationTest]


class Mode(enum.Enum):
    STOP_ON_CONFIRMS = "StopOnConfirms"
    STOP_ON_REJECTS = "StopOnRejects"


class LockReason(enum.Enum):
    K_REACHED = "KReached"
    # query budget s_max used up
    S_EXHAUSTED = "SExhausted"
    REJECTS_REACHED = "RejectsReached"


class UndersizedHoldoutWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Bit:
    bit: int


@dataclass(frozen=True)
class Value:
    value: float


@dataclass(frozen=True)
class ThresholdoutValue:
    value: float


MechanismResponse = Union[Bit, Value, ThresholdoutValue]


@dataclass(frozen=True)
class TranscriptEntry:
    query_index: int
    test_hash: str
    bit: int

    def to_json(self) -> dict:
        return {"query_index": self.query_index, "test_hash": self.test_hash, "bit": self.bit}


def transcript_digest(entries: Sequence[TranscriptEntry]) -> str:
    h = hashlib.sha256()
    for e in entries:
        h.update(f"{e.query_index}:{e.test_hash}:{e.bit};".encode())
    return h.hexdigest()


def export_transcript(oracle: GenericHoldout) -> list[dict]:
    """Audit log in the JSON transcript format (no statistics, no timestamps)."""
    return [e.to_json() for e in oracle.transcript()]


def _seal(holdout: Dataset):
    """Close over the holdout arrays; only a bit ever leaves the closure."""
    X, y, d = holdout.X, holdout.y, holdout.d

    def evaluate(test) -> int:
        if test.loss.dim is not None and test.loss.dim != d:
            raise SizeError(f"test expects d={test.loss.dim}, holdout has d={d}")
        return 1 if mean_of(test.loss.values(X, y)) > test.threshold else 0

    return evaluate


class GenericHoldout:
    """Budgeted holdout oracle that answers each query with one bit.

    Args:
        holdout: the sealed holdout set; it is captured in a closure and is
            not reachable through any attribute of the oracle.
        s_max: total number of queries allowed.
        k_max: number of confirmations (or rejections, in
            ``Mode.STOP_ON_REJECTS``) after which the oracle locks.
        p0: target probability of any false discovery over the session.
        mode: which outcome counts toward ``k_max``.
        calibration: null calibration table for correlation tests; gapped
            tests are certified analytically.
        quiet: record an undersized-holdout warning in ``warnings`` without
            also emitting it through the ``warnings`` module.

    Every submitted test must certify a false-positive bound at most
    ``alpha = p0 / s_max**k_max`` for this holdout size, otherwise
    :class:`TestTooWeakError` is raised and no budget is spent.
    """

    def __init__(
        self,
        holdout: Dataset,
        s_max: int,
        k_max: int,
        p0: float,
        mode: Mode = Mode.STOP_ON_CONFIRMS,
        calibration: CalibrationTable | None = None,
        quiet: bool = False,
    ):
        if holdout.size == 0:
            raise EmptyDataError("the generic holdout needs a non-empty holdout set")
        self._budget = BudgetSpec(s_max, k_max, p0)
        self._mode = Mode(mode)
        self._h = holdout.size
        self._evaluate = _seal(holdout)
        self._calibration = calibration
        self._certified: dict = {}
        self._queries = 0
        self._confirms = 0
        self._rejects = 0
        self._lock: LockReason | None = None
        self._log: list[TranscriptEntry] = []
        self.warnings: list[str] = []

        if s_max > 0:
            needed = required_holdout_size(s_max, k_max, p0)
            if self._h < needed:
                msg = (
                    f"holdout has {self._h} samples; gapped-loss tests need {needed} "
                    f"for s={s_max}, k={k_max}, p0={p0}"
                )
                self.warnings.append(msg)
                if not quiet:
                    warnings.warn(msg, UndersizedHoldoutWarning, stacklevel=2)
        else:
            self._lock = LockReason.S_EXHAUSTED

    # -- read-only metadata -------------------------------------------------

    @property
    def budget(self) -> BudgetSpec:
        return self._budget

    @property
    def alpha(self) -> float:
        return self._budget.alpha

    @property
    def mode(self) -> Mode:
        return self._mode

    @property
    def holdout_size(self) -> int:
        return self._h

    @property
    def queries_used(self) -> int:
        return self._queries

    @property
    def remaining_queries(self) -> int:
        return self._budget.s_max - self._queries

    @property
    def confirmations(self) -> int:
        return self._confirms

    @property
    def rejections(self) -> int:
        return self._rejects

    @property
    def is_locked(self) -> bool:
        return self._lock is not None

    @property
    def lock_reason(self) -> LockReason | None:
        return self._lock

    @property
    def state(self) -> str:
        return "Active" if self._lock is None else f"Locked({self._lock.value})"

    @property
    def k_max(self) -> int:
        return self._budget.k_max

    def transcript(self) -> tuple[TranscriptEntry, ...]:
        return tuple(self._log)

    # -- validation ---------------------------------------------------------

    def _certify(self, test) -> None:
        if not isinstance(test, (GappedLossTest, CorrelationTest)):
            raise TypeError(f"unsupported test type {type(test).__name__}")
        key = (type(test), type(test.loss), test.threshold)
        ok = self._certified.get(key)
        if ok is None:
            bound = test.false_positive_bound(self._h, self._calibration)
            ok = self._budget.admits(bound)
            self._certified[key] = ok
        if not ok:
            raise TestTooWeakError(
                f"{type(test).__name__} cannot certify alpha={self._budget.alpha:.3g} "
                f"on a holdout of {self._h} samples"
            )

    def _record(self, test, bit: int) -> None:
        self._queries += 1
        if bit:
            self._confirms += 1
        else:
            self._rejects += 1
        self._log.append(TranscriptEntry(self._queries, test.digest, bit))
        b = self._budget
        if self._mode is Mode.STOP_ON_CONFIRMS and self._confirms >= b.k_max:
            self._lock = LockReason.K_REACHED
        elif self._mode is Mode.STOP_ON_REJECTS and self._rejects >= b.k_max:
            self._lock = LockReason.REJECTS_REACHED
        elif self._queries >= b.s_max:
            self._lock = LockReason.S_EXHAUSTED

    def query(self, test: HypothesisTest) -> int:
        """Validate one test against the holdout; returns 1 (accept) or 0."""
        if self._lock is not None:
            raise LockedError(self._lock)
        self._certify(test)
        bit = self._evaluate(test)
        self._record(test, bit)
        return bit

    def query_batch(self, tests: Sequence[HypothesisTest]) -> list[int]:
        """Validate a family of tests chosen without seeing each other's outcomes.

        Preconditions (budget, test strength) are checked for the whole batch
        before anything is evaluated.  Bits are released in order; if the
        stopping rule fires partway, the oracle locks and the remaining tests
        are neither evaluated nor charged, so the returned list is shorter
        than ``tests``.
        """
        if self._lock is not None:
            raise LockedError(self._lock)
        tests = list(tests)
        if len(tests) > self.remaining_queries:
            raise BudgetExceededError(
                f"batch of {len(tests)} exceeds the {self.remaining_queries} remaining queries"
            )
        for t in tests:
            self._certify(t)
        bits = []
        for t in tests:
            bit = self._evaluate(t)
            self._record(t, bit)
            bits.append(bit)
            if self._lock is not None:
                break
        return bits

    def respond(self, test: HypothesisTest) -> Bit:
        return Bit(self.query(test))


def new_generic_holdout(holdout, s_max, k_max, p0, mode=Mode.STOP_ON_CONFIRMS, calibration=None) -> GenericHoldout:
    return GenericHoldout(holdout, s_max, k_max, p0, mode=mode, calibration=calibration)


# --------------------------------------------------------------------------
# leaky baselines


def naive_disclosure_query(holdout: Dataset, loss: LossFunction) -> float:
    """Exact empirical mean loss on the holdout, with no budget at all."""
    return empirical_mean_loss(loss, holdout)


class NaiveDisclosure:
    """Reuses one holdout and reveals the exact test statistic every time."""

    k_max = None
    is_locked = False

    def __init__(self, holdout: Dataset):
        if holdout.size == 0:
            raise EmptyDataError("naive disclosure needs a non-empty holdout")
        self._holdout = holdout
        self.queries_used = 0

    def respond(self, test: HypothesisTest) -> Value:
        self.queries_used += 1
        return Value(naive_disclosure_query(self._holdout, test.loss))


def fresh_split_query(pool: Dataset, cursor: int, test, test_size: int) -> tuple[int, int]:
    """Evaluate ``test`` on ``pool[cursor:cursor+test_size]``; return (bit, new cursor).

    A bare loss is wrapped in the default gapped test.
    """
    if test_size < 1:
        raise SizeError("test_size must be positive")
    if cursor + test_size > pool.size:
        raise PoolExhaustedError(f"{pool.size - cursor} unused samples left, need {test_size}")
    if isinstance(test, LossFunction):
        test = GappedLossTest(test)
    chunk = pool.take(np.arange(cursor, cursor + test_size))
    return test.evaluate(chunk), cursor + test_size


class FreshSplitHoldout:
    """The naive holdout used correctly: every query burns a fresh chunk."""

    k_max = None
    is_locked = False

    def __init__(self, pool: Dataset, test_size: int):
        self._pool = pool
        self.test_size = int(test_size)
        self.cursor = 0
        self.queries_used = 0

    def respond(self, test: HypothesisTest) -> Bit:
        bit, self.cursor = fresh_split_query(self._pool, self.cursor, test, self.test_size)
        self.queries_used += 1
        return Bit(bit)


def default_overfit_budget(h: int) -> int:
    return max(1, math.ceil(h * h / 100))


class ThresholdoutBaseline:
    """Noisy exploration-vs-holdout comparison with an overfitting budget.

    A query whose exploration and holdout means agree to within
    ``threshold`` (plus Laplace noise) is answered from the exploration set
    for free; otherwise the budget drops by one and a noisy holdout mean is
    released.
    """

    k_max = None

    def __init__(
        self,
        holdout: Dataset,
        exploration: Dataset,
        rng: RngStream,
        threshold: float = 0.05,
        noise_scale: float = 0.03,
        budget: int | None = None,
    ):
        if holdout.size == 0 or exploration.size == 0:
            raise EmptyDataError("thresholdout needs non-empty holdout and exploration sets")
        if threshold < 0 or noise_scale < 0:
            raise DomainError("threshold and noise_scale must be non-negative")
        self._holdout = holdout
        self._exploration = exploration
        self.threshold = float(threshold)
        self.noise_scale = float(noise_scale)
        self.budget = default_overfit_budget(holdout.size) if budget is None else int(budget)
        self._gen = rng.generator()
        self.queries_used = 0

    def _noise(self) -> float:
        if self.noise_scale == 0.0:
            return 0.0
        return float(self._gen.laplace(0.0, self.noise_scale))

    @property
    def is_locked(self) -> bool:
        return self.budget <= 0

    def query(self, loss: LossFunction) -> float:
        if self.budget <= 0:
            raise OverfitBudgetExhausted("thresholdout overfitting budget is spent")
        self.queries_used += 1
        explore = empirical_mean_loss(loss, self._exploration)
        hold = empirical_mean_loss(loss, self._holdout)
        if abs(explore - hold) <= self.threshold + self._noise():
            return explore
        self.budget -= 1
        return hold + self._noise()

    def respond(self, test: HypothesisTest) -> ThresholdoutValue:
        return ThresholdoutValue(self.query(test.loss))


def thresholdout_query(baseline: ThresholdoutBaseline, loss: LossFunction) -> float:
    return baseline.query(loss)


# --------------------------------------------------------------------------
# reporting on a second, untouched holdout


def estimate_confidence(loss: LossFunction, fresh: Dataset, level: float) -> tuple[float, tuple[float, float]]:
    """Mean loss on ``fresh`` with a two-sided Hoeffding interval at ``level``."""
    if fresh.size == 0:
        raise EmptyDataError("confidence estimate on an empty dataset")
    if not 0.0 < level <= 1.0:
        raise DomainError(f"level must lie in (0, 1], got {level}")
    width = loss.hi - loss.lo
    if not math.isfinite(width):
        raise DomainError("Hoeffding intervals need a bounded loss")
    mean = empirical_mean_loss(loss, fresh)
    if level == 1.0:
        return mean, (loss.lo, loss.hi)
    half = math.sqrt(width * width * math.log(2.0 / (1.0 - level)) / (2.0 * fresh.size))
    return mean, (max(loss.lo, mean - half), min(loss.hi, mean + half))
