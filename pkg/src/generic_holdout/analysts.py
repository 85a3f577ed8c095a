"""Scripted adaptive analysts and the session driver.

An analyst sees the exploration set, the mechanism's past responses and a
random generator, and nothing else.  It returns the next test to validate,
or ``None`` to stop.
"""

from __future__ import annotations

import enum
from abc import ABC, abstractmethod
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .core import Dataset, DistributionModel, RngStream
from .errors import (
    InsufficientDataError,
    LockedError,
    OverfitBudgetExhausted,
    PoolExhaustedError,
    TestTooWeakError,
)
from .mechanisms import (
    Bit,
    GenericHoldout,
    HypothesisTest,
    LockReason,
    MechanismResponse,
    Mode,
    TranscriptEntry,
)
from .testkit import CorrelationTest, GappedLossTest, make_linear_loss

RIDGE = 1e-6


class StopReason(enum.Enum):
    K_REACHED = "KReached"
    S_EXHAUSTED = "SExhausted"
    ANALYST_STOPPED = "AnalystStopped"
    POOL_EXHAUSTED = "PoolExhausted"
    REJECTS_REACHED = "RejectsReached"
    OVERFIT_BUDGET_EXHAUSTED = "OverfitBudgetExhausted"
    TEST_TOO_WEAK = "TestTooWeak"


_FROM_LOCK = {
    LockReason.K_REACHED: StopReason.K_REACHED,
    LockReason.S_EXHAUSTED: StopReason.S_EXHAUSTED,
    LockReason.REJECTS_REACHED: StopReason.REJECTS_REACHED,
}


class AnalystStrategy(ABC):
    """Sequential hypothesis-proposing policy.

    Strategies are never handed the holdout; whatever they learn about it
    arrives through ``history``.
    """

    @abstractmethod
    def next(
        self,
        exploration: Dataset,
        history: Sequence[MechanismResponse],
        rng: np.random.Generator,
    ) -> HypothesisTest | None: ...


def _linear_test(w, family: str, label: str) -> HypothesisTest:
    if family == "correlation":
        return CorrelationTest(w, 1.0, label)
    if family == "gapped":
        return GappedLossTest(make_linear_loss(w), label=label)
    raise ValueError(f"unknown test family {family!r}")


def freedman_weights(history: Sequence[MechanismResponse], d: int) -> np.ndarray:
    """Final probe direction sign(c) / sqrt(d) built from the basis responses.

    Only real-valued responses reveal a correlation's sign; bit responses
    (and exact zeros) count as +1.
    """
    signs = np.ones(d)
    for i, resp in enumerate(history[:d]):
        if not isinstance(resp, Bit) and resp.value < 0:
            signs[i] = -1.0
    return signs / np.sqrt(d)


class FreedmanAdversary(AnalystStrategy):
    """Probe each basis direction, then combine their signs into one test.

    ``family="correlation"`` uses the untruncated correlation statistic with
    threshold 1 (the leaky-mechanism attack); ``family="gapped"`` uses the
    truncated loss so the probes are admissible at a budgeted oracle.
    """

    def __init__(self, d: int, family: str = "correlation"):
        if d < 1:
            raise ValueError("d must be at least 1")
        if family not in ("correlation", "gapped"):
            raise ValueError(f"unknown test family {family!r}")
        self.d = int(d)
        self.family = family

    def next(self, exploration, history, rng):
        i = len(history)
        if i < self.d:
            e = np.zeros(self.d)
            e[i] = 1.0
            return _linear_test(e, self.family, f"e{i + 1}")
        if i == self.d:
            return _linear_test(freedman_weights(history, self.d), self.family, "w*")
        return None


def freedman_next(state: FreedmanAdversary, history, d: int):
    return state.next(None, history, None)


class RandomSearchAnalyst(AnalystStrategy):
    """Proposes i.i.d. uniformly random unit directions, never stopping on its own."""

    def __init__(self, d: int, family: str = "gapped"):
        self.d = int(d)
        self.family = family

    def next(self, exploration, history, rng):
        w = rng.standard_normal(self.d)
        w /= np.sqrt(w @ w)
        return _linear_test(w, self.family, None)


def random_search_next(state: RandomSearchAnalyst, history, d: int, rng: np.random.Generator):
    return state.next(None, history, rng)


def ols_fit(exploration: Dataset, ridge: float = RIDGE) -> np.ndarray:
    """Least-squares direction of y on x, scaled to unit length.

    Falls back to a small ridge penalty when the design is rank deficient.
    """
    n, d = exploration.X.shape
    if n < d:
        raise InsufficientDataError(f"OLS needs at least d={d} samples, got {n}")
    X, y = exploration.X, exploration.y
    if np.linalg.matrix_rank(X) < d:
        coef = np.linalg.solve(X.T @ X + ridge * np.eye(d), X.T @ y)
    else:
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    norm = float(np.linalg.norm(coef))
    if norm == 0.0 or not np.isfinite(norm):
        raise InsufficientDataError("regression direction is degenerate (zero coefficients)")
    return coef / norm


class PlantedAnalyst(AnalystStrategy):
    """Fits OLS on the exploration set and validates that single direction."""

    def __init__(self, family: str = "gapped"):
        self.family = family

    def next(self, exploration, history, rng):
        if history:
            return None
        return _linear_test(ols_fit(exploration), self.family, "ols")


class StopImmediately(AnalystStrategy):
    def next(self, exploration, history, rng):
        return None


# --------------------------------------------------------------------------
# sessions


@dataclass(frozen=True)
class Confirmation:
    test: HypothesisTest
    is_true: bool


@dataclass
class SessionResult:
    confirmed: list[Confirmation]
    transcript: tuple[TranscriptEntry, ...]
    stop_reason: StopReason
    responses: list[MechanismResponse] = field(default_factory=list)

    @property
    def queries_used(self) -> int:
        return len(self.transcript)

    @property
    def false_confirmations(self) -> int:
        return sum(1 for c in self.confirmed if not c.is_true)

    @property
    def true_confirmations(self) -> int:
        return sum(1 for c in self.confirmed if c.is_true)


class _ReadOnly(Sequence):
    __slots__ = ("_items",)

    def __init__(self, items):
        self._items = items

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


def _accepted(test, response) -> bool:
    if isinstance(response, Bit):
        return response.bit == 1
    return test.accepts_value(response.value)


def run_session(
    analyst: AnalystStrategy,
    mechanism,
    exploration: Dataset,
    model: DistributionModel,
    rng: RngStream | np.random.Generator,
    k_max: int | None = None,
    max_queries: int | None = None,
) -> SessionResult:
    """Drive the propose/validate loop until someone stops.

    The stop discipline is enforced here: no test is proposed once ``k_max``
    confirmations are in (by default the oracle's own ``k_max`` in
    stop-on-confirms mode, unlimited for the leaky baselines).  Mechanism
    errors end the session and are reported as ``stop_reason``.
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    generic = isinstance(mechanism, GenericHoldout)
    if k_max is None and generic and mechanism.mode is Mode.STOP_ON_CONFIRMS:
        k_max = mechanism.k_max

    history: list[MechanismResponse] = []
    view = _ReadOnly(history)
    confirmed: list[Confirmation] = []
    log: list[TranscriptEntry] = []
    reason = None
    if generic and mechanism.is_locked:
        reason = _FROM_LOCK[mechanism.lock_reason]
    while reason is None:
        if k_max is not None and len(confirmed) >= k_max:
            reason = StopReason.K_REACHED
            break
        if max_queries is not None and len(history) >= max_queries:
            reason = StopReason.S_EXHAUSTED
            break
        test = analyst.next(exploration, view, gen)
        if test is None:
            reason = StopReason.ANALYST_STOPPED
            break
        try:
            response = mechanism.respond(test)
        except LockedError as err:
            reason = _FROM_LOCK[err.reason]
            break
        except PoolExhaustedError:
            reason = StopReason.POOL_EXHAUSTED
            break
        except OverfitBudgetExhausted:
            reason = StopReason.OVERFIT_BUDGET_EXHAUSTED
            break
        except TestTooWeakError:
            reason = StopReason.TEST_TOO_WEAK
            break
        history.append(response)
        ok = _accepted(test, response)
        log.append(TranscriptEntry(len(history), test.digest, int(ok)))
        if ok:
            confirmed.append(Confirmation(test, model.hypothesis_is_true(test.loss)))
        if generic and mechanism.is_locked:
            reason = _FROM_LOCK[mechanism.lock_reason]
    return SessionResult(confirmed, tuple(log), reason, history)
