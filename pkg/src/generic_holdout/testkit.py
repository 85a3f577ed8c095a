"""Hypothesis tests, their false-positive bounds, and holdout sizing."""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable

import numpy as np
from scipy import stats

from .core import (
    ConstantLoss,
    Dataset,
    LinearLoss,
    LossFunction,
    RngStream,
    empirical_mean_loss,
)
from .errors import DomainError, EmptyDataError, RangeError

DEFAULT_THRESHOLD = 0.5
# the gapped family: loss in [-1, 1], null mean <= 0, accept above 1/2
GAPPED_GAP = 0.5
GAPPED_RANGE = 2.0


def _digest(kind: str, threshold: float, label: str | None, payload: bytes) -> str:
    h = hashlib.sha256(kind.encode())
    h.update(struct.pack("<d", threshold))
    h.update(b"\x00" if label is None else b"\x01" + label.encode() + b"\x00")
    h.update(payload)
    return h.hexdigest()


@dataclass(frozen=True, eq=False)
class GappedLossTest:
    """Accept iff the empirical mean of a [-1, 1] loss strictly exceeds ``threshold``."""

    loss: LossFunction
    threshold: float = DEFAULT_THRESHOLD
    label: str | None = None

    def __post_init__(self):
        if self.loss.lo < -1.0 or self.loss.hi > 1.0:
            raise RangeError("gapped tests need a loss certified within [-1, 1]")
        if not 0.0 < self.threshold < 1.0:
            raise RangeError(f"threshold must lie in (0, 1), got {self.threshold}")

    def statistic(self, data: Dataset) -> float:
        return empirical_mean_loss(self.loss, data)

    def evaluate(self, data: Dataset) -> int:
        return int(self.statistic(data) > self.threshold)

    def accepts_value(self, value: float) -> bool:
        return value > self.threshold

    def false_positive_bound(self, h: int, calibration: CalibrationTable | None = None) -> float:
        """Worst-case accept probability over null distributions at holdout size ``h``."""
        if isinstance(self.loss, ConstantLoss):
            # deterministic: either never accepts, or the null class is empty
            return 0.0
        return hoeffding_p_bound(h, self.threshold, GAPPED_RANGE)

    def describe(self) -> dict:
        return {"test": "gapped", "threshold": self.threshold, "label": self.label, "loss": self.loss.describe()}

    @cached_property
    def digest(self) -> str:
        return _digest("gapped", self.threshold, self.label, self.loss.canonical_bytes())


@dataclass(frozen=True, eq=False)
class CorrelationTest:
    """Accept iff mean of y * <w, x> (untruncated) strictly exceeds ``threshold``."""

    w: np.ndarray
    threshold: float = 1.0
    label: str | None = None
    loss: LinearLoss = field(init=False, repr=False)

    def __post_init__(self):
        loss = LinearLoss(self.w, truncated=False)
        object.__setattr__(self, "loss", loss)
        object.__setattr__(self, "w", loss.w)

    def statistic(self, data: Dataset) -> float:
        return empirical_mean_loss(self.loss, data)

    def evaluate(self, data: Dataset) -> int:
        return int(self.statistic(data) > self.threshold)

    def accepts_value(self, value: float) -> bool:
        return value > self.threshold

    def false_positive_bound(self, h: int, calibration: CalibrationTable | None = None) -> float:
        if calibration is None or calibration.threshold != self.threshold:
            return 1.0
        bound = calibration.upper_bound(h)
        return 1.0 if bound is None else bound

    def describe(self) -> dict:
        return {
            "test": "correlation",
            "threshold": self.threshold,
            "label": self.label,
            "w": [float(v) for v in self.w],
        }

    @cached_property
    def digest(self) -> str:
        return _digest("correlation", self.threshold, self.label, self.loss.canonical_bytes())


def make_linear_loss(w) -> LinearLoss:
    """Truncated linear loss ``sample -> truncate(y * <w, x>, -1, 1)``."""
    return LinearLoss(w, truncated=True)


def make_correlation_test(w, threshold: float = 1.0) -> CorrelationTest:
    return CorrelationTest(w, threshold)


def evaluate_gapped_test(test: GappedLossTest, data: Dataset) -> int:
    if data.size == 0:
        raise EmptyDataError("cannot evaluate a test on an empty dataset")
    return test.evaluate(data)


# --------------------------------------------------------------------------
# bounds and sizing


def hoeffding_p_bound(h: int, gap: float, range_width: float) -> float:
    """exp(-2 h gap^2 / range_width^2); exp(-h/8) for the gapped family."""
    if h < 0 or gap <= 0 or range_width <= 0:
        raise DomainError("need h >= 0, gap > 0 and range_width > 0")
    return math.exp(-2.0 * h * gap * gap / (range_width * range_width))


def _check_budget(s: int, k: int, p0: float) -> None:
    if s < 1 or k < 1 or k > s:
        raise DomainError(f"need 1 <= k <= s, got s={s}, k={k}")
    if not 0.0 < p0 < 1.0:
        raise DomainError(f"p0 must lie in (0, 1), got {p0}")


def per_test_alpha(s: int, k: int, p0: float, exact: bool = False):
    """Per-test false-positive level p0 / s**k.

    Computed as an exact rational and rounded once, so it is the correctly
    rounded double (``p0 / s`` itself when k = 1) and underflows to 0.0
    rather than raising for huge s**k.  ``exact=True`` returns the
    ``Fraction`` itself.
    """
    _check_budget(s, k, p0)
    alpha = Fraction(p0) / (int(s) ** int(k))
    return alpha if exact else float(alpha)


def log_per_test_alpha(s: int, k: int, p0: float) -> float:
    _check_budget(s, k, p0)
    return math.log(p0) - k * math.log(s)


def _meets_level(h: int, s: int, k: int, p0: float) -> bool:
    alpha = per_test_alpha(s, k, p0)
    if alpha > 0.0:
        return hoeffding_p_bound(h, GAPPED_GAP, GAPPED_RANGE) <= alpha
    return -h / 8.0 <= log_per_test_alpha(s, k, p0)


def required_holdout_size(s: int, k: int, p0: float) -> int:
    """Smallest h whose Hoeffding bound exp(-h/8) is at most p0 / s**k."""
    _check_budget(s, k, p0)
    h = max(0, math.ceil(8.0 * (k * math.log(s) - math.log(p0))))
    # settle float rounding at the boundary against the defining inequality
    while h > 0 and _meets_level(h - 1, s, k, p0):
        h -= 1
    while not _meets_level(h, s, k, p0):
        h += 1
    return h


@dataclass(frozen=True)
class BudgetSpec:
    s_max: int
    k_max: int
    p0: float

    def __post_init__(self):
        if self.s_max == 0 and self.k_max == 0:
            if not 0.0 < self.p0 < 1.0:
                raise DomainError(f"p0 must lie in (0, 1), got {self.p0}")
            return
        _check_budget(self.s_max, self.k_max, self.p0)

    @property
    def alpha(self) -> float:
        if self.s_max == 0:
            return self.p0
        return per_test_alpha(self.s_max, self.k_max, self.p0)

    @property
    def log_alpha(self) -> float:
        if self.s_max == 0:
            return math.log(self.p0)
        return log_per_test_alpha(self.s_max, self.k_max, self.p0)

    def admits(self, bound: float) -> bool:
        """Is a test with false-positive ``bound`` strong enough for this budget?"""
        alpha = self.alpha
        if alpha > 0.0:
            return bound <= alpha
        return bound == 0.0 or math.log(bound) <= self.log_alpha


# --------------------------------------------------------------------------
# correlation-test calibration


@dataclass(frozen=True)
class CalibrationEntry:
    p_hat: float
    replications: int
    upper: float


@dataclass(frozen=True)
class CalibrationTable:
    """Monte Carlo null exceedance rates of the correlation statistic, keyed by n."""

    threshold: float
    d: int
    level: float
    entries: dict[int, CalibrationEntry]

    def upper_bound(self, n: int) -> float | None:
        entry = self.entries.get(int(n))
        return None if entry is None else entry.upper

    def to_json(self) -> dict:
        return {
            "family": "correlation",
            "threshold": self.threshold,
            "d": self.d,
            "level": self.level,
            "entries": [
                {"n": n, "p_hat": e.p_hat, "replications": e.replications, "upper": e.upper}
                for n, e in sorted(self.entries.items())
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> CalibrationTable:
        entries = {
            int(e["n"]): CalibrationEntry(float(e["p_hat"]), int(e["replications"]), float(e["upper"]))
            for e in obj["entries"]
        }
        return cls(float(obj["threshold"]), int(obj["d"]), float(obj["level"]), entries)


def binomial_upper_bound(successes: int, trials: int, level: float = 0.99) -> float:
    """One-sided exact (Clopper-Pearson) upper confidence bound."""
    if successes >= trials:
        return 1.0
    return float(stats.beta.ppf(level, successes + 1, trials - successes))


def _correlation_exceedances(n: int, R: int, threshold: float, gen: np.random.Generator, chunk_cells: int = 4_000_000) -> int:
    # under the global null y*<w,x> has the law of a product of two
    # independent standard normals for every unit w, so w = e_1 suffices
    hits = 0
    per_chunk = max(1, chunk_cells // max(n, 1))
    done = 0
    while done < R:
        m = min(per_chunk, R - done)
        x = gen.standard_normal((m, n))
        y = gen.standard_normal((m, n))
        stat = np.add.reduce(x * y, axis=1) / n
        hits += int(np.count_nonzero(stat > threshold))
        done += m
    return hits


def calibrate_correlation_null(
    ns: int | Iterable[int],
    d: int,
    R: int,
    rng: RngStream,
    threshold: float = 1.0,
    level: float = 0.99,
) -> CalibrationTable:
    """Estimate Pr[correlation statistic > threshold] under the global null.

    Each n in ``ns`` gets its own substream and R fresh simulations.
    """
    if R < 10_000:
        raise DomainError("calibration needs R >= 10^4 replications")
    if d < 1:
        raise DomainError("d must be at least 1")
    if isinstance(ns, (int, np.integer)):
        ns = [int(ns)]
    entries = {}
    for n in sorted({int(v) for v in ns}):
        if n < 1:
            raise DomainError("calibration sizes must be positive")
        hits = _correlation_exceedances(n, R, threshold, rng.child(n).generator())
        entries[n] = CalibrationEntry(hits / R, R, binomial_upper_bound(hits, R, level))
    return CalibrationTable(threshold, d, level, entries)
