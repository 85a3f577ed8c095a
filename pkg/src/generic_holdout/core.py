"""Data model, population models, partitioning and seeded randomness.

Everything random in the package flows from an :class:`RngStream`, a
(root seed, path) pair that is turned into a numpy ``Generator`` on demand.
Two streams with the same seed and path produce the same values; streams
with different paths are statistically independent (numpy ``SeedSequence``
hashes the path into the generator state).
"""

from __future__ import annotations

import math
import struct
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np
from scipy import integrate, optimize, special

from .errors import DomainError, EmptyDataError, NormError, RangeError, SizeError

PRNG_ID = "numpy-PCG64/SeedSequence(entropy=root_seed,spawn_key=path)"

_U64 = 2**64
UNIT_NORM_TOL = 1e-9


# --------------------------------------------------------------------------
# randomness


@dataclass(frozen=True)
class RngStream:
    """Hierarchical, stateless seed handle.

    ``RngStream(7).child(3, 1)`` names the substream at path ``(3, 1)``
    under root seed 7; nothing is drawn until :meth:`generator` is called.
    """

    root_seed: int
    path: tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= int(self.root_seed) < _U64:
            raise RangeError(f"root_seed must fit in 64 unsigned bits, got {self.root_seed}")
        path = tuple(int(p) for p in self.path)
        if any(p < 0 for p in path):
            raise RangeError("substream labels must be non-negative")
        object.__setattr__(self, "root_seed", int(self.root_seed))
        object.__setattr__(self, "path", path)

    def child(self, *labels: int) -> RngStream:
        return RngStream(self.root_seed, self.path + tuple(labels))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.root_seed, spawn_key=self.path)
        return np.random.Generator(np.random.PCG64(seq))


# --------------------------------------------------------------------------
# data containers


@dataclass(frozen=True)
class Sample:
    x: np.ndarray
    y: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64).reshape(-1)
        if x.size < 1:
            raise SizeError("a sample needs at least one feature")
        if not (np.all(np.isfinite(x)) and math.isfinite(self.y)):
            raise DomainError("sample entries must be finite")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", float(self.y))

    @property
    def d(self) -> int:
        return self.x.size


@dataclass(frozen=True, eq=False)
class Dataset:
    """An ordered, immutable collection of samples sharing dimension ``d``.

    Stored column-wise: ``X`` has shape ``(n, d)`` and ``y`` shape ``(n,)``.
    """

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64, copy=True)
        y = np.array(self.y, dtype=np.float64, copy=True).reshape(-1)
        if X.ndim != 2:
            raise SizeError(f"X must be two-dimensional, got shape {X.shape}")
        if X.shape[1] < 1:
            raise SizeError("feature dimension d must be at least 1")
        if X.shape[0] != y.shape[0]:
            raise SizeError(f"{X.shape[0]} feature rows but {y.shape[0]} responses")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DomainError("dataset entries must be finite")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @classmethod
    def empty(cls, d: int) -> Dataset:
        return cls(np.empty((0, d)), np.empty(0))

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], d: int | None = None) -> Dataset:
        samples = list(samples)
        if not samples:
            if d is None:
                raise SizeError("cannot infer d from an empty sample list")
            return cls.empty(d)
        dims = {s.d for s in samples}
        if len(dims) != 1 or (d is not None and dims != {d}):
            raise SizeError(f"samples have mismatched dimensions {sorted(dims)}")
        return cls(np.stack([s.x for s in samples]), np.array([s.y for s in samples]))

    @property
    def size(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.size

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.X[i], self.y[i])

    def __iter__(self) -> Iterator[Sample]:
        for i in range(self.size):
            yield self[i]

    @property
    def samples(self) -> list[Sample]:
        return list(self)

    def take(self, indices) -> Dataset:
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(self.X[idx], self.y[idx])

    def equals(self, other: Dataset) -> bool:
        return (
            self.X.shape == other.X.shape
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.y, other.y)
        )


@dataclass(frozen=True, eq=False)
class DataPartition:
    exploration: Dataset
    holdout: Dataset


# --------------------------------------------------------------------------
# population models


def _unit(w, what="w") -> np.ndarray:
    w = np.array(w, dtype=np.float64).reshape(-1)
    norm = math.sqrt(float(w @ w)) if w.size else 0.0
    # a non-finite entry makes the norm non-finite
    if not abs(norm - 1.0) <= UNIT_NORM_TOL:
        raise NormError(f"{what} must be a finite unit vector, got norm {norm!r}")
    w.setflags(write=False)
    return w


class DistributionModel(ABC):
    """A simulated population over (x, y) with x in R^d."""

    d: int

    @abstractmethod
    def sample(self, n: int, gen: np.random.Generator) -> Dataset: ...

    @abstractmethod
    def hypothesis_is_true(self, loss: LossFunction) -> bool:
        """Ground truth: does the population mean of ``loss`` exceed zero?"""

    @property
    def is_global_null(self) -> bool:
        return False

    @abstractmethod
    def to_dict(self) -> dict: ...


@dataclass(frozen=True)
class GlobalNull(DistributionModel):
    """All d+1 coordinates i.i.d. standard normal.

    Every linear hypothesis is false here: y is independent of x, so
    E[y <w, x>] = 0 for every w.
    """

    d: int

    def __post_init__(self):
        if int(self.d) < 1:
            raise SizeError("d must be at least 1")

    def sample(self, n, gen):
        X = gen.standard_normal((n, self.d))
        y = gen.standard_normal(n)
        return Dataset(X, y)

    def hypothesis_is_true(self, loss):
        if isinstance(loss, ConstantLoss):
            return loss.value > 0
        return False

    @property
    def is_global_null(self):
        return True

    def to_dict(self):
        return {"kind": "global_null", "d": self.d}


def _clipped_normal_mean(m, s):
    """E[clip(N(m, s^2), -1, 1)], vectorised over arrays m and s > 0."""
    a = (-1.0 - m) / s
    b = (1.0 - m) / s
    Pa, Pb = special.ndtr(a), special.ndtr(b)
    pa = np.exp(-0.5 * a * a) / math.sqrt(2 * math.pi)
    pb = np.exp(-0.5 * b * b) / math.sqrt(2 * math.pi)
    return -Pa + (1.0 - Pb) + m * (Pb - Pa) - s * (pb - pa)


def planted_loss_mean(scale: float, sigma_y: float) -> float:
    """Population mean of truncate(y * z) when y = scale * z + sigma_y * eps.

    Here z = <w_true, x> and eps are independent standard normals.
    Conditional on z, y * z is normal with mean scale*z^2 and standard
    deviation sigma_y*|z|, whose clipped mean has a closed form; the outer
    expectation over z is a one-dimensional quadrature.
    """
    if scale < 0 or sigma_y < 0:
        raise DomainError("scale and sigma_y must be non-negative")
    if sigma_y == 0.0:
        if scale == 0.0:
            return 0.0
        # E[min(scale z^2, 1)] in closed form
        t = 1.0 / math.sqrt(scale)
        phi_t = math.exp(-0.5 * t * t) / math.sqrt(2 * math.pi)
        inner = (2 * special.ndtr(t) - 1) - 2 * t * phi_t
        return float(scale * inner + 2 * (1 - special.ndtr(t)))

    def integrand(z):
        return 2.0 * _clipped_normal_mean(scale * z * z, sigma_y * z) * math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)

    knots = [1.0 / math.sqrt(scale)] if scale > 0 else []
    val, _ = integrate.quad(integrand, 1e-300, 12.0, points=knots or None, limit=200, epsabs=1e-12, epsrel=1e-10)
    return float(val)


_SCALE_LO, _SCALE_HI = 1e-9, 1e12


@lru_cache(maxsize=256)
def calibrate_planted_scale(mu: float, sigma_y: float) -> float:
    """Pre-truncation scale giving truncated-loss mean ``mu`` for w_true.

    ``mu = 1`` is only approached in the limit; it is mapped to the largest
    scale searched (1e12), where the mean is within ~1e-6 of one.
    """
    if not 0 < mu <= 1:
        raise DomainError(f"mu must lie in (0, 1], got {mu}")
    top = planted_loss_mean(_SCALE_HI, sigma_y)
    if mu >= top:
        return _SCALE_HI
    f = lambda log_a: planted_loss_mean(math.exp(log_a), sigma_y) - mu  # noqa: E731
    root = optimize.brentq(f, math.log(_SCALE_LO), math.log(_SCALE_HI), xtol=1e-14, rtol=1e-14)
    return math.exp(root)


@dataclass(frozen=True)
class PlantedLinear(DistributionModel):
    """x i.i.d. standard normal, y = scale * <w_true, x> + sigma_y * eps.

    ``scale`` equals ``mu * c_norm`` where ``c_norm`` is calibrated so that
    the truncated loss of ``w_true`` has population mean exactly ``mu``.
    """

    d: int
    w_true: np.ndarray
    mu: float
    sigma_y: float = 0.0
    scale: float = field(init=False, repr=False)

    def __post_init__(self):
        if int(self.d) < 1:
            raise SizeError("d must be at least 1")
        w = _unit(self.w_true, "w_true")
        if w.size != self.d:
            raise SizeError(f"w_true has length {w.size}, expected d={self.d}")
        if not 0 < self.mu <= 1:
            raise DomainError(f"mu must lie in (0, 1], got {self.mu}")
        if not self.sigma_y >= 0:
            raise DomainError("sigma_y must be non-negative")
        object.__setattr__(self, "w_true", w)
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "sigma_y", float(self.sigma_y))
        object.__setattr__(self, "scale", calibrate_planted_scale(self.mu, self.sigma_y))

    @property
    def c_norm(self) -> float:
        return self.scale / self.mu

    def sample(self, n, gen):
        X = gen.standard_normal((n, self.d))
        noise = gen.standard_normal(n)
        y = self.scale * (X @ self.w_true) + self.sigma_y * noise
        return Dataset(X, y)

    def hypothesis_is_true(self, loss):
        if isinstance(loss, ConstantLoss):
            return loss.value > 0
        if isinstance(loss, LinearLoss):
            # E[y <w,x>] = scale * <w, w_true>; truncation preserves the sign
            return float(loss.w @ self.w_true) > 0
        raise TypeError(f"no ground truth for {type(loss).__name__}")

    def to_dict(self):
        return {
            "kind": "planted_linear",
            "d": self.d,
            "w_true": [float(v) for v in self.w_true],
            "mu": self.mu,
            "sigma_y": self.sigma_y,
        }

    def __eq__(self, other):
        return (
            isinstance(other, PlantedLinear)
            and self.d == other.d
            and np.array_equal(self.w_true, other.w_true)
            and self.mu == other.mu
            and self.sigma_y == other.sigma_y
        )

    __hash__ = None


def sample_dataset(model: DistributionModel, n: int, rng: RngStream) -> Dataset:
    if n < 0:
        raise SizeError(f"n must be non-negative, got {n}")
    return model.sample(int(n), rng.generator())


def partition(data: Dataset, holdout_size: int, rng: RngStream) -> DataPartition:
    """Split ``data`` into exploration and holdout by a seeded shuffle.

    The holdout is a uniformly random subset; both parts keep the source
    order.
    """
    n = data.size
    if not 0 <= holdout_size <= n:
        raise SizeError(f"holdout_size {holdout_size} outside [0, {n}]")
    perm = rng.generator().permutation(n)
    mask = np.zeros(n, dtype=bool)
    mask[perm[:holdout_size]] = True
    return DataPartition(
        exploration=Dataset(data.X[~mask], data.y[~mask]),
        holdout=Dataset(data.X[mask], data.y[mask]),
    )


def truncate(v: float, lo: float = -1.0, hi: float = 1.0) -> float:
    if lo > hi:
        raise RangeError(f"empty interval [{lo}, {hi}]")
    return min(max(v, lo), hi)


# --------------------------------------------------------------------------
# losses


class LossFunction(ABC):
    """A per-sample loss with a declared output range."""

    lo: float = -1.0
    hi: float = 1.0
    dim: int | None = None

    @abstractmethod
    def values(self, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Per-sample losses for the rows of ``X`` and entries of ``y``."""

    def __call__(self, sample: Sample) -> float:
        return float(self.values(sample.x[None, :], np.array([sample.y]))[0])

    @abstractmethod
    def describe(self) -> dict: ...

    @abstractmethod
    def canonical_bytes(self) -> bytes:
        """Platform-independent encoding used to fingerprint tests."""


@dataclass(frozen=True)
class ConstantLoss(LossFunction):
    value: float

    def __post_init__(self):
        if not -1.0 <= self.value <= 1.0:
            raise RangeError("constant losses must lie in [-1, 1]")
        object.__setattr__(self, "value", float(self.value))

    def values(self, X, y):
        return np.full(X.shape[0], self.value)

    def describe(self):
        return {"kind": "constant", "value": self.value}

    def canonical_bytes(self):
        return b"constant|" + struct.pack("<d", self.value)


@dataclass(frozen=True, eq=False)
class LinearLoss(LossFunction):
    """sample -> y * <w, x>, clamped to [-1, 1] when ``truncated``."""

    w: np.ndarray
    truncated: bool = True

    def __post_init__(self):
        object.__setattr__(self, "w", _unit(self.w))
        if not self.truncated:
            object.__setattr__(self, "lo", -math.inf)
            object.__setattr__(self, "hi", math.inf)

    @property
    def dim(self) -> int:
        return self.w.size

    def values(self, X, y):
        v = y * (X @ self.w)
        if self.truncated:
            np.minimum(v, 1.0, out=v)
            np.maximum(v, -1.0, out=v)
        return v

    def describe(self):
        return {
            "kind": "linear_truncated" if self.truncated else "linear",
            "w": [float(v) for v in self.w],
        }

    def canonical_bytes(self):
        kind = b"linear_truncated|" if self.truncated else b"linear|"
        return kind + self.w.astype("<f8").tobytes()


def mean_of(values: np.ndarray) -> float:
    # numpy reduces contiguous float arrays with pairwise summation
    return float(np.add.reduce(values) / values.size)


def empirical_mean_loss(loss: LossFunction, data: Dataset) -> float:
    if data.size == 0:
        raise EmptyDataError("mean loss of an empty dataset")
    if loss.dim is not None and loss.dim != data.d:
        raise SizeError(f"loss expects d={loss.dim}, data has d={data.d}")
    return mean_of(loss.values(data.X, data.y))
