"""Service and arrival laws, reproducible random streams, exponential tilting.

Service models carry their cumulant generating function (CGF) together
with an explicit open domain on which it is finite.  Evaluating the CGF
outside that domain, including its boundary, gives ``+inf``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "RngSpec",
    "ServiceModel",
    "Exponential",
    "Deterministic",
    "Gamma",
    "Empirical",
    "ArrivalModel",
    "as_generator",
    "sample_uniform_order_stats",
    "order_stats_from_exponentials",
    "sample_service",
    "tilt",
]


@dataclass(frozen=True)
class RngSpec:
    """A (seed, stream) pair naming one independent random stream."""

    seed: int
    stream: int = 0

    def __post_init__(self):
        if self.stream < 0:
            raise ValueError("stream id must be nonnegative")

    def generator(self, *substream: int) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream, *substream))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, index: int) -> "RngSpec":
        # distinct streams for per-chunk work, stable under re-partitioning
        return RngSpec(self.seed, self.stream * 1_000_003 + index + 1)


RngLike = Union[RngSpec, np.random.Generator, int, None]


def as_generator(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngSpec):
        return rng.generator()
    return np.random.default_rng(rng)


class ServiceModel:
    """Base class for i.i.d. service-time laws with all mass on (0, inf).

    Subclasses define ``domain`` (open interval of finite CGF), ``support``
    (essential infimum and supremum), ``mean``, ``_cgf``, ``cgf_prime``,
    ``sample`` and ``tilt``.  ``rate``/``rate_slope`` give the per-unit
    Legendre transform and its derivative in closed form where one is
    known; they are used by the path optimizers, not as a check on the
    generic numerical transform.
    """

    kind: str = "abstract"
    domain: tuple[float, float]
    support: tuple[float, float]

    @property
    def mean(self) -> float:
        raise NotImplementedError

    def _cgf(self, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def cgf(self, theta):
        th = np.asarray(theta, dtype=float)
        lo, hi = self.domain
        inside = (th > lo) & (th < hi)
        with np.errstate(all="ignore"):
            out = np.where(inside, self._cgf(np.where(inside, th, 0.0)), np.inf)
        return float(out) if out.ndim == 0 else out

    def cgf_prime(self, theta):
        raise NotImplementedError

    def in_domain(self, theta: float) -> bool:
        lo, hi = self.domain
        return lo < theta < hi

    def sample(self, size, rng: RngLike = None) -> np.ndarray:
        raise NotImplementedError

    def tilt(self, theta: float) -> "ServiceModel":
        raise NotImplementedError

    def rate(self, z):
        raise NotImplementedError

    def rate_slope(self, z):
        raise NotImplementedError

    def params(self) -> dict:
        raise NotImplementedError


def _check_tilt(model: ServiceModel, theta: float) -> None:
    if not model.in_domain(theta):
        raise ValueError(f"tilt {theta} is not interior to the CGF domain {model.domain}")


@dataclass(frozen=True)
class Exponential(ServiceModel):
    rate_param: float = 1.0
    kind: str = field(default="exponential", init=False)

    def __post_init__(self):
        if not self.rate_param > 0:
            raise ValueError("exponential rate must be positive")

    @classmethod
    def with_mean(cls, mean: float) -> "Exponential":
        return cls(1.0 / mean)

    @property
    def domain(self):
        return (-math.inf, self.rate_param)

    @property
    def support(self):
        return (0.0, math.inf)

    @property
    def mean(self) -> float:
        return 1.0 / self.rate_param

    def _cgf(self, theta):
        return -np.log1p(-theta / self.rate_param)

    def cgf_prime(self, theta):
        with np.errstate(divide="ignore"):  # inf at the domain edge
            return 1.0 / (self.rate_param - np.asarray(theta, dtype=float))

    def sample(self, size, rng: RngLike = None):
        return as_generator(rng).standard_exponential(size) / self.rate_param

    def tilt(self, theta: float) -> "Exponential":
        _check_tilt(self, theta)
        return Exponential(self.rate_param - theta)

    def rate(self, z):
        z = np.asarray(z, dtype=float)
        r = self.rate_param
        with np.errstate(all="ignore"):
            out = np.where(z > 0, r * z - 1.0 - np.log(r * np.where(z > 0, z, 1.0)), np.inf)
        return float(out) if out.ndim == 0 else out

    def rate_slope(self, z):
        z = np.asarray(z, dtype=float)
        with np.errstate(divide="ignore"):
            return self.rate_param - 1.0 / z

    def params(self):
        return {"rate": self.rate_param}


@dataclass(frozen=True)
class Gamma(ServiceModel):
    shape: float = 1.0
    scale: float = 1.0
    kind: str = field(default="gamma", init=False)

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError("gamma shape and scale must be positive")

    @property
    def domain(self):
        return (-math.inf, 1.0 / self.scale)

    @property
    def support(self):
        return (0.0, math.inf)

    @property
    def mean(self) -> float:
        return self.shape * self.scale

    def _cgf(self, theta):
        return -self.shape * np.log1p(-self.scale * theta)

    def cgf_prime(self, theta):
        return self.shape * self.scale / (1.0 - self.scale * np.asarray(theta, dtype=float))

    def sample(self, size, rng: RngLike = None):
        return as_generator(rng).gamma(self.shape, self.scale, size)

    def tilt(self, theta: float) -> "Gamma":
        _check_tilt(self, theta)
        return Gamma(self.shape, self.scale / (1.0 - self.scale * theta))

    def rate(self, z):
        z = np.asarray(z, dtype=float)
        k, s = self.shape, self.scale
        zz = np.where(z > 0, z, 1.0)
        out = np.where(z > 0, zz / s - k - k * np.log(zz / (k * s)), np.inf)
        return float(out) if out.ndim == 0 else out

    def rate_slope(self, z):
        z = np.asarray(z, dtype=float)
        with np.errstate(divide="ignore"):
            return 1.0 / self.scale - self.shape / z

    def params(self):
        return {"shape": self.shape, "scale": self.scale}


@dataclass(frozen=True)
class Deterministic(ServiceModel):
    value: float = 1.0
    kind: str = field(default="deterministic", init=False)

    def __post_init__(self):
        if not self.value > 0:
            raise ValueError("deterministic service must be strictly positive")

    @property
    def domain(self):
        return (-math.inf, math.inf)

    @property
    def support(self):
        return (self.value, self.value)

    @property
    def mean(self) -> float:
        return self.value

    def _cgf(self, theta):
        return theta * self.value

    def cgf_prime(self, theta):
        return np.full_like(np.asarray(theta, dtype=float), self.value)

    def sample(self, size, rng: RngLike = None):
        as_generator(rng)
        return np.full(size, self.value, dtype=float)

    def tilt(self, theta: float) -> "Deterministic":
        _check_tilt(self, theta)
        return self

    def rate(self, z):
        z = np.asarray(z, dtype=float)
        out = np.where(np.abs(z - self.value) <= 1e-12 * self.value, 0.0, np.inf)
        return float(out) if out.ndim == 0 else out

    def params(self):
        return {"value": self.value}


@dataclass(frozen=True)
class Empirical(ServiceModel):
    """Finite-support law with positive atoms and weights summing to one."""

    atoms: tuple[float, ...] = (1.0,)
    weights: tuple[float, ...] = (1.0,)
    kind: str = field(default="empirical", init=False)

    def __post_init__(self):
        a = np.asarray(self.atoms, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if a.shape != w.shape or a.ndim != 1 or a.size == 0:
            raise ValueError("atoms and weights must be equal-length nonempty sequences")
        if np.any(a <= 0):
            raise ValueError("service atoms must be strictly positive")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        order = np.argsort(a)
        object.__setattr__(self, "atoms", tuple(float(x) for x in a[order]))
        object.__setattr__(self, "weights", tuple(float(x) for x in (w / w.sum())[order]))

    @classmethod
    def from_dict(cls, mapping: dict) -> "Empirical":
        return cls(tuple(mapping), tuple(mapping.values()))

    @property
    def _a(self):
        return np.asarray(self.atoms)

    @property
    def _logw(self):
        return np.log(np.asarray(self.weights))

    @property
    def domain(self):
        return (-math.inf, math.inf)

    @property
    def support(self):
        return (self.atoms[0], self.atoms[-1])

    @property
    def mean(self) -> float:
        return float(np.dot(self.atoms, self.weights))

    def _logits(self, theta):
        logits = self._logw + np.multiply.outer(np.asarray(theta, dtype=float), self._a)
        top = logits.max(axis=-1, keepdims=True)
        return logits - top, top[..., 0]

    def _cgf(self, theta):
        shifted, top = self._logits(theta)
        return top + np.log(np.exp(shifted).sum(axis=-1))

    def cgf_prime(self, theta):
        # tilted mean via a max-shifted softmax
        p = np.exp(self._logits(theta)[0])
        return (p @ self._a) / p.sum(axis=-1)

    def sample(self, size, rng: RngLike = None):
        g = as_generator(rng)
        idx = g.choice(len(self.atoms), size=size, p=np.asarray(self.weights))
        return self._a[idx]

    def tilt(self, theta: float) -> "Empirical":
        _check_tilt(self, theta)
        logits = self._logw + theta * self._a
        return Empirical(self.atoms, tuple(np.exp(logits - logsumexp(logits))))

    def _solve_theta(self, z: np.ndarray) -> np.ndarray:
        # invert the increasing map theta -> cgf'(theta) by vectorized bisection
        lo = np.full(z.shape, -1.0)
        hi = np.full(z.shape, 1.0)
        for _ in range(200):
            bad = self.cgf_prime(lo) > z
            if not bad.any():
                break
            lo = np.where(bad, 2.0 * lo, lo)
        for _ in range(200):
            bad = self.cgf_prime(hi) < z
            if not bad.any():
                break
            hi = np.where(bad, 2.0 * hi, hi)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            up = self.cgf_prime(mid) < z
            lo = np.where(up, mid, lo)
            hi = np.where(up, hi, mid)
        return 0.5 * (lo + hi)

    def rate(self, z):
        z = np.asarray(z, dtype=float)
        a_min, a_max = self.support
        out = np.full(z.shape, np.inf)
        inner = (z > a_min) & (z < a_max)
        if inner.any():
            th = self._solve_theta(z[inner])
            out[inner] = th * z[inner] - self.cgf(th)
        out[z == a_min] = -math.log(self.weights[0])
        out[z == a_max] = -math.log(self.weights[-1])
        return float(out) if out.ndim == 0 else out

    def rate_slope(self, z):
        z = np.asarray(z, dtype=float)
        a_min, a_max = self.support
        out = np.where(z <= a_min, -np.inf, np.inf)
        inner = (z > a_min) & (z < a_max)
        if inner.any():
            out[inner] = self._solve_theta(z[inner])
        return out

    def params(self):
        return {"atoms": list(self.atoms), "weights": list(self.weights)}


def tilt(model: ServiceModel, theta: float) -> ServiceModel:
    """Exponentially tilted law: density ratio proportional to exp(theta x)."""
    return model.tilt(theta)


def sample_service(n: int, model: ServiceModel, rng: RngLike = None) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be positive")
    return model.sample(n, rng)


def order_stats_from_exponentials(xi: np.ndarray) -> np.ndarray:
    """Map n+1 exponentials (last axis) to n uniform order statistics Z_j/Z_{n+1}."""
    xi = np.asarray(xi, dtype=float)
    z = np.cumsum(xi, axis=-1)
    return z[..., :-1] / z[..., -1:]


def sample_uniform_order_stats(n: int, method: str = "sort", rng: RngLike = None,
                               reps: int | None = None) -> np.ndarray:
    """Ordered Uniform(0,1) epochs, shape ``(n,)`` or ``(reps, n)``."""
    if n < 1:
        raise ValueError("n must be positive")
    g = as_generator(rng)
    shape = (n,) if reps is None else (reps, n)
    if method == "sort":
        return np.sort(g.random(shape), axis=-1)
    if method == "expo-ratio":
        xi = g.standard_exponential(shape[:-1] + (n + 1,))
        return order_stats_from_exponentials(xi)
    raise ValueError(f"unknown order-statistics method {method!r}")


@dataclass(frozen=True)
class ArrivalModel:
    """Arrival-epoch law F with its quantile function."""

    kind: str
    cdf: Callable[[np.ndarray], np.ndarray] = field(compare=False)
    quantile: Callable[[np.ndarray], np.ndarray] = field(compare=False)
    absolutely_continuous: bool = True
    strictly_increasing: bool = True
    label: str = ""

    @classmethod
    def uniform(cls) -> "ArrivalModel":
        return cls("uniform01", _uniform_cdf, _identity, label="uniform")

    @classmethod
    def power(cls, k: float) -> "ArrivalModel":
        """F(y) = y**k on [0, 1]."""
        if not k > 0:
            raise ValueError("power must be positive")
        return cls(
            "general",
            lambda y: np.clip(np.asarray(y, dtype=float), 0.0, 1.0) ** k,
            lambda u: np.asarray(u, dtype=float) ** (1.0 / k),
            label=f"power({k:g})",
        )

    def epochs(self, uniforms: np.ndarray) -> np.ndarray:
        """Quantile transform of sorted uniforms; order is preserved."""
        if self.kind == "uniform01":
            return uniforms
        return np.asarray(self.quantile(uniforms), dtype=float)


def _identity(u):
    return np.asarray(u, dtype=float)


def _uniform_cdf(y):
    return np.clip(np.asarray(y, dtype=float), 0.0, 1.0)
