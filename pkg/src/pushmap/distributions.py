"""Base and target measures: sampling, densities, CDFs and quantiles.

Also hosts the exact Ornstein-Uhlenbeck marginal sampler used to produce
noised targets ``rho_t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence, Union

import numpy as np
from scipy import special

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class UnsupportedError(ValueError):
    """The requested operation is not defined for this distribution."""


# --------------------------------------------------------------------------
# random streams
# --------------------------------------------------------------------------

class Rng:
    """Seeded stream over numpy's counter-based Philox generator.

    Normals are produced by Box-Muller from the uniform stream so the
    transformation is fixed here and not left to numpy's internals.
    """

    def __init__(self, seed: int, tag: Sequence[int] = ()):
        if seed is None:
            raise ValueError("an explicit seed is required")
        self.seed = int(seed)
        self.tag = tuple(int(t) for t in tag)
        ss = np.random.SeedSequence([self.seed, *self.tag])
        self.gen = np.random.Generator(np.random.Philox(ss))

    def fork(self, *tag: int) -> "Rng":
        """Independent child stream; deterministic in (seed, tag)."""
        return Rng(self.seed, self.tag + tuple(tag))

    def uniform(self, size) -> np.ndarray:
        return self.gen.random(size)

    def normal(self, size) -> np.ndarray:
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape))
        m = (n + 1) // 2
        u1 = 1.0 - self.gen.random(m)  # (0, 1]
        u2 = self.gen.random(m)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
        return z[:n].reshape(shape)

    def integers(self, high: int, size) -> np.ndarray:
        return self.gen.integers(0, high, size=size)


# --------------------------------------------------------------------------
# distribution specs
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class StdGaussian:
    dim: int = 1


@dataclass(frozen=True)
class Uniform:
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError("Uniform needs hi > lo")


@dataclass(frozen=True)
class UnionOfIntervals:
    """Piecewise-constant density on disjoint intervals with given masses."""

    intervals: tuple
    weights: tuple | None = None

    def __post_init__(self):
        ivs = tuple((float(a), float(b)) for a, b in self.intervals)
        if not ivs:
            raise ValueError("need at least one interval")
        w = self.weights
        if w is None:
            w = tuple(1.0 / len(ivs) for _ in ivs)
        w = tuple(float(v) for v in w)
        if len(w) != len(ivs):
            raise ValueError("one weight per interval")
        for a, b in ivs:
            if not b > a:
                raise ValueError(f"empty interval ({a}, {b})")
        for (_, b), (a, _) in zip(ivs[:-1], ivs[1:]):
            if a < b:
                raise ValueError("intervals must be sorted and disjoint")
        _check_weights(w)
        object.__setattr__(self, "intervals", ivs)
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class GaussianMixture:
    """1-D mixture; components are (mean, variance, weight) triples."""

    components: tuple

    def __post_init__(self):
        comps = tuple((float(m), float(v), float(w)) for m, v, w in self.components)
        if not comps:
            raise ValueError("need at least one component")
        if any(v <= 0 for _, v, _ in comps):
            raise ValueError("component variances must be positive")
        _check_weights([w for _, _, w in comps])
        object.__setattr__(self, "components", comps)

    @property
    def means(self):
        return np.array([c[0] for c in self.components])

    @property
    def variances(self):
        return np.array([c[1] for c in self.components])

    @property
    def weights(self):
        return np.array([c[2] for c in self.components])


@dataclass(frozen=True, eq=False)
class Empirical:
    samples: np.ndarray = field(repr=False)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim == 1:
            s = s[:, None]
        if s.shape[0] == 0:
            raise ValueError("Empirical needs at least one sample")
        object.__setattr__(self, "samples", s)


DistributionSpec = Union[StdGaussian, Uniform, UnionOfIntervals, GaussianMixture, Empirical]


def gaussian(mean: float, var: float) -> GaussianMixture:
    return GaussianMixture(((mean, var, 1.0),))


def _check_weights(w):
    if any(v <= 0 for v in w):
        raise ValueError("weights must be positive")
    if abs(sum(w) - 1.0) > 1e-12:
        raise ValueError(f"weights sum to {sum(w)!r}, not 1")


def dim(spec: DistributionSpec) -> int:
    if isinstance(spec, StdGaussian):
        return spec.dim
    if isinstance(spec, Empirical):
        return spec.samples.shape[1]
    return 1


# --------------------------------------------------------------------------
# sampling
# --------------------------------------------------------------------------

def sample(spec: DistributionSpec, n: int, rng: Rng) -> np.ndarray:
    """``n`` i.i.d. draws as an (n, d) array."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if isinstance(spec, StdGaussian):
        return rng.normal((n, spec.dim))
    if isinstance(spec, Empirical):
        return spec.samples[rng.integers(spec.samples.shape[0], n)]
    if isinstance(spec, GaussianMixture):
        k = _categorical(spec.weights, n, rng)
        z = rng.normal(n)
        return (spec.means[k] + np.sqrt(spec.variances[k]) * z)[:, None]
    # interval-type specs via inverse CDF
    _, q = cdf_quantile(spec)
    return q(rng.uniform(n))[:, None]


def _categorical(weights, n, rng):
    cum = np.cumsum(weights)
    k = np.searchsorted(cum, rng.uniform(n) * cum[-1], side="right")
    return np.minimum(k, len(weights) - 1)


# --------------------------------------------------------------------------
# densities
# --------------------------------------------------------------------------

def log_density(spec: DistributionSpec, x) -> np.ndarray:
    """Log of the Lebesgue density; ``-inf`` outside the support.

    1-D specs accept scalars or arrays of points; ``StdGaussian(d)`` accepts
    arrays whose last axis has length d.
    """
    if isinstance(spec, Empirical):
        raise UnsupportedError("an empirical measure has no Lebesgue density")
    x = np.asarray(x, dtype=np.float64)
    if isinstance(spec, StdGaussian):
        if spec.dim == 1:
            return -0.5 * x * x - LOG_SQRT_2PI
        if x.shape[-1] != spec.dim:
            raise ValueError(f"expected points of dimension {spec.dim}")
        return -0.5 * (x * x).sum(axis=-1) - spec.dim * LOG_SQRT_2PI
    if isinstance(spec, Uniform):
        inside = (x >= spec.lo) & (x <= spec.hi)
        return np.where(inside, -math.log(spec.hi - spec.lo), -np.inf)
    if isinstance(spec, UnionOfIntervals):
        out = np.full(x.shape, -np.inf)
        for (a, b), w in zip(spec.intervals, spec.weights):
            out = np.where((x >= a) & (x <= b), math.log(w / (b - a)), out)
        return out
    if isinstance(spec, GaussianMixture):
        xs = x[..., None]
        m, v, w = spec.means, spec.variances, spec.weights
        terms = np.log(w) - 0.5 * np.log(v) - LOG_SQRT_2PI - 0.5 * (xs - m) ** 2 / v
        return special.logsumexp(terms, axis=-1)
    raise TypeError(f"not a distribution spec: {spec!r}")


# --------------------------------------------------------------------------
# CDF / quantile
# --------------------------------------------------------------------------

def std_normal_cdf(x):
    return special.ndtr(x)


def std_normal_quantile(u):
    u = np.asarray(u, dtype=np.float64)
    z = special.ndtri(u)
    # one Newton polish step on the CDF
    ok = np.isfinite(z)
    zz = np.where(ok, z, 0.0)
    pdf = np.exp(-0.5 * zz * zz - LOG_SQRT_2PI)
    step = np.where(ok & (pdf > 1e-300), (special.ndtr(zz) - u) / np.where(pdf > 0, pdf, 1.0), 0.0)
    return np.where(ok, zz - step, z)


def cdf_quantile(spec: DistributionSpec) -> tuple[Callable, Callable]:
    """Return the vectorized pair (F, F^-1) of a 1-D spec."""
    if dim(spec) != 1:
        raise UnsupportedError("CDF/quantile are defined for 1-D specs only")
    if isinstance(spec, StdGaussian):
        return std_normal_cdf, std_normal_quantile
    if isinstance(spec, Uniform):
        lo, hi = spec.lo, spec.hi
        return (lambda x: np.clip((np.asarray(x, float) - lo) / (hi - lo), 0.0, 1.0),
                lambda u: lo + np.asarray(u, float) * (hi - lo))
    if isinstance(spec, UnionOfIntervals):
        return _union_cdf(spec), _union_quantile(spec)
    if isinstance(spec, GaussianMixture):
        return _mixture_cdf(spec), _mixture_quantile(spec)
    if isinstance(spec, Empirical):
        xs = np.sort(spec.samples[:, 0])
        n = xs.size
        return (lambda x: np.searchsorted(xs, np.asarray(x, float), side="right") / n,
                lambda u: xs[np.clip(np.ceil(np.asarray(u, float) * n).astype(int) - 1, 0, n - 1)])
    raise TypeError(f"not a distribution spec: {spec!r}")


def _union_cdf(spec: UnionOfIntervals):
    lo = np.array([a for a, _ in spec.intervals])
    hi = np.array([b for _, b in spec.intervals])
    w = np.array(spec.weights)

    def F(x):
        x = np.asarray(x, dtype=np.float64)[..., None]
        frac = np.clip((x - lo) / (hi - lo), 0.0, 1.0)
        return (frac * w).sum(axis=-1)

    return F


def _union_quantile(spec: UnionOfIntervals):
    # knots of the piecewise-linear inverse: (cumulative mass, location)
    lo = np.array([a for a, _ in spec.intervals])
    hi = np.array([b for _, b in spec.intervals])
    w = np.array(spec.weights)
    cum = np.concatenate([[0.0], np.cumsum(w)])
    cum[-1] = 1.0

    def Q(u):
        u = np.asarray(u, dtype=np.float64)
        k = np.clip(np.searchsorted(cum, u, side="right") - 1, 0, len(w) - 1)
        return lo[k] + (u - cum[k]) / w[k] * (hi[k] - lo[k])

    return Q


def _mixture_cdf(spec: GaussianMixture):
    m, s, w = spec.means, np.sqrt(spec.variances), spec.weights

    def F(x):
        x = np.asarray(x, dtype=np.float64)[..., None]
        return (w * special.ndtr((x - m) / s)).sum(axis=-1)

    return F


def _mixture_quantile(spec: GaussianMixture):
    F = _mixture_cdf(spec)
    m, s = spec.means, np.sqrt(spec.variances)

    def Q(u):
        u = np.asarray(u, dtype=np.float64)
        zq = std_normal_quantile(np.clip(u, 1e-300, 1.0))
        zq = np.where(np.isfinite(zq), zq, np.sign(u - 0.5) * 40.0)
        # each component's quantile brackets the mixture quantile
        a = (m[:, None] + s[:, None] * zq.ravel()).min(axis=0).reshape(u.shape)
        b = (m[:, None] + s[:, None] * zq.ravel()).max(axis=0).reshape(u.shape)
        a, b = a - 1e-9, b + 1e-9
        x = 0.5 * (a + b)
        for _ in range(200):
            fx = F(x) - u
            a = np.where(fx < 0, x, a)
            b = np.where(fx >= 0, x, b)
            pdf = np.exp(log_density(spec, x))
            newton = x - fx / np.where(pdf > 0, pdf, np.inf)
            inside = (newton > a) & (newton < b)
            x_new = np.where(inside, newton, 0.5 * (a + b))
            if np.all(np.abs(x_new - x) <= 1e-15 * (1.0 + np.abs(x))):
                x = x_new
                break
            x = x_new
        out = np.where(u <= 0, -np.inf, np.where(u >= 1, np.inf, x))
        return out

    return Q


# --------------------------------------------------------------------------
# exact interval masses
# --------------------------------------------------------------------------

def interval_mass(spec: DistributionSpec, lo, hi):
    """Mass of ``[lo, hi]`` under a 1-D spec.

    Uniform and UnionOfIntervals specs are evaluated in exact rational
    arithmetic when the endpoints are Fractions.
    """
    if isinstance(spec, (Uniform, UnionOfIntervals)):
        if isinstance(spec, Uniform):
            pieces = [((spec.lo, spec.hi), 1)]
        else:
            pieces = list(zip(spec.intervals, spec.weights))
        total = Fraction(0)
        for (a, b), w in pieces:
            a, b, w = Fraction(a), Fraction(b), Fraction(w)
            overlap = min(b, Fraction(hi)) - max(a, Fraction(lo))
            if overlap > 0:
                total += w * overlap / (b - a)
        return total
    F, _ = cdf_quantile(spec)
    return float(F(hi) - F(lo))


def bin_masses(spec: DistributionSpec, edges: Sequence) -> list:
    return [interval_mass(spec, a, b) for a, b in zip(edges[:-1], edges[1:])]


# --------------------------------------------------------------------------
# Ornstein-Uhlenbeck noising
# --------------------------------------------------------------------------

def ou_noise(x0: np.ndarray, t: float, rng: Rng) -> np.ndarray:
    """Draw from the exact OU marginal ``e^-t x0 + sqrt(1 - e^-2t) Z``.

    ``t == 0`` returns a copy of ``x0`` and consumes no randomness.
    """
    if t < 0:
        raise ValueError(f"OU time must be >= 0, got {t}")
    x0 = np.asarray(x0, dtype=np.float64)
    if t == 0:
        return x0.copy()
    decay = math.exp(-t)
    return decay * x0 + math.sqrt(-math.expm1(-2.0 * t)) * rng.normal(x0.shape)
