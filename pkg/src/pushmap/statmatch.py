"""Discrepancies between sample sets built from test functions and kernels.

Every D2 / MMD / energy estimator accepts either plain arrays or a
:class:`~pushmap.diffnum.Var` for the model samples ``x``, in which case the
result is recorded on the tape and can be differentiated.  Sample arrays are
(n, d); 1-D inputs of shape (n,) are promoted.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence, Union

import numpy as np

from . import diffnum as dn
from .diffnum import Var
from .distributions import (
    DistributionSpec,
    Rng,
    Uniform,
    UnionOfIntervals,
    cdf_quantile,
    interval_mass,
)


class SampleSizeError(ValueError):
    pass


def _as2d(x):
    if isinstance(x, Var):
        return x if x.ndim == 2 else x.reshape(-1, 1)
    x = np.asarray(x, dtype=np.float64)
    return x if x.ndim == 2 else x.reshape(-1, 1)


def _val(x):
    return x.value if isinstance(x, Var) else x


def _normalize(weights, n):
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (n,) or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be nonnegative, one per test function")
    return w / w.sum()


# --------------------------------------------------------------------------
# test-function families
# --------------------------------------------------------------------------
#
# Each family exposes ``features(x) -> (n, m)`` real feature columns and a
# matching weight vector of length m.  A complex function contributes its
# real and imaginary parts as two columns, both carrying its full weight, so
# the weighted sum of squared column differences is tau * |difference|^2.

@dataclass
class FourierOnInterval:
    frequencies: Sequence[int] = tuple(range(1, 11))
    interval: tuple = (0.0, 1.0)
    weights: Sequence[float] | None = None

    def __post_init__(self):
        ks = [int(k) for k in self.frequencies]
        if len(set(ks)) != len(ks) or not ks:
            raise ValueError("Fourier frequencies must be distinct integers")
        self.frequencies = tuple(ks)
        self.tau = _normalize(self.weights, len(ks))

    def features(self, x):
        lo, hi = self.interval
        k = np.asarray(self.frequencies, dtype=np.float64)[None, :]
        phase = (x - lo) * (2.0 * np.pi / (hi - lo)) * k
        return _concat_cols(dn.cos(phase), dn.sin(phase)), np.concatenate([self.tau, self.tau])


@dataclass
class ExponentialMoments:
    """``x -> exp(t x)``; by default ``t = i s`` (characteristic function)."""

    ts: Sequence[float] = (0.5, 1.0, 2.0, 4.0)
    imaginary: bool = True
    weights: Sequence[float] | None = None

    def __post_init__(self):
        self.ts = tuple(float(t) for t in self.ts)
        self.tau = _normalize(self.weights, len(self.ts))

    def features(self, x):
        t = np.asarray(self.ts)[None, :]
        arg = x * t
        if self.imaginary:
            return _concat_cols(dn.cos(arg), dn.sin(arg)), np.concatenate([self.tau, self.tau])
        return dn.exp(arg), self.tau


@dataclass
class FiniteExplicit:
    """Functions tabulated on a shared increasing grid, linearly interpolated.

    Outside the grid each function is extended by its end value.
    """

    grid: np.ndarray
    tables: np.ndarray  # (m, len(grid))
    weights: Sequence[float] | None = None

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        self.tables = np.atleast_2d(np.asarray(self.tables, dtype=np.float64))
        if self.tables.shape[0] == 0:
            raise ValueError("empty test-function family")
        if self.tables.shape[1] != self.grid.size or np.any(np.diff(self.grid) <= 0):
            raise ValueError("tables must match an increasing grid")
        self.tau = _normalize(self.weights, self.tables.shape[0])

    @classmethod
    def from_callables(cls, fns: Sequence[Callable], grid, weights=None):
        grid = np.asarray(grid, dtype=np.float64)
        return cls(grid, np.stack([np.asarray(f(grid), dtype=np.float64) for f in fns]), weights)

    def features(self, x):
        xv = _val(x)[:, 0]
        g = self.grid
        inside = (xv >= g[0]) & (xv <= g[-1])
        i = np.clip(np.searchsorted(g, xv, side="right") - 1, 0, g.size - 2)
        slope = (self.tables[:, i + 1] - self.tables[:, i]) / (g[i + 1] - g[i])  # (m, n)
        slope = np.where(inside[None, :], slope, 0.0).T
        xc = np.clip(xv, g[0], g[-1])
        base = (self.tables[:, i] + slope.T * (xc - g[i])).T  # value at clipped x
        if isinstance(x, Var):
            # affine in x on each cell, so the local slope is the exact derivative
            return (x - xv[:, None]) * slope + base, self.tau
        return base, self.tau


@dataclass
class IndicatorBins:
    """Indicators of the half-open bins ``[e_i, e_{i+1})`` (last bin closed)."""

    edges: Sequence[float]
    weights: Sequence[float] | None = None

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.float64)
        if self.edges.size < 2 or np.any(np.diff(self.edges) <= 0):
            raise ValueError("bin edges must be increasing")
        self.tau = _normalize(self.weights, self.edges.size - 1)

    def bin_index(self, xv):
        return np.clip(np.searchsorted(self.edges, xv, side="right") - 1, 0, self.edges.size - 2)

    def features(self, x):
        xv = _val(x)[:, 0]
        nb = self.edges.size - 1
        inside = (xv >= self.edges[0]) & (xv <= self.edges[-1])
        feats = np.zeros((xv.size, nb))
        feats[np.arange(xv.size)[inside], self.bin_index(xv[inside])] = 1.0
        return feats, self.tau


TestFunctionFamily = Union[FourierOnInterval, ExponentialMoments, FiniteExplicit, IndicatorBins]


def _concat_cols(a, b):
    if not isinstance(a, Var):
        return np.concatenate([a, b], axis=1)
    # [a | b] == a @ [I 0] + b @ [0 I]
    m = a.shape[1]
    eye = np.eye(m)
    left = np.concatenate([eye, np.zeros((m, m))], axis=1)
    right = np.concatenate([np.zeros((m, m)), eye], axis=1)
    return a @ left + b @ right


# --------------------------------------------------------------------------
# mean formulation
# --------------------------------------------------------------------------

def d2_objective(family: TestFunctionFamily, x, y, estimator: str = "biased"):
    """Weighted average of squared statistic differences.

    ``biased`` plugs in sample means; ``unbiased`` replaces each squared
    mean by the U-statistic over distinct index pairs.
    """
    x, y = _as2d(x), _as2d(y)
    fx, w = family.features(x)
    fy, _ = family.features(y)
    n, m = x.shape[0], y.shape[0]
    mx = fx.mean(axis=0)
    my = fy.mean(axis=0)
    if estimator == "biased":
        diff = mx - my
        return (diff * diff * w).sum()
    if estimator == "unbiased":
        if n < 2 or m < 2:
            raise SampleSizeError("the unbiased estimator needs at least 2 samples per side")
        sx = fx.sum(axis=0)
        sy = fy.sum(axis=0)
        xx = (sx * sx - (fx * fx).sum(axis=0)) / (n * (n - 1.0))
        yy = (sy * sy - (fy * fy).sum(axis=0)) / (m * (m - 1.0))
        return ((xx - 2.0 * mx * my + yy) * w).sum()
    raise ValueError(f"unknown estimator {estimator!r}")


# --------------------------------------------------------------------------
# maximum formulation over a finite family
# --------------------------------------------------------------------------

def dinf_finite(family, x, y) -> tuple[float, int]:
    """``max_f mean f(x) - mean f(y)`` over a finite family, with its argmax.

    ``family`` is a FiniteExplicit / IndicatorBins instance or a plain list
    of vectorized callables.
    """
    x, y = _val(_as2d(x)), _val(_as2d(y))
    if isinstance(family, (list, tuple)):
        if not family:
            raise ValueError("empty test-function family")
        gaps = np.array([np.mean(f(x[:, 0])) - np.mean(f(y[:, 0])) for f in family])
    else:
        fx, _ = family.features(x)
        fy, _ = family.features(y)
        gaps = fx.mean(axis=0) - fy.mean(axis=0)
    k = int(np.argmax(gaps))
    return float(gaps[k]), k


def interval_critic_game(target: DistributionSpec, critics: Sequence[tuple],
                         width=Fraction(1, 2), a0=Fraction(0), a_grid=None,
                         rounds: int = 8) -> list[dict]:
    """Alternating best responses between an indicator critic and a sliding uniform.

    The generator is ``Uniform(a, a + width)`` for ``a`` in ``a_grid``.  The
    critic picks the interval where the target outweighs the model most; the
    generator then moves ``a`` to put the most mass on that interval.  All
    masses are exact rationals.
    """
    if a_grid is None:
        a_grid = [Fraction(k, 64) for k in range(33)]
    a = Fraction(a0)
    history = []
    for _ in range(rounds):
        model = Uniform(a, a + width)
        gaps = [interval_mass(target, lo, hi) - interval_mass(model, lo, hi) for lo, hi in critics]
        c = max(range(len(critics)), key=lambda i: (gaps[i], -i))
        lo, hi = critics[c]
        masses = [interval_mass(Uniform(b, b + width), lo, hi) for b in a_grid]
        best = max(masses)
        a_next = next(b for b, mass in zip(a_grid, masses) if mass == best)
        history.append({"a": a, "critic": c, "gap": gaps[c], "a_next": a_next})
        a = a_next
    return history


# --------------------------------------------------------------------------
# kernels and MMD
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianKernel:
    bandwidth: float = 1.0

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")

    diag = 1.0

    def from_diff(self, diff):
        sq = (diff * diff).sum(axis=-1)
        return dn.exp(sq * (-0.5 / self.bandwidth ** 2))


@dataclass(frozen=True)
class NegDistance:
    diag = 0.0

    def from_diff(self, diff):
        return -_dist(diff)


@dataclass(frozen=True)
class DistanceEnergy:
    diag = 0.0

    def from_diff(self, diff):
        return _dist(diff)


KernelSpec = Union[GaussianKernel, NegDistance, DistanceEnergy]


def _dist(diff):
    if diff.shape[-1] == 1:
        return dn.absolute(diff.sum(axis=-1))
    return dn.norm(diff, axis=-1)


def _pair_diff(a, b):
    n, d = a.shape
    m = b.shape[0]
    left = a.reshape(n, 1, d)
    right = b.reshape(1, m, d)
    return left - right


_CHUNK = 2048


def _kernel_sum(kernel, a, b):
    """Sum of k(a_i, b_j) over all pairs; chunked when nothing is differentiated."""
    if isinstance(a, Var) or isinstance(b, Var):
        return kernel.from_diff(_pair_diff(a, b)).sum()
    total = 0.0
    for i in range(0, a.shape[0], _CHUNK):
        total += float(kernel.from_diff(_pair_diff(a[i:i + _CHUNK], b)).sum())
    return total


def mmd2(kernel: KernelSpec, x, y, estimator: str = "biased"):
    """``E k(X,X') + E k(Y,Y') - 2 E k(X,Y)`` by V- or U-statistics."""
    x, y = _as2d(x), _as2d(y)
    n, m = x.shape[0], y.shape[0]
    kxx = _kernel_sum(kernel, x, x)
    kyy = _kernel_sum(kernel, y, y)
    kxy = _kernel_sum(kernel, x, y)
    if estimator == "biased":
        return kxx / (n * n) + kyy / (m * m) - 2.0 * (kxy / (n * m))
    if estimator == "unbiased":
        if n < 2 or m < 2:
            raise SampleSizeError("the unbiased estimator needs at least 2 samples per side")
        return ((kxx - n * kernel.diag) / (n * (n - 1.0))
                + (kyy - m * kernel.diag) / (m * (m - 1.0))
                - 2.0 * (kxy / (n * m)))
    raise ValueError(f"unknown estimator {estimator!r}")


# --------------------------------------------------------------------------
# energy distance
# --------------------------------------------------------------------------

def _sum_abs_cross(xs, ys):
    """sum_{i,j} |x_i - y_j| for sorted 1-D arrays in O((n+m) log n)."""
    cx = np.concatenate([[0.0], np.cumsum(xs)])
    k = np.searchsorted(xs, ys, side="right")
    below = k * ys - cx[k]
    above = (cx[-1] - cx[k]) - (xs.size - k) * ys
    return float(np.sum(below + above))


def _sum_abs_within(xs):
    """sum_{i,j} |x_i - x_j| (ordered pairs) for a sorted 1-D array.

    Same arithmetic as the cross sum, so the biased statistic of two equal
    arrays cancels to exactly 0.
    """
    return _sum_abs_cross(xs, xs)


def energy_distance(x, y, estimator: str = "biased"):
    """``2 E|X-Y| - E|X-X'| - E|Y-Y'|`` (V-statistic unless ``unbiased``)."""
    x, y = _as2d(x), _as2d(y)
    n, m = x.shape[0], y.shape[0]
    if estimator not in ("biased", "unbiased"):
        raise ValueError(f"unknown estimator {estimator!r}")
    if estimator == "unbiased" and (n < 2 or m < 2):
        raise SampleSizeError("the unbiased estimator needs at least 2 samples per side")
    nxx = n * (n - 1.0) if estimator == "unbiased" else n * n
    nyy = m * (m - 1.0) if estimator == "unbiased" else m * m
    if isinstance(x, Var) and not isinstance(y, Var) and x.shape[1] == 1:
        return _energy_1d_tape(x, y[:, 0], nxx, nyy)
    if isinstance(x, Var) or isinstance(y, Var) or x.shape[1] > 1:
        k = DistanceEnergy()
        return (2.0 * (_kernel_sum(k, x, y) / (n * m))
                - _kernel_sum(k, x, x) / nxx - _kernel_sum(k, y, y) / nyy)
    xs, ys = np.sort(x[:, 0]), np.sort(y[:, 0])
    return 2.0 * (_sum_abs_cross(xs, ys) / (n * m)) - _sum_abs_within(xs) / nxx \
        - _sum_abs_within(ys) / nyy


def _energy_1d_tape(x: Var, y: np.ndarray, nxx: float, nyy: float) -> Var:
    """Sorted-sum energy distance recorded as one tape primitive.

    d/dx_i sum_j |x_i - y_j| is #{y < x_i} - #{y > x_i}, and the within-x term
    contributes twice the analogous rank count, so the backward pass is
    O(n log n) as well.
    """
    xv = x.value[:, 0]
    n, m = xv.size, y.size
    xs, ys = np.sort(xv), np.sort(y)
    value = (2.0 * (_sum_abs_cross(xs, ys) / (n * m)) - _sum_abs_within(xs) / nxx
             - _sum_abs_within(ys) / nyy)
    cross = np.searchsorted(ys, xv, side="left") + np.searchsorted(ys, xv, side="right") - m
    within = np.searchsorted(xs, xv, side="left") + np.searchsorted(xs, xv, side="right") - n
    local = (2.0 * cross / (n * m) - 2.0 * within / nxx)[:, None]
    return Var(x.tape, np.asarray(value), (x,), lambda g: (g * local,))


def energy_test(x, y, rng: Rng, n_perm: int = 200) -> tuple[float, float]:
    """Permutation two-sample test on the energy distance; returns (stat, p-value)."""
    x, y = _val(_as2d(x)), _val(_as2d(y))
    stat = energy_distance(x, y)
    pooled = np.concatenate([x, y])
    n = x.shape[0]
    hits = 0
    for _ in range(n_perm):
        perm = rng.gen.permutation(pooled.shape[0])
        if energy_distance(pooled[perm[:n]], pooled[perm[n:]]) >= stat:
            hits += 1
    return stat, (hits + 1.0) / (n_perm + 1.0)


# --------------------------------------------------------------------------
# total variation
# --------------------------------------------------------------------------

def total_variation_masses(p: Sequence, q: Sequence):
    """Half the L1 distance between two bin-mass vectors (exact for Fractions)."""
    total = sum(abs(a - b) for a, b in zip(p, q))
    return total / 2


def total_variation_hist(x, y, bins: IndicatorBins) -> float:
    """TV between the histograms of two samples on a shared grid.

    Samples outside the grid are counted in the nearest edge bin.
    """
    xv, yv = _val(_as2d(x))[:, 0], _val(_as2d(y))[:, 0]
    lo, hi = bins.edges[0], bins.edges[-1]
    outside = int(np.sum((xv < lo) | (xv > hi)) + np.sum((yv < lo) | (yv > hi)))
    if outside:
        warnings.warn(f"{outside} samples outside the bin grid were put in edge bins",
                      RuntimeWarning, stacklevel=2)
    nb = bins.edges.size - 1
    px = np.bincount(bins.bin_index(xv), minlength=nb) / xv.size
    py = np.bincount(bins.bin_index(yv), minlength=nb) / yv.size
    return float(0.5 * np.abs(px - py).sum())


# --------------------------------------------------------------------------
# 1-D Wasserstein-1
# --------------------------------------------------------------------------

def _require_1d(x):
    x = _val(_as2d(x))
    if x.shape[1] != 1:
        raise NotImplementedError("Wasserstein distances are implemented in 1-D only")
    return x[:, 0]


def w1_1d(x, y) -> float:
    """Exact W1 between two empirical measures on the line.

    Equal counts use the sorted matching; otherwise the integral of
    ``|F_x - F_y|`` over the merged support.
    """
    xs, ys = np.sort(_require_1d(x)), np.sort(_require_1d(y))
    if xs.size == ys.size:
        return float(np.mean(np.abs(xs - ys)))
    allv = np.sort(np.concatenate([xs, ys]))
    fx = np.searchsorted(xs, allv[:-1], side="right") / xs.size
    fy = np.searchsorted(ys, allv[:-1], side="right") / ys.size
    return float(np.sum(np.abs(fx - fy) * np.diff(allv)))


def w1_to_distribution(x, spec: DistributionSpec, refine: int = 32) -> float:
    """W1 between an empirical sample and a 1-D spec via its quantile function.

    Integrates ``|Q_n(u) - Q(u)|`` over u with ``refine`` midpoints per
    empirical quantile cell.
    """
    xs = np.sort(_require_1d(x))
    n = xs.size
    _, q = cdf_quantile(spec)
    u = (np.arange(n * refine) + 0.5) / (n * refine)
    return float(np.mean(np.abs(np.repeat(xs, refine) - q(u))))


@dataclass
class DualCertificate:
    value: float
    grid: np.ndarray
    potential: np.ndarray  # 1-Lipschitz f on the grid nodes


def w1_dual_lower_bound(x, y, resolution: int = 10_000) -> DualCertificate:
    """Best piecewise-linear 1-Lipschitz potential on a uniform grid.

    On each cell the slope is +-1 according to the sign of the integrated
    CDF difference there, which is optimal among potentials linear on the
    cells.  The returned value is evaluated from the potential itself, so it
    is a certified lower bound on W1.
    """
    xs, ys = np.sort(_require_1d(x)), np.sort(_require_1d(y))
    lo = min(xs[0], ys[0])
    hi = max(xs[-1], ys[-1])
    if hi == lo:
        g = np.array([lo, lo + 1.0])
        return DualCertificate(0.0, g, np.zeros(2))
    g = np.linspace(lo, hi, resolution + 1)

    def integrated_cdf(s):
        # G(b) = int_{-inf}^b F(t) dt = mean_i (b - s_i)_+
        cs = np.concatenate([[0.0], np.cumsum(s)])
        k = np.searchsorted(s, g, side="right")
        return (k * g - cs[k]) / s.size

    cell = np.diff(integrated_cdf(ys) - integrated_cdf(xs))
    slope = np.sign(cell)
    f = np.concatenate([[0.0], np.cumsum(slope * np.diff(g))])
    value = float(np.mean(np.interp(xs, g, f)) - np.mean(np.interp(ys, g, f)))
    return DualCertificate(value, g, f)


# --------------------------------------------------------------------------
# named training objectives
# --------------------------------------------------------------------------

@dataclass
class Objective:
    key: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.key not in OBJECTIVE_KEYS:
            raise KeyError(f"unknown objective key {self.key!r}; "
                           f"expected one of {sorted(OBJECTIVE_KEYS)}")
        allowed = OBJECTIVE_KEYS[self.key]
        extra = set(self.params) - allowed
        if extra:
            raise KeyError(f"unknown parameter(s) {sorted(extra)} for objective {self.key!r}")
        p = self.params
        est = p.get("estimator", "biased")
        if self.key == "d2-fourier":
            fam = FourierOnInterval(p.get("frequencies", tuple(range(1, 11))),
                                    tuple(p.get("interval", (0.0, 1.0))), p.get("weights"))
            self._fn = lambda x, y: d2_objective(fam, x, y, est)
        elif self.key == "d2-charfn":
            fam = ExponentialMoments(p.get("ts", (0.5, 1.0, 2.0, 4.0)), True, p.get("weights"))
            self._fn = lambda x, y: d2_objective(fam, x, y, est)
        elif self.key == "mmd-gaussian":
            k = GaussianKernel(float(p.get("bandwidth", 1.0)))
            self._fn = lambda x, y: mmd2(k, x, y, est)
        elif self.key == "energy":
            self._fn = lambda x, y: energy_distance(x, y, est)

    def __call__(self, x, y):
        return self._fn(x, y)


OBJECTIVE_KEYS = {
    "d2-fourier": {"frequencies", "interval", "weights", "estimator"},
    "d2-charfn": {"ts", "weights", "estimator"},
    "mmd-gaussian": {"bandwidth", "estimator"},
    "energy": {"estimator"},
}

