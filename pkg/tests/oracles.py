"""Independent reference computations used by the tests.

Nothing here imports the package under test except for plain data types, so
these can serve as oracles for it.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np
from scipy import integrate, stats


def central_difference(f, params, eps=1e-5):
    """Five-point (fourth-order) numerical gradient of scalar ``f(list_of_arrays)``."""
    out = []
    for i, p in enumerate(params):
        g = np.zeros_like(p, dtype=np.float64)
        for idx in np.ndindex(p.shape):
            vals = []
            for k in (2, 1, -1, -2):
                q = [a.copy() for a in params]
                q[i][idx] += k * eps
                vals.append(f(q))
            g[idx] = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * eps)
        out.append(g)
    return out


def max_rel_error(a, b, floor=1e-6):
    """Norm-wise relative error ``|a - b| / max(|a|, |b|, floor)`` over all entries."""
    a = np.concatenate([np.ravel(v) for v in a])
    b = np.concatenate([np.ravel(v) for v in b])
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)


def brute_force_w1(x, y):
    """W1 between equal-size uniform empirical measures by trying every matching."""
    x, y = list(np.ravel(x)), list(np.ravel(y))
    assert len(x) == len(y) <= 8
    best = math.inf
    for perm in itertools.permutations(range(len(y))):
        best = min(best, sum(abs(x[i] - y[j]) for i, j in enumerate(perm)))
    return best / len(x)


def w1_scipy(x, y):
    return stats.wasserstein_distance(np.ravel(x), np.ravel(y))


def quad_total(fn, lo=-np.inf, hi=np.inf, points=None):
    val, _ = integrate.quad(fn, lo, hi, points=points, limit=400, epsabs=1e-12, epsrel=1e-12)
    return val


def pairwise_energy(x, y):
    """Plain O(n^2) V-statistic energy distance in any dimension."""
    x = np.asarray(x, float).reshape(len(x), -1)
    y = np.asarray(y, float).reshape(len(y), -1)

    def mean_dist(a, b):
        return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1).mean()

    return 2 * mean_dist(x, y) - mean_dist(x, x) - mean_dist(y, y)


def gaussian_mmd2_loops(x, y, sigma):
    """Biased MMD^2 written out with explicit loops."""
    def k(a, b):
        return math.exp(-sum((ai - bi) ** 2 for ai, bi in zip(a, b)) / (2 * sigma ** 2))

    x = [np.atleast_1d(v) for v in x]
    y = [np.atleast_1d(v) for v in y]
    kxx = sum(k(a, b) for a in x for b in x) / len(x) ** 2
    kyy = sum(k(a, b) for a in y for b in y) / len(y) ** 2
    kxy = sum(k(a, b) for a in x for b in y) / (len(x) * len(y))
    return kxx + kyy - 2 * kxy


def sliding_uniform_cycle(rounds=6):
    """Best-response dynamics of the two-interval game, from scratch.

    Target: uniform on (0, 1/4) u (3/4, 1).  Model: U(a, a + 1/2), a in
    {k/64 : 0 <= k <= 32}.  Critics: indicators of (0, 1/2) and (1/2, 1).
    The critic picks the interval the model underweights most; the model
    then moves to put all its mass there.  Returns [(a, critic), ...].
    """
    half = Fraction(1, 2)

    def overlap(a, lo, hi):
        return max(Fraction(0), min(a + half, hi) - max(a, lo)) / half

    target = {0: Fraction(1, 2), 1: Fraction(1, 2)}  # each critic interval holds one quarter-piece
    critics = {0: (Fraction(0), half), 1: (half, Fraction(1))}
    grid = [Fraction(k, 64) for k in range(33)]
    a, out = Fraction(0), []
    for _ in range(rounds):
        deficit = {c: target[c] - overlap(a, *critics[c]) for c in critics}
        c = 0 if deficit[0] >= deficit[1] else 1
        out.append((a, c))
        best = max(overlap(g, *critics[c]) for g in grid)
        a = min(g for g in grid if overlap(g, *critics[c]) == best)
    return out
