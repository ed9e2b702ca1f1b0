"""Diffusion flows: SDE simulation, analytic OU marginals, velocity fields,
transport ODE integration and diagnostics of the continuity equation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np
from numpy.polynomial import hermite_e
from scipy import special

from .distributions import (
    LOG_SQRT_2PI,
    DistributionSpec,
    Empirical,
    GaussianMixture,
    Rng,
    StdGaussian,
    UnsupportedError,
    ou_noise,
    sample,
)


class IntegrationError(FloatingPointError):
    pass


# --------------------------------------------------------------------------
# potentials and SDE simulation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Quadratic:
    """``E(x) = |x|^2 / 2``: the Ornstein-Uhlenbeck potential."""

    def grad(self, x):
        return x


@dataclass(frozen=True, eq=False)
class Custom:
    """1-D potential tabulated on a grid; the gradient is linearly interpolated."""

    grid: np.ndarray
    energy: np.ndarray
    gradient: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.gradient)):
            raise ValueError("potential gradient must be finite on the grid")

    def grad(self, x):
        return np.interp(x, self.grid, self.gradient)


PotentialSpec = Union[Quadratic, Custom]


@dataclass
class ParticleEnsemble:
    positions: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim == 1:
            self.positions = self.positions[:, None]
        if self.positions.shape[0] < 1 or not np.all(np.isfinite(self.positions)):
            raise ValueError("an ensemble needs at least one finite particle")


def simulate_sde(potential: PotentialSpec, x0: ParticleEnsemble, t_end: float, dt: float,
                 rng: Rng, antithetic: bool = False) -> ParticleEnsemble:
    """Euler-Maruyama for ``dX = -grad E(X) dt + sqrt(2) dB``.

    The horizon is split into ``ceil(t_end / dt)`` equal steps.  With
    ``antithetic`` the second half of the particles receives the negated
    increments of the first half.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    x = x0.positions.copy()
    if t_end == 0:
        return ParticleEnsemble(x, x0.t)
    if dt > t_end:
        raise ValueError(f"dt={dt} exceeds the horizon t_end={t_end}")
    n_steps = math.ceil(t_end / dt - 1e-12)
    h = t_end / n_steps
    n = x.shape[0]
    if antithetic and n % 2:
        raise ValueError("antithetic sampling needs an even number of particles")
    scale = math.sqrt(2.0 * h)
    for _ in range(n_steps):
        if antithetic:
            half = rng.normal((n // 2, x.shape[1]))
            xi = np.concatenate([half, -half])
        else:
            xi = rng.normal(x.shape)
        x = x - potential.grad(x) * h + scale * xi
    return ParticleEnsemble(x, x0.t + t_end)


# --------------------------------------------------------------------------
# analytic OU flow of Gaussian mixtures
# --------------------------------------------------------------------------

@dataclass
class GaussianFlowState:
    """Law of the OU process at time ``t`` as a 1-D Gaussian mixture."""

    t: float
    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray

    def log_density(self, x):
        x = np.asarray(x, dtype=np.float64)[..., None]
        v = self.variances
        terms = (np.log(self.weights) - 0.5 * np.log(v) - LOG_SQRT_2PI
                 - 0.5 * (x - self.means) ** 2 / v)
        return special.logsumexp(terms, axis=-1)

    def density(self, x):
        return np.exp(self.log_density(x))

    def responsibilities(self, x):
        x = np.asarray(x, dtype=np.float64)[..., None]
        v = self.variances
        terms = (np.log(self.weights) - 0.5 * np.log(v) - 0.5 * (x - self.means) ** 2 / v)
        return np.exp(terms - special.logsumexp(terms, axis=-1, keepdims=True))

    def score(self, x):
        """``d/dx log r_t(x)``."""
        x = np.asarray(x, dtype=np.float64)
        r = self.responsibilities(x)
        return (r * (self.means - x[..., None]) / self.variances).sum(axis=-1)


def _components(mu1: DistributionSpec):
    if isinstance(mu1, StdGaussian) and mu1.dim == 1:
        return np.zeros(1), np.ones(1), np.ones(1)
    if isinstance(mu1, GaussianMixture):
        return mu1.means, mu1.variances, mu1.weights
    if isinstance(mu1, Empirical) and mu1.samples.shape[1] == 1:
        atoms = mu1.samples[:, 0]
        return atoms, np.zeros_like(atoms), np.full(atoms.size, 1.0 / atoms.size)
    raise UnsupportedError(
        f"{type(mu1).__name__} has no closed-form OU flow; simulate a ParticleEnsemble instead")


def ou_flow_state(mu1: DistributionSpec, t: float) -> GaussianFlowState:
    """Closed-form OU marginal: ``m_t = e^-t m0``, ``v_t = e^-2t v0 + 1 - e^-2t``.

    Empirical measures are treated as mixtures of zero-variance atoms.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    m0, v0, w = _components(mu1)
    decay = math.exp(-t)
    return GaussianFlowState(t, decay * m0, decay ** 2 * v0 - math.expm1(-2.0 * t), w.copy())


def velocity_field(state: GaussianFlowState, x, potential: PotentialSpec = Quadratic()):
    """``v_t(x) = -grad E(x) - grad log r_t(x)``."""
    if np.any(state.variances <= 0):
        raise ValueError("velocity undefined for a degenerate (zero-variance) state")
    x = np.asarray(x, dtype=np.float64)
    return -potential.grad(x) - state.score(x)


def flow_velocity(mu1: DistributionSpec) -> Callable:
    """``(t, x) -> v_t(x)`` for the OU flow started at ``mu1``."""

    def v(t, x):
        return velocity_field(ou_flow_state(mu1, t), x)

    return v


# --------------------------------------------------------------------------
# ODE transport
# --------------------------------------------------------------------------

def integrate_ode(velocity: Callable, x_start, t_from: float, t_to: float, steps: int):
    """Classical fixed-step RK4 for ``dx/dt = velocity(t, x)``; ``t_to < t_from`` runs backward."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x = np.asarray(x_start, dtype=np.float64).copy()
    h = (t_to - t_from) / steps
    t = t_from
    for i in range(steps):
        k1 = velocity(t, x)
        k2 = velocity(t + 0.5 * h, x + 0.5 * h * k1)
        k3 = velocity(t + 0.5 * h, x + 0.5 * h * k2)
        k4 = velocity(t + h, x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = t_from + (i + 1) * h
        if not np.all(np.isfinite(x)):
            raise IntegrationError(f"non-finite state after step {i + 1} at t={t:.6g}")
    return x


def reverse_transport(mu1: DistributionSpec, z, horizon: float = 12.0, steps: int = 400):
    """Carry base samples ``z ~ N(0, 1)`` back along the OU flow from ``horizon`` to 0."""
    return integrate_ode(flow_velocity(mu1), z, horizon, 0.0, steps)


# --------------------------------------------------------------------------
# continuity equation
# --------------------------------------------------------------------------

def continuity_residual(density: Callable, velocity: Callable, grid, t: float,
                        dx: float, dt: float) -> float:
    """Max over ``grid`` of ``|d_t r + d_x(v r)|`` by central differences."""
    x = np.asarray(grid, dtype=np.float64)
    dr_dt = (density(t + dt, x) - density(t - dt, x)) / (2.0 * dt)
    flux_p = velocity(t, x + dx) * density(t, x + dx)
    flux_m = velocity(t, x - dx) * density(t, x - dx)
    return float(np.max(np.abs(dr_dt + (flux_p - flux_m) / (2.0 * dx))))


def ou_continuity_residual(mu1: DistributionSpec, t: float, dx: float, dt: float,
                           n_grid: int = 1201) -> float:
    """Residual of the analytic OU flow on ``mean +- 6 sd`` of ``rho_t``."""
    st = ou_flow_state(mu1, t)
    mean = float(np.dot(st.weights, st.means))
    sd = math.sqrt(float(np.dot(st.weights, st.variances + st.means ** 2)) - mean ** 2)
    grid = np.linspace(mean - 6 * sd, mean + 6 * sd, n_grid)
    return continuity_residual(lambda s, x: ou_flow_state(mu1, s).density(x),
                               flow_velocity(mu1), grid, t, dx, dt)


# --------------------------------------------------------------------------
# Hermite moments
# --------------------------------------------------------------------------

def hermite(k: int, x):
    """Probabilists' Hermite polynomial He_k."""
    coef = np.zeros(k + 1)
    coef[k] = 1.0
    return hermite_e.hermeval(x, coef)


@dataclass
class DecayRow:
    t: float
    moment: float       # MC estimate of <He_k, rho_t>
    predicted: float    # e^{-k t} <He_k, rho_0> on the same initial draws
    stderr: float       # MC standard error of (moment - predicted)

    @property
    def z(self) -> float:
        if self.stderr == 0:
            return 0.0 if abs(self.moment - self.predicted) < 1e-12 else math.inf
        return abs(self.moment - self.predicted) / self.stderr


def hermite_decay(mu1: DistributionSpec, k: int, times: Sequence[float], rng: Rng,
                  n: int = 100_000) -> list[DecayRow]:
    """Monte Carlo check of ``<He_k, rho_t> = e^{-k t} <He_k, rho_0>`` under OU noising."""
    if k < 1:
        raise ValueError("k must be >= 1")
    x0 = sample(mu1, n, rng.fork(0))[:, 0]
    h0 = hermite(k, x0)
    rows = []
    for i, t in enumerate(times):
        xt = ou_noise(x0, t, rng.fork(1, i))
        ht = hermite(k, xt)
        pred = math.exp(-k * t) * h0
        diff = ht - pred
        rows.append(DecayRow(float(t), float(ht.mean()), float(pred.mean()),
                             float(diff.std(ddof=1) / math.sqrt(n))))
    return rows
