"""Likelihood-based fitting of pushforward maps.

Two testbeds:

* monotone 1-D maps ``psi`` trained by maximum likelihood through the change
  of variable ``log p(x) = log p0(psi^-1(x)) - log psi'(psi^-1(x))``;
* the linear-Gaussian latent model ``z ~ N(0,1), x | z ~ N(a z, 1)`` where
  the evidence lower bound and everything it is compared with are closed-form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import diffnum as dn
from .diffnum import Adam, Tape, Var, grad
from .distributions import (
    LOG_SQRT_2PI,
    DistributionSpec,
    Rng,
    StdGaussian,
    UnsupportedError,
    log_density,
)


class ConstraintError(ValueError):
    """The map template cannot guarantee monotonicity."""


def _softplus(a):
    return np.logaddexp(0.0, a)


def _inv_softplus(y):
    return y + np.log(-np.expm1(-y))


# --------------------------------------------------------------------------
# monotone maps
# --------------------------------------------------------------------------

@dataclass
class MonotoneMap1D:
    """``psi(z) = b + sp(r) z + sum_j sp(w_j) tanh(sp(c_j) z + d_j)``.

    ``sp`` is softplus, so every term is nondecreasing and the linear term
    makes ``psi`` strictly increasing onto the whole line.  ``hidden = 0``
    gives the affine template.
    """

    b: np.ndarray
    r: np.ndarray
    c: np.ndarray = field(default_factory=lambda: np.zeros(0))
    d: np.ndarray = field(default_factory=lambda: np.zeros(0))
    w: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def affine(cls, shift=0.0, scale=1.0):
        return cls(np.array([float(shift)]), np.array([_inv_softplus(float(scale))]))

    @classmethod
    def identity(cls, hidden: int = 0, rng: Rng | None = None, out_scale: float = 1e-3):
        """Identity up to hidden units with output weights ``out_scale``."""
        m = cls.affine(0.0, 1.0)
        if hidden:
            gen = (rng or Rng(0)).gen
            m.c = _inv_softplus(np.full(hidden, 1.0))
            m.d = gen.uniform(-2.0, 2.0, hidden)
            m.w = np.full(hidden, _inv_softplus(out_scale))
        return m

    @classmethod
    def random(cls, hidden: int, rng: Rng):
        gen = rng.gen
        return cls(np.zeros(1), np.array([_inv_softplus(0.1)]),
                   gen.normal(0.0, 1.0, hidden), gen.uniform(-3.0, 3.0, hidden),
                   gen.normal(-1.0, 0.5, hidden))

    @property
    def hidden(self) -> int:
        return self.c.size

    def flat(self):
        return [self.b, self.r, self.c, self.d, self.w]

    def with_flat(self, arrays):
        return MonotoneMap1D(*[np.array(a, dtype=np.float64) for a in arrays])

    # evaluation works on numpy arrays or, with ``leaves``, on a tape
    def _terms(self, z, leaves):
        b, r, c, d, w = leaves if leaves is not None else self.flat()
        sp = dn.softplus
        if isinstance(z, Var) or leaves is not None:
            zz = z.reshape(-1, 1) if isinstance(z, Var) else np.asarray(z, float).reshape(-1, 1)
        else:
            zz = np.asarray(z, float)[..., None]
        return b, sp(r), sp(c), d, sp(w), zz

    def __call__(self, z, leaves=None):
        b, slope, cs, d, ws, zz = self._terms(z, leaves)
        out = zz * slope + b
        if self.hidden:
            out = out + (dn.tanh(zz * cs + d) * ws).sum(axis=-1, keepdims=True)
        return out.reshape(-1) if isinstance(out, Var) else out[..., 0]

    def derivative(self, z, leaves=None):
        b, slope, cs, d, ws, zz = self._terms(z, leaves)
        out = zz * 0.0 + slope
        if self.hidden:
            th = dn.tanh(zz * cs + d)
            out = out + ((1.0 - th * th) * (cs * ws)).sum(axis=-1, keepdims=True)
        return out.reshape(-1) if isinstance(out, Var) else out[..., 0]

    def inverse(self, x, z0=None, tol: float = 1e-10, max_iter: int = 200) -> np.ndarray:
        """Bracketed Newton-bisection solve of ``psi(z) = x``."""
        x = np.asarray(x, dtype=np.float64)
        shape = x.shape
        x = x.ravel()
        z = np.zeros_like(x) if z0 is None else np.asarray(z0, dtype=np.float64).ravel().copy()
        # expand a bracket around the starting guess
        step = np.ones_like(x)
        lo, hi = z - step, z + step
        for _ in range(80):
            low_bad = self(lo) > x
            high_bad = self(hi) < x
            if not (low_bad.any() or high_bad.any()):
                break
            lo = np.where(low_bad, lo - step, lo)
            hi = np.where(high_bad, hi + step, hi)
            step = np.where(low_bad | high_bad, 2.0 * step, step)
        z = np.clip(z, lo, hi)
        last_step = hi - lo
        for _ in range(max_iter):
            f = self(z) - x
            lo = np.where(f < 0, z, lo)
            hi = np.where(f >= 0, z, hi)
            newton = z - f / self.derivative(z)
            # Newton must stay in the bracket and at least halve the previous
            # step, otherwise bisect (guards against zig-zagging on tanh kinks)
            ok = (newton >= lo) & (newton <= hi) & (np.abs(newton - z) <= 0.5 * last_step)
            z_new = np.where(ok, newton, 0.5 * (lo + hi))
            last_step = np.abs(z_new - z)
            done = np.abs(z_new - z) <= tol * (1.0 + np.abs(z))
            z = z_new
            if done.all() or np.all(hi - lo <= tol * (1.0 + np.abs(z))):
                break
        return z.reshape(shape)


def pushforward_log_density(psi: MonotoneMap1D, base: DistributionSpec, x) -> np.ndarray:
    """Log-density of ``psi_# base`` at ``x`` by the change-of-variable formula."""
    x = np.asarray(x, dtype=np.float64)
    z = psi.inverse(x)
    # psi maps onto R, but guard against a numerically flat tail
    valid = np.abs(psi(z) - x) <= 1e-8 * (1.0 + np.abs(x))
    out = log_density(base, z) - np.log(psi.derivative(z))
    return np.where(valid, out, -np.inf)


def _nll_on_tape(psi: MonotoneMap1D, leaves, x, z_star):
    # z_star solves psi(z) = x; one implicit Newton correction puts dz/dtheta
    # = -dpsi/dtheta / psi' on the tape while keeping the value z_star
    slope_const = psi.derivative(z_star)
    zt = (psi(z_star, leaves) - x) * (-1.0 / slope_const) + z_star
    logp = zt * zt * (-0.5) - LOG_SQRT_2PI - dn.log(psi.derivative(zt, leaves))
    return -logp.mean()


def nll(psi: MonotoneMap1D, base: DistributionSpec, data) -> float:
    return float(-np.mean(pushforward_log_density(psi, base, np.ravel(data))))


@dataclass
class MleResult:
    map: MonotoneMap1D
    history: list  # accepted-step NLL values, non-increasing
    rejected: int


def fit_mle(base: DistributionSpec, data, template, epochs: int = 500, lr: float = 1e-2,
            callback=None) -> MleResult:
    """Maximize the mean pushforward log-likelihood of ``data``.

    Full-batch Adam proposals are accepted only if they do not increase the
    NLL; a rejected step halves the learning rate, accepted steps let it
    grow back towards ``lr``.
    """
    if not isinstance(template, MonotoneMap1D):
        raise ConstraintError(f"template {type(template).__name__} is not structurally monotone")
    if not (isinstance(base, StdGaussian) and base.dim == 1):
        raise UnsupportedError("likelihood training is implemented for a 1-D standard normal base")
    x = np.ravel(np.asarray(data, dtype=np.float64))
    if x.size < 1000:
        raise ValueError("fit_mle needs at least 1000 data points")
    psi = template.with_flat(template.flat())
    z = psi.inverse(x)
    current = float(-np.mean(log_density(base, z) - np.log(psi.derivative(z))))
    history = [current]
    opt = Adam(lr=lr)
    rejected = 0
    for epoch in range(epochs):
        tape = Tape()
        leaves = [tape.var(a) for a in psi.flat()]
        loss = _nll_on_tape(psi, leaves, x, z)
        grads = grad(loss, leaves)
        proposal = psi.with_flat(opt.step(psi.flat(), grads))
        z_new = proposal.inverse(x, z0=z)
        value = float(-np.mean(log_density(base, z_new) - np.log(proposal.derivative(z_new))))
        if np.isfinite(value) and value <= current:
            psi, z, current = proposal, z_new, value
            history.append(current)
            opt.lr = min(lr, opt.lr * 1.1)
        else:
            rejected += 1
            opt.lr *= 0.5
        if callback is not None:
            callback(epoch, current, psi)
    return MleResult(psi, history, rejected)


# --------------------------------------------------------------------------
# linear-Gaussian latent model and its ELBO
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearGaussianModel:
    """``z ~ N(0, 1)``, ``x | z ~ N(a z, 1)``."""

    a: float

    def log_marginal(self, x):
        v = self.a ** 2 + 1.0
        return -0.5 * np.log(2.0 * np.pi * v) - 0.5 * np.asarray(x) ** 2 / v

    def posterior(self, x):
        v = self.a ** 2 + 1.0
        return self.a * np.asarray(x) / v, 1.0 / v


def _log(v):
    return dn.log(v) if isinstance(v, Var) else np.log(v)


def elbo(model, x, m, s2, a=None):
    """Closed-form ``E_q[log p(x, z) - log q(z)]`` for ``q = N(m, s2)``.

    ``a`` overrides ``model.a`` (useful when the loading is itself a tape
    variable).
    """
    if not isinstance(s2, Var) and np.any(np.asarray(s2) <= 0):
        raise ValueError("variational variance must be positive")
    a = model.a if a is None else a
    r = x - a * m
    lik = r * r * (-0.5) - a * a * s2 * 0.5 - 0.5 * math.log(2.0 * math.pi)
    prior = (m * m + s2) * (-0.5) - 0.5 * math.log(2.0 * math.pi)
    entropy = _log(s2) * 0.5 + 0.5 * math.log(2.0 * math.pi * math.e)
    return lik + prior + entropy


def kl_gaussian(m1, v1, m2, v2):
    """KL(N(m1, v1) || N(m2, v2))."""
    return 0.5 * (np.log(v2 / v1) + (v1 + (m1 - m2) ** 2) / v2 - 1.0)


def optimize_elbo(model: LinearGaussianModel, x: float, m0: float = 1.0, s2_0: float = 1.0,
                  lr: float = 0.1, steps: int = 3000) -> tuple[float, float, list]:
    """Gradient ascent on (m, log s2); returns (m, s2, elbo trace)."""
    params = [np.array(float(m0)), np.array(math.log(s2_0))]
    trace = []
    for _ in range(steps):
        tape = Tape()
        m, logv = tape.var(params[0]), tape.var(params[1])
        val = elbo(model, x, m, dn.exp(logv))
        trace.append(float(val.value))
        gm, gl = grad(val, [m, logv])
        params = [params[0] + lr * gm, params[1] + lr * gl]
    return float(params[0]), float(np.exp(params[1])), trace


@dataclass
class ElboFit:
    a: float
    m: np.ndarray
    s2: np.ndarray
    history: list


def fit_elbo(data, a0: float = 0.5, epochs: int = 2000, lr: float = 0.05,
             callback=None) -> ElboFit:
    """Jointly learn the decoder loading ``a`` and one Gaussian ``q`` per point."""
    x = np.ravel(np.asarray(data, dtype=np.float64))
    params = [np.array(float(a0)), np.zeros_like(x), np.zeros_like(x)]
    opt = Adam(lr=lr)
    model = LinearGaussianModel(a0)
    history = []
    for epoch in range(epochs):
        tape = Tape()
        a, m, logv = (tape.var(p) for p in params)
        loss = -elbo(model, x, m, dn.exp(logv), a=a).mean()
        grads = grad(loss, [a, m, logv])
        params = opt.step(params, grads)
        history.append(float(loss.value))
        if callback is not None:
            callback(epoch, history[-1], float(params[0]))
    return ElboFit(float(params[0]), params[1], np.exp(params[2]), history)
