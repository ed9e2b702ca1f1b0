import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pushmap.curriculum import stratified_base
from pushmap.distributions import (
    Empirical,
    GaussianMixture,
    Rng,
    StdGaussian,
    Uniform,
    UnsupportedError,
    cdf_quantile,
    gaussian,
    sample,
    std_normal_cdf,
)
from pushmap.flows import (
    Custom,
    GaussianFlowState,
    IntegrationError,
    ParticleEnsemble,
    Quadratic,
    continuity_residual,
    flow_velocity,
    hermite,
    hermite_decay,
    integrate_ode,
    ou_continuity_residual,
    ou_flow_state,
    reverse_transport,
    simulate_sde,
    velocity_field,
)
from pushmap.statmatch import energy_test, w1_to_distribution

MIXTURE = GaussianMixture(((-1.0, 0.25, 0.4), (1.5, 0.16, 0.6)))


def em_moments(x0, t_end, h):
    """Exact mean and variance of the Euler-Maruyama chain for dX = -X dt + sqrt(2) dB."""
    n = round(t_end / h)
    a = 1.0 - h
    mean = x0 * a ** n
    var = 2.0 * h * (1.0 - a ** (2 * n)) / (1.0 - a * a)
    return mean, var


# ---------------------------------------------------------------- SDE

def test_zero_horizon_leaves_the_ensemble_unchanged():
    ens = ParticleEnsemble(np.arange(5.0))
    out = simulate_sde(Quadratic(), ens, 0.0, 0.1, Rng(0))
    np.testing.assert_array_equal(out.positions, ens.positions)


def test_step_larger_than_horizon_is_an_error():
    with pytest.raises(ValueError):
        simulate_sde(Quadratic(), ParticleEnsemble(np.zeros(3)), 0.1, 0.5, Rng(0))
    with pytest.raises(ValueError):
        simulate_sde(Quadratic(), ParticleEnsemble(np.zeros(3)), 1.0, 0.0, Rng(0))


def test_ensemble_invariants():
    with pytest.raises(ValueError):
        ParticleEnsemble(np.zeros((0, 1)))
    with pytest.raises(ValueError):
        ParticleEnsemble(np.array([0.0, np.nan]))


def test_ou_moments_at_ln2():
    n, h, t = 100_000, 1e-3, math.log(2.0)
    out = simulate_sde(Quadratic(), ParticleEnsemble(np.full(n, 2.0)), t, h, Rng(1)).positions[:, 0]
    em_mean, em_var = em_moments(2.0, t, t / math.ceil(t / h))
    se_mean, se_var = math.sqrt(0.75 / n), 0.75 * math.sqrt(2.0 / n)
    assert abs(out.mean() - 1.0) < 3 * se_mean + abs(em_mean - 1.0)
    assert abs(out.var() - 0.75) < 3 * se_var + abs(em_var - 0.75)
    # and against the exact law of the discrete chain itself
    assert abs(out.mean() - em_mean) < 3 * se_mean
    assert abs(out.var() - em_var) < 3 * se_var


def test_weak_error_halves_with_dt():
    t = math.log(2.0)
    errs = []
    for h in (0.02, 0.01, 0.005):
        out = simulate_sde(Quadratic(), ParticleEnsemble(np.full(20_000, 2.0)), t, h, Rng(2),
                           antithetic=True)
        errs.append(out.positions.mean() - 1.0)
    for a, b in zip(errs[:-1], errs[1:]):
        assert a / b == pytest.approx(2.0, rel=0.2)


def test_long_horizon_is_standard_normal():
    x0 = sample(Uniform(3, 5), 3000, Rng(3))
    out = simulate_sde(Quadratic(), ParticleEnsemble(x0), 12.0, 0.01, Rng(4))
    _, p = energy_test(out.positions, sample(StdGaussian(1), 3000, Rng(5)), Rng(6), n_perm=200)
    assert p > 0.01


def test_tabulated_quadratic_matches_the_builtin():
    grid = np.linspace(-20, 20, 401)
    pot = Custom(grid, 0.5 * grid ** 2, grid)
    x0 = ParticleEnsemble(sample(StdGaussian(1), 100, Rng(7)))
    a = simulate_sde(pot, x0, 1.0, 0.01, Rng(8))
    b = simulate_sde(Quadratic(), x0, 1.0, 0.01, Rng(8))
    np.testing.assert_allclose(a.positions, b.positions, atol=1e-12)


def test_custom_potential_rejects_nonfinite_gradient():
    with pytest.raises(ValueError):
        Custom(np.array([0.0, 1.0]), np.zeros(2), np.array([0.0, np.inf]))


# ---------------------------------------------------------------- closed-form states

def test_flow_state_examples():
    st0 = ou_flow_state(gaussian(2.0, 0.25), 0.0)
    assert (st0.means[0], st0.variances[0]) == (2.0, 0.25)
    s = ou_flow_state(StdGaussian(1), 3.7)
    assert s.means[0] == 0.0 and s.variances[0] == pytest.approx(1.0, abs=1e-15)
    s = ou_flow_state(gaussian(2.0, 0.25), math.log(2.0))
    assert s.means[0] == pytest.approx(1.0, abs=1e-15)
    assert s.variances[0] == pytest.approx(0.8125, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 30.0))
def test_flow_state_tends_to_stationary(t):
    s = ou_flow_state(MIXTURE, t)
    assert np.all(s.variances > 0)
    np.testing.assert_allclose(s.weights, MIXTURE.weights)
    if t > 20:
        np.testing.assert_allclose(s.means, 0.0, atol=1e-8)
        np.testing.assert_allclose(s.variances, 1.0, atol=1e-8)


def test_flow_state_rejects_non_gaussian_specs():
    with pytest.raises(UnsupportedError):
        ou_flow_state(Uniform(0, 1), 1.0)


def test_velocity_examples():
    x = np.linspace(-4, 4, 17)
    np.testing.assert_allclose(velocity_field(ou_flow_state(StdGaussian(1), 1.0), x), 0.0, atol=1e-15)
    one = GaussianFlowState(0.0, np.array([1.0]), np.array([0.5]), np.array([1.0]))
    assert velocity_field(one, np.array([1.0]))[0] == -1.0
    with pytest.raises(ValueError):
        velocity_field(ou_flow_state(Empirical([0.0, 1.0]), 0.0), x)


@pytest.mark.parametrize("t", [0.05, 0.5, 2.0])
def test_mixture_velocity_matches_finite_difference_score(t):
    s = ou_flow_state(MIXTURE, t)
    x = np.linspace(-3, 3, 61)
    h = 1e-4
    fd_score = (s.log_density(x + h) - s.log_density(x - h)) / (2 * h)
    np.testing.assert_allclose(velocity_field(s, x), -x - fd_score, atol=1e-6)


def test_mixture_density_normalized():
    s = ou_flow_state(MIXTURE, 0.3)
    x = np.linspace(-12, 12, 200_001)
    assert np.sum(s.density(x)) * (x[1] - x[0]) == pytest.approx(1.0, abs=1e-9)


# ---------------------------------------------------------------- ODE transport

def _gaussian_transport_error(steps, t_end=1.0):
    mu = gaussian(2.0, 0.25)
    x0 = 2.0 + 0.5 * stratified_base(50)[:, 0]
    xt = integrate_ode(flow_velocity(mu), x0, 0.0, t_end, steps)
    s = ou_flow_state(mu, t_end)
    exact = s.means[0] + math.sqrt(s.variances[0] / 0.25) * (x0 - 2.0)
    return np.max(np.abs(xt - exact))


def test_zero_velocity_is_identity():
    x = np.linspace(-1, 1, 5)
    np.testing.assert_array_equal(integrate_ode(lambda t, v: np.zeros_like(v), x, 0.0, 3.0, 7), x)


def test_forward_flow_carries_quantiles_to_quantiles():
    assert _gaussian_transport_error(200) < 1e-6


def test_rk4_fourth_order():
    errs = [_gaussian_transport_error(n) for n in (8, 16, 32, 64)]
    ratios = [a / b for a, b in zip(errs[:-1], errs[1:])]
    assert all(8.0 <= r <= 32.0 for r in ratios), ratios


def test_integration_aborts_on_nonfinite_state():
    with pytest.raises(IntegrationError, match="non-finite"), np.errstate(over="ignore"):
        integrate_ode(lambda t, x: x ** 2, np.array([1.0]), 0.0, 2.0, 20)
    with pytest.raises(ValueError):
        integrate_ode(lambda t, x: x, np.zeros(1), 0.0, 1.0, 0)


@pytest.mark.parametrize("mu", [gaussian(2.0, 0.25), MIXTURE], ids=["gaussian", "mixture"])
def test_reverse_transport_reaches_the_target(mu):
    z = stratified_base(10_000)[:, 0]
    x = reverse_transport(mu, z)
    assert w1_to_distribution(x, mu) < 0.01
    # the 1-D flow map is monotone, so it is the quantile transform Q(Phi(z))
    _, q = cdf_quantile(mu)
    inner = np.abs(z) < 3
    np.testing.assert_allclose(x[inner], q(std_normal_cdf(z[inner])), atol=1e-3)


def test_reverse_transport_of_iid_samples():
    mu = gaussian(2.0, 0.25)
    x = reverse_transport(mu, sample(StdGaussian(1), 10_000, Rng(9))[:, 0])
    # sampling noise dominates here: W1 of n iid draws is ~ 0.8 sd / sqrt(n)
    assert w1_to_distribution(x, mu) < 0.02


# ---------------------------------------------------------------- continuity equation

def test_stationary_state_has_zero_residual():
    assert ou_continuity_residual(StdGaussian(1), 0.7, 1e-3, 1e-3) < 1e-10


def test_continuity_residual_small_and_second_order():
    mu = gaussian(2.0, 0.25)
    r1 = ou_continuity_residual(mu, 0.5, 1e-3, 1e-3)
    assert r1 < 1e-4
    coarse = [ou_continuity_residual(mu, 0.5, d, d) for d in (0.04, 0.02, 0.01)]
    for a, b in zip(coarse[:-1], coarse[1:]):
        assert a / b == pytest.approx(4.0, rel=0.2)


def test_continuity_residual_detects_a_wrong_velocity():
    mu = gaussian(2.0, 0.25)
    dens = lambda s, x: ou_flow_state(mu, s).density(x)
    grid = np.linspace(-2, 5, 201)
    good = continuity_residual(dens, flow_velocity(mu), grid, 0.5, 1e-3, 1e-3)
    bad = continuity_residual(dens, lambda t, x: flow_velocity(mu)(t, x) + 0.1, grid, 0.5, 1e-3, 1e-3)
    assert bad > 100 * good


# ---------------------------------------------------------------- Hermite decay

def test_hermite_polynomials():
    x = np.linspace(-2, 2, 9)
    np.testing.assert_allclose(hermite(1, x), x)
    np.testing.assert_allclose(hermite(2, x), x ** 2 - 1)
    np.testing.assert_allclose(hermite(3, x), x ** 3 - 3 * x)


def test_hermite_decay_examples():
    times = [0.0, 0.25, 0.5, 1.0, 2.0]
    rows = hermite_decay(Empirical([1.0]), 1, times, Rng(10), n=50_000)
    for r in rows:
        assert r.predicted == pytest.approx(math.exp(-r.t), abs=1e-12)
        assert r.z < 4
    rows = hermite_decay(Empirical([1.0]), 2, times, Rng(11), n=50_000)
    assert all(r.predicted == 0.0 and r.z < 4 for r in rows)
    for k in (1, 2, 3):
        for r in hermite_decay(StdGaussian(1), k, times, Rng(12, (k,)), n=50_000):
            assert abs(r.moment) < 4 * math.sqrt(math.factorial(k) / 50_000)


def test_hermite_decay_rejects_order_zero():
    with pytest.raises(ValueError):
        hermite_decay(StdGaussian(1), 0, [0.0], Rng(0))
