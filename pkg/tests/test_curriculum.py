import numpy as np
import pytest

from pushmap.curriculum import (
    CurriculumSchedule,
    DivergenceError,
    compare_direct_vs_curriculum,
    interval_split,
    pushforward,
    run_curriculum,
    stratified_base,
    train_direct,
)
from pushmap.diffnum import init_mlp
from pushmap.distributions import (
    Rng,
    StdGaussian,
    UnionOfIntervals,
    gaussian,
    sample,
    std_normal_cdf,
)
from pushmap.statmatch import Objective, w1_to_distribution

TWO_INTERVALS = UnionOfIntervals(((0.0, 0.25), (0.75, 1.0)))


def small_model(seed=0, **kw):
    kw = {"hidden": "relu", "skip": True, "zero_last": True} | kw
    return init_mlp([1, 16, 16, 1], Rng(seed, (0,)).gen, **kw)


def same_params(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a.flat(), b.flat()))


# ---------------------------------------------------------------- schedules

@pytest.mark.parametrize("times", [[1.0, 0.5], [1.0, 1.0, 0.0], [0.5, 1.0, 0.0], []])
def test_schedule_rejects_bad_times(times):
    with pytest.raises(ValueError):
        CurriculumSchedule(times)


def test_schedule_rejects_bad_epochs_and_lr_list():
    with pytest.raises(ValueError):
        CurriculumSchedule([1.0, 0.0], stage_epochs=0)
    with pytest.raises(ValueError):
        CurriculumSchedule([1.0, 0.0], lr=[1e-3])


def test_geometric_schedule():
    s = CurriculumSchedule.geometric(4.0, 0.5, 4)
    assert s.times == [4.0, 2.0, 1.0, 0.0]
    s = CurriculumSchedule.geometric(4.0, 0.35, 8, lr=[1e-3] * 8)
    assert len(s.times) == 8 and s.times[-1] == 0.0
    assert s.stage_lr(3) == 1e-3


def test_stratified_base_is_symmetric_and_centred():
    z = stratified_base(1000)[:, 0]
    np.testing.assert_allclose(z, -z[::-1], atol=1e-12)
    np.testing.assert_allclose(std_normal_cdf(z), (np.arange(1000) + 0.5) / 1000, atol=1e-14)


# ---------------------------------------------------------------- run_curriculum

def test_single_stage_at_zero_is_direct_training():
    data = sample(gaussian(1.0, 0.5), 2000, Rng(1))
    obj = Objective("energy")
    sched = CurriculumSchedule([0.0], stage_epochs=40, objective=obj, lr=3e-3,
                               batch_size=128, retry_cap=0)
    cur, _, cur_rec = run_curriculum(sched, StdGaussian(1), data, small_model(), Rng(2))
    direct_rec = []
    direct = train_direct(small_model(), obj, StdGaussian(1), data, 40, Rng(2), lr=3e-3,
                          batch_size=128, records=direct_rec)
    assert same_params(cur, direct)
    assert [r.loss for r in cur_rec] == [r.loss for r in direct_rec]


def test_long_horizon_stage_needs_no_training():
    # targets at t = 12 are standard normal, which the identity initialisation already is
    data = sample(TWO_INTERVALS, 10_000, Rng(3))
    sched = CurriculumSchedule([12.0, 0.0], stage_epochs=1, lr=1e-6, retry_cap=0)
    _, reports, _ = run_curriculum(sched, StdGaussian(1), data, small_model(), Rng(4))
    assert reports[0].w1 < 0.02 and reports[0].passed


def test_warm_start_and_report_shape():
    data = sample(gaussian(2.0, 1.0), 2000, Rng(5))
    sched = CurriculumSchedule([2.0, 0.5, 0.0], stage_epochs=20, lr=1e-2, batch_size=128)
    bounds = []
    model = small_model()
    params, reports, records = run_curriculum(
        sched, StdGaussian(1), data, model, Rng(6), n_eval=2000,
        on_stage=lambda k, a, b: bounds.append((a, b)))
    assert same_params(bounds[0][0], model)
    for (_, end), (start, _) in zip(bounds[:-1], bounds[1:]):
        assert same_params(end, start)
    assert same_params(bounds[-1][1], params)
    assert [r.stage for r in reports] == [0, 1, 2]
    assert [r.t for r in reports] == sched.times
    assert [r.epoch for r in records] == list(range(1, len(records) + 1))
    assert sum(r.epochs for r in reports) == len(records)
    clocks = [r.wall_clock for r in reports]
    assert clocks == sorted(clocks)


def test_failed_stage_is_extended_up_to_the_cap():
    data = sample(gaussian(2.0, 1.0), 2000, Rng(7))
    sched = CurriculumSchedule([1.0, 0.0], stage_epochs=5, lr=1e-3, batch_size=64,
                               threshold=1e-9, retry_cap=2)
    _, reports, records = run_curriculum(sched, StdGaussian(1), data, small_model(), Rng(8),
                                         n_eval=500)
    assert [r.epochs for r in reports] == [15, 15]
    assert not any(r.passed for r in reports)
    assert len(records) == 30


def test_curriculum_is_deterministic():
    data = sample(TWO_INTERVALS, 2000, Rng(9))
    sched = CurriculumSchedule.geometric(2.0, 0.5, 3, stage_epochs=15, lr=3e-3, batch_size=128)
    a, ra, ea = run_curriculum(sched, StdGaussian(1), data, small_model(), Rng(10), n_eval=1000)
    b, rb, eb = run_curriculum(sched, StdGaussian(1), data, small_model(), Rng(10), n_eval=1000)
    assert same_params(a, b)
    assert [r.loss for r in ea] == [r.loss for r in eb]
    assert [r.w1 for r in ra] == [r.w1 for r in rb]


def test_divergence_keeps_the_last_good_parameters():
    data = np.full((100, 1), np.nan)
    model = small_model()
    with pytest.raises(DivergenceError) as info:
        run_curriculum(CurriculumSchedule([0.0], stage_epochs=5), StdGaussian(1), data, model,
                       Rng(11))
    assert info.value.epoch == 0
    assert same_params(info.value.params, model)


def test_empty_data_is_rejected():
    with pytest.raises(ValueError):
        run_curriculum(CurriculumSchedule([0.0]), StdGaussian(1), np.zeros((0, 1)),
                       small_model(), Rng(0))


# ---------------------------------------------------------------- comparison

def test_interval_split():
    x = np.array([0.1, 0.2, 0.3, 0.6, 0.8, 0.9, 1.2, -0.1])
    s = interval_split(x, TWO_INTERVALS)
    assert s["inside"] == [0.25, 0.25]
    assert s["sides"] == [0.5, 0.5]


@pytest.fixture(scope="module")
def gaussian_comparison():
    mu = gaussian(3.0, 4.0)
    data = sample(mu, 10_000, Rng(0, (9,)))
    model = init_mlp([1, 32, 32, 1], Rng(0, (0,)).gen, "relu", skip=True, zero_last=True)
    sched = CurriculumSchedule.geometric(4.0, 0.35, 4, stage_epochs=1000, lr=3e-3,
                                         batch_size=2048, lr_end_frac=0.05)
    return mu, compare_direct_vs_curriculum(sched, StdGaussian(1), data, model, seed=0)


@pytest.mark.slow
def test_both_arms_reach_an_affine_target(gaussian_comparison):
    mu, out = gaussian_comparison
    z = stratified_base(10_000)
    for arm in ("direct", "curriculum"):
        a = out["arms"][arm]
        assert a["final_w1"] < 0.05, arm
        assert w1_to_distribution(pushforward(a["params"], z), mu) < 0.05, arm


@pytest.mark.slow
def test_comparison_uses_equal_budgets(gaussian_comparison):
    _, out = gaussian_comparison
    for arm in ("direct", "curriculum"):
        recs = out["arms"][arm]["records"]
        assert len(recs) == out["budget"]
        assert [r.epoch for r in recs] == list(range(1, out["budget"] + 1))
    assert out["budget"] == sum(s.epochs for s in out["arms"]["curriculum"]["stages"])


def test_comparison_reports_mode_masses_for_intervals():
    data = sample(TWO_INTERVALS, 2000, Rng(12))
    sched = CurriculumSchedule([1.0, 0.0], stage_epochs=20, lr=3e-3, batch_size=128, retry_cap=0)
    out = compare_direct_vs_curriculum(sched, StdGaussian(1), data, small_model(), seed=1,
                                       target=TWO_INTERVALS, n_eval=2000)
    for arm in ("direct", "curriculum"):
        split = out["arms"][arm]["split"]
        assert sum(split["sides"]) == pytest.approx(1.0)
        assert sum(split["inside"]) <= 1.0
