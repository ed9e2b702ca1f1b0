"""Training pushforward networks, directly or through a noise curriculum.

The curriculum trains one network to map the base measure onto the OU-noised
targets ``rho_t`` for a decreasing list of times ending at ``t = 0``, warm
starting each stage from the previous one.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .diffnum import Adam, MlpParams, mlp_forward, value_and_grad
from .distributions import (
    DistributionSpec,
    Rng,
    UnionOfIntervals,
    ou_noise,
    sample,
    std_normal_quantile,
)
from .statmatch import Objective, w1_1d


class DivergenceError(RuntimeError):
    """Non-finite loss; carries the last parameters that produced a finite one."""

    def __init__(self, msg, params: MlpParams, epoch: int):
        super().__init__(msg)
        self.params = params
        self.epoch = epoch


@dataclass
class CurriculumSchedule:
    times: Sequence[float]
    stage_epochs: int = 500
    objective: Objective = field(default_factory=lambda: Objective("energy"))
    lr: float | Sequence[float] = 1e-3
    batch_size: int = 512
    threshold: float = 0.05
    retry_cap: int = 2
    lr_end_frac: float = 1.0  # linear decay to this fraction within each stage
    betas: tuple = (0.9, 0.999)

    def __post_init__(self):
        ts = [float(t) for t in self.times]
        if not ts or ts[-1] != 0.0:
            raise ValueError("the schedule must end at t = 0")
        if any(b >= a for a, b in zip(ts[:-1], ts[1:])):
            raise ValueError("schedule times must be strictly decreasing")
        if self.stage_epochs < 1:
            raise ValueError("stage_epochs must be >= 1")
        if not np.isscalar(self.lr) and len(self.lr) != len(ts):
            raise ValueError("need one learning rate per stage")
        self.times = ts

    @classmethod
    def geometric(cls, t0: float = 4.0, ratio: float = 0.35, stages: int = 8, **kw):
        """``t_k = t0 * ratio^k`` for k < stages - 1, then 0."""
        ts = [t0 * ratio ** k for k in range(stages - 1)] + [0.0]
        return cls(ts, **kw)

    def stage_lr(self, k: int) -> float:
        return float(self.lr) if np.isscalar(self.lr) else float(self.lr[k])


@dataclass
class EpochRecord:
    epoch: int
    stage: int
    t: float
    loss: float


@dataclass
class StageReport:
    stage: int
    t: float
    epochs: int
    final_loss: float
    w1: float
    passed: bool
    wall_clock: float


def stratified_base(n: int) -> np.ndarray:
    """Standard-normal quantiles at the midpoints ``(i + 1/2) / n``."""
    return std_normal_quantile((np.arange(n) + 0.5) / n)[:, None]


def pushforward(params: MlpParams, z) -> np.ndarray:
    return mlp_forward(params, np.asarray(z, dtype=np.float64))


def _train_epochs(params: MlpParams, objective: Objective, base: DistributionSpec,
                  data: np.ndarray, t: float, epochs: int, batch_size: int, opt: Adam,
                  rng: Rng, records: list, stage: int, epoch0: int,
                  lr_end_frac: float = 1.0) -> MlpParams:
    """The inner loop shared by direct and curriculum training."""
    lr0 = opt.lr
    for e in range(epochs):
        opt.lr = lr0 * (1.0 - (1.0 - lr_end_frac) * e / epochs)
        z = sample(base, batch_size, rng)
        idx = rng.integers(data.shape[0], batch_size)
        y = ou_noise(data[idx], t, rng)

        def loss_fn(tape, *leaves):
            return objective(mlp_forward(params, z, leaves), y)

        loss, grads = value_and_grad(loss_fn, params.flat())
        if not (math.isfinite(loss) and all(np.all(np.isfinite(g)) for g in grads)):
            raise DivergenceError(f"non-finite loss at epoch {epoch0 + e}", params, epoch0 + e)
        params = params.with_flat(opt.step(params.flat(), grads))
        records.append(EpochRecord(epoch0 + e + 1, stage, t, loss))
    opt.lr = lr0
    return params


def evaluate_w1(params: MlpParams, data: np.ndarray, t: float, rng: Rng,
                n_eval: int = 10_000) -> float:
    """W1 between the pushforward of stratified base points and noised data."""
    x = pushforward(params, stratified_base(n_eval))
    idx = rng.integers(data.shape[0], n_eval)
    y = ou_noise(data[idx], t, rng)
    return w1_1d(x, y)


def train_direct(params: MlpParams, objective: Objective, base: DistributionSpec,
                 data, epochs: int, rng: Rng, lr: float = 1e-3, batch_size: int = 512,
                 records: list | None = None, lr_end_frac: float = 1.0,
                 betas: tuple = (0.9, 0.999)) -> MlpParams:
    """Plain training of ``params`` so that its pushforward of ``base`` matches ``data``."""
    data = np.asarray(data, dtype=np.float64).reshape(len(data), -1)
    records = [] if records is None else records
    return _train_epochs(params.copy(), objective, base, data, 0.0, epochs, batch_size,
                         Adam(lr, *betas), rng, records, 0, 0, lr_end_frac)


def run_curriculum(schedule: CurriculumSchedule, mu0: DistributionSpec, data,
                   model: MlpParams, rng: Rng, n_eval: int = 10_000,
                   records: list | None = None, clock: Callable = time.perf_counter,
                   on_stage: Callable | None = None):
    """Train through ``schedule``; returns (model, stage reports, epoch records).

    The training stream is ``rng`` itself, evaluation uses forks of it, so a
    one-stage schedule at ``t = 0`` replays :func:`train_direct` exactly.
    A stage whose end-of-stage W1 exceeds ``schedule.threshold`` is extended
    by ``stage_epochs`` up to ``retry_cap`` times before moving on.
    ``on_stage(k, start, end)`` sees copies of each stage's first and last parameters.
    """
    data = np.asarray(data, dtype=np.float64).reshape(len(data), -1)
    if data.shape[0] == 0:
        raise ValueError("empty training data")
    records = [] if records is None else records
    params = model.copy()
    opt = Adam(schedule.stage_lr(0), *schedule.betas)
    reports = []
    start = clock()
    for k, t in enumerate(schedule.times):
        opt.lr = schedule.stage_lr(k)
        start_params = params.copy()
        epochs_run = 0
        for attempt in range(schedule.retry_cap + 1):
            params = _train_epochs(params, schedule.objective, mu0, data, t,
                                   schedule.stage_epochs, schedule.batch_size, opt, rng,
                                   records, k, len(records), schedule.lr_end_frac)
            epochs_run += schedule.stage_epochs
            w1 = evaluate_w1(params, data, t, rng.fork(1000 + k, attempt), n_eval)
            if w1 <= schedule.threshold:
                break
        reports.append(StageReport(k, t, epochs_run, records[-1].loss, w1,
                                   w1 <= schedule.threshold, clock() - start))
        if on_stage is not None:
            on_stage(k, start_params, params.copy())
    return params, reports, records


def interval_split(x, spec: UnionOfIntervals) -> dict:
    """Fraction of samples inside each interval and on each side of the gap midpoints."""
    x = np.ravel(x)
    inside = [float(np.mean((x >= a) & (x <= b))) for a, b in spec.intervals]
    cuts = [0.5 * (b0 + a1) for (_, b0), (a1, _) in zip(spec.intervals[:-1], spec.intervals[1:])]
    sides = np.bincount(np.searchsorted(cuts, x), minlength=len(spec.intervals)) / x.size
    return {"inside": inside, "sides": [float(s) for s in sides]}


def compare_direct_vs_curriculum(schedule: CurriculumSchedule, mu0: DistributionSpec,
                                 data, model: MlpParams, seed: int, target=None,
                                 n_eval: int = 10_000) -> dict:
    """Run both arms from the same seed, template and total epoch budget.

    Nothing is asserted about which arm wins; the report only collects the
    final W1, the loss trajectories and (for interval targets) mode masses.
    """
    data = np.asarray(data, dtype=np.float64).reshape(len(data), -1)
    cur_records: list = []
    cur_params, stages, _ = run_curriculum(schedule, mu0, data, model, Rng(seed, (1,)),
                                           n_eval, cur_records)
    budget = len(cur_records)
    dir_records: list = []
    dir_params = train_direct(model, schedule.objective, mu0, data, budget, Rng(seed, (1,)),
                              schedule.stage_lr(len(schedule.times) - 1),
                              schedule.batch_size, dir_records, schedule.lr_end_frac,
                              schedule.betas)
    out = {"budget": budget, "arms": {}}
    for arm, params, recs in (("direct", dir_params, dir_records),
                              ("curriculum", cur_params, cur_records)):
        x = pushforward(params, stratified_base(n_eval))
        entry = {
            "final_w1": evaluate_w1(params, data, 0.0, Rng(seed, (2,)), n_eval),
            "records": recs,
            "params": params,
        }
        if isinstance(target, UnionOfIntervals):
            entry["split"] = interval_split(x, target)
        out["arms"][arm] = entry
    out["arms"]["curriculum"]["stages"] = stages
    return out
