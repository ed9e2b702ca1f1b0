"""Execute an :class:`ExperimentConfig` and write its artifacts.

Every run writes ``report.json``, ``metrics.csv``, ``map_grid.csv`` and
``samples.csv``.  All of them are pure functions of the config: wall-clock
measurements go to a separate ``timing.json`` so repeated runs stay
byte-identical.

RNG streams are forked from the seed by purpose so that changing, say, the
evaluation size never perturbs training:

    (0,) model init   (1,) training   (2,) evaluation   (9,) training data
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .curriculum import (
    CurriculumSchedule,
    DivergenceError,
    compare_direct_vs_curriculum,
    interval_split,
    pushforward,
    run_curriculum,
    train_direct,
)
from .densfit import MonotoneMap1D, fit_elbo, fit_mle, nll
from .diffnum import MlpParams, init_mlp
from .distributions import (
    GaussianMixture,
    Rng,
    StdGaussian,
    UnionOfIntervals,
    sample,
    std_normal_cdf,
)
from .flows import (
    ParticleEnsemble,
    Quadratic,
    ou_flow_state,
    reverse_transport,
    simulate_sde,
)
from .statmatch import energy_test, w1_to_distribution

SCHEMA_PATH = Path(__file__).with_name("schemas") / "report.schema.json"


class AcceptanceFailure(RuntimeError):
    """A run finished but missed its configured acceptance threshold."""


class TrainingFailure(RuntimeError):
    """Training stopped on a non-finite loss."""


@dataclass
class Table:
    header: list
    rows: list

    def to_csv(self) -> str:
        lines = [",".join(self.header)]
        for row in self.rows:
            lines.append(",".join(_cell(v) for v in row))
        return "\n".join(lines) + "\n"


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        if not math.isfinite(v):
            raise ValueError(f"refusing to write non-finite value {v!r}")
        return format(float(v), ".17g")
    return str(v)


def _parse(c: str):
    try:
        return float(c)
    except ValueError:
        return c


def read_csv(path) -> tuple[list, list]:
    """Header and rows of a CSV written by this module; numbers come back as floats."""
    lines = Path(path).read_text().splitlines()
    return lines[0].split(","), [[_parse(c) for c in ln.split(",")] for ln in lines[1:]]


# --------------------------------------------------------------------------
# shared helpers
# --------------------------------------------------------------------------

def _grid(cfg: ExperimentConfig) -> np.ndarray:
    lo, hi, n = cfg.eval.grid
    return np.linspace(float(lo), float(hi), int(n))


def _data(cfg: ExperimentConfig) -> np.ndarray:
    return sample(cfg.target, cfg.n_data, Rng(cfg.seed, (9,)))


def _init_model(cfg: ExperimentConfig) -> MlpParams:
    m = cfg.model
    return init_mlp(m.layers, Rng(cfg.seed, (0,)).gen, m.activation, m.output, m.skip,
                    m.zero_last)


def _schedule(cfg: ExperimentConfig) -> CurriculumSchedule:
    c, o = cfg.curriculum, cfg.optimizer
    return CurriculumSchedule(c.schedule_times(), c.stage_epochs, cfg.statmatch_objective(),
                              o.lr, o.batch_size, c.threshold, c.retry_cap, o.lr_end_frac,
                              (o.beta1, o.beta2))


def _params_json(params: MlpParams) -> dict:
    return {"sizes": params.sizes, "hidden": params.hidden, "output": params.output,
            "skip": params.skip,
            "weights": [w.tolist() for w in params.weights],
            "biases": [b.tolist() for b in params.biases]}


def _eval_base(cfg: ExperimentConfig) -> np.ndarray:
    return sample(cfg.base, cfg.eval.n_samples, Rng(cfg.seed, (2,)))


def _w1(x, cfg: ExperimentConfig) -> float:
    return w1_to_distribution(x, cfg.target)


def _split(x, cfg: ExperimentConfig) -> dict | None:
    return interval_split(x, cfg.target) if isinstance(cfg.target, UnionOfIntervals) else None


def _mlp_outputs(cfg: ExperimentConfig, params: MlpParams, metrics: Table, report: dict):
    z = _eval_base(cfg)
    x = pushforward(params, z)
    g = _grid(cfg)
    phi = pushforward(params, g[:, None])[:, 0]
    report["metrics"]["w1"] = _w1(x, cfg)
    split = _split(x, cfg)
    if split is not None:
        report["metrics"]["split"] = split
    report["params"] = _params_json(params)
    return metrics, Table(["z", "phi"], list(zip(g, phi))), Table(["z", "x"], list(zip(z[:, 0], x[:, 0])))


def _epoch_table(records) -> Table:
    return Table(["epoch", "stage", "t", "loss"],
                 [(r.epoch, r.stage, r.t, r.loss) for r in records])


# --------------------------------------------------------------------------
# experiment kinds
# --------------------------------------------------------------------------

def _run_statmatch(cfg, report, timing):
    data = _data(cfg)
    records: list = []
    o = cfg.optimizer
    try:
        params = train_direct(_init_model(cfg), cfg.statmatch_objective(), cfg.base, data,
                              o.epochs, Rng(cfg.seed, (1,)), o.lr, o.batch_size, records,
                              o.lr_end_frac, (o.beta1, o.beta2))
    except DivergenceError as exc:
        raise TrainingFailure(f"{exc} (last finite epoch {exc.epoch})") from None
    report["metrics"]["final_loss"] = records[-1].loss
    return _mlp_outputs(cfg, params, _epoch_table(records), report)


def _run_fig1(cfg, report, timing):
    metrics, grid, samples = _run_statmatch(cfg, report, timing)
    z = np.array([r[0] for r in grid.rows])
    phi = np.array([r[1] for r in grid.rows])
    cdf = std_normal_cdf(z)
    grid = Table(["z", "phi", "Phi", "one_minus_Phi"], list(zip(z, phi, cdf, 1.0 - cdf)))
    sup_phi = float(np.max(np.abs(phi - cdf)))
    sup_flip = float(np.max(np.abs(phi - (1.0 - cdf))))
    report["metrics"]["sup_to_Phi"] = sup_phi
    report["metrics"]["sup_to_one_minus_Phi"] = sup_flip
    report["metrics"]["sup_distance"] = min(sup_phi, sup_flip)
    return metrics, grid, samples


def _run_curriculum(cfg, report, timing):
    data = _data(cfg)
    try:
        params, stages, records = run_curriculum(_schedule(cfg), cfg.base, data,
                                                 _init_model(cfg), Rng(cfg.seed, (1,)),
                                                 cfg.eval.n_samples)
    except DivergenceError as exc:
        raise TrainingFailure(f"{exc} (last finite epoch {exc.epoch})") from None
    report["stages"] = [{"stage": s.stage, "t": s.t, "epochs": s.epochs,
                         "final_loss": s.final_loss, "w1": s.w1, "passed": s.passed}
                        for s in stages]
    timing["stages"] = [s.wall_clock for s in stages]
    report["metrics"]["final_loss"] = records[-1].loss
    return _mlp_outputs(cfg, params, _epoch_table(records), report)


def _run_compare(cfg, report, timing):
    data = _data(cfg)
    try:
        out = compare_direct_vs_curriculum(_schedule(cfg), cfg.base, data, _init_model(cfg),
                                           cfg.seed, cfg.target, cfg.eval.n_samples)
    except DivergenceError as exc:
        raise TrainingFailure(f"{exc} (last finite epoch {exc.epoch})") from None
    rows = []
    z = _eval_base(cfg)
    g = _grid(cfg)
    grid_cols, sample_cols = [g], [z[:, 0]]
    report["arms"] = {}
    for arm in ("direct", "curriculum"):
        a = out["arms"][arm]
        rows += [(arm, r.epoch, r.stage, r.t, r.loss) for r in a["records"]]
        x = pushforward(a["params"], z)
        entry = {"final_w1": a["final_w1"], "w1_to_target": _w1(x, cfg),
                 "final_loss": a["records"][-1].loss}
        if "split" in a:
            entry["split"] = a["split"]
        report["arms"][arm] = entry
        grid_cols.append(pushforward(a["params"], g[:, None])[:, 0])
        sample_cols.append(x[:, 0])
    report["stages"] = [{"stage": s.stage, "t": s.t, "epochs": s.epochs,
                         "final_loss": s.final_loss, "w1": s.w1, "passed": s.passed}
                        for s in out["arms"]["curriculum"]["stages"]]
    report["metrics"]["budget"] = out["budget"]
    metrics = Table(["arm", "epoch", "stage", "t", "loss"], rows)
    return (metrics, Table(["z", "phi_direct", "phi_curriculum"], list(zip(*grid_cols))),
            Table(["z", "x_direct", "x_curriculum"], list(zip(*sample_cols))))


def _run_nll(cfg, report, timing):
    data = _data(cfg)[:, 0]
    obj = cfg.objective
    hidden = int(obj.get("hidden", 0))
    template = obj.get("template", "monotone" if hidden else "affine")
    if template == "affine":
        psi0 = MonotoneMap1D.affine()
    elif template == "monotone":
        psi0 = MonotoneMap1D.identity(hidden, Rng(cfg.seed, (0,)))
    else:
        raise ValueError(f"objective.template must be 'affine' or 'monotone', got {template!r}")
    trace = []
    res = fit_mle(cfg.base, data, psi0, cfg.optimizer.epochs, cfg.optimizer.lr,
                  callback=lambda e, v, _: trace.append((e + 1, v)))
    psi = res.map
    z = _eval_base(cfg)[:, 0]
    g = _grid(cfg)
    x = psi(z)
    report["metrics"].update(final_nll=nll(psi, cfg.base, data), rejected=res.rejected,
                             w1=_w1(x, cfg),
                             shift=float(psi(np.zeros(1))[0]),
                             scale=float(psi.derivative(np.zeros(1))[0]))
    report["params"] = {k: v.tolist() for k, v in zip("brcdw", psi.flat())}
    return (Table(["epoch", "nll"], trace), Table(["z", "phi"], list(zip(g, psi(g)))),
            Table(["z", "x"], list(zip(z, x))))


def _run_elbo(cfg, report, timing):
    data = _data(cfg)[:, 0]
    trace = []
    fit = fit_elbo(data, float(cfg.objective.get("a0", 0.5)), cfg.optimizer.epochs,
                   cfg.optimizer.lr, callback=lambda e, v, a: trace.append((e + 1, v, a)))
    v = fit.a ** 2 + 1.0
    report["metrics"].update(a=fit.a, final_neg_elbo=fit.history[-1],
                             neg_log_marginal=float(np.mean(0.5 * np.log(2 * np.pi * v)
                                                            + 0.5 * data ** 2 / v)))
    g = _grid(cfg)
    n = min(data.size, cfg.eval.n_samples)
    return (Table(["epoch", "neg_elbo", "a"], trace),
            Table(["z", "decoder_mean"], list(zip(g, fit.a * g))),
            Table(["x", "q_mean", "q_var"], list(zip(data[:n], fit.m[:n], fit.s2[:n]))))


def _run_flow(cfg, report, timing):
    f = cfg.flow
    x0 = sample(cfg.target, f.n_particles, Rng(cfg.seed, (9,)))
    ens = ParticleEnsemble(x0)
    rng = Rng(cfg.seed, (1,))
    closed = isinstance(cfg.target, (StdGaussian, GaussianMixture))
    rows = []
    dt_chunk = f.t_end / f.checkpoints
    for i in range(f.checkpoints + 1):
        if i:
            ens = simulate_sde(Quadratic(), ens, dt_chunk, min(f.dt, dt_chunk), rng.fork(i))
        x = ens.positions[:, 0]
        row = [i, ens.t, float(x.mean()), float(x.var())]
        if closed:
            st = ou_flow_state(cfg.target, ens.t)
            m = float(np.dot(st.weights, st.means))
            row += [m, float(np.dot(st.weights, st.variances + st.means ** 2)) - m * m]
        rows.append(row)
    header = ["checkpoint", "t", "mean", "var"] + (["mean_exact", "var_exact"] if closed else [])
    n_test = min(2000, f.n_particles)
    stat, pval = energy_test(ens.positions[:n_test], sample(StdGaussian(1), n_test, rng.fork(99)),
                             rng.fork(100))
    report["metrics"].update(final_mean=rows[-1][2], final_var=rows[-1][3],
                             energy_stat=stat, energy_pvalue=pval)
    g = _grid(cfg)
    z = _eval_base(cfg)[:, 0]
    if closed:
        xz = reverse_transport(cfg.target, z, f.horizon, f.steps)
        report["metrics"]["w1"] = _w1(xz, cfg)
        grid = Table(["z", "phi"], list(zip(g, reverse_transport(cfg.target, g, f.horizon, f.steps))))
        samples = Table(["z", "x"], list(zip(z, xz)))
    else:
        grid = Table(["z", "phi"], [])
        samples = Table(["x_final"], [(v,) for v in ens.positions[:, 0]])
    return Table(header, rows), grid, samples


RUNNERS = {
    "train-statmatch": _run_statmatch,
    "reproduce-fig1": _run_fig1,
    "curriculum": _run_curriculum,
    "compare": _run_compare,
    "train-nll": _run_nll,
    "train-elbo": _run_elbo,
    "simulate-flow": _run_flow,
}


def _finite_floats(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        raise ValueError("report contains a non-finite value")
    if isinstance(obj, dict):
        for v in obj.values():
            _finite_floats(v)
    elif isinstance(obj, list):
        for v in obj:
            _finite_floats(v)


def _to_builtin(obj):
    if isinstance(obj, dict):
        return {k: _to_builtin(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_builtin(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def run_experiment(cfg: ExperimentConfig, out_dir) -> dict:
    """Run ``cfg`` and write its artifacts to ``out_dir``; returns the report.

    Raises :class:`AcceptanceFailure` after writing everything when
    ``eval.w1_max`` is set and the achieved W1 exceeds it.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = {"kind": cfg.kind, "seed": cfg.seed, "config": cfg.to_dict(), "metrics": {}}
    timing: dict = {}
    start = time.perf_counter()
    metrics, grid, samples = RUNNERS[cfg.kind](cfg, report, timing)
    timing["total_seconds"] = time.perf_counter() - start
    epochs = [r[0] for r in metrics.rows if not isinstance(r[0], str)]
    if any(b <= a for a, b in zip(epochs[:-1], epochs[1:])):
        raise RuntimeError("epoch column is not strictly increasing")
    threshold = cfg.eval.w1_max
    w1 = report["metrics"].get("w1")
    report["metrics"]["passed"] = bool(threshold is None or (w1 is not None and w1 <= threshold))
    report["records"] = {"header": metrics.header, "rows": metrics.rows}
    report = _to_builtin(report)
    _finite_floats(report)
    (out / "report.json").write_text(json.dumps(report, indent=1, allow_nan=False) + "\n")
    for name, table in (("metrics.csv", metrics), ("map_grid.csv", grid),
                        ("samples.csv", samples)):
        (out / name).write_bytes(table.to_csv().encode())
    if "stages" in report:
        st = Table(["stage", "t", "epochs", "final_loss", "w1", "passed"],
                   [(s["stage"], s["t"], s["epochs"], s["final_loss"], s["w1"], s["passed"])
                    for s in report["stages"]])
        (out / "stages.csv").write_bytes(st.to_csv().encode())
    (out / "timing.json").write_text(json.dumps(timing, indent=1) + "\n")
    if not report["metrics"]["passed"]:
        raise AcceptanceFailure(f"W1 = {w1:.6g} exceeds the threshold {threshold:g}")
    return report
