"""Command-line driver.

    pushmap run CONFIG
    pushmap validate CONFIG
    pushmap reproduce-fig1 [--seed N] [--out DIR]
    pushmap suite DIR [--jobs N]

Exit codes: 0 success, 2 invalid config or usage, 3 acceptance threshold
missed, 4 training or integration failure.  ``PUSHMAP_OUT`` overrides the
output directory (for ``suite`` each config gets a subdirectory named after
its file).
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ConfigError, fig1_config, load_config
from .flows import IntegrationError
from .runner import AcceptanceFailure, TrainingFailure, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_ACCEPTANCE, EXIT_RUNTIME = 0, 2, 3, 4

OUT_ENV = "PUSHMAP_OUT"


def _out_dir(default: str, sub: str | None = None) -> Path:
    env = os.environ.get(OUT_ENV)
    if env:
        return Path(env) / sub if sub else Path(env)
    return Path(default)


def _execute(cfg, out: Path) -> int:
    try:
        report = run_experiment(cfg, out)
    except AcceptanceFailure as exc:
        print(f"FAIL {cfg.kind}: {exc}; artifacts in {out}", file=sys.stderr)
        return EXIT_ACCEPTANCE
    except (TrainingFailure, IntegrationError) as exc:
        print(f"error: {cfg.kind}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    summary = ", ".join(f"{k}={v:.6g}" for k, v in report["metrics"].items()
                        if isinstance(v, float))
    print(f"ok {cfg.kind} -> {out}" + (f" ({summary})" if summary else ""))
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"ok {args.config}: kind={cfg.kind} seed={cfg.seed}")
    return EXIT_OK


def cmd_run(args, sub: str | None = None) -> int:
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return _execute(cfg, _out_dir(cfg.out_dir, sub))


def cmd_fig1(args) -> int:
    cfg = fig1_config(args.seed)
    out = Path(args.out) if args.out else _out_dir(cfg.out_dir)
    return _execute(cfg, out)


def _suite_one(path: str) -> tuple[str, int]:
    return path, cmd_run(argparse.Namespace(config=path), sub=Path(path).stem)


def cmd_suite(args) -> int:
    paths = sorted(str(p) for p in Path(args.dir).glob("*.toml"))
    if not paths:
        print(f"no *.toml configs in {args.dir}", file=sys.stderr)
        return EXIT_CONFIG
    with ProcessPoolExecutor(max_workers=args.jobs) as pool:
        results = list(pool.map(_suite_one, paths))
    for path, code in results:
        print(f"{'ok  ' if code == 0 else 'FAIL'} {path} (exit {code})")
    return max(code for _, code in results)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pushmap", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment config")
    r.add_argument("config")
    r.set_defaults(fn=cmd_run)
    v = sub.add_parser("validate", help="parse and check a config without running it")
    v.add_argument("config")
    v.set_defaults(fn=cmd_validate)
    f = sub.add_parser("reproduce-fig1", help="Gaussian-to-uniform Fourier matching preset")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", default=None)
    f.set_defaults(fn=cmd_fig1)
    s = sub.add_parser("suite", help="run every *.toml in a directory in parallel processes")
    s.add_argument("dir")
    s.add_argument("--jobs", type=int, default=None)
    s.set_defaults(fn=cmd_suite)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
