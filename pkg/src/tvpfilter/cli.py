"""Command-line interface: generate datasets, run filters, replicate, summarize.

Exit codes: 0 success, 2 configuration error, 3 runtime filter failure.
The default output root is ./tvpfilter-out, overridable through the
TVPFILTER_OUTPUT_ROOT environment variable or per-command --out flags.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import experiments, reporting
from .datagen import load_dataset
from .errors import ConfigurationError, TvpFilterError

OUTPUT_ROOT_ENV = "TVPFILTER_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "tvpfilter-out"


def _output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, DEFAULT_OUTPUT_ROOT))


def _resolve_config(args) -> experiments.ExperimentConfig:
    if getattr(args, "preset", None):
        return experiments.load_preset(args.preset)
    if getattr(args, "config", None):
        return experiments.load_config(args.config)
    raise ConfigurationError("either --preset or --config is required")


def _cmd_generate(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out) if args.out else _output_root() / "datasets" / f"{cfg.dataset or cfg.name}.csv"
    path = experiments.generate_dataset(cfg, out)
    print(f"wrote {path} and {path.with_suffix('.json')}")
    return 0


def _cmd_run(args) -> int:
    cfg = _resolve_config(args)
    if cfg.filter is None:
        raise ConfigurationError(f"{cfg.name}: config has no filter section; nothing to run")
    obs, meta = load_dataset(args.data)
    experiments.check_dataset_matches(cfg, meta)
    seed = args.seed if args.seed is not None else cfg.filter.seed
    out_dir = Path(args.out) if args.out else _output_root() / "runs" / f"{cfg.name}-seed{seed}"
    records, summary = experiments.run_experiment(cfg, obs, out_dir=out_dir, seed=seed)
    print(f"wrote {out_dir / 'records.csv'} ({len(records)} records)")
    print(f"wrote {out_dir / 'summary.json'}")
    return 0


def _cmd_replicate(args) -> int:
    cfg = _resolve_config(args)
    if cfg.filter is None:
        raise ConfigurationError(f"{cfg.name}: config has no filter section; nothing to run")
    obs = None
    if args.data:
        obs, meta = load_dataset(args.data)
        experiments.check_dataset_matches(cfg, meta)
    out_dir = Path(args.out) if args.out else _output_root() / "replicates" / cfg.name
    summaries = experiments.replicate_experiment(cfg, args.seeds, obs=obs, out_dir=out_dir)
    print(f"wrote {len(summaries)} runs under {out_dir}")
    print(f"wrote {out_dir / 'replicate_summary.json'}")
    return 0


def _summary_paths(paths) -> list[Path]:
    out = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            found = sorted(p.rglob("summary.json"))
            if not found:
                raise ConfigurationError(f"{p} contains no summary.json files")
            out.extend(found)
        else:
            out.append(p)
    return out


def _cmd_summarize(args) -> int:
    docs = [reporting.read_summary_json(p) for p in _summary_paths(args.files)]
    rows = reporting.summary_table(docs)
    print(reporting.render_table(rows))
    csv_path = Path(args.csv) if args.csv else _output_root() / "summary_table.csv"
    reporting.write_table_csv(rows, csv_path)
    print(f"wrote {csv_path}")
    return 0


def _cmd_presets(args) -> int:
    for pid in experiments.preset_ids():
        cfg = experiments.load_preset(pid)
        kind = cfg.filter.kind if cfg.filter else "dataset"
        print(f"{pid:28s} {kind:12s} {cfg.data.model}")
    return 0


def _add_config_args(sub):
    sub.add_argument("--preset", help="preset id from the registry")
    sub.add_argument("--config", help="path to a JSON config file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tvpfilter",
        description="Particle-filter estimation of time-varying ODE parameters",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    gen = subs.add_parser("generate", help="write a synthetic dataset CSV + sidecar")
    _add_config_args(gen)
    gen.add_argument("--out", help="dataset CSV path")
    gen.set_defaults(handler=_cmd_generate)

    run = subs.add_parser("run", help="run a filter over a dataset")
    _add_config_args(run)
    run.add_argument("--data", required=True, help="dataset CSV path")
    run.add_argument("--seed", type=int, help="override the run seed")
    run.add_argument("--out", help="output directory")
    run.set_defaults(handler=_cmd_run)

    rep = subs.add_parser("replicate", help="run the same config over consecutive seeds")
    _add_config_args(rep)
    rep.add_argument("--seeds", type=int, required=True, help="number of seeds")
    rep.add_argument("--data", help="dataset CSV path (generated on the fly when omitted)")
    rep.add_argument("--out", help="output directory")
    rep.set_defaults(handler=_cmd_replicate)

    summ = subs.add_parser("summarize", help="tabulate run summaries side by side")
    summ.add_argument("files", nargs="+", help="summary.json paths or run directories")
    summ.add_argument("--csv", help="where to write the table CSV")
    summ.set_defaults(handler=_cmd_summarize)

    pre = subs.add_parser("presets", help="list the preset registry")
    pre.set_defaults(handler=_cmd_presets)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TvpFilterError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 3


def entry():
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
