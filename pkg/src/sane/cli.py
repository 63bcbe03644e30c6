"""Command-line entry point: ``sane run | eval | lineage | sweep``.

Exit codes: 0 success, 2 configuration error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import artifacts
from .config import load_config
from .errors import ConfigError, FormatError, NumericError
from .runner import evaluate_checkpoint, run, sweep

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _overrides(args) -> dict:
    out = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError("expected section.key=value", item)
        key, value = item.split("=", 1)
        out[key.strip()] = value
    if getattr(args, "method", None):
        out["run.method"] = args.method
    if getattr(args, "seed", None) is not None:
        out["run.seed"] = str(args.seed)
    if getattr(args, "output_dir", None):
        out["run.output_dir"] = args.output_dir
    return out


def _add_config_args(p: argparse.ArgumentParser, with_seed: bool = True):
    p.add_argument("--config", "-c", help="INI run config")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")
    p.add_argument("--method", help="sane, static_sane, single or oracle")
    if with_seed:
        p.add_argument("--seed", type=int)
    p.add_argument("--output-dir", "-o", help="artifact directory")


def _print_summary(summary: dict):
    f = summary.get("forgetting")
    line = f"{summary['method']} seed={summary['seed']} steps={summary['steps']}"
    line += f" final={[round(x, 3) for x in summary['final_returns']]}"
    if f is not None:
        line += f" forgetting={f['mean']:.3f}"
    line += f" modules={summary['live_ids']}"
    print(line)


def cmd_run(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    res = run(cfg)
    _print_summary(res.summary)
    print(f"artifacts: {res.output_dir}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    seeds = list(range(args.seeds)) if args.seed_list is None else args.seed_list
    agg = sweep(cfg, seeds, args.output_dir)
    print(json.dumps({k: agg[k] for k in ("method", "seeds", "mean_final_return",
                                          "forgetting")}, indent=2))
    return EXIT_OK


def cmd_eval(args) -> int:
    run_dir = Path(args.run_dir) if args.run_dir else None
    ckpt = Path(args.checkpoint) if args.checkpoint else run_dir / "checkpoint.bin"
    cfg_path = args.config or (run_dir / "config.ini" if run_dir else None)
    if cfg_path is None:
        raise ConfigError("eval needs a run directory or --config", "config")
    cfg = load_config(cfg_path, _overrides(args))
    try:
        results = evaluate_checkpoint(ckpt, cfg, args.episodes, args.seed)
    except (FormatError, OSError) as exc:
        raise ConfigError(f"cannot load checkpoint: {exc}", "checkpoint") from None
    report = {"checkpoint": str(ckpt),
              "tasks": [{"task_id": r.task_id, "mean_return": r.mean_return, "sem": r.sem}
                        for r in results]}
    text = artifacts.json_text(report)
    if args.out:
        artifacts.atomic_write_text(args.out, text)
    print(text, end="")
    return EXIT_OK


def cmd_lineage(args) -> int:
    src = Path(args.source)
    events_path = src / "events.jsonl" if src.is_dir() else src
    initial = args.initial_ids
    if initial is None:
        manifest = events_path.parent / "manifest.json"
        if manifest.exists():
            initial = json.loads(manifest.read_text())["initial_ids"]
        else:
            initial = [0]
    events = artifacts.read_events(events_path)
    dot = artifacts.lineage_dot_from_events(events, initial)
    if args.out:
        artifacts.atomic_write_text(args.out, dot)
    else:
        sys.stdout.write(dot)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sane", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train one (config, seed) and write artifacts")
    _add_config_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run several seeds and aggregate")
    _add_config_args(p, with_seed=False)
    p.add_argument("--seeds", type=int, default=5, help="run seeds 0..N-1")
    p.add_argument("--seed-list", type=int, nargs="+", help="explicit seeds")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="re-evaluate a saved checkpoint")
    p.add_argument("run_dir", nargs="?", help="run directory with checkpoint.bin and config.ini")
    p.add_argument("--checkpoint")
    p.add_argument("--episodes", type=int)
    p.add_argument("--out", help="write the JSON report here as well")
    _add_config_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("lineage", help="re-emit lineage.dot from events.jsonl")
    p.add_argument("source", help="events.jsonl or a run directory")
    p.add_argument("--initial-ids", type=int, nargs="+")
    p.add_argument("--out", "-o")
    p.set_defaults(func=cmd_lineage)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
