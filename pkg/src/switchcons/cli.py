"""Command line entry point.

Exit codes: 0 when every declared verdict holds, 1 on a verdict mismatch,
2 when the experiment could not be executed.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .harness import config as cfgmod
from .harness import runner

EXIT_OK, EXIT_MISMATCH, EXIT_ERROR = 0, 1, 2


def _load(args):
    cfg = cfgmod.load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace("seed", args.seed)
    if getattr(args, "step", None) is not None:
        cfg = cfg.replace("step", args.step)
    return cfg


def _parse_values(text: str) -> list:
    import yaml

    return [yaml.safe_load(v) for v in text.split(",") if v.strip()] if text.strip() else []


def cmd_run(args) -> int:
    cfg = _load(args)
    out = Path(args.out_dir) / f"{cfg.name}-seed{cfg.seed}" if args.out_dir else None
    result = runner.run_experiment(cfg, out)
    print(runner.summary_text(result.summary), end="")
    if out is not None:
        print(f"outputs written to {out}", file=sys.stderr)
    for key in result.summary["mismatches"]:
        print(f"verdict mismatch: {key} expected {cfg.expect[key]!r}, got {result.summary['verdicts'].get(key)!r}",
              file=sys.stderr)
    return EXIT_OK if result.expectations_met else EXIT_MISMATCH


def cmd_sweep(args) -> int:
    cfg = _load(args)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    rows = runner.sweep(cfg, args.axis, _parse_values(args.values), seeds, workers=args.workers)
    for row in runner.sweep_table(rows):
        print(json.dumps(row, sort_keys=True))
    if args.out_dir:
        path = runner.write_sweep(rows, args.out_dir)
        print(f"sweep table written to {path}", file=sys.stderr)
    if any(r["status"] == "error" for r in rows):
        for r in rows:
            if r["status"] == "error":
                print(f"cell value={r['value']!r} seed={r['seed']}: {r['error']}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_MISMATCH if any(r["mismatches"] for r in rows) else EXIT_OK


def cmd_verify(args) -> int:
    cfg = _load(args)
    _, summary = runner.verify_process(cfg)
    print(json.dumps(summary, indent=2, sort_keys=True))
    want = cfg.expect.get("connectivity_ok", True)
    return EXIT_OK if summary["passed"] == want else EXIT_MISMATCH


def cmd_list(args) -> int:
    for name in cfgmod.list_presets():
        cfg = cfgmod.load_config(name)
        print(f"{name:16s} {cfg.system['name']:14s} signal={cfg.signal['kind']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="switchcons", description="Consensus under switching topologies.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, step=True):
        sp.add_argument("config", help="config file or preset name")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out-dir", default=None, help="directory for outputs")
        if step:
            sp.add_argument("--step", type=float, default=None, help="override the integrator step")

    r = sub.add_parser("run", help="run one experiment")
    common(r)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="sweep one config field over values and seeds")
    common(s)
    s.add_argument("--axis", required=True, help="dotted config field, e.g. signal.tau_d")
    s.add_argument("--values", required=True, help="comma separated values")
    s.add_argument("--seeds", default=None, help="comma separated seeds (default: config seed)")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify-connectivity", help="certify the configured signal's connectivity")
    common(v, step=False)
    v.set_defaults(func=cmd_verify)

    ls = sub.add_parser("list-presets", help="list shipped presets")
    ls.set_defaults(func=cmd_list)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
