"""Command-line entry point.

Exit codes: 0 success, 2 a numeric assertion failed or two runs drifted
apart, 1 any operational error (bad config, missing file, schema mismatch).
"""

from __future__ import annotations

import argparse
import sys

from . import experiments
from .config import load_config
from .errors import AssertionFailure, EigentubesError


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    try:
        manifest = experiments.run_experiment(cfg)
    except AssertionFailure as exc:
        # outputs were finalized before the failure surfaced
        _print_run_summary_from_dir(cfg.output_dir)
        print(f"FAILED: {exc}", file=sys.stderr)
        return 2
    _print_manifest_summary(manifest, cfg.output_dir)
    return 0


def _print_manifest_summary(manifest: dict, out_dir: str) -> None:
    for item in manifest.get("asserts", []):
        tag = "PASS" if item["passed"] else "FAIL"
        line = f"[{tag}] {item['name']}"
        if item.get("detail"):
            line += f": {item['detail']}"
        print(line)
    kn = manifest.get("key_numbers", {})
    if kn:
        print("key numbers:")
        for name in sorted(kn):
            print(f"  {name} = {kn[name]}")
    for w in manifest.get("warnings", []):
        print(f"warning: {w}", file=sys.stderr)
    print(f"wrote {out_dir} ({manifest.get('wall_time_s', 0.0):.1f}s, "
          f"backend {manifest.get('backend', '?')})")


def _print_run_summary_from_dir(out_dir: str) -> None:
    import json
    from pathlib import Path

    path = Path(out_dir) / experiments.MANIFEST_NAME
    try:
        with open(path) as fh:
            _print_manifest_summary(json.load(fh), out_dir)
    except OSError:
        pass


def _cmd_compare(args) -> int:
    diffs = experiments.compare_manifests(args.first, args.second)
    if not diffs:
        print("runs agree within tolerances")
        return 0
    for fname, loc, col, msg in diffs:
        print(f"drift: {fname} {loc} {col}: {msg}")
    print(f"{len(diffs)} drifting field(s)", file=sys.stderr)
    return 2


def _cmd_list(_args) -> int:
    width = max(len(name) for name in experiments.EXPERIMENTS)
    for name in sorted(experiments.EXPERIMENTS):
        print(f"{name:<{width}}  {experiments.EXPERIMENTS[name].description}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eigentubes",
        description="reproducible experiment pipelines for eigenfunction "
                    "averages, return dynamics, and tube calculus")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one experiment from a TOML config")
    p_run.add_argument("config", help="path to the experiment configuration")
    p_run.set_defaults(fn=_cmd_run)

    p_cmp = sub.add_parser(
        "compare", help="diff two finished runs of the same experiment")
    p_cmp.add_argument("first", help="manifest file or run directory")
    p_cmp.add_argument("second", help="manifest file or run directory")
    p_cmp.set_defaults(fn=_cmd_compare)

    p_ls = sub.add_parser("list-experiments", help="list the known experiments")
    p_ls.set_defaults(fn=_cmd_list)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except AssertionFailure as exc:
        print(f"FAILED: {exc}", file=sys.stderr)
        return 2
    except (EigentubesError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
