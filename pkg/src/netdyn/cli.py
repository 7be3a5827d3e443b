"""Command-line front end: run, validate and replay experiment configs.

Exit codes: 0 success, 1 config error, 2 runtime error (missing data
files, failed replay, numerical errors).  The worker-pool size comes from
the NETDYN_WORKERS environment variable (default 1) and never affects
output bytes.
"""

from __future__ import annotations

import argparse
import sys

from .experiments import ConfigError, load_config, replay_manifest, run_experiment
from .parallel import default_workers


def _cmd_run(args) -> int:
    config = load_config(args.config)
    manifest = run_experiment(config, workers=default_workers())
    print(f"ok: {config['kind']} -> {config['output_dir']} "
          f"({len(manifest['outputs'])} output files)")
    return 0


def _cmd_validate(args) -> int:
    config = load_config(args.config)
    print(f"ok: valid {config['kind']} config")
    return 0


def _cmd_replay(args) -> int:
    all_match, comparison = replay_manifest(args.manifest, args.output_dir)
    for name, (expected, actual) in comparison.items():
        status = "ok" if expected == actual and expected is not None else "MISMATCH"
        print(f"{status}: {name}")
    if not all_match:
        print("replay failed: output hashes differ from the manifest", file=sys.stderr)
        return 2
    print("replay ok: all output hashes match")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="netdyn",
        description="Seeded training-dynamics experiments on small networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config", help="path to a JSON experiment config")
    p_run.set_defaults(fn=_cmd_run)

    p_val = sub.add_parser("validate", help="check a config against the schema")
    p_val.add_argument("config", help="path to a JSON experiment config")
    p_val.set_defaults(fn=_cmd_validate)

    p_rep = sub.add_parser("replay", help="re-run a manifest and verify output hashes")
    p_rep.add_argument("manifest", help="path to a manifest.json")
    p_rep.add_argument("output_dir", help="directory for the replayed outputs")
    p_rep.set_defaults(fn=_cmd_replay)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
