"""Command-line entry point: ``amenity-eci {run,synth,stage} ...``."""

from __future__ import annotations

import argparse
import sys

from .exceptions import AmenityECIError
from .pipeline import (
    OUTPUT_ENV,
    STAGES,
    StageError,
    cmd_run,
    cmd_stage,
    cmd_synth,
    load_config,
    sample_config_path,
)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", help="flat key = value config file")
    common.add_argument("--sample", action="store_true", help="use the bundled sample config")
    common.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="override a config key (repeatable)"
    )
    p = argparse.ArgumentParser(
        prog="amenity-eci",
        description="Amenity clusters, economic complexity and heat-wave mobility regressions.",
        epilog=f"The output directory defaults to ${OUTPUT_ENV} when set, else ./out.",
    )
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run every stage")
    s = sub.add_parser("synth", parents=[common], help="generate synthetic input files")
    s.add_argument("--to", dest="target", help="directory for the generated files (default: output_dir)")
    st = sub.add_parser("stage", parents=[common], help="re-run one stage from cached upstream artifacts")
    st.add_argument("name", choices=STAGES)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        path = args.config or (sample_config_path() if args.sample else None)
        cfg = load_config(path, args.overrides)
        if args.command == "run":
            cmd_run(cfg)
            print(f"wrote artifacts to {cfg.output_dir}")
        elif args.command == "stage":
            cmd_stage(args.name, cfg)
            print(f"stage {args.name} done")
        else:
            info = cmd_synth(cfg, args.target)
            print(f"generated {info['n_stores']} stores in {info['n_clusters']} base-year clusters")
            for k, v in info["paths"].items():
                print(f"  {k}: {v}")
    except StageError as e:
        print(f"amenity-eci: stage {e.stage}: {type(e.cause).__name__}: {e.cause}", file=sys.stderr)
        return 1
    except AmenityECIError as e:
        print(f"amenity-eci: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
