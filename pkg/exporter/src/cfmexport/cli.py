"""Command-line surface: `cfmexport export`."""

from __future__ import annotations

import argparse
import logging
import sys

from .export import DEFAULT_MODEL_2D, DEFAULT_MODEL_3D, DatasetError, ExportJob, run_export
from .models import ModelLoadError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfmexport", description="Export frozen 2D/3D features to CFMF/CFMP/CFMX"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="run an export job")
    p.add_argument("--dataset", required=True, help="dataset root directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--layers", default="1,4,8,12", help="comma-separated encoder layers")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--categories", default="", help="comma-separated category filter")
    p.add_argument("--model-2d", default=DEFAULT_MODEL_2D)
    p.add_argument("--model-3d", default=DEFAULT_MODEL_3D)
    p.add_argument("--plane-threshold", type=float, default=None)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        layers = tuple(int(x) for x in args.layers.split(",") if x.strip())
        kwargs = {}
        if args.plane_threshold is not None:
            kwargs["plane_threshold"] = args.plane_threshold
        job = ExportJob(
            dataset=args.dataset,
            out=args.out,
            layers=layers,
            model_2d=args.model_2d,
            model_3d=args.model_3d,
            categories=tuple(filter(None, args.categories.split(","))),
            seed=args.seed,
            **kwargs,
        )
        manifest = run_export(job)
    except ModelLoadError as exc:
        print(f"model error ({exc.model_id}): {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DatasetError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {manifest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
