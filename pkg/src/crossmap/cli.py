"""Command-line surface.

Subcommands: convert, synth, train, infer, eval, bench.
Exit codes: 0 success, 2 config error, 3 data error, 4 metric undefined.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .errors import ConfigError, CrossmapError, DataError, UndefinedMetricError
from .features import ExtractorConfig
from .mapping import TrainConfig

# paper-style pruned-variant names by layer depth
VARIANT_NAMES = {1: "Tiny", 4: "Small", 8: "Medium", 12: "Base"}

AGG_ALIASES = {"2d": "only2d", "3d": "only3d"}


def _parse_config_file(path: str) -> dict[str, str]:
    """key=value lines; '#' starts a comment."""
    out = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"malformed config line: {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _build_run_config(args) -> harness.RunConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(_parse_config_file(args.config))

    def pick(name, cast, default):
        cli = getattr(args, name, None)
        if cli is not None:
            return cli
        if name in values:
            return cast(values[name])
        return default

    agg = pick("agg", str, "product")
    agg = AGG_ALIASES.get(agg, agg)
    extractor = ExtractorConfig(
        kind=pick("extractor", str, "toy"),
        layer=pick("layer", int, 2),
        d2d=pick("d2d", int, 16),
        d3d=pick("d3d", int, 16),
        grid=(pick("grid", int, 6), pick("grid", int, 6)),
        groups=pick("groups", int, 64),
        group_size=pick("group_size", int, 32),
        ransac_threshold=pick("ransac_threshold", float, 0.005),
        seed=pick("seed", int, 0),
        features_dir=pick("features_dir", str, None),
    )
    train = TrainConfig(
        epochs=pick("epochs", int, 250),
        lr=pick("lr", float, 0.001),
        mode=pick("mode", str, "cross"),
        seed=pick("seed", int, 0),
        batch=pick("batch", int, 4096),
        arch={"projection": "projection", "encdec": "encoder_decoder"}[
            pick("arch", str, "projection")
        ],
    )
    return harness.RunConfig(
        manifest=pick("manifest", str, ""),
        out_dir=pick("out", str, "out"),
        categories=tuple(filter(None, pick("categories", str, "").split(","))),
        extractor=extractor,
        train=train,
        aggregation=agg,
        sigma=pick("sigma", float, 4.0),
        few_shot=pick("few_shot", int, None),
        seed=pick("seed", int, 0),
    )


def _add_run_args(p: argparse.ArgumentParser, needs_checkpoint: bool = False):
    p.add_argument("--manifest", help="dataset manifest JSON")
    p.add_argument("--out", help="output directory")
    p.add_argument("--config", help="key=value config file (CLI overrides)")
    p.add_argument("--categories", help="comma-separated category filter")
    p.add_argument("--extractor", choices=["toy", "external"])
    p.add_argument("--layer", type=int, choices=[1, 4, 8, 12])
    p.add_argument("--agg", choices=["product", "sum", "max", "2d", "3d"])
    p.add_argument("--mode", choices=["cross", "intra"])
    p.add_argument("--arch", choices=["projection", "encdec"])
    p.add_argument("--few-shot", dest="few_shot", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--d2d", type=int)
    p.add_argument("--d3d", type=int)
    p.add_argument("--grid", type=int)
    p.add_argument("--groups", type=int)
    p.add_argument("--group-size", dest="group_size", type=int)
    p.add_argument("--features-dir", dest="features_dir")
    if needs_checkpoint:
        p.add_argument("--checkpoint", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossmap", description="Multimodal crossmodal-mapping anomaly detection engine"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="scan a dataset layout into a manifest")
    p.add_argument("dataset_dir")
    p.add_argument("--out", required=True, help="manifest output path")

    p = sub.add_parser("synth", help="generate the synthetic benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train", type=int, default=40)
    p.add_argument("--test-nominal", type=int, default=20)
    p.add_argument("--test-per-kind", type=int, default=20)

    _add_run_args(sub.add_parser("train", help="train the mapping networks"))
    _add_run_args(sub.add_parser("infer", help="score test samples"), needs_checkpoint=True)
    sub.choices["infer"].add_argument("--heatmaps", action="store_true")
    _add_run_args(sub.add_parser("eval", help="score + metrics report"), needs_checkpoint=True)
    _add_run_args(sub.add_parser("bench", help="timing/memory benchmark"), needs_checkpoint=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "convert":
            entries = harness.convert(args.dataset_dir, args.out)
            print(f"wrote {args.out} with {len(entries)} samples")
        elif args.command == "synth":
            manifest = harness.generate_synthetic_dataset(
                args.out,
                n_train=args.train,
                n_test_nominal=args.test_nominal,
                n_test_per_anomaly=args.test_per_kind,
                seed=args.seed,
            )
            print(f"wrote {manifest}")
        elif args.command == "train":
            cfg = _build_run_config(args)
            ckpt = harness.run_train(cfg)
            print(f"checkpoint: {ckpt}")
        elif args.command == "infer":
            cfg = _build_run_config(args)
            path = harness.run_infer(cfg, args.checkpoint, heatmaps=args.heatmaps)
            print(f"scores: {path}")
        elif args.command == "eval":
            cfg = _build_run_config(args)
            report = harness.run_eval(cfg, args.checkpoint)
            print(report.to_csv(), end="")
        elif args.command == "bench":
            cfg = _build_run_config(args)
            record = harness.run_bench(cfg, args.checkpoint)
            print(f"fps: {record['fps']:.3f}  peak_rss_mb: {record['peak_rss_mb']:.1f}")
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except UndefinedMetricError as exc:
        print(f"metric undefined: {exc}", file=sys.stderr)
        return 4
    except (DataError, CrossmapError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
