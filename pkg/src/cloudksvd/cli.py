"""Command-line entry point.

Subcommands:
  run             execute a single config
  grid            expand comma lists in the config into a cell sweep
  consensus-demo  built-in synthetic sweep over power/consensus rounds

Exit codes: 0 success, 1 config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

from .runner import (ConfigError, consensus_demo_mapping, load_config,
                     parse_kv_text, run_experiment, run_grid)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cloudksvd",
        description="Distributed dictionary learning and patch-based image denoising.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config_required):
        p.add_argument("--config", required=config_required, default=None,
                       help="flat key=value config file")
        p.add_argument("--seed", type=int, default=None, help="64-bit experiment seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")

    add_common(sub.add_parser("run", help="run one experiment"), True)
    add_common(sub.add_parser("grid", help="run a cartesian sweep"), True)
    add_common(sub.add_parser("consensus-demo",
                              help="synthetic consensus-rounds study"), False)
    return parser


def _summarize(label: str, manifest) -> str:
    last = manifest.records[-1]
    bits = [f"iterations={last.iteration}", f"mse={last.mse:.6g}"]
    if math.isfinite(last.psnr):
        bits.append(f"psnr={last.psnr:.2f}dB")
    if not math.isnan(last.ssim):
        bits.append(f"ssim={last.ssim:.4f}")
    if not math.isnan(last.dict_divergence):
        bits.append(f"dict_divergence={last.dict_divergence:.6g}")
    return f"{label}: " + " ".join(bits)


def _raw_mapping(args) -> dict:
    kv = {}
    if args.config is not None:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        kv = parse_kv_text(path.read_text(encoding="utf-8"))
    for item in args.override:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, _, value = item.partition("=")
        kv[key.strip()] = value.strip()
    if args.seed is not None:
        kv["seed"] = str(args.seed)
    if args.out is not None:
        kv["out"] = str(args.out)
    return kv


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config, args.override, args.seed, args.out)
            manifest = run_experiment(cfg)
            print(_summarize("run", manifest))
            print(f"outputs in {cfg.out_dir}")
        elif args.command == "grid":
            kv = _raw_mapping(args)
            for label, manifest in run_grid(kv):
                print(_summarize(label, manifest))
        else:
            base = consensus_demo_mapping()
            base.update(_raw_mapping(args))
            for label, manifest in run_grid(base):
                print(_summarize(label, manifest))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
