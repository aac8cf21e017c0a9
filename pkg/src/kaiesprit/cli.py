"""Command line entry point: ``kaiesprit {synthesize,estimate,sweep}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .array_model import SnapshotBatch, sample_covariance, synthesize_snapshots
from .esprit import esprit
from .harness import ConfigError, load_config, run_sweep
from .kai import iesprit, two_step_kai

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="TOML experiment file (or bundled name)")
    common.add_argument("--seed", type=int, help="base seed (unsigned 64-bit)")
    common.add_argument("--increment", type=float, help="mu sweep increment in (0, 1]")
    common.add_argument("--out", help="output directory")
    common.add_argument("--trials", type=int, help="Monte Carlo trials per SNR point")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="kaiesprit",
        description="ESPRIT, IESPRIT and two-step knowledge-aided ESPRIT DOA simulator.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize", parents=[common], help="write one snapshot batch to .npz")
    p.add_argument("--snr-db", type=float, default=10.0)

    p = sub.add_parser("estimate", parents=[common], help="print DOA estimates for one batch")
    p.add_argument("--snr-db", type=float, default=10.0)
    p.add_argument("--input", help=".npz batch written by 'synthesize' (default: draw one)")

    p = sub.add_parser("sweep", parents=[common], help="Monte Carlo sweep over SNR -> CSV + SVG")
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    return parser


def _load(args):
    return load_config(args.config, base_seed=args.seed, increment=args.increment,
                       trials=args.trials, out_dir=args.out)


def _synthesize(args, config) -> int:
    scenario = config.scenario(config.noise_variance_at(args.snr_db))
    batch = synthesize_snapshots(scenario, config.geometry, config.base_seed)
    out = Path(args.out or config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"batch_{config.base_seed}.npz"
    np.savez(path, data=batch.data, seed=np.uint64(config.base_seed),
             doas_deg=np.rad2deg(scenario.doas), noise_variance=scenario.noise_variance,
             snr_db=args.snr_db)
    print(path)
    return EXIT_OK


def _read_batch(path) -> SnapshotBatch:
    with np.load(path) as f:
        return SnapshotBatch(f["data"], seed=int(f["seed"]))


def _estimate(args, config) -> int:
    if args.input:
        batch = _read_batch(args.input)
    else:
        scenario = config.scenario(config.noise_variance_at(args.snr_db))
        batch = synthesize_snapshots(scenario, config.geometry, config.base_seed)
    geom, P = config.geometry, config.num_sources
    if batch.data.shape[0] != geom.num_sensors:
        raise ConfigError("batch sensor count does not match the config")
    results = {
        "esprit": esprit(sample_covariance(batch), P, geom),
        "iesprit": iesprit(batch, geom, P, config.increment).estimate,
        "two_step_kai": two_step_kai(batch, geom, P, config.known_doas,
                                     config.increment).estimate,
    }
    print("estimator,index,angle_deg,attribution,mu_opt")
    for name in config.estimators:
        est = results[name]
        mu = "" if est.mu_opt is None else f"{est.mu_opt:.6f}"
        for k, (theta, tag) in enumerate(zip(est.degrees, est.attribution)):
            print(f"{name},{k},{theta:.6f},{tag},{mu}")
    return EXIT_OK


def _sweep(args, config) -> int:
    written = run_sweep(config, args.out, workers=args.workers)
    for key, path in written.items():
        if key != "table":
            print(path)
    return EXIT_OK


def cli_main(argv=None) -> int:
    """Run the CLI. Returns 0 on success, 1 on config errors, 2 on runtime failures."""
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _load(args)
    except ConfigError as exc:
        print(f"kaiesprit: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    handler = {"synthesize": _synthesize, "estimate": _estimate, "sweep": _sweep}[args.command]
    try:
        return handler(args, config)
    except ConfigError as exc:
        print(f"kaiesprit: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any failure maps to the runtime exit code
        print(f"kaiesprit: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
