"""Command-line entry point.

    fedbal --config c.json [--preset NAME] [--seed N] [--out-dir DIR]
           [--rounds N] [--algorithm fedavg|fedsgd|fedprox] [--bal on|off]
           [--jobs N] [--seeds 0,1,2]

Flag values override the file. Without ``--out-dir`` results go under
``$FEDBAL_OUT_DIR`` (default ``./results``).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from fedbal.errors import ConfigError, InvalidArgumentError, NumericError
from fedbal.federation import ALGORITHMS, run_experiment
from fedbal.harness.chart import emit_chart
from fedbal.harness.config import PRESETS, build_config, load_config_doc
from fedbal.harness.presets import run_preset
from fedbal.harness.results import write_results

logger = logging.getLogger("fedbal")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedbal", description="Class-imbalance-aware federated learning simulator.")
    parser.add_argument("--config", required=True, help="path to a JSON config file")
    parser.add_argument("--preset", choices=PRESETS, help="run a named experiment preset")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--seeds", help="comma-separated seeds for preset runs")
    parser.add_argument("--out-dir", help="output directory")
    parser.add_argument("--rounds", type=int, help="override the number of federated rounds")
    parser.add_argument("--algorithm", choices=ALGORITHMS, help="aggregation algorithm")
    parser.add_argument("--bal", choices=("on", "off"), help="relevant-worker selection on/off")
    parser.add_argument("--jobs", type=int, default=1, help="threads for local training (output is unaffected)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _apply_flags(doc: dict, args: argparse.Namespace) -> dict:
    doc = dict(doc)
    if args.preset:
        doc["preset"] = args.preset
    if args.seed is not None:
        doc["seed"] = args.seed
        if isinstance(doc.get("data"), dict) and doc["data"].get("seed") is not None:
            doc["data"] = {**doc["data"], "seed": args.seed}
    if args.rounds is not None:
        doc["rounds"] = args.rounds
    if args.algorithm:
        doc["algorithm"] = args.algorithm
    if args.bal:
        doc["bal"] = args.bal == "on"
    return doc


def run_cli(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    out_dir = Path(args.out_dir or os.environ.get("FEDBAL_OUT_DIR", "results"))
    try:
        doc = _apply_flags(load_config_doc(args.config), args)
        fed, data, preset = build_config(doc)
        if preset:
            seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
            result = run_preset(preset, fed, data, out_dir, seeds=seeds, n_jobs=args.jobs)
            for path in [*result.tables.values(), *result.charts]:
                print(path)
        else:
            history, params = run_experiment(fed, data, n_jobs=args.jobs)
            rounds_csv, workers_csv = write_results(history, out_dir)
            chart = emit_chart(
                {f"{fed.algorithm}{'_bal' if fed.bal_enabled else ''}": [(r.round_index, r.global_miou) for r in history]},
                out_dir / "miou.svg",
                title="global mIoU",
                y_label="global mIoU",
            )
            params.save(out_dir / "final_params.json")
            print(rounds_csv)
            print(workers_csv)
            print(chart)
    except FileNotFoundError as exc:
        print(f"fedbal: error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, InvalidArgumentError, NumericError, ValueError) as exc:
        print(f"fedbal: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
