"""CSV emission for round histories."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

from fedbal.federation import RoundRecord

ROUNDS_HEADER = (
    "round",
    "algorithm",
    "bal",
    "global_miou",
    "iou_sea",
    "iou_oil",
    "iou_lookalike",
    "iou_ship",
    "iou_land",
    "threshold_before",
    "threshold_after",
    "n_relevant",
    "n_rejected",
)
WORKERS_HEADER = ("round", "worker_id", "local_miou", "theta", "selected")


def fmt(value: float | None) -> str:
    """Six decimals; an absent value is written as an empty field."""
    return "" if value is None else f"{value:.6f}"


def _parse(value: str) -> float | None:
    return None if value == "" else float(value)


def write_table(path: Path, header: Sequence[str], rows: Sequence[Sequence[object]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def write_results(history: Sequence[RoundRecord], out_dir: str | Path) -> tuple[Path, Path]:
    """Write ``rounds.csv`` and ``workers.csv`` into ``out_dir``."""
    out = Path(out_dir)
    round_rows = []
    worker_rows = []
    for rec in sorted(history, key=lambda r: r.round_index):
        ious = list(rec.global_per_class_iou)
        if len(ious) != 5:
            raise ValueError(f"rounds.csv expects 5 classes, record has {len(ious)}")
        round_rows.append(
            [
                rec.round_index,
                rec.algorithm,
                "on" if rec.bal_enabled else "off",
                fmt(rec.global_miou),
                *(fmt(v) for v in ious),
                fmt(rec.threshold_before),
                fmt(rec.threshold_after),
                len(rec.relevant_ids),
                len(rec.rejected_ids),
            ]
        )
        relevant = set(rec.relevant_ids)
        for ev in sorted(rec.worker_evals, key=lambda e: e.worker_id):
            worker_rows.append(
                [rec.round_index, ev.worker_id, fmt(ev.miou), fmt(ev.theta), int(ev.worker_id in relevant)]
            )
    return (
        write_table(out / "rounds.csv", ROUNDS_HEADER, round_rows),
        write_table(out / "workers.csv", WORKERS_HEADER, worker_rows),
    )


def read_rounds(path: str | Path) -> list[dict]:
    """Parse a ``rounds.csv`` back into typed dictionaries."""
    rows = []
    with open(path, newline="") as fh:
        for raw in csv.DictReader(fh):
            row: dict = {
                "round": int(raw["round"]),
                "algorithm": raw["algorithm"],
                "bal": raw["bal"] == "on",
                "n_relevant": int(raw["n_relevant"]),
                "n_rejected": int(raw["n_rejected"]),
            }
            for key in ROUNDS_HEADER[3:11]:
                row[key] = _parse(raw[key])
            rows.append(row)
    return rows


def read_workers(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            {
                "round": int(raw["round"]),
                "worker_id": int(raw["worker_id"]),
                "local_miou": float(raw["local_miou"]),
                "theta": float(raw["theta"]),
                "selected": raw["selected"] == "1",
            }
            for raw in csv.DictReader(fh)
        ]
