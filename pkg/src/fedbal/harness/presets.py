"""Named experiment presets.

Each preset fixes a data distribution and runs a family of variants,
writing per-variant ``rounds.csv``/``workers.csv`` under
``<out>/<variant>/seed_<s>/`` plus a summary table and an SVG chart.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from fedbal.federation import (
    DataConfig,
    FedConfig,
    RoundRecord,
    build_data,
    evaluate_counts,
    initial_state,
    pooled_loss,
    run_experiment,
)
from fedbal.harness.chart import emit_chart
from fedbal.harness.results import fmt, write_results, write_table
from fedbal.losses import TverskySpec
from fedbal.metrics import class_iou, mean_iou
from fedbal.model import LossSpec, client_update
from fedbal.seeding import derive_seed
from fedbal.synthdata import WorkerShard

ALPHAS = (0.6, 0.7, 0.8)
INTENSITIES = (1, 2, 3)

OVERRIDES: dict[str, dict] = {
    "alpha_sweep": {"bal": True, "data": {"partition": "noniid", "classes_per_worker": 2}},
    "noniid": {"data": {"partition": "noniid", "classes_per_worker": 2}},
    "noniid_unbalanced": {"data": {"partition": "noniid_unbalanced", "min_classes": 1, "max_classes": 3}},
    "intensity_sweep": {"data": {"partition": "noniid"}},
    "central_vs_fed": {"data": {"partition": "iid"}},
}


def preset_overrides(name: str) -> dict:
    return {k: dict(v) if isinstance(v, dict) else v for k, v in OVERRIDES[name].items()}


@dataclass
class Run:
    variant: str
    seed: int
    history: list[RoundRecord]

    @property
    def final(self) -> RoundRecord:
        return self.history[-1]

    @property
    def final_oil_iou(self) -> float | None:
        return self.final.global_per_class_iou[1]


@dataclass
class PresetResult:
    name: str
    runs: list[Run] = field(default_factory=list)
    tables: dict[str, Path] = field(default_factory=dict)
    charts: list[Path] = field(default_factory=list)

    def by_variant(self, variant: str) -> list[Run]:
        return [r for r in self.runs if r.variant == variant]


def _with_seed(fed: FedConfig, data: DataConfig, seed: int) -> tuple[FedConfig, DataConfig]:
    return replace(fed, seed=seed), replace(data, seed=None if data.seed is None else seed)


def _run_variant(
    variant: str, fed: FedConfig, data: DataConfig, seed: int, out: Path, n_jobs: int
) -> Run:
    fed, data = _with_seed(fed, data, seed)
    history, _ = run_experiment(fed, data, n_jobs=n_jobs)
    write_results(history, out / variant / f"seed_{seed}")
    return Run(variant, seed, history)


def _bal_pair(fed: FedConfig, algorithm: str) -> list[tuple[str, FedConfig]]:
    return [
        (algorithm, replace(fed, algorithm=algorithm, bal_enabled=False)),
        (f"{algorithm}_bal", replace(fed, algorithm=algorithm, bal_enabled=True)),
    ]


def _miou_chart(result: PresetResult, out: Path, seed: int, title: str) -> None:
    series = {
        r.variant: [(rec.round_index, rec.global_miou) for rec in r.history]
        for r in result.runs
        if r.seed == seed
    }
    result.charts.append(emit_chart(series, out / "miou.svg", title=title, y_label="global mIoU"))


def _summary_table(result: PresetResult, out: Path) -> None:
    rows = [
        [
            r.variant,
            r.seed,
            fmt(r.final.global_miou),
            fmt(r.final_oil_iou),
            fmt(statistics.fmean(rec.global_miou for rec in r.history)),
            fmt(r.final.train_loss),
        ]
        for r in result.runs
    ]
    header = ("variant", "seed", "final_miou", "final_oil_iou", "mean_miou", "final_train_loss")
    result.tables["summary"] = write_table(out / "summary.csv", header, rows)


def _compare(name: str, variants: list[tuple[str, FedConfig]], data: DataConfig, seeds, out, n_jobs) -> PresetResult:
    result = PresetResult(name)
    for seed in seeds:
        for variant, fed in variants:
            result.runs.append(_run_variant(variant, fed, data, seed, out, n_jobs))
    _summary_table(result, out)
    _miou_chart(result, out, seeds[0], name)
    return result


def run_alpha_sweep(fed, data, seeds, out, n_jobs) -> PresetResult:
    result = PresetResult("alpha_sweep")
    for seed in seeds:
        for alpha in ALPHAS:
            spec = TverskySpec(alpha=alpha, beta=round(1.0 - alpha, 12), epsilon=fed.train.loss.tversky.epsilon)
            train = replace(fed.train, loss=LossSpec("tversky", spec))
            result.runs.append(_run_variant(f"alpha_{alpha:.1f}", replace(fed, train=train), data, seed, out, n_jobs))

    rows = []
    for r in result.runs:
        alpha = float(r.variant.split("_")[1])
        losses = [rec.train_loss for rec in r.history]
        rows.append([f"{alpha:.1f}", f"{1 - alpha:.1f}", r.seed, fmt(losses[-1]), fmt(min(losses)), fmt(r.final.global_miou)])
    result.tables["alpha_sweep"] = write_table(
        out / "alpha_sweep.csv",
        ("alpha", "beta", "seed", "final_train_loss", "min_train_loss", "final_miou"),
        rows,
    )

    medians = alpha_medians(result)
    ranked = sorted(medians, key=lambda a: (medians[a], a))
    result.tables["alpha_ordering"] = write_table(
        out / "alpha_ordering.csv",
        ("alpha", "median_final_train_loss", "rank", "seeds"),
        [[f"{a:.1f}", fmt(medians[a]), ranked.index(a) + 1, " ".join(str(s) for s in seeds)] for a in ALPHAS],
    )
    series = {
        r.variant: [(rec.round_index, rec.train_loss) for rec in r.history] for r in result.runs if r.seed == seeds[0]
    }
    result.charts.append(emit_chart(series, out / "train_loss.svg", title="alpha sweep", y_label="training loss"))
    return result


def alpha_medians(result: PresetResult) -> dict[float, float]:
    return {
        alpha: statistics.median(r.final.train_loss for r in result.by_variant(f"alpha_{alpha:.1f}"))
        for alpha in ALPHAS
    }


def run_intensity_sweep(fed, data, seeds, out, n_jobs) -> PresetResult:
    result = PresetResult("intensity_sweep")
    for seed in seeds:
        for k in INTENSITIES:
            data_k = replace(data, partition="noniid", classes_per_worker=k)
            for variant, cfg in _bal_pair(fed, fed.algorithm):
                result.runs.append(_run_variant(f"{variant}_{k}class", cfg, data_k, seed, out, n_jobs))

    rows = []
    diff_series: dict[str, list[tuple[float, float]]] = {}
    for seed in seeds:
        per_k = {}
        for k in INTENSITIES:
            base = [r for r in result.by_variant(f"{fed.algorithm}_{k}class") if r.seed == seed][0]
            bal = [r for r in result.by_variant(f"{fed.algorithm}_bal_{k}class") if r.seed == seed][0]
            per_k[k] = [b.global_miou - a.global_miou for a, b in zip(base.history, bal.history)]
            if seed == seeds[0]:
                diff_series[f"{k} class"] = list(enumerate(per_k[k], start=1))
        for i in range(fed.rounds):
            rows.append([i + 1, seed, *(fmt(per_k[k][i]) for k in INTENSITIES)])
    result.tables["intensity_diff"] = write_table(
        out / "intensity_diff.csv", ("round", "seed", "diff_1class", "diff_2class", "diff_3class"), rows
    )
    _summary_table(result, out)
    result.charts.append(
        emit_chart(diff_series, out / "intensity_diff.svg", title="bal minus baseline", y_label="mIoU difference")
    )
    return result


def run_central_vs_fed(fed, data, seeds, out, n_jobs) -> PresetResult:
    """Pooled-data training against federated training.

    One centralized "round" runs ``train.epochs`` epochs over the pooled
    shards, so both setups see the same number of epochs.
    """
    result = PresetResult("central_vs_fed")
    rows = []
    loss_series: dict[str, list[tuple[float, float]]] = {}
    for seed in seeds:
        fed_s, data_s = _with_seed(fed, data, seed)
        built = build_data(fed_s, data_s)
        pooled = WorkerShard(-1, [s for shard in built.shards for s in shard.samples])
        params = initial_state(fed_s, data_s.profile.n_classes).global_params
        train = replace(fed_s.train, prox_mu=0.0)
        central_losses, central_miou = [], 0.0
        for r in range(1, fed_s.rounds + 1):
            params = client_update(params, pooled, train, derive_seed(seed, "central", r))
            central_losses.append(pooled_loss(params, built.shards, train))
        counts = evaluate_counts(params, built.eval_test)
        central_miou = mean_iou(counts)

        history, _ = run_experiment(fed_s, data_s, n_jobs=n_jobs, data=built)
        write_results(history, out / "federated" / f"seed_{seed}")
        result.runs.append(Run("federated", seed, history))
        fed_losses = [rec.train_loss for rec in history]
        rows.append(["centralized", seed, fmt(min(central_losses)), fmt(central_losses[-1]), fmt(central_miou),
                      fmt(class_iou(counts, 1))])
        rows.append(["federated", seed, fmt(min(fed_losses)), fmt(fed_losses[-1]), fmt(history[-1].global_miou),
                     fmt(history[-1].global_per_class_iou[1])])
        if seed == seeds[0]:
            loss_series["centralized"] = list(enumerate(central_losses, start=1))
            loss_series["federated"] = list(enumerate(fed_losses, start=1))
    result.tables["central_vs_fed"] = write_table(
        out / "central_vs_fed.csv",
        ("setup", "seed", "min_train_loss", "final_train_loss", "final_miou", "final_oil_iou"),
        rows,
    )
    result.charts.append(emit_chart(loss_series, out / "train_loss.svg", title="centralized vs federated",
                                    y_label="training loss"))
    return result


def run_preset(
    name: str,
    fed: FedConfig,
    data: DataConfig,
    out_dir: str | Path,
    seeds: Sequence[int] | None = None,
    n_jobs: int = 1,
) -> PresetResult:
    """Run preset ``name``; ``fed``/``data`` should already carry its overrides."""
    out = Path(out_dir)
    seeds = list(seeds) if seeds else [fed.seed]
    if name == "alpha_sweep":
        return run_alpha_sweep(fed, data, seeds, out, n_jobs)
    if name == "noniid":
        return _compare(name, _bal_pair(fed, fed.algorithm), data, seeds, out, n_jobs)
    if name == "noniid_unbalanced":
        variants = [v for algo in ("fedavg", "fedprox", "fedsgd") for v in _bal_pair(fed, algo)]
        return _compare(name, variants, data, seeds, out, n_jobs)
    if name == "intensity_sweep":
        return run_intensity_sweep(fed, data, seeds, out, n_jobs)
    if name == "central_vs_fed":
        return run_central_vs_fed(fed, data, seeds, out, n_jobs)
    raise ValueError(f"unknown preset {name!r}")
