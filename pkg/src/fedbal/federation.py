"""Federated training engine.

One round: sample participants, train them locally, score every local
model on the auxiliary test set, keep the relevant ones (mIoU at or above
the current threshold and priority-class weight at or above ``theta_min``),
move the threshold, and aggregate the relevant models. With ``bal``
disabled every participant is aggregated and the threshold never moves,
which gives plain FedAvg / FedSGD / FedProx.
"""

from __future__ import annotations

import logging
import math
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence, TypeVar

import numpy as np

from fedbal.errors import InvalidArgumentError
from fedbal.metrics import ConfusionCounts, WorkerEval, confusion_counts, mean_iou, per_class_iou, worker_weight
from fedbal.model import ModelParams, TrainConfig, client_update, init_params, loss_and_grad, predict
from fedbal.seeding import derive_seed, rng_for
from fedbal.synthdata import (
    DEFAULT_NOISE,
    OIL_SPILL,
    ClassProfile,
    ImageSample,
    WorkerShard,
    default_profile,
    generate_dataset,
    partition_iid,
    partition_noniid,
    partition_noniid_unbalanced,
)

logger = logging.getLogger(__name__)

ALGORITHMS = ("fedavg", "fedsgd", "fedprox")
PARTITIONS = ("iid", "noniid", "noniid_unbalanced")
WEIGHTINGS = ("pixels", "samples")
BAND_MODES = ("band", "exact")

T = TypeVar("T")
R = TypeVar("R")


@dataclass(frozen=True)
class FedConfig:
    n_workers: int = 6
    participation_fraction: float = 1.0
    rounds: int = 20
    algorithm: str = "fedavg"
    bal_enabled: bool = True
    initial_threshold: float = 0.50
    priority_class: int = OIL_SPILL
    threshold_step: float = 0.01
    selection_low_band: float = 0.25
    selection_high_band: float = 0.50
    theta_min: float = 1.0
    theta_strict: bool = False  # compare theta with > instead of >=
    threshold_bands: str = "band"  # "band" or "exact" reading of the 25%/50% tests
    prox_mu: float = 0.01
    weighting: str = "pixels"
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0

    def __post_init__(self):
        if self.n_workers < 1:
            raise InvalidArgumentError(f"n_workers must be >= 1, got {self.n_workers}")
        if not 0 < self.participation_fraction <= 1:
            raise InvalidArgumentError(f"participation_fraction must lie in (0, 1], got {self.participation_fraction}")
        if self.rounds < 1:
            raise InvalidArgumentError(f"rounds must be >= 1, got {self.rounds}")
        if self.algorithm not in ALGORITHMS:
            raise InvalidArgumentError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if not 0 <= self.initial_threshold <= 1:
            raise InvalidArgumentError(f"initial_threshold must lie in [0, 1], got {self.initial_threshold}")
        if self.priority_class < 0:
            raise InvalidArgumentError(f"priority_class must be >= 0, got {self.priority_class}")
        if not 0 <= self.selection_low_band <= self.selection_high_band <= 1:
            raise InvalidArgumentError("selection bands must satisfy 0 <= low <= high <= 1")
        if self.prox_mu < 0:
            raise InvalidArgumentError(f"prox_mu must be >= 0, got {self.prox_mu}")
        if self.threshold_bands not in BAND_MODES:
            raise InvalidArgumentError(f"threshold_bands must be one of {BAND_MODES}, got {self.threshold_bands!r}")
        if self.weighting not in WEIGHTINGS:
            raise InvalidArgumentError(f"weighting must be one of {WEIGHTINGS}, got {self.weighting!r}")


@dataclass(frozen=True)
class DataConfig:
    seed: int | None = None  # None: reuse FedConfig.seed
    n_samples: int = 60
    height: int = 16
    width: int = 16
    noise: float = DEFAULT_NOISE
    partition: str = "iid"
    classes_per_worker: int = 2
    min_classes: int = 1
    max_classes: int = 3
    n_aux_samples: int = 20
    n_test_samples: int = 20
    profile: ClassProfile = field(default_factory=default_profile)

    def __post_init__(self):
        if self.partition not in PARTITIONS:
            raise InvalidArgumentError(f"partition must be one of {PARTITIONS}, got {self.partition!r}")
        for name in ("n_samples", "n_aux_samples", "n_test_samples"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be >= 1")


@dataclass
class RoundRecord:
    round_index: int
    algorithm: str
    bal_enabled: bool
    selected_ids: list[int]
    relevant_ids: list[int]
    rejected_ids: list[int]
    worker_evals: list[WorkerEval]
    threshold_before: float
    threshold_after: float
    global_miou: float
    global_per_class_iou: list[float | None]
    train_loss: float | None = None


@dataclass
class GlobalState:
    global_params: ModelParams
    threshold: float
    round_index: int = 0  # rounds completed so far
    history: list[RoundRecord] = field(default_factory=list)


@dataclass
class ExperimentData:
    shards: list[WorkerShard]
    aux_test: list[ImageSample]
    eval_test: list[ImageSample]


# -- participant sampling ----------------------------------------------------


def n_participants(n_workers: int, fraction: float) -> int:
    # The 1e-9 slack stops products such as 0.1 * 30 = 3.0000000000000004
    # from rounding up to an extra worker.
    return max(math.ceil(fraction * n_workers - 1e-9), 1)


def sample_participants(n_workers: int, fraction: float, seed: int, round_index: int) -> list[int]:
    """``max(ceil(C*K), 1)`` distinct worker ids in ascending order."""
    if n_workers < 1:
        raise InvalidArgumentError(f"n_workers must be >= 1, got {n_workers}")
    m = min(n_participants(n_workers, fraction), n_workers)
    chosen = rng_for(seed, "participants", round_index).choice(n_workers, size=m, replace=False)
    return sorted(int(i) for i in chosen)


# -- evaluation and selection ------------------------------------------------


def evaluate_counts(params: ModelParams, samples: Sequence[ImageSample]) -> ConfusionCounts:
    if not samples:
        raise InvalidArgumentError("evaluation set is empty")
    total = ConfusionCounts.zeros(params.n_classes)
    for s in samples:
        total = total + confusion_counts(predict(params, s), s.labels, params.n_classes)
    return total


def evaluate_worker(
    params: ModelParams, aux_test: Sequence[ImageSample], priority_class: int, worker_id: int = -1
) -> WorkerEval:
    counts = evaluate_counts(params, aux_test)
    return WorkerEval(
        worker_id=worker_id,
        per_class_iou=per_class_iou(counts),
        miou=mean_iou(counts),
        theta=worker_weight(counts, priority_class),
    )


def is_relevant(ev: WorkerEval, threshold: float, theta_min: float, theta_strict: bool = False) -> bool:
    theta_ok = ev.theta > theta_min if theta_strict else ev.theta >= theta_min
    return threshold <= ev.miou and theta_ok


def relevant_worker_selection(
    evals: Sequence[WorkerEval], threshold: float, theta_min: float = 1.0, theta_strict: bool = False
) -> tuple[list[WorkerEval], list[WorkerEval]]:
    """Split evaluations into (relevant, rejected), each ordered by worker id."""
    if not evals:
        raise InvalidArgumentError("no worker evaluations to select from")
    ordered = sorted(evals, key=lambda e: e.worker_id)
    relevant = [e for e in ordered if is_relevant(e, threshold, theta_min, theta_strict)]
    rejected = [e for e in ordered if not is_relevant(e, threshold, theta_min, theta_strict)]
    return relevant, rejected


def dynamic_threshold(
    relevant: Sequence[WorkerEval],
    rejected: Sequence[WorkerEval],
    selected: Sequence[int],
    threshold: float,
    cfg: FedConfig = FedConfig(),
) -> float:
    """Next round's mIoU threshold.

    Bands are checked in order: few relevant workers (``0 < |r| <=
    ceil(low * |S|)``) take the best rejected mIoU; none or many
    (``|r| >= ceil(high * |S|)``) take the median rejected mIoU; anything
    else raises the threshold by one step. With ``threshold_bands="exact"``
    the two tests become ``|r| == ceil(low * |S|)`` and
    ``|r| == ceil(high * |S|)``.
    """
    n_rel = len(relevant)
    n_sel = len(selected)
    low = math.ceil(cfg.selection_low_band * n_sel)
    high = math.ceil(cfg.selection_high_band * n_sel)
    stepped = threshold + cfg.threshold_step
    rejected_miou = [e.miou for e in rejected]

    if cfg.threshold_bands == "exact":
        few = n_rel > 0 and n_rel == low
        many = n_rel == high
    else:
        few = 0 < n_rel <= low
        many = n_rel >= high

    if few:
        new = max(rejected_miou) if rejected_miou else stepped
    elif n_rel == 0 or many:
        new = statistics.median(rejected_miou) if rejected_miou else stepped
    else:
        new = stepped
    return min(max(new, 0.0), 1.0)


# -- aggregation -------------------------------------------------------------


def _mixing_weights(sizes: Sequence[int]) -> list[float]:
    total = sum(sizes)
    if total <= 0:
        raise InvalidArgumentError("aggregation weights must have a positive total")
    return [n / total for n in sizes]


def aggregate_fedavg(updates: Sequence[tuple[ModelParams, int]]) -> ModelParams | None:
    """Data-size weighted mean of local parameters.

    Returns ``None`` for an empty list, meaning the caller keeps its current
    global model. The mean is clipped to the per-coordinate range of the
    inputs, which only ever removes rounding overshoot; identical inputs are
    therefore reproduced exactly.
    """
    if not updates:
        return None
    first = updates[0][0]
    for p, _ in updates:
        if p.weights.shape != first.weights.shape:
            raise InvalidArgumentError("local models have different parameter shapes")
    weights = _mixing_weights([n for _, n in updates])
    acc = np.zeros_like(first.weights)
    for (p, _), w in zip(updates, weights):
        acc += w * p.weights
    stacked = np.stack([p.weights for p, _ in updates])
    acc = np.clip(acc, stacked.min(axis=0), stacked.max(axis=0))
    return first.with_weights(acc)


def aggregate_fedsgd(
    global_params: ModelParams, grads: Sequence[tuple[np.ndarray, int]], learning_rate: float
) -> ModelParams | None:
    """One server step ``w - lr * sum_m p_m g_m``; ``None`` for no gradients."""
    if not grads:
        return None
    weights = _mixing_weights([n for _, n in grads])
    acc = np.zeros_like(global_params.weights)
    for (g, _), w in zip(grads, weights):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != acc.shape:
            raise InvalidArgumentError(f"gradient shape {g.shape} != parameter shape {acc.shape}")
        acc += w * g
    return global_params.with_weights(global_params.weights - learning_rate * acc)


# -- rounds ------------------------------------------------------------------


def _map_ordered(fn: Callable[[T], R], items: Sequence[T], n_jobs: int) -> list[R]:
    if n_jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, items))


def local_train_config(cfg: FedConfig) -> TrainConfig:
    mu = cfg.prox_mu if cfg.algorithm == "fedprox" else 0.0
    return replace(cfg.train, prox_mu=mu)


def pooled_loss(params: ModelParams, shards: Sequence[WorkerShard], train: TrainConfig) -> float:
    samples = [s for shard in shards for s in shard.samples]
    loss, _ = loss_and_grad(params, samples, replace(train, prox_mu=0.0))
    return loss


def run_federated_round(
    state: GlobalState,
    shards: Sequence[WorkerShard],
    aux_test: Sequence[ImageSample],
    cfg: FedConfig,
    eval_test: Sequence[ImageSample] | None = None,
    n_jobs: int = 1,
) -> GlobalState:
    """Run one round and return the new state; ``state`` itself is not modified.

    Global metrics are measured on ``eval_test`` when given, else on
    ``aux_test``.
    """
    if len(shards) != cfg.n_workers:
        raise InvalidArgumentError(f"expected {cfg.n_workers} shards, got {len(shards)}")
    if not aux_test:
        raise InvalidArgumentError("auxiliary test set is empty")
    round_index = state.round_index + 1
    global_params = state.global_params
    selected = sample_participants(cfg.n_workers, cfg.participation_fraction, cfg.seed, round_index)
    train = local_train_config(cfg)
    by_id = {shard.worker_id: shard for shard in shards}

    def data_size(worker_id: int) -> int:
        shard = by_id[worker_id]
        return shard.n_pixels if cfg.weighting == "pixels" else len(shard.samples)

    def work(worker_id: int) -> tuple[ModelParams, np.ndarray | None, WorkerEval]:
        shard = by_id[worker_id]
        if cfg.algorithm == "fedsgd":
            _, grad = loss_and_grad(global_params, shard.samples, train)
            # Scored as if the worker had taken the step itself.
            local = global_params.with_weights(global_params.weights - train.learning_rate * grad)
        else:
            grad = None
            local = client_update(global_params, shard, train, derive_seed(cfg.seed, "client", round_index, worker_id))
        return local, grad, evaluate_worker(local, aux_test, cfg.priority_class, worker_id)

    results = dict(zip(selected, _map_ordered(work, selected, n_jobs)))
    evals = [results[w][2] for w in selected]

    threshold_before = state.threshold
    if cfg.bal_enabled:
        relevant, rejected = relevant_worker_selection(evals, threshold_before, cfg.theta_min, cfg.theta_strict)
        threshold_after = dynamic_threshold(relevant, rejected, selected, threshold_before, cfg)
    else:
        relevant, rejected = list(evals), []
        threshold_after = threshold_before
    relevant_ids = [e.worker_id for e in relevant]

    if cfg.algorithm == "fedsgd":
        new_params = aggregate_fedsgd(
            global_params, [(results[w][1], data_size(w)) for w in relevant_ids], train.learning_rate
        )
    else:
        new_params = aggregate_fedavg([(results[w][0], data_size(w)) for w in relevant_ids])
    if new_params is None:
        logger.info("round %d: no relevant workers, keeping the previous global model", round_index)
        new_params = global_params

    counts = evaluate_counts(new_params, eval_test if eval_test else aux_test)
    record = RoundRecord(
        round_index=round_index,
        algorithm=cfg.algorithm,
        bal_enabled=cfg.bal_enabled,
        selected_ids=list(selected),
        relevant_ids=relevant_ids,
        rejected_ids=[e.worker_id for e in rejected],
        worker_evals=evals,
        threshold_before=threshold_before,
        threshold_after=threshold_after,
        global_miou=mean_iou(counts),
        global_per_class_iou=per_class_iou(counts),
        train_loss=pooled_loss(new_params, shards, train),
    )
    return GlobalState(
        global_params=new_params,
        threshold=threshold_after,
        round_index=round_index,
        history=[*state.history, record],
    )


def build_data(cfg: FedConfig, data_cfg: DataConfig) -> ExperimentData:
    """Training shards plus the auxiliary and evaluation sets.

    The three datasets come from disjoint seed streams.
    """
    seed = cfg.seed if data_cfg.seed is None else data_cfg.seed
    dims = (data_cfg.height, data_cfg.width, data_cfg.profile, data_cfg.noise)
    train = generate_dataset(derive_seed(seed, "train"), data_cfg.n_samples, *dims)
    part_seed = derive_seed(seed, "partition")
    if data_cfg.partition == "iid":
        shards = partition_iid(train, cfg.n_workers, part_seed)
    elif data_cfg.partition == "noniid":
        shards = partition_noniid(train, cfg.n_workers, data_cfg.classes_per_worker, part_seed)
    else:
        shards = partition_noniid_unbalanced(
            train, cfg.n_workers, part_seed, data_cfg.min_classes, data_cfg.max_classes
        )
    aux = generate_dataset(derive_seed(seed, "aux"), data_cfg.n_aux_samples, *dims)
    evaluation = generate_dataset(derive_seed(seed, "eval"), data_cfg.n_test_samples, *dims)
    return ExperimentData(shards=shards, aux_test=aux, eval_test=evaluation)


def initial_state(cfg: FedConfig, n_classes: int) -> GlobalState:
    params = init_params(derive_seed(cfg.seed, "init"), n_classes, n_classes)
    return GlobalState(global_params=params, threshold=cfg.initial_threshold)


def run_experiment(
    cfg: FedConfig,
    data_cfg: DataConfig = DataConfig(),
    n_jobs: int = 1,
    checkpoint_dir: str | Path | None = None,
    data: ExperimentData | None = None,
) -> tuple[list[RoundRecord], ModelParams]:
    """Build data and model from the configs and run ``cfg.rounds`` rounds."""
    if cfg.priority_class >= data_cfg.profile.n_classes:
        raise InvalidArgumentError(f"priority_class {cfg.priority_class} out of range")
    data = data or build_data(cfg, data_cfg)
    state = initial_state(cfg, data_cfg.profile.n_classes)
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
    for _ in range(cfg.rounds):
        state = run_federated_round(state, data.shards, data.aux_test, cfg, data.eval_test, n_jobs)
        if checkpoint_dir is not None:
            state.global_params.save(Path(checkpoint_dir) / f"round_{state.round_index}.json")
        logger.debug(
            "round %d: mIoU %.4f, threshold %.3f -> %.3f, %d relevant",
            state.round_index,
            state.history[-1].global_miou,
            state.history[-1].threshold_before,
            state.history[-1].threshold_after,
            len(state.history[-1].relevant_ids),
        )
    return state.history, state.global_params
