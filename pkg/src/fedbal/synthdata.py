"""Synthetic imbalanced segmentation scenes and worker partitioning.

Each scene is a label grid dominated by a background class with small
rectangular or elliptical blobs for the minority classes. Per-pixel
features are the one-hot encoding of the label plus Gaussian noise, so a
linear per-pixel classifier can learn the task but not perfectly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from fedbal.errors import InvalidArgumentError
from fedbal.seeding import derive_seed, rng_for

MIN_SIDE = 8
DEFAULT_NOISE = 0.35

# Pixel counts (millions) per class of the reference oil-spill SAR corpus.
REFERENCE_PIXEL_COUNTS = (797.7, 9.1, 50.4, 0.3, 45.7)
DEFAULT_CLASS_NAMES = ("sea_surface", "oil_spill", "look_alike", "ship", "land")
OIL_SPILL = 1


@dataclass(frozen=True)
class ClassProfile:
    target_freq: tuple[float, ...]
    names: tuple[str, ...]

    def __post_init__(self):
        validate_profile(self)

    @property
    def n_classes(self) -> int:
        return len(self.target_freq)

    @property
    def background(self) -> int:
        """Index of the highest-frequency class (lowest index on ties)."""
        return int(np.argmax(self.target_freq))

    def minority_classes(self) -> list[int]:
        return [c for c in range(self.n_classes) if c != self.background]

    @classmethod
    def from_counts(cls, counts: Sequence[float], names: Sequence[str]) -> "ClassProfile":
        total = float(sum(counts))
        return cls(tuple(float(c) / total for c in counts), tuple(names))


def validate_profile(profile: ClassProfile) -> None:
    freq = profile.target_freq
    if len(freq) < 2:
        raise InvalidArgumentError("a class profile needs at least 2 classes")
    if len(profile.names) != len(freq):
        raise InvalidArgumentError("names and target_freq lengths differ")
    if any(not (0.0 < f <= 1.0) for f in freq):
        raise InvalidArgumentError(f"target_freq entries must lie in (0, 1]: {freq}")
    if abs(math.fsum(freq) - 1.0) > 1e-9:
        raise InvalidArgumentError(f"target_freq must sum to 1, got {math.fsum(freq)!r}")


def default_profile() -> ClassProfile:
    return ClassProfile.from_counts(REFERENCE_PIXEL_COUNTS, DEFAULT_CLASS_NAMES)


@dataclass(eq=False)
class ImageSample:
    labels: np.ndarray  # (H, W) int64
    features: np.ndarray  # (H, W, F) float64
    index: int = -1  # position in the originating dataset

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def n_pixels(self) -> int:
        return self.labels.size

    def classes_present(self) -> set[int]:
        return {int(c) for c in np.unique(self.labels)}

    def same_as(self, other: "ImageSample") -> bool:
        return (
            self.index == other.index
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.features, other.features)
        )


@dataclass(eq=False)
class WorkerShard:
    worker_id: int
    samples: list[ImageSample]
    class_inventory: frozenset[int] = field(init=False)
    n_pixels: int = field(init=False)

    def __post_init__(self):
        present: set[int] = set()
        for s in self.samples:
            present |= s.classes_present()
        self.class_inventory = frozenset(present)
        self.n_pixels = sum(s.n_pixels for s in self.samples)

    def __len__(self) -> int:
        return len(self.samples)


def _blob_mask(rng: np.random.Generator, area: int, height: int, width: int) -> np.ndarray:
    """Boolean mask holding one rectangle or ellipse of roughly ``area`` pixels."""
    area = min(area, height * width)
    elliptical = area >= 6 and rng.random() < 0.5
    aspect = rng.uniform(0.5, 2.0)
    box_area = area * 4.0 / math.pi if elliptical else float(area)
    w = int(min(width, max(1, round(math.sqrt(box_area * aspect)))))
    h = int(min(height, max(1, round(box_area / w))))
    top = int(rng.integers(0, height - h + 1))
    left = int(rng.integers(0, width - w + 1))
    mask = np.zeros((height, width), dtype=bool)
    if elliptical:
        yy, xx = np.mgrid[0:h, 0:w]
        cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
        inside = ((yy - cy) / (h / 2.0)) ** 2 + ((xx - cx) / (w / 2.0)) ** 2 <= 1.0
        mask[top : top + h, left : left + w] = inside
    else:
        mask[top : top + h, left : left + w] = True
    return mask


def _mean_blob_area(freq: float, n_pixels: int) -> float:
    # Tiny expected areas become rare single-pixel blobs; larger ones split
    # into about two blobs per scene.
    return max(1.0, freq * n_pixels / 2.0)


def generate_sample(
    seed: int,
    height: int,
    width: int,
    profile: ClassProfile | None = None,
    noise: float = DEFAULT_NOISE,
    index: int = -1,
) -> ImageSample:
    """Generate one scene; identical arguments give bit-identical output."""
    if height < MIN_SIDE or width < MIN_SIDE:
        raise InvalidArgumentError(f"scene must be at least {MIN_SIDE}x{MIN_SIDE}, got {height}x{width}")
    if noise < 0 or not math.isfinite(noise):
        raise InvalidArgumentError(f"noise amplitude must be finite and >= 0, got {noise}")
    profile = profile or default_profile()
    rng = np.random.default_rng(seed)
    n_pixels = height * width
    labels = np.full((height, width), profile.background, dtype=np.int64)

    # Most frequent minority class first so the rarest ones are stamped last
    # and never overwritten.
    order = sorted(profile.minority_classes(), key=lambda c: (-profile.target_freq[c], c))
    for c in order:
        mean_area = _mean_blob_area(profile.target_freq[c], n_pixels)
        n_blobs = int(rng.poisson(profile.target_freq[c] * n_pixels / mean_area))
        for _ in range(n_blobs):
            area = max(1, int(round(mean_area * rng.uniform(0.5, 1.5))))
            labels[_blob_mask(rng, area, height, width)] = c

    features = np.eye(profile.n_classes)[labels]
    if noise > 0:
        features = features + noise * rng.standard_normal(features.shape)
    return ImageSample(labels=labels, features=features, index=index)


def generate_dataset(
    seed: int,
    n_samples: int,
    height: int,
    width: int,
    profile: ClassProfile | None = None,
    noise: float = DEFAULT_NOISE,
) -> list[ImageSample]:
    if n_samples < 1:
        raise InvalidArgumentError(f"n_samples must be >= 1, got {n_samples}")
    return [
        generate_sample(derive_seed(seed, i), height, width, profile, noise, index=i)
        for i in range(n_samples)
    ]


def _shuffled(dataset: Sequence[ImageSample], n_workers: int, seed: int) -> list[ImageSample]:
    if not dataset:
        raise InvalidArgumentError("dataset is empty")
    if n_workers < 1:
        raise InvalidArgumentError(f"n_workers must be >= 1, got {n_workers}")
    if n_workers > len(dataset):
        raise InvalidArgumentError(f"{n_workers} workers but only {len(dataset)} samples")
    perm = rng_for(seed, "shuffle").permutation(len(dataset))
    return [dataset[int(i)] for i in perm]


def _deal(samples: list[ImageSample], n_workers: int) -> list[list[ImageSample]]:
    return [samples[w::n_workers] for w in range(n_workers)]


def partition_iid(dataset: Sequence[ImageSample], n_workers: int, seed: int) -> list[WorkerShard]:
    """Shuffle by ``seed`` and deal round-robin; shard sizes differ by at most 1."""
    dealt = _deal(_shuffled(dataset, n_workers, seed), n_workers)
    return [WorkerShard(w, chunk) for w, chunk in enumerate(dealt)]


def _n_classes_of(dataset: Sequence[ImageSample]) -> int:
    return dataset[0].features.shape[-1]


def _class_frequencies(dataset: Sequence[ImageSample]) -> np.ndarray:
    counts = np.zeros(_n_classes_of(dataset), dtype=np.int64)
    for s in dataset:
        counts += np.bincount(s.labels.ravel(), minlength=counts.size)
    return counts / counts.sum()


def _background_of(dataset: Sequence[ImageSample]) -> int:
    return int(np.argmax(_class_frequencies(dataset)))


def _assign_classes(counts: Sequence[int], pool: list[int]) -> list[list[int]]:
    """Walk a cyclic class order so coverage is maximal before any repeat."""
    assigned = []
    cursor = 0
    for k in counts:
        k = min(k, len(pool))
        assigned.append(sorted(pool[(cursor + j) % len(pool)] for j in range(k)))
        cursor += k
    return assigned


def _restamp(sample: ImageSample, keep: set[int], background: int) -> ImageSample:
    """Relabel pixels of classes outside ``keep`` as background.

    The noise on each moved pixel is preserved, only its one-hot part moves.
    """
    drop = ~np.isin(sample.labels, sorted(keep))
    if not drop.any():
        return sample
    labels = sample.labels.copy()
    features = sample.features.copy()
    old = labels[drop]
    rows = np.arange(old.size)
    moved = features[drop]
    moved[rows, old] -= 1.0
    moved[rows, background] += 1.0
    features[drop] = moved
    labels[drop] = background
    return ImageSample(labels=labels, features=features, index=sample.index)


def _plant(sample: ImageSample, cls: int, rng: np.random.Generator, area: int, background: int) -> ImageSample:
    """Stamp a blob of ``cls`` over background pixels of ``sample``."""
    mask = _blob_mask(rng, area, sample.height, sample.width) & (sample.labels == background)
    if not mask.any():
        # Background-free footprint: take the first background pixel instead.
        flat = np.flatnonzero(sample.labels.ravel() == background)
        mask = np.zeros(sample.labels.size, dtype=bool)
        mask[flat[0] if flat.size else 0] = True
        mask = mask.reshape(sample.labels.shape)
    labels = sample.labels.copy()
    features = sample.features.copy()
    old = labels[mask]
    rows = np.arange(old.size)
    moved = features[mask]
    moved[rows, old] -= 1.0
    moved[rows, cls] += 1.0
    features[mask] = moved
    labels[mask] = cls
    return ImageSample(labels=labels, features=features, index=sample.index)


def _build_noniid(
    dataset: Sequence[ImageSample], n_workers: int, class_counts: Sequence[int], seed: int
) -> list[WorkerShard]:
    background = _background_of(dataset)
    n_classes = _n_classes_of(dataset)
    pool = [c for c in range(n_classes) if c != background]
    order = rng_for(seed, "class-order").permutation(len(pool))
    pool = [pool[int(i)] for i in order]
    assignments = _assign_classes(class_counts, pool)
    dealt = _deal(_shuffled(dataset, n_workers, seed), n_workers)
    freq = _class_frequencies(dataset)

    shards = []
    for w, (chunk, classes) in enumerate(zip(dealt, assignments)):
        keep = set(classes) | {background}
        samples = [_restamp(s, keep, background) for s in chunk]
        present = set().union(*(s.classes_present() for s in samples))
        # Rare classes can be missing from a small shard; plant one blob so
        # the worker actually holds every class it was assigned.
        plant_rng = rng_for(seed, "plant", w)
        pixels = samples[0].n_pixels
        for c in classes:
            if c in present:
                continue
            area = max(1, int(round(_mean_blob_area(float(freq[c]), pixels))))
            slot = int(plant_rng.integers(0, len(samples)))
            samples[slot] = _plant(samples[slot], c, plant_rng, area, background)
        shards.append(WorkerShard(w, samples))
    return shards


def partition_noniid(
    dataset: Sequence[ImageSample], n_workers: int, classes_per_worker: int, seed: int
) -> list[WorkerShard]:
    """Give every worker ``classes_per_worker`` non-background classes.

    Samples are dealt as in :func:`partition_iid`; each worker's copies are
    then relabelled so only its assigned classes and the background remain.
    A request larger than the number of non-background classes hands out
    all of them.
    """
    n_classes = _n_classes_of(dataset) if dataset else 0
    if classes_per_worker < 1 or classes_per_worker > n_classes:
        raise InvalidArgumentError(
            f"classes_per_worker must lie in [1, {n_classes}], got {classes_per_worker}"
        )
    return _build_noniid(dataset, n_workers, [classes_per_worker] * n_workers, seed)


def partition_noniid_unbalanced(
    dataset: Sequence[ImageSample],
    n_workers: int,
    seed: int,
    min_classes: int,
    max_classes: int,
) -> list[WorkerShard]:
    """Like :func:`partition_noniid` with a per-worker class count drawn from
    ``[min_classes, max_classes]``."""
    n_classes = _n_classes_of(dataset) if dataset else 0
    if not (1 <= min_classes <= max_classes <= n_classes):
        raise InvalidArgumentError(
            f"need 1 <= min_classes <= max_classes <= {n_classes}, got {min_classes}, {max_classes}"
        )
    counts = rng_for(seed, "class-counts").integers(min_classes, max_classes + 1, size=max(n_workers, 0))
    return _build_noniid(dataset, n_workers, [int(k) for k in counts], seed)


# -- textual dump/load -------------------------------------------------------


def dataset_to_json(dataset: Sequence[ImageSample], profile: ClassProfile | None = None) -> str:
    """Serialize a dataset as one JSON document with row-major arrays."""
    if not dataset:
        raise InvalidArgumentError("dataset is empty")
    profile = profile or default_profile()
    first = dataset[0]
    doc = {
        "height": first.height,
        "width": first.width,
        "feature_dim": int(first.features.shape[-1]),
        "profile": {"names": list(profile.names), "target_freq": list(profile.target_freq)},
        "samples": [
            {
                "index": s.index,
                "labels": s.labels.ravel().tolist(),
                "features": s.features.ravel().tolist(),
            }
            for s in dataset
        ],
    }
    return json.dumps(doc)


def dataset_from_json(text: str) -> tuple[list[ImageSample], ClassProfile]:
    doc = json.loads(text)
    h, w, f = doc["height"], doc["width"], doc["feature_dim"]
    profile = ClassProfile(tuple(doc["profile"]["target_freq"]), tuple(doc["profile"]["names"]))
    samples = []
    for item in doc["samples"]:
        labels = np.asarray(item["labels"], dtype=np.int64).reshape(h, w)
        if labels.min() < 0 or labels.max() >= profile.n_classes:
            raise InvalidArgumentError("label value outside the profile's classes")
        features = np.asarray(item["features"], dtype=np.float64).reshape(h, w, f)
        samples.append(ImageSample(labels=labels, features=features, index=item["index"]))
    return samples, profile


def save_dataset(path: str | Path, dataset: Sequence[ImageSample], profile: ClassProfile | None = None) -> None:
    Path(path).write_text(dataset_to_json(dataset, profile))


def load_dataset(path: str | Path) -> tuple[list[ImageSample], ClassProfile]:
    return dataset_from_json(Path(path).read_text())
