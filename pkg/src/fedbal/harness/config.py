"""JSON experiment configuration.

Every key is optional; omitted keys take the defaults below. Unknown keys
are rejected. Layout::

    {
      "seed": 0, "n_workers": 6, "participation_fraction": 1.0,
      "rounds": 20, "algorithm": "fedavg", "bal": true,
      "initial_threshold": 0.5, "priority_class": "oil_spill",
      "threshold_step": 0.01, "selection_low_band": 0.25,
      "selection_high_band": 0.5, "theta_min": 1.0, "theta_strict": false,
      "threshold_bands": "band", "prox_mu": 0.01, "weighting": "pixels",
      "paper_mode": true, "preset": null,
      "train": {"epochs": 50, "batch_size": 4, "learning_rate": 2.0},
      "loss": {"kind": "tversky", "alpha": 0.7, "beta": 0.3, "epsilon": 1e-6},
      "data": {"seed": null, "n_samples": 60, "height": 16, "width": 16,
               "noise": 0.35, "partition": "iid", "classes_per_worker": 2,
               "min_classes": 1, "max_classes": 3, "n_aux_samples": 20,
               "n_test_samples": 20}
    }

With ``paper_mode`` on, the Tversky penalties must satisfy
``alpha + beta = 1``: giving only one of them derives the other.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Callable

from fedbal.errors import ConfigError, InvalidArgumentError
from fedbal.federation import ALGORITHMS, BAND_MODES, PARTITIONS, WEIGHTINGS, DataConfig, FedConfig
from fedbal.losses import DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_EPSILON, TverskySpec
from fedbal.model import LOSS_KINDS, LossSpec, TrainConfig
from fedbal.synthdata import DEFAULT_CLASS_NAMES

PRESETS = ("alpha_sweep", "noniid", "noniid_unbalanced", "intensity_sweep", "central_vs_fed")

Check = Callable[[Any], bool]


def _int(check: Check = lambda v: True) -> Check:
    return lambda v: isinstance(v, int) and not isinstance(v, bool) and check(v)


def _real(check: Check = lambda v: True) -> Check:
    return lambda v: (
        isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) and check(v)
    )


def _choice(options: tuple[str, ...]) -> Check:
    return lambda v: v in options


def _bool(v: Any) -> bool:
    return isinstance(v, bool)


def _priority(v: Any) -> bool:
    return v in DEFAULT_CLASS_NAMES or _int(lambda x: 0 <= x < len(DEFAULT_CLASS_NAMES))(v)


TOP_LEVEL: dict[str, tuple[Check, str]] = {
    "seed": (_int(lambda v: v >= 0), "a nonnegative integer"),
    "n_workers": (_int(lambda v: v >= 1), "an integer >= 1"),
    "participation_fraction": (_real(lambda v: 0 < v <= 1), "a number in (0, 1]"),
    "rounds": (_int(lambda v: v >= 1), "an integer >= 1"),
    "algorithm": (_choice(ALGORITHMS), f"one of {ALGORITHMS}"),
    "bal": (_bool, "a boolean"),
    "initial_threshold": (_real(lambda v: 0 <= v <= 1), "a number in [0, 1]"),
    "priority_class": (_priority, f"a class index or one of {DEFAULT_CLASS_NAMES}"),
    "threshold_step": (_real(), "a number"),
    "selection_low_band": (_real(lambda v: 0 <= v <= 1), "a number in [0, 1]"),
    "selection_high_band": (_real(lambda v: 0 <= v <= 1), "a number in [0, 1]"),
    "theta_min": (_real(lambda v: v >= 0), "a number >= 0"),
    "theta_strict": (_bool, "a boolean"),
    "threshold_bands": (_choice(BAND_MODES), f"one of {BAND_MODES}"),
    "prox_mu": (_real(lambda v: v >= 0), "a number >= 0"),
    "weighting": (_choice(WEIGHTINGS), f"one of {WEIGHTINGS}"),
    "paper_mode": (_bool, "a boolean"),
    "preset": (lambda v: v is None or v in PRESETS, f"null or one of {PRESETS}"),
}
TRAIN_KEYS: dict[str, tuple[Check, str]] = {
    "epochs": (_int(lambda v: v >= 1), "an integer >= 1"),
    "batch_size": (_int(lambda v: v >= 1), "an integer >= 1"),
    "learning_rate": (_real(lambda v: v > 0), "a number > 0"),
}
LOSS_KEYS: dict[str, tuple[Check, str]] = {
    "kind": (_choice(LOSS_KINDS), f"one of {LOSS_KINDS}"),
    "alpha": (_real(lambda v: 0 <= v <= 1), "a number in [0, 1]"),
    "beta": (_real(lambda v: 0 <= v <= 1), "a number in [0, 1]"),
    "epsilon": (_real(lambda v: v > 0), "a number > 0"),
}
DATA_KEYS: dict[str, tuple[Check, str]] = {
    "seed": (lambda v: v is None or _int(lambda x: x >= 0)(v), "null or a nonnegative integer"),
    "n_samples": (_int(lambda v: v >= 1), "an integer >= 1"),
    "height": (_int(lambda v: v >= 8), "an integer >= 8"),
    "width": (_int(lambda v: v >= 8), "an integer >= 8"),
    "noise": (_real(lambda v: v >= 0), "a number >= 0"),
    "partition": (_choice(PARTITIONS), f"one of {PARTITIONS}"),
    "classes_per_worker": (_int(lambda v: v >= 1), "an integer >= 1"),
    "min_classes": (_int(lambda v: v >= 1), "an integer >= 1"),
    "max_classes": (_int(lambda v: v >= 1), "an integer >= 1"),
    "n_aux_samples": (_int(lambda v: v >= 1), "an integer >= 1"),
    "n_test_samples": (_int(lambda v: v >= 1), "an integer >= 1"),
}
SECTIONS = {"train": TRAIN_KEYS, "loss": LOSS_KEYS, "data": DATA_KEYS}


def _validate(doc: dict, schema: dict[str, tuple[Check, str]], prefix: str = "") -> None:
    for key, value in doc.items():
        name = f"{prefix}{key}"
        if key in SECTIONS and not prefix:
            if not isinstance(value, dict):
                raise ConfigError(name, "must be an object")
            _validate(value, SECTIONS[key], f"{key}.")
            continue
        if key not in schema:
            raise ConfigError(name, "unknown key")
        check, expected = schema[key]
        if not check(value):
            raise ConfigError(name, f"must be {expected}, got {value!r}")


def _resolve_tversky(loss: dict, paper_mode: bool) -> TverskySpec:
    alpha = loss.get("alpha")
    beta = loss.get("beta")
    if paper_mode:
        if alpha is not None and beta is not None and abs(alpha + beta - 1.0) > 1e-9:
            raise ConfigError("loss.beta", f"paper_mode requires alpha + beta = 1, got {alpha} + {beta}")
        if alpha is not None and beta is None:
            beta = 1.0 - alpha
        elif beta is not None and alpha is None:
            alpha = 1.0 - beta
    alpha = DEFAULT_ALPHA if alpha is None else alpha
    beta = DEFAULT_BETA if beta is None else beta
    return TverskySpec(alpha=alpha, beta=beta, epsilon=loss.get("epsilon", DEFAULT_EPSILON))


def merge(base: dict, override: dict) -> dict:
    """Recursive dict merge; ``override`` wins."""
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = value
    return out


def build_config(doc: dict) -> tuple[FedConfig, DataConfig, str | None]:
    """Validate a config document and expand it into typed configs.

    A ``preset`` entry contributes its overrides beneath the document's own
    values.
    """
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    _validate(doc, TOP_LEVEL)
    preset = doc.get("preset")
    if preset is not None:
        from fedbal.harness.presets import preset_overrides

        doc = merge(preset_overrides(preset), doc)
        _validate(doc, TOP_LEVEL)

    train_doc = doc.get("train", {})
    loss_doc = doc.get("loss", {})
    data_doc = doc.get("data", {})
    priority = doc.get("priority_class", 1)
    if isinstance(priority, str):
        priority = DEFAULT_CLASS_NAMES.index(priority)

    try:
        loss = LossSpec(kind=loss_doc.get("kind", "tversky"), tversky=_resolve_tversky(loss_doc, doc.get("paper_mode", True)))
        train = TrainConfig(loss=loss, **train_doc)
        data = DataConfig(**data_doc)
        fed_fields = {k: v for k, v in doc.items() if k not in SECTIONS and k not in ("bal", "paper_mode", "preset", "priority_class")}
        fed = FedConfig(train=train, bal_enabled=doc.get("bal", True), priority_class=priority, **fed_fields)
    except InvalidArgumentError as exc:
        raise ConfigError("<config>", str(exc)) from exc

    if data.partition == "noniid" and data.classes_per_worker > data.profile.n_classes:
        raise ConfigError("data.classes_per_worker", f"must be <= {data.profile.n_classes}")
    if data.min_classes > data.max_classes or data.max_classes > data.profile.n_classes:
        raise ConfigError("data.max_classes", "need min_classes <= max_classes <= number of classes")
    if fed.selection_low_band > fed.selection_high_band:
        raise ConfigError("selection_low_band", "must not exceed selection_high_band")
    return fed, data, preset


def load_config_doc(path: str | Path) -> dict:
    """Read the JSON document; a missing file raises ``FileNotFoundError``."""
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"invalid JSON: {exc}") from exc


def parse_config(path: str | Path) -> tuple[FedConfig, DataConfig, str | None]:
    return build_config(load_config_doc(path))
