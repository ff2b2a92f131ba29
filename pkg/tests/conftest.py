import numpy as np
import pytest

from fedbal.model import loss_and_grad
from fedbal.synthdata import ImageSample

# (criterion number, passed, detail) rows filled in by test_acceptance.py.
ACCEPTANCE: list[tuple[int, bool, str]] = []


def make_sample(labels, n_classes=5, noise=0.0, seed=0, index=-1):
    labels = np.asarray(labels, dtype=np.int64)
    features = np.eye(n_classes)[labels]
    if noise:
        features = features + noise * np.random.default_rng(seed).standard_normal(features.shape)
    return ImageSample(labels=labels, features=features, index=index)


def fd_gradient(params, batch, cfg, anchor=None, h=1e-6):
    """Central finite differences of the batch loss, one coordinate at a time."""
    grad = np.zeros_like(params.weights)
    for i in range(len(grad)):
        up = params.weights.copy()
        dn = params.weights.copy()
        up[i] += h
        dn[i] -= h
        lu, _ = loss_and_grad(params.with_weights(up), batch, cfg, anchor)
        ld, _ = loss_and_grad(params.with_weights(dn), batch, cfg, anchor)
        grad[i] = (lu - ld) / (2 * h)
    return grad


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
