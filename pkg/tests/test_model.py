from dataclasses import replace

import numpy as np
import pytest

from conftest import fd_gradient, make_sample
from fedbal.errors import InvalidArgumentError, NumericError
from fedbal.losses import TverskySpec
from fedbal.model import (
    LossSpec,
    ModelParams,
    TrainConfig,
    client_update,
    forward,
    init_params,
    loss_and_grad,
    predict,
    sgd_step,
)
from fedbal.synthdata import WorkerShard, generate_dataset


GRAD_CASES = {
    "cross_entropy": (TrainConfig(loss=LossSpec("cross_entropy")), False),
    "tversky": (TrainConfig(loss=LossSpec("tversky", TverskySpec(0.7, 0.3))), False),
    "composite": (TrainConfig(loss=LossSpec("composite")), False),
    "prox": (TrainConfig(loss=LossSpec("tversky"), prox_mu=0.5), True),
}


def test_init_params_determinism_and_shape():
    a = init_params(3, 5, 4)
    b = init_params(3, 5, 4)
    c = init_params(4, 5, 4)
    assert np.array_equal(a.weights, b.weights)
    assert not np.array_equal(a.weights, c.weights)
    assert a.weights.shape == (5 * 4 + 4,)
    assert np.all(np.abs(a.weights) <= 1 / np.sqrt(5))


@pytest.mark.parametrize("f,c", [(0, 3), (3, 1)])
def test_init_params_rejects_bad_dims(f, c):
    with pytest.raises(InvalidArgumentError):
        init_params(0, f, c)


def test_params_reject_wrong_length_and_nonfinite():
    with pytest.raises(InvalidArgumentError):
        ModelParams(np.zeros(7), 2, 2)
    with pytest.raises(NumericError):
        ModelParams(np.array([np.nan, 0, 0, 0, 0, 0]), 2, 2)


def test_zero_weights_give_uniform_probabilities(rng):
    params = ModelParams(np.zeros(5 * 5 + 5), 5, 5)
    sample = make_sample(rng.integers(0, 5, (4, 4)), noise=0.3)
    assert np.allclose(forward(params, sample), 0.2, atol=0, rtol=1e-15)
    # Ties break to class 0.
    assert np.all(predict(params, sample) == 0)


def test_probabilities_normalized(rng):
    params = init_params(1, 5, 5).with_weights(rng.normal(scale=5, size=30))
    probs = forward(params, make_sample(rng.integers(0, 5, (6, 7)), noise=1.0))
    assert probs.shape == (6, 7, 5)
    assert np.all(probs >= 0)
    assert np.allclose(probs.sum(axis=-1), 1.0, atol=1e-9)


def test_identity_weights_recover_labels(rng):
    labels = rng.integers(0, 5, (8, 8))
    weights = np.concatenate([(3.0 * np.eye(5)).ravel(), np.zeros(5)])
    params = ModelParams(weights, 5, 5)
    assert np.array_equal(predict(params, make_sample(labels)), labels)


def test_forward_dimension_mismatch():
    params = init_params(0, 4, 5)
    with pytest.raises(InvalidArgumentError):
        forward(params, make_sample([[0, 1]]))


def test_perfect_predictions_zero_tversky_loss():
    labels = np.array([[0, 1, 2], [2, 1, 0]])
    weights = np.concatenate([(60.0 * np.eye(3)).ravel(), np.zeros(3)])
    loss, _ = loss_and_grad(ModelParams(weights, 3, 3), [make_sample(labels, 3)], TrainConfig())
    assert loss == pytest.approx(0.0, abs=1e-6)


def test_prox_term_zero_at_anchor(rng):
    params = init_params(2, 5, 5)
    batch = [make_sample(rng.integers(0, 5, (4, 4)), noise=0.2)]
    plain, g_plain = loss_and_grad(params, batch, TrainConfig())
    prox, g_prox = loss_and_grad(params, batch, TrainConfig(prox_mu=3.0), anchor=params)
    assert prox == plain
    assert np.array_equal(g_prox, g_plain)


def test_loss_and_grad_errors(rng):
    params = init_params(2, 5, 5)
    batch = [make_sample(rng.integers(0, 5, (4, 4)))]
    with pytest.raises(InvalidArgumentError):
        loss_and_grad(params, [], TrainConfig())
    with pytest.raises(InvalidArgumentError):
        loss_and_grad(params, batch, TrainConfig(prox_mu=0.1))
    huge = params.with_weights(np.full(30, 1e308))
    with pytest.raises(NumericError), np.errstate(all="ignore"):
        loss_and_grad(huge, batch, TrainConfig(prox_mu=1.0), anchor=params.with_weights(-huge.weights))


@pytest.mark.parametrize("case", sorted(GRAD_CASES))
def test_gradient_matches_finite_differences(case):
    cfg, needs_anchor = GRAD_CASES[case]
    rng = np.random.default_rng(sorted(GRAD_CASES).index(case))
    for trial in range(20):
        params = init_params(trial, 5, 5).with_weights(rng.normal(scale=0.7, size=30))
        anchor = params.with_weights(rng.normal(size=30)) if needs_anchor else None
        batch = [make_sample(rng.integers(0, 5, (4, 4)), noise=0.4, seed=trial)]
        _, grad = loss_and_grad(params, batch, cfg, anchor)
        fd = fd_gradient(params, batch, cfg, anchor)
        np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-8)


def test_sgd_step_examples(rng):
    params = init_params(5, 3, 2)
    w = params.weights
    assert np.array_equal(sgd_step(params, np.zeros_like(w), 0.7).weights, w)
    assert np.array_equal(sgd_step(params, w, 1.0).weights, np.zeros_like(w))
    g = rng.normal(size=w.shape)
    two = sgd_step(sgd_step(params, g, 0.25), g, 0.25).weights
    np.testing.assert_allclose(two, sgd_step(params, g, 0.5).weights, rtol=0, atol=1e-15)
    with pytest.raises(InvalidArgumentError):
        sgd_step(params, np.zeros(3), 0.1)


@pytest.fixture(scope="module")
def shard():
    return WorkerShard(0, generate_dataset(17, 6, 8, 8))


def test_client_update_lr_zero_is_identity(shard):
    start = init_params(1, 5, 5)
    out = client_update(start, shard, TrainConfig(epochs=2, learning_rate=0.0), seed=3)
    assert np.array_equal(out.weights, start.weights)


def test_client_update_single_sample_takes_a_step():
    one = WorkerShard(0, generate_dataset(2, 1, 8, 8))
    start = init_params(1, 5, 5)
    out = client_update(start, one, TrainConfig(epochs=1, learning_rate=0.5), seed=0)
    assert not np.array_equal(out.weights, start.weights)


def test_client_update_immutable_and_deterministic(shard):
    start = init_params(1, 5, 5)
    before = start.weights.copy()
    cfg = TrainConfig(epochs=3, batch_size=2, learning_rate=1.0)
    a = client_update(start, shard, cfg, seed=9)
    b = client_update(start, shard, cfg, seed=9)
    assert np.array_equal(start.weights, before)
    assert np.array_equal(a.weights, b.weights)
    assert a.weights.tobytes() == b.weights.tobytes()


def test_client_update_reduces_loss_on_noiseless_shard():
    clean = WorkerShard(0, generate_dataset(4, 6, 8, 8, noise=0.0))
    start = init_params(0, 5, 5)
    for kind in ("cross_entropy", "tversky", "composite"):
        cfg = TrainConfig(epochs=5, learning_rate=0.5, loss=LossSpec(kind))
        before, _ = loss_and_grad(start, clean.samples, cfg)
        after, _ = loss_and_grad(client_update(start, clean, cfg, seed=1), clean.samples, cfg)
        assert after <= before, kind


def test_client_update_empty_shard():
    with pytest.raises(InvalidArgumentError):
        client_update(init_params(0, 5, 5), WorkerShard(0, []), TrainConfig(), seed=0)


def test_prox_pull_shrinks_drift(shard):
    start = init_params(8, 5, 5)
    cfg = TrainConfig(epochs=1, batch_size=2, learning_rate=1e-3)
    free = client_update(start, shard, cfg, seed=2)
    pulled = client_update(start, shard, replace(cfg, prox_mu=1e3), seed=2)
    assert np.linalg.norm(pulled.weights - start.weights) < np.linalg.norm(free.weights - start.weights)


def test_train_config_validation():
    with pytest.raises(InvalidArgumentError):
        TrainConfig(epochs=0)
    with pytest.raises(InvalidArgumentError):
        TrainConfig(prox_mu=-1.0)
    with pytest.raises(InvalidArgumentError):
        LossSpec("hinge")


def test_checkpoint_round_trip(tmp_path, rng):
    params = init_params(0, 5, 5).with_weights(rng.normal(size=30) / 3)
    path = tmp_path / "ckpt.json"
    params.save(path)
    loaded = ModelParams.load(path)
    assert loaded.weights.tobytes() == params.weights.tobytes()
    assert (loaded.feature_dim, loaded.n_classes) == (5, 5)
