import json
import os

import numpy as np
import pytest

from Block_Architect.data_model import Lexicon
from Block_Architect.neural_net import (
    CheckpointError, DimensionMismatch, FormatVersionMismatch, Gradients, Optimizer, OptimizerKind,
    QNetwork, apply_update, architecture, backward, forward, forward_cache, init_network,
    load_checkpoint, read_checkpoint, save_checkpoint
)


def small_net():
    """2-2-1 network with hand-set weights."""
    weights = [np.array([[1.0, -1.0], [2.0, 1.0]]), np.array([[1.0], [3.0]])]
    biases = [np.array([0.0, 0.5]), np.array([-1.0])]
    return QNetwork(weights, biases)


def objective(net, inputs, output_grad):
    output, cache = forward_cache(net, inputs)
    return float(np.sum(output * output_grad)), [np.sign(z) for z in cache[1:-1]]


def test_init_is_deterministic():
    first = init_network(3, layer_dims=[72, 16, 8, 20])
    second = init_network(3, layer_dims=[72, 16, 8, 20])
    assert all(np.array_equal(a, b) for a, b in zip(first.parameters(), second.parameters()))
    other = init_network(4, layer_dims=[72, 16, 8, 20])
    assert not np.array_equal(first.weights[0], other.weights[0])


def test_default_architecture():
    assert architecture() == [72, 576, 576, 576, 36, 20]
    net = init_network(0, m_max=20)
    assert net.layer_dims == [72, 576, 576, 576, 36, 20]
    assert net.weights[-1].shape == (36, 20)
    assert all(not b.any() for b in net.biases)
    assert all(w.dtype == np.float64 for w in net.weights)
    limit = np.sqrt(6.0 / 72)
    assert np.abs(net.weights[0]).max() <= limit
    with pytest.raises(ValueError):
        init_network(0, m_max=11)


def test_layers_must_chain():
    with pytest.raises(DimensionMismatch):
        QNetwork([np.zeros((4, 3)), np.zeros((2, 1))], [np.zeros(3), np.zeros(1)])
    with pytest.raises(DimensionMismatch):
        QNetwork([np.zeros((4, 3))], [np.zeros(2)])


def test_forward_hand_computed():
    net = small_net()
    assert forward(net, np.array([1.0, 1.0]))[0] == 3.5
    assert forward(net, np.array([1.0, 0.0]))[0] == 0.0
    batch = forward(net, np.array([[1.0, 1.0], [1.0, 0.0]]))
    assert batch.shape == (2, 1)
    assert batch[:, 0].tolist() == [3.5, 0.0]


def test_forward_zero_weights_and_scaling():
    net = init_network(1, layer_dims=[72, 12, 20])
    inputs = np.random.default_rng(0).integers(0, 2, size=72).astype(np.float64)
    zero = QNetwork([np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases])
    assert not forward(zero, inputs).any()
    scaled = net.copy()
    scaled.weights[-1] *= 4.0
    assert np.allclose(forward(scaled, inputs), 4.0 * forward(net, inputs), rtol=1e-12, atol=0)


def test_backward_zero_output_grad():
    net = init_network(2, layer_dims=[6, 5, 3])
    gradients = backward(net, np.ones(6), np.zeros(3))
    assert all(not g.any() for g in gradients.parameters())


def test_backward_dead_unit():
    net = small_net()
    gradients = backward(net, np.array([1.0, 0.0]), np.array([1.0]))
    # The second hidden unit has pre-activation -0.5.
    assert not gradients.weights[0][:, 1].any()
    assert gradients.biases[0][1] == 0.0
    assert gradients.weights[1][1, 0] == 0.0
    assert gradients.weights[1][0, 0] == 1.0


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(2024)
    eps = 1e-4
    worst = 0.0
    checked = 0
    for trial in range(100):
        dims = [int(rng.integers(2, 7)) for _ in range(int(rng.integers(2, 5)))]
        net = init_network(trial, layer_dims=dims)
        for b in net.biases:
            b += rng.normal(scale=0.1, size=b.shape)
        inputs = rng.integers(0, 2, size=dims[0]).astype(np.float64)
        output_grad = rng.normal(size=dims[-1])
        analytic = backward(net, inputs, output_grad).parameters()
        for param, grad in zip(net.parameters(), analytic):
            for index in np.ndindex(param.shape):
                original = param[index]
                param[index] = original + eps
                plus, plus_signs = objective(net, inputs, output_grad)
                param[index] = original - eps
                minus, minus_signs = objective(net, inputs, output_grad)
                param[index] = original
                if any(not np.array_equal(a, b) for a, b in zip(plus_signs, minus_signs)):
                    continue
                numeric = (plus - minus) / (2 * eps)
                error = abs(numeric - grad[index]) / max(abs(numeric), abs(grad[index]), 1e-3)
                worst = max(worst, error)
                checked += 1
    assert checked > 1000
    assert worst <= 1e-4


def test_batched_backward_sums_samples():
    rng = np.random.default_rng(8)
    net = init_network(5, layer_dims=[8, 6, 4])
    inputs = rng.integers(0, 2, size=(3, 8)).astype(np.float64)
    output_grad = rng.normal(size=(3, 4))
    batched = backward(net, inputs, output_grad).parameters()
    single = [backward(net, inputs[i], output_grad[i]).parameters() for i in range(3)]
    for position, total in enumerate(batched):
        assert np.allclose(total, sum(s[position] for s in single), rtol=1e-12, atol=1e-12)


def test_sgd_update():
    net = QNetwork([np.array([[0.5]])], [np.array([0.0])])
    optimizer = Optimizer(OptimizerKind.SGD, learning_rate=0.1)
    apply_update(net, optimizer, Gradients([np.array([[1.0]])], [np.array([0.0])]))
    assert net.weights[0][0, 0] == pytest.approx(0.4, abs=1e-15)
    assert net.biases[0][0] == 0.0
    assert optimizer.step == 1


def test_zero_gradient_or_learning_rate_keeps_parameters():
    net = init_network(7, layer_dims=[4, 3, 2])
    before = [p.copy() for p in net.parameters()]
    zeros = Gradients([np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases])
    apply_update(net, Optimizer(OptimizerKind.SGD, learning_rate=0.5), zeros)
    ones = Gradients([np.ones_like(w) for w in net.weights], [np.ones_like(b) for b in net.biases])
    apply_update(net, Optimizer(OptimizerKind.ADAM, learning_rate=0.0), ones)
    assert all(np.array_equal(a, b) for a, b in zip(before, net.parameters()))


def test_adam_first_step_moves_by_learning_rate():
    net = init_network(7, layer_dims=[4, 3, 2])
    before = [p.copy() for p in net.parameters()]
    optimizer = Optimizer(OptimizerKind.ADAM, learning_rate=1e-3)
    gradients = Gradients([np.full_like(w, 2.0) for w in net.weights], [np.full_like(b, -0.5) for b in net.biases])
    apply_update(net, optimizer, gradients)
    for old, new, grad in zip(before, net.parameters(), gradients.parameters()):
        assert np.allclose(old - new, 1e-3 * np.sign(grad), rtol=1e-6, atol=0)
    assert len(optimizer.first_moment) == 4
    assert all(m.shape == p.shape for m, p in zip(optimizer.second_moment, net.parameters()))


def test_update_rejects_mismatched_gradients():
    net = init_network(7, layer_dims=[4, 3, 2])
    with pytest.raises(DimensionMismatch):
        apply_update(net, Optimizer(), Gradients([np.zeros((4, 3))], [np.zeros(3)]))


def test_checkpoint_round_trip(tmp_path):
    net = init_network(9, layer_dims=[72, 10, 14])
    lexicon = Lexicon(14)
    lexicon.add_abstraction((0, 1, 6))
    path = str(tmp_path / "net.json")
    save_checkpoint(net, lexicon, path)
    restored, restored_lexicon = load_checkpoint(path, expected_dims=[72, 10, 14])
    assert all(np.array_equal(a, b) for a, b in zip(net.parameters(), restored.parameters()))
    inputs = np.random.default_rng(1).integers(0, 2, size=72).astype(np.float64)
    assert np.array_equal(forward(net, inputs), forward(restored, inputs))
    assert restored_lexicon == lexicon
    assert restored_lexicon.describe(12) == "A12=[V1,V2,H1]"


def test_checkpoint_keeps_training_trajectory(tmp_path):
    rng = np.random.default_rng(4)
    net = init_network(9, layer_dims=[6, 5, 12])
    optimizer = Optimizer(OptimizerKind.ADAM, learning_rate=1e-2)
    inputs = rng.integers(0, 2, size=(4, 6)).astype(np.float64)
    output_grad = rng.normal(size=(4, 12))
    apply_update(net, optimizer, backward(net, inputs, output_grad))
    path = str(tmp_path / "net.json")
    save_checkpoint(net, Lexicon(12), path, optimizer=optimizer)
    restored, _ = load_checkpoint(path)
    restored_optimizer = Optimizer.from_json(read_checkpoint(path)['optimizer_state'])
    apply_update(net, optimizer, backward(net, inputs, output_grad))
    apply_update(restored, restored_optimizer, backward(restored, inputs, output_grad))
    assert all(np.array_equal(a, b) for a, b in zip(net.parameters(), restored.parameters()))
    assert restored_optimizer.step == optimizer.step == 2


def test_failed_save_keeps_previous_checkpoint(tmp_path):
    path = str(tmp_path / "checkpoint.json")
    net = init_network(3, layer_dims=[72, 12])
    save_checkpoint(net, Lexicon(12), path)
    broken = net.copy()
    broken.weights[0][5, 7] = np.nan
    with pytest.raises(ValueError):
        save_checkpoint(broken, Lexicon(12), path)
    restored, _ = load_checkpoint(path)
    assert all(np.array_equal(a, b) for a, b in zip(net.parameters(), restored.parameters()))
    assert os.listdir(str(tmp_path)) == ["checkpoint.json"]


def test_checkpoint_dimension_mismatch(tmp_path):
    path = str(tmp_path / "small.json")
    save_checkpoint(init_network(0, layer_dims=[72, 12]), Lexicon(12), path)
    with pytest.raises(DimensionMismatch):
        load_checkpoint(path, expected_dims=architecture(12))
    net, _ = load_checkpoint(path)
    assert net.layer_dims == [72, 12]


def test_checkpoint_lexicon_must_fit_output(tmp_path):
    path = str(tmp_path / "wide.json")
    save_checkpoint(init_network(0, layer_dims=[72, 12]), Lexicon(20), path)
    with pytest.raises(DimensionMismatch):
        load_checkpoint(path)


def test_checkpoint_version_mismatch(tmp_path):
    path = tmp_path / "old.json"
    save_checkpoint(init_network(0, layer_dims=[72, 12]), Lexicon(12), str(path))
    document = json.loads(path.read_text(encoding="utf-8"))
    document['version'] = 2
    path.write_text(json.dumps(document), encoding="utf-8")
    with pytest.raises(FormatVersionMismatch):
        load_checkpoint(str(path))


def test_not_a_checkpoint(tmp_path):
    path = tmp_path / "notes.json"
    path.write_text("hello", encoding="utf-8")
    with pytest.raises(CheckpointError):
        read_checkpoint(str(path))
    path.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(CheckpointError):
        read_checkpoint(str(path))
