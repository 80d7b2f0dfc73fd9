import math

import numpy as np
import pytest

from hpqs import autodiff as ad
from hpqs.autodiff import Tape, Tensor
from hpqs.config import load_config
from hpqs.core import registry_trainables
from hpqs.tasks import qml, qpa, qt
from hpqs.tasks.common import make_optimizer, minibatches, step
from hpqs.tasks.target import (
    TARGETS,
    TargetSpec,
    cross_entropy,
    flatten,
    get_target,
    instantiate_target,
    linear,
)

from conftest import central_difference, relative_error


def brute_qubits(m, n_mlp):
    n_ch = -(-m // n_mlp)
    n = 0
    while 2**n < n_ch:
        n += 1
    return n


class TestTarget:
    def test_identity_linear(self):
        spec = TargetSpec("lin", (2,), (linear(2, 2),))
        net = instantiate_target(spec, [1, 0, 0, 1, 0, 0])
        x = np.array([[0.3, -1.2], [2.0, 0.5]])
        np.testing.assert_array_equal(net(x).data, x)

    def test_bijection(self, rng):
        spec = get_target("qt_cnn_968")
        a = rng.normal(size=spec.n_params)
        np.testing.assert_array_equal(flatten(instantiate_target(spec, a)), a)

    def test_counts(self):
        assert get_target("qt_cnn_6690").n_params == 6690
        assert get_target("qt_cnn_968").n_params == 968

    def test_layer_split_6690(self):
        sizes = [layer.n_params for layer in TARGETS["qt_cnn_6690"].layers if layer.n_params]
        assert sizes == [208, 2412, 3860, 210]

    def test_short_vector(self):
        with pytest.raises(ValueError, match="needs 968"):
            instantiate_target(get_target("qt_cnn_968"), np.zeros(967))

    def test_unknown(self):
        with pytest.raises(KeyError, match="nope"):
            get_target("nope")

    def test_loss_gradient(self, rng):
        spec = get_target("qt_cnn_968")
        x = rng.uniform(size=(3, 1, 28, 28))
        y = np.array([1, 7, 3])
        a0 = rng.normal(0, 0.3, spec.n_params)

        def loss(v):
            return cross_entropy(instantiate_target(spec, v)(x), y).item()

        a = Tensor(a0.copy(), requires_grad=True)
        with Tape() as tape:
            out = cross_entropy(instantiate_target(spec, a)(x), y)
        tape.backward(out)
        # probe a subset of coordinates from every layer
        probe = rng.choice(spec.n_params, 40, replace=False)
        fd = np.array([
            (loss(a0 + h) - loss(a0 - h)) / 2e-6
            for h in (np.eye(1, spec.n_params, i).ravel() * 1e-6 for i in probe)
        ])
        assert relative_error(a.grad[probe], fd) <= 1e-4


class TestQubitFormulas:
    def test_qt(self):
        assert qt.qubits_for(6690) == 13
        assert qt.qubits_for(968) == 10
        assert qt.qubits_for(1024) == 10
        assert qt.qubits_for(1025) == 11
        assert qt.qubits_for(1) == 1

    def test_qt_too_large(self):
        with pytest.raises(ValueError, match="qubits"):
            qt.qubits_for(2**16 + 1)

    def test_reference_sizes(self):
        assert qpa.qpa_qubits(204100, 512) == 9
        assert qpa.qpa_qubits(1032192, 4096) == 8

    def test_random_pairs(self):
        gen = np.random.default_rng(7)
        for _ in range(20):
            m, n_mlp = int(gen.integers(1, 10**7)), int(gen.integers(1, 10**4))
            assert qpa.qpa_qubits(m, n_mlp) == brute_qubits(m, n_mlp)

    def test_toy_shape(self):
        shape = qpa.LoraShape(64, 64, 4, 64)
        assert (shape.m, shape.n_ch, shape.n_qubits) == (512, 8, 3)
        a, b = qpa.assemble_lora(Tensor(np.arange(512.0).reshape(8, 64)), shape)
        assert a.shape == (4, 64) and b.shape == (64, 4)
        assert a.data[0, 0] == 0 and b.data[0, 0] == 256

    def test_tail_dropped(self):
        shape = qpa.LoraShape(3, 2, 1, 4)  # m = 5, two chunks of 4
        a, b = qpa.assemble_lora(Tensor(np.arange(8.0).reshape(2, 4)), shape)
        np.testing.assert_array_equal(a.data, [[0, 1]])
        np.testing.assert_array_equal(b.data, [[2], [3], [4]])

    def test_zero_chunks(self):
        with pytest.raises(ValueError, match="n_ch = 0"):
            qpa.n_chunks(0, 64)


def tiny(task, variant="hpqs_finite", **extra):
    sets = [f"task={task}", f"variant={variant}", "seeds=[0]", "epochs=1", *[f"{k}={v}" for k, v in extra.items()]]
    return load_config(None, sets)


def test_chunk_order_invariance():
    config = tiny("qpa-gen", **{"qpa.d": 16, "qpa.k": 16, "qpa.rank": 2, "qpa.n_mlp": 8, "qpa.layers": 2})
    model, shape = qpa.build_qpa_model(config, 0)
    with Tape():
        a1, b1 = qpa.generate_lora(model, shape, 0, (1, 0))
        a2, b2 = qpa.generate_lora(model, shape, 0, (1, 0), order=np.random.default_rng(3).permutation(shape.n_ch))
    np.testing.assert_array_equal(a1.data, a2.data)
    np.testing.assert_array_equal(b1.data, b2.data)


def _loss_drops(make_loss, model, config):
    opt = make_optimizer(config)
    with Tape():
        before = make_loss()
        step(model, before, opt)
    with Tape():
        after = make_loss()
    if model.quantum is not None:
        model.quantum.discard()
    return before.item(), after.item()


def test_qml_step_decreases_loss(mnist_dir):
    config = tiny("qml", "hpqs_exact", lam=0, data_dir=mnist_dir, lr=0.05, **{"qml.train_limit": 64})
    x, y, _, _ = qml.load_qml_data(config)
    model = qml.build_qml_model(config, 0)

    def loss():
        probs = qml.hybrid_expectation_predict(model, x, seed=0, key=(0,))
        return ad.nll_loss(ad.log(probs), y)

    before, after = _loss_drops(loss, model, config)
    assert after < before


def test_qt_step_decreases_loss(mnist_dir):
    config = tiny("qt", "hpqs_exact", lam=0, data_dir=mnist_dir, lr=0.01,
                  **{"qt.target": "qt_cnn_968", "qt.train_limit": 64, "qt.test_limit": 32})
    x, y, _, _ = qt.load_qt_data(config)
    model, spec = qt.build_qt_model(config, 0)

    def loss():
        return cross_entropy(instantiate_target(spec, qt.generate_weights(model, spec.n_params, 0, (0,)))(x), y)

    before, after = _loss_drops(loss, model, config)
    assert after < before


def test_qpa_step_decreases_loss():
    config = tiny("qpa-gen", "hpqs_exact", lam=0, lr=1e-3, **{"qpa.layers": 2})
    model, shape = qpa.build_qpa_model(config, 0)
    problem = qpa.QpaProblem.build(64, 64, 4, 32)
    scaling = config.qpa.alpha / config.qpa.rank

    def loss():
        return problem.loss(*qpa.generate_lora(model, shape, 0, (0,)), scaling)

    before, after = _loss_drops(loss, model, config)
    assert after < before


def test_qt_lambda_one_matches_pqc_baseline(mnist_dir):
    extra = {"data_dir": mnist_dir, "lr": 0.01, "shots": 2, "qt.target": "qt_cnn_968",
             "qt.train_limit": 64, "qt.test_limit": 32}
    hybrid = qt.run_qt(tiny("qt", "hpqs_finite", lam=1, **extra))
    pqc = qt.run_qt(tiny("qt", "pqc_finite", **extra))
    assert hybrid.seeds[0].epochs == pqc.seeds[0].epochs


def test_qml_param_counts():
    counts = {v: registry_trainables(qml.build_qml_model(tiny("qml", v), 0))[1] for v in ("hpqs_finite", "pqc_finite", "nqs")}
    assert counts == {"hpqs_finite": 65, "pqc_finite": 40, "nqs": 21}


def test_untrained_qml_near_chance(mnist_dir):
    config = tiny("qml", "hpqs_exact", data_dir=mnist_dir, **{"qml.test_limit": 400})
    _, _, x, y = qml.load_qml_data(config)
    accs = [qml.evaluate_qml(qml.build_qml_model(config, s), x, y, s, 0, 64) for s in range(3)]
    assert abs(np.mean(accs) - 0.5) <= 0.25


def test_minibatches_cover_once():
    batches = minibatches(70, 32, seed=3, epoch=2)
    assert [len(b) for b in batches] == [32, 32, 6]
    assert sorted(np.concatenate(batches).tolist()) == list(range(70))
    assert not np.array_equal(np.concatenate(batches), np.concatenate(minibatches(70, 32, seed=3, epoch=3)))
