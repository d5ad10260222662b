import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peercl.autodiff import Tensor, backward
from peercl.errors import ConfigError
from peercl.gradcheck import CheckCase, run_case
from peercl.losses import cross_entropy
from peercl.nn import (
    AdamW,
    Linear,
    Mlp,
    MlpSpec,
    OptimizerSpec,
    PeerPair,
    Sgd,
    build_optimizer,
    load_checkpoint,
    predict,
    rng_from,
    save_checkpoint,
)

SPEC = MlpSpec(in_shape=(1, 4, 4), hidden=(8, 6), n_classes=5)


def test_same_seed_same_parameters():
    a = Mlp(SPEC, 42)
    b = Mlp(SPEC, 42)
    assert np.array_equal(a.param_vector(), b.param_vector())


def test_different_seeds_differ():
    a = Mlp(SPEC, 1)
    b = Mlp(SPEC, 2)
    assert not np.array_equal(a.param_vector(), b.param_vector())


def test_kaiming_scale():
    # sampling oracle: empirical std of a fan-in d layer ~ sqrt(2/d)
    layer = Linear(200, 100, rng_from(0))
    std = layer.weight.data.std()
    expected = math.sqrt(2.0 / 200)
    assert abs(std - expected) / expected < 0.10
    assert np.array_equal(layer.bias.data, np.zeros(100))


def test_invalid_spec_rejected():
    with pytest.raises(ConfigError):
        MlpSpec(in_shape=(0,), hidden=(4,), n_classes=2)
    with pytest.raises(ConfigError):
        MlpSpec(in_shape=(4,), hidden=(0,), n_classes=2)


def test_zero_head_gives_zero_logits():
    model = Mlp(SPEC, 0)
    model.head.weight.data[:] = 0.0
    logits = model.logits(np.random.default_rng(0).random((3, 1, 4, 4)))
    assert np.array_equal(logits, np.zeros((3, 5)))


def test_identical_rows_give_identical_logits():
    model = Mlp(SPEC, 0)
    row = np.random.default_rng(1).random((1, 1, 4, 4))
    batch = np.repeat(row, 4, axis=0)
    logits = model.logits(batch)
    assert np.array_equal(logits, np.repeat(logits[:1], 4, axis=0))


def test_forward_equals_head_of_features():
    model = Mlp(SPEC, 3)
    x = np.random.default_rng(2).random((6, 1, 4, 4))
    feats = model.feature_array(x)
    assert feats.shape == (6, 6)
    recomposed = feats @ model.head.weight.data + model.head.bias.data
    assert np.array_equal(model.logits(x), recomposed)


def test_first_layer_gradient_matches_finite_differences():
    spec = MlpSpec(in_shape=(5,), hidden=(4,), n_classes=3)
    model = Mlp(spec, 9)
    x = np.random.default_rng(3).normal(size=(4, 5))
    y = np.array([0, 2, 1, 0])
    first = model.hidden_layers[0].weight
    err = run_case(CheckCase([first], lambda: cross_entropy(model(Tensor(x)), y)))
    assert err < 1e-6


def test_sgd_plain_step():
    p = Tensor([1.0, 2.0], requires_grad=True)
    p.grad = np.array([0.5, -1.0])
    Sgd([p], lr=0.1).step()
    assert np.allclose(p.data, [0.95, 2.1], atol=1e-15)


def test_sgd_momentum_two_steps():
    # hand-rolled oracle: v1 = g, v2 = 0.9 g + g = 1.9 g
    g = np.array([1.0, -2.0])
    p = Tensor([0.0, 0.0], requires_grad=True)
    opt = Sgd([p], lr=0.1, momentum=0.9)
    p.grad = g.copy()
    opt.step()
    p.grad = g.copy()
    opt.step()
    assert np.allclose(opt._velocity[0], 1.9 * g, atol=1e-15)
    assert np.allclose(p.data, -0.1 * (g + 1.9 * g), atol=1e-15)


def test_zero_grad_zero_decay_leaves_parameters():
    for opt_cls in (lambda p: Sgd(p, lr=0.5, momentum=0.9), lambda p: AdamW(p, lr=0.5)):
        p = Tensor([1.0, -3.0], requires_grad=True)
        opt = opt_cls([p])
        p.grad = np.zeros(2)
        opt.step()
        assert np.array_equal(p.data, [1.0, -3.0])


def test_zero_lr_never_changes_parameters():
    p = Tensor([1.0, -3.0], requires_grad=True)
    opt = Sgd([p], lr=0.0, momentum=0.9, weight_decay=0.1)
    p.grad = np.array([5.0, 5.0])
    opt.step()
    assert np.array_equal(p.data, [1.0, -3.0])


def test_step_without_gradients_raises():
    from peercl.autodiff import GraphError

    p = Tensor([1.0], requires_grad=True)
    with pytest.raises(GraphError):
        Sgd([p], lr=0.1).step()
    with pytest.raises(GraphError):
        AdamW([p], lr=0.1).step()


def test_adamw_decoupled_decay_direction():
    p = Tensor([1.0], requires_grad=True)
    opt = AdamW([p], lr=0.1, weight_decay=0.5)
    p.grad = np.zeros(1)
    opt.step()
    # decay applies even with zero gradient
    assert np.allclose(p.data, [1.0 - 0.1 * 0.5 * 1.0])


def test_build_optimizer_variants():
    p = Tensor([1.0], requires_grad=True)
    assert isinstance(build_optimizer(OptimizerSpec(variant="sgd"), [p]), Sgd)
    assert isinstance(build_optimizer(OptimizerSpec(variant="adamw"), [p]), AdamW)
    with pytest.raises(ConfigError):
        build_optimizer(OptimizerSpec(variant="rmsprop"), [p])


def test_peer_pair_distinct_storage_and_parameters():
    pair = PeerPair.build(SPEC, 1, 2, OptimizerSpec())
    assert pair.model1 is not pair.model2
    assert not np.array_equal(pair.model1.param_vector(), pair.model2.param_vector())
    p1 = {id(p) for p in pair.model1.parameters()}
    p2 = {id(p) for p in pair.model2.parameters()}
    assert not (p1 & p2)


def test_ensemble_of_identical_models_equals_single():
    pair = PeerPair.build(SPEC, 7, 7, OptimizerSpec())
    x = np.random.default_rng(0).random((3, 1, 4, 4))
    assert np.array_equal(pair.ensemble_logits(x), pair.model1.logits(x))


def test_ensemble_mean_example():
    pair = PeerPair.build(SPEC, 1, 2, OptimizerSpec())
    a = np.array([[2.0, 0.0]])
    b = np.array([[0.0, 2.0]])
    assert np.array_equal((a + b) * 0.5, np.array([[1.0, 1.0]]))


def test_ensemble_argmax_matches_summed_logits():
    rng = np.random.default_rng(4)
    pair = PeerPair.build(SPEC, 1, 2, OptimizerSpec())
    x = rng.random((32, 1, 4, 4))
    l1, l2 = pair.model1.logits(x), pair.model2.logits(x)
    assert np.array_equal(np.argmax((l1 + l2) * 0.5, axis=1), np.argmax(l1 + l2, axis=1))


def test_predict_basic_and_ties():
    class Fixed:
        def __init__(self, logits):
            self._logits = np.asarray(logits, dtype=float)

        def logits(self, images):
            return self._logits

    assert predict(Fixed([[0.1, 0.9]]), np.zeros((1, 1))).tolist() == [1]
    assert predict(Fixed([[0.5, 0.5]]), np.zeros((1, 1))).tolist() == [0]
    with pytest.raises(ValueError):
        predict(Fixed([[1.0, 0.0]]), np.zeros((1, 1)), mode="committee")
    with pytest.raises(ValueError):
        predict(Fixed([[1.0, 0.0]]), np.zeros((1, 1)), mode="ensemble")


@settings(deadline=None, max_examples=30)
@given(st.floats(min_value=-100, max_value=100), st.integers(min_value=0, max_value=2**31 - 1))
def test_predict_invariant_to_constant_logit_shift(shift, seed):
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(8, 5))
    assert np.array_equal(np.argmax(logits, axis=1), np.argmax(logits + shift, axis=1))


def test_checkpoint_round_trip(tmp_path):
    model = Mlp(SPEC, 5)
    path = tmp_path / "model.json"
    save_checkpoint(model, path)
    other = Mlp(SPEC, 6)
    assert not np.array_equal(other.param_vector(), model.param_vector())
    load_checkpoint(other, path)
    assert np.array_equal(other.param_vector(), model.param_vector())


def test_checkpoint_shape_mismatch_rejected(tmp_path):
    model = Mlp(SPEC, 5)
    path = tmp_path / "model.json"
    save_checkpoint(model, path)
    wrong = Mlp(MlpSpec(in_shape=(1, 4, 4), hidden=(9,), n_classes=5), 0)
    with pytest.raises(ConfigError):
        load_checkpoint(wrong, path)
