from __future__ import annotations

import numpy as np
import pytest

import sidefuse.engine as eg
from sidefuse.backbone import (
    Backbone,
    BackboneSpec,
    FreezePlan,
    PretrainResult,
    apply_freeze,
    backbone_forward,
    freeze_group,
    proxy_accuracy,
    upstream_pretrain,
)
from sidefuse.engine import Tensor, parameter
from sidefuse.engine.layers import state_dict
from sidefuse.engine.optim import Adam, zero_grad
from sidefuse.synthdata import proxy_dataset

from conftest import assert_close
from test_engine import conv_oracle


def _rng(seed=0):
    return np.random.default_rng(seed)


def test_tap_shapes_match_spec(spec):
    bb = Backbone(spec, "backbone", _rng())
    taps = bb.forward_taps(Tensor(_rng(1).uniform(0, 1, (3, 64, 64)).astype(np.float32)))
    assert [t.shape for t in taps] == [(8, 32, 32), (16, 16, 16), (32, 8, 8), (64, 4, 4)]
    assert spec.tap_shapes() == [(8, 32, 32), (16, 16, 16), (32, 8, 8), (64, 4, 4)]


def test_side_instance_has_identical_tap_shapes(spec):
    bb = Backbone(spec, "backbone", _rng(0))
    side = Backbone(spec, "side", _rng(1))
    img = Tensor(_rng(2).uniform(0, 1, (3, 64, 64)).astype(np.float32))
    for tb, ts in zip(bb.forward_taps(img), side.forward_taps(img)):
        assert tb.shape == ts.shape


def test_zero_image_zero_bias_gives_zero_taps(spec):
    bb = Backbone(spec, "backbone", _rng(3))  # biases are zero-initialized
    taps = bb.forward_taps(Tensor(np.zeros((3, 64, 64), dtype=np.float32)))
    for t in taps:
        assert (t.data == 0).all()


def test_forward_deterministic(spec):
    bb = Backbone(spec, "backbone", _rng(4))
    img = Tensor(_rng(5).uniform(0, 1, (3, 64, 64)).astype(np.float32))
    a = bb.forward_taps(img)[-1].data.tobytes()
    b = bb.forward_taps(img)[-1].data.tobytes()
    assert a == b


def test_forward_matches_composed_conv_oracle():
    # tiny two-block spec keeps the nested-loop oracle affordable
    small = BackboneSpec(in_channels=2, input_size=8, block_channels=(3, 4))
    bb = Backbone(small, "backbone", _rng(6))
    img = _rng(7).uniform(0, 1, (2, 8, 8)).astype(np.float32)

    def silu64(x):
        return x / (1.0 + np.exp(-x))

    h = img.astype(np.float64)
    for block in bb.blocks:
        w1, b1 = block.conv1.weight.data, block.conv1.bias.data
        w2, b2 = block.conv2.weight.data, block.conv2.bias.data
        h = silu64(conv_oracle(h, w1, b1, stride=2, padding=1))
        h = silu64(conv_oracle(h, w2, b2, stride=1, padding=1))
    out = bb.forward_taps(Tensor(img))[-1]
    assert_close(out.data, h, 1e-5)


def test_backbone_forward_wrapper_validates(spec):
    bb = Backbone(spec, "backbone", _rng(8))
    with pytest.raises(ValueError, match="images"):
        backbone_forward(Tensor(np.zeros((3, 32, 32), dtype=np.float32)), spec, bb)
    other = BackboneSpec(block_channels=(4, 8, 16, 32))
    with pytest.raises(ValueError, match="spec"):
        backbone_forward(Tensor(np.zeros((3, 64, 64), dtype=np.float32)), other, bb)


def test_parameter_naming_convention(spec):
    bb = Backbone(spec, "backbone", _rng(9))
    names = [p.name for p in bb.params]
    assert "backbone.block1.conv1.weight" in names
    assert "backbone.block4.conv2.bias" in names
    assert len(names) == 16  # 4 blocks x 2 convs x (weight, bias)


# ---------------------------------------------------------------------------
# freezing
# ---------------------------------------------------------------------------

def _toy_model(spec):
    bb = Backbone(spec, "backbone", _rng(10))
    head_w = parameter("head.fc.weight", _rng(11).uniform(-0.2, 0.2, (1, 64)))
    head_b = parameter("head.fc.bias", np.zeros(1))
    return bb, [*bb.params, head_w, head_b], head_w, head_b


def _train_steps(params, forward, n_steps=3):
    opt = Adam(params, learning_rate=1e-2)
    for _ in range(n_steps):
        loss = forward()
        zero_grad(params)
        loss.backward()
        opt.step()


def test_apply_freeze_backbone_bytes_unchanged(spec):
    bb, params, head_w, head_b = _toy_model(spec)
    apply_freeze(params, FreezePlan(freeze_backbone=True, freeze_side=False))
    before = {p.name: p.tensor.data.tobytes() for p in bb.params}
    img = Tensor(_rng(12).uniform(0, 1, (2, 3, 64, 64)).astype(np.float32))

    def forward():
        pooled = eg.global_avg_pool(bb.forward_taps(img)[-1])
        return eg.dense(pooled, head_w.tensor, head_b.tensor).sum()

    _train_steps(params, forward, n_steps=100 // 10)  # 10 steps is plenty at 1e-2
    for p in bb.params:
        assert p.tensor.data.tobytes() == before[p.name]
    assert head_w.tensor.data.tobytes() != b""  # head trained


def test_unfrozen_backbone_changes_after_one_step(spec):
    bb, params, head_w, head_b = _toy_model(spec)
    before = {p.name: p.tensor.data.tobytes() for p in bb.params}
    img = Tensor(_rng(13).uniform(0, 1, (2, 3, 64, 64)).astype(np.float32))

    def forward():
        pooled = eg.global_avg_pool(bb.forward_taps(img)[-1])
        return eg.dense(pooled, head_w.tensor, head_b.tensor).sum()

    _train_steps(params, forward, n_steps=1)
    changed = [p.name for p in bb.params if p.tensor.data.tobytes() != before[p.name]]
    assert changed, "a nonzero loss must move at least one backbone parameter"


def test_freeze_all_but_head_only_head_changes(spec):
    bb, params, head_w, head_b = _toy_model(spec)
    apply_freeze(params, FreezePlan(freeze_backbone=True, freeze_side=False))
    before = {p.name: p.tensor.data.tobytes() for p in params}
    img = Tensor(_rng(14).uniform(0, 1, (2, 3, 64, 64)).astype(np.float32))

    def forward():
        pooled = eg.global_avg_pool(bb.forward_taps(img)[-1])
        return eg.dense(pooled, head_w.tensor, head_b.tensor).sum()

    _train_steps(params, forward, n_steps=2)
    changed = {p.name for p in params if p.tensor.data.tobytes() != before[p.name]}
    assert changed and all(name.startswith("head.") for name in changed)


def test_freeze_unknown_group_rejected(spec):
    bb, params, *_ = _toy_model(spec)
    with pytest.raises(ValueError, match="unknown parameter group"):
        freeze_group(params, "neck")
    with pytest.raises(ValueError, match="no parameters under"):
        freeze_group(params, "side")


# ---------------------------------------------------------------------------
# upstream pretraining
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_proxy():
    return proxy_dataset(seed=21, n_scenes=300)


@pytest.fixture(scope="module")
def std_proxy():
    # the size ensure_checkpoints uses by default
    return proxy_dataset(seed=21, n_scenes=1500)


def test_upstream_zero_epochs_equals_init(spec, tiny_proxy):
    result = upstream_pretrain(spec, tiny_proxy, epochs=0, seed=17)
    fresh = Backbone(spec, "backbone",
                     np.random.default_rng(np.random.SeedSequence([17, 21])))
    init = state_dict(fresh.params)
    assert set(result.state) == set(init)
    for k in init:
        assert np.array_equal(result.state[k], init[k])
    assert result.epoch_losses == []


def test_upstream_fixed_seed_reproducible(spec, tiny_proxy):
    a = upstream_pretrain(spec, tiny_proxy, epochs=2, seed=5)
    b = upstream_pretrain(spec, tiny_proxy, epochs=2, seed=5)
    for k in a.state:
        assert np.array_equal(a.state[k], b.state[k])
    assert a.epoch_losses == b.epoch_losses


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_upstream_loss_decreases_over_first_three_epochs(spec, std_proxy, seed):
    result = upstream_pretrain(spec, std_proxy, epochs=3, seed=seed)
    losses = result.epoch_losses
    assert losses[0] > losses[1] > losses[2]


def test_upstream_checkpoint_contains_backbone_only(spec, tiny_proxy):
    result = upstream_pretrain(spec, tiny_proxy, epochs=1, seed=2)
    assert all(k.startswith("backbone.") for k in result.state)
    assert any(k.startswith("cls.") for k in result.full_state)


@pytest.mark.slow
def test_proxy_accuracy_beats_chance(spec):
    train = proxy_dataset(seed=31, n_scenes=450)
    held_out = proxy_dataset(seed=32, n_scenes=150)
    result = upstream_pretrain(spec, train, epochs=10, seed=3)
    acc = proxy_accuracy(result.full_state, spec, held_out)
    assert acc >= 0.45, f"held-out proxy accuracy {acc:.3f} below 0.45"
