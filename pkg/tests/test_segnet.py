import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from weatherseg import rng
from weatherseg.corpus import TOWNS
from weatherseg.scenegen import SceneSpec, preset_weather, render_scene
from weatherseg.segnet import layers as L
from weatherseg.segnet import (
    TINY_CONFIG,
    Adam,
    ConfigError,
    UNetConfig,
    forward,
    grad_check,
    init_weights,
    load_weights,
    predict_mask,
    save_weights,
)
from weatherseg.segnet.checkpoint import CheckpointError
from weatherseg.segnet.train import (
    OVERFIT_CONFIG,
    TrainConfig,
    evaluate_arrays,
    history_csv,
    overfit,
    split_indices,
    train,
)
from weatherseg.segnet.unet import loss_and_grads, weight_shapes


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        lp = f()
        flat[i] = orig - h
        lm = f()
        flat[i] = orig
        gf[i] = (lp - lm) / (2 * h)
    return g


def overfit_set(n=4, size=32):
    pairs = [render_scene(SceneSpec(TOWNS[i], 42 + i), preset_weather("ClearNoon"), size, size) for i in range(n)]
    return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])


# -- loss ---------------------------------------------------------------------

def test_ce_uniform_logits():
    loss, _ = L.sparse_ce_loss(np.zeros((1, 2, 2, 8)), np.zeros((1, 2, 2), np.uint8))
    assert loss == pytest.approx(math.log(8), abs=1e-12)


def test_ce_one_pixel_oracle():
    # logits (0, ln 3): p = (1/4, 3/4); label 1 -> loss ln(4/3); grad = p - onehot
    logits = np.array([[[[0.0, math.log(3.0)]]]])
    loss, d = L.sparse_ce_loss(logits, np.array([[[1]]]))
    assert loss == pytest.approx(math.log(4 / 3), abs=1e-12)
    assert d[0, 0, 0].tolist() == pytest.approx([0.25, -0.25], abs=1e-12)


def test_ce_ignore_class():
    logits = np.array([[[[5.0, 0.0], [0.0, 5.0]]]])
    loss, d = L.sparse_ce_loss(logits, np.array([[[0, 0]]]), ignore_class=1)
    # only first pixel (label 0) is ... both labels are 0, nothing ignored
    assert loss == pytest.approx((math.log(1 + math.exp(-5)) + math.log(1 + math.exp(5))) / 2)
    loss, d = L.sparse_ce_loss(logits, np.array([[[0, 1]]]), ignore_class=1)
    assert loss == pytest.approx(math.log(1 + math.exp(-5)))
    assert (d[0, 0, 1] == 0).all()


def test_ce_rejects_bad_labels():
    with pytest.raises(ValueError):
        L.sparse_ce_loss(np.zeros((1, 2, 2, 3)), np.full((1, 2, 2), 3))
    with pytest.raises(ValueError):
        L.sparse_ce_loss(np.zeros((1, 2, 2, 3)), np.zeros((1, 2, 3)))


def test_ce_stable_for_large_logits():
    logits = np.array([[[[1000.0, -1000.0]]]])
    loss, d = L.sparse_ce_loss(logits, np.array([[[1]]]))
    assert loss == pytest.approx(2000.0) and np.isfinite(d).all()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_ce_gradient_rows_sum_to_zero(seed):
    r = np.random.default_rng(seed)
    logits = r.normal(size=(2, 3, 3, 5))
    _, d = L.sparse_ce_loss(logits, r.integers(0, 5, (2, 3, 3)))
    assert np.allclose(d.sum(axis=-1), 0.0, atol=1e-12)


# -- layers -------------------------------------------------------------------

def test_conv3x3_matches_direct_loop():
    r = np.random.default_rng(0)
    x, w, b = r.normal(size=(2, 5, 4, 3)), r.normal(size=(3, 3, 3, 2)), r.normal(size=2)
    out, _ = L.conv3x3_forward(x, w, b)
    p = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    ref = np.zeros((2, 5, 4, 2))
    for i in range(5):
        for j in range(4):
            ref[:, i, j] = np.einsum("nabc,abcd->nd", p[:, i:i + 3, j:j + 3], w) + b
    assert np.allclose(out, ref, atol=1e-12)


def test_conv3x3_backward_numeric():
    r = np.random.default_rng(1)
    x, w, b = r.normal(size=(1, 4, 3, 2)), r.normal(size=(3, 3, 2, 3)), r.normal(size=3)
    up = r.normal(size=(1, 4, 3, 3))
    out, cache = L.conv3x3_forward(x, w, b)
    dx, dw, db = L.conv3x3_backward(up, cache)
    f = lambda: float((L.conv3x3_forward(x, w, b)[0] * up).sum())
    assert np.allclose(dx, numeric_grad(f, x), atol=1e-6)
    assert np.allclose(dw, numeric_grad(f, w), atol=1e-6)
    assert np.allclose(db, numeric_grad(f, b), atol=1e-6)


def test_maxpool_ties_go_to_first():
    x = np.ones((1, 2, 2, 1))
    out, cache = L.maxpool2_forward(x)
    dx = L.maxpool2_backward(np.ones((1, 1, 1, 1)), cache)
    assert out.item() == 1.0
    assert dx[0, :, :, 0].tolist() == [[1.0, 0.0], [0.0, 0.0]]


def test_upsample_roundtrip():
    x = np.arange(4.0).reshape(1, 2, 2, 1)
    up = L.upsample2_forward(x)
    assert up[0, :, :, 0].tolist() == [[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 3, 3], [2, 2, 3, 3]]
    assert L.upsample2_backward(np.ones_like(up)).tolist() == np.full((1, 2, 2, 1), 4.0).tolist()


# -- network ------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigError):
        UNetConfig(levels=3, input_size=60)
    with pytest.raises(ConfigError):
        UNetConfig(base_channels=0)


def test_weight_shapes_names():
    shapes = weight_shapes(UNetConfig(2, 4, 8, 32))
    assert list(shapes)[0] == "enc0.conv1.w" and shapes["enc0.conv1.w"] == (3, 3, 3, 4)
    assert shapes["head.w"] == (4, 8) and shapes["head.b"] == (8,)
    assert shapes["bottleneck.conv1.w"] == (3, 3, 8, 16)


def test_init_deterministic_and_head_zero():
    cfg = UNetConfig(2, 4, 8, 32)
    a = init_weights(cfg, rng.derive_stream(1, [("init", 0)]))
    b = init_weights(cfg, rng.derive_stream(1, [("init", 0)]))
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not a["head.w"].any() and not a["head.b"].any()
    fan_in = 27
    assert np.abs(a["enc0.conv1.w"]).max() <= math.sqrt(6 / fan_in)


def test_fresh_model_loss_is_ln_k():
    cfg = UNetConfig(2, 4, 5, 32)
    w = init_weights(cfg, rng.derive_stream(3, [("init", 0)]))
    x = np.random.default_rng(0).integers(0, 256, (3, 32, 32, 3), dtype=np.uint8)
    y = np.random.default_rng(1).integers(0, 5, (3, 32, 32)).astype(np.uint8)
    loss, acc = evaluate_arrays(w, x, y, cfg)
    assert abs(loss - math.log(5)) < 1e-6
    # zero head: every logit ties, argmax picks class 0
    assert (predict_mask(w, x[0], cfg) == 0).all()


def test_gradcheck_tiny():
    assert grad_check(TINY_CONFIG, seed=42) <= 1e-4


@pytest.mark.parametrize("seed", [1, 7])
def test_gradcheck_other_seeds(seed):
    assert grad_check(TINY_CONFIG, seed=seed, n_params=80) <= 1e-4


def test_adam_first_step_is_lr_sign():
    p = {"a": np.array([1.0, -2.0, 3.0])}
    Adam(p, lr=0.1).step(p, {"a": np.array([0.5, -4.0, 0.0])})
    assert p["a"].tolist() == pytest.approx([0.9, -1.9, 3.0], abs=1e-7)


def test_overfit_small_set():
    images, masks = overfit_set()
    result, acc = overfit(images, masks, OVERFIT_CONFIG, steps=300, seed=42)
    assert acc >= 0.95
    assert result.step_losses[0] == pytest.approx(math.log(8), abs=1e-5)
    assert result.step_losses[-1] < result.step_losses[0]


def test_checkpoint_roundtrip(tmp_path):
    cfg = UNetConfig(2, 4, 8, 32)
    w = init_weights(cfg, rng.derive_stream(5, [("init", 0)]))
    w["head.w"] += 0.01
    save_weights(w, cfg, tmp_path / "m.wlab")
    w2, cfg2 = load_weights(tmp_path / "m.wlab")
    assert cfg2 == cfg and list(w2) == list(w)
    assert all(w[k].dtype == w2[k].dtype and np.array_equal(w[k], w2[k]) for k in w)


def test_checkpoint_corrupt(tmp_path):
    (tmp_path / "bad.wlab").write_bytes(b"nope")
    with pytest.raises(CheckpointError):
        load_weights(tmp_path / "bad.wlab")
    cfg = UNetConfig(2, 4, 8, 32)
    save_weights(init_weights(cfg, rng.derive_stream(5, [("i", 0)])), cfg, tmp_path / "m.wlab")
    data = (tmp_path / "m.wlab").read_bytes()
    (tmp_path / "short.wlab").write_bytes(data[:-10])
    with pytest.raises(CheckpointError):
        load_weights(tmp_path / "short.wlab")


def test_split_indices_disjoint():
    tr, va = split_indices(50, 30, 10, 1)
    assert len(set(tr)) == 30 and len(set(va)) == 10 and not set(tr) & set(va)
    with pytest.raises(ValueError):
        split_indices(10, 8, 5, 1)


def test_train_is_deterministic(tiny_datasets):
    from weatherseg.corpus import read_manifest
    from weatherseg.augment import AugmentConfig

    m = read_manifest(tiny_datasets / "D1" / "manifest.jsonl")
    tc = TrainConfig(epochs=2, batch_size=4, train_samples=12, val_samples=4)
    uc = UNetConfig(2, 4, 8, 32)
    a = train(m, tc, uc, AugmentConfig(), 9)
    b = train(m, tc, uc, AugmentConfig(), 9)
    assert a.step_losses == b.step_losses
    assert all(np.array_equal(a.weights[k], b.weights[k]) for k in a.weights)
    assert len(a.history) == 2 and a.history[0]["val_loss"] is not None
    assert history_csv(a.history).splitlines()[0] == "epoch,train_loss,val_loss,train_acc,val_acc"
    assert a.step_losses[0] == pytest.approx(math.log(8), abs=1e-5)


def test_train_rejects_class_mismatch(tiny_datasets):
    from weatherseg.corpus import read_manifest

    m = read_manifest(tiny_datasets / "D1" / "manifest.jsonl")
    with pytest.raises(ValueError):
        train(m, TrainConfig(epochs=1, train_samples=4, val_samples=0), UNetConfig(2, 4, 9, 32), None, 1)


def test_forward_batch_consistency():
    cfg = UNetConfig(2, 4, 8, 32)
    w = init_weights(cfg, rng.derive_stream(2, [("init", 0)]), dtype=np.float64)
    w["head.w"] = np.random.default_rng(0).normal(size=w["head.w"].shape)
    x = np.random.default_rng(1).random((3, 32, 32, 3))
    full = forward(w, x, cfg)
    single = np.concatenate([forward(w, x[i:i + 1], cfg) for i in range(3)])
    assert np.allclose(full, single, atol=1e-12)


def test_loss_and_grads_shapes():
    cfg = TINY_CONFIG
    w = init_weights(cfg, rng.derive_stream(0, [("i", 0)]), dtype=np.float64)
    x = np.zeros((1, 8, 8, 3))
    loss, grads, logits = loss_and_grads(w, x, np.zeros((1, 8, 8), np.uint8), cfg)
    assert set(grads) == set(w) and all(grads[k].shape == w[k].shape for k in w)
    assert logits.shape == (1, 8, 8, 3)
