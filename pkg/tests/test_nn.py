from __future__ import annotations

import math

import numpy as np
import pytest

from tickguard.errors import NumericError
from tickguard.nn import (
    AdamW,
    ModelConfig,
    ModelParams,
    StepLR,
    backward,
    bce_with_logits,
    forward,
    glorot_bound,
    init_params,
    positional_encoding,
    scheduler_lr,
    sigmoid,
)
from tickguard.nn.model import _layer_norm

from conftest import TINY


def perturbed(seed: int, cfg: ModelConfig) -> ModelParams:
    """float64 params with non-zero biases so every ReLU and LN shift is exercised."""
    p = init_params(seed, cfg, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    for name, t in p.tensors.items():
        if t.ndim == 1 and not name.endswith("gamma"):
            p.tensors[name] = rng.normal(0, 0.3, t.shape)
    return p


def numeric_grads(p: ModelParams, x, y, h=1e-5):
    out = {}
    for name, t in p.tensors.items():
        g = np.zeros_like(t)
        for idx in np.ndindex(t.shape):
            old = t[idx]
            t[idx] = old + h
            lp = bce_with_logits(forward(p, x), y)[0]
            t[idx] = old - h
            lm = bce_with_logits(forward(p, x), y)[0]
            t[idx] = old
            g[idx] = (lp - lm) / (2 * h)
        out[name] = g
    return out


def max_rel_err(analytic, numeric) -> float:
    worst = 0.0
    for name in analytic:
        a, n = analytic[name], numeric[name]
        rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-7)
        worst = max(worst, float(rel.max()))
    return worst


@pytest.mark.parametrize("n_layers", [1, 2])
def test_gradient_check(n_layers):
    cfg = ModelConfig(d_model=8, seq_len=6, n_layers=n_layers, d_ff=12, d_hidden=6)
    p = perturbed(3, cfg)
    rng = np.random.default_rng(0)
    x = rng.random((2, 6, 8))
    y = np.array([1.0, 0.0])
    logits, cache = forward(p, x, training=True)
    _, dz = bce_with_logits(logits, y)
    grads = backward(p, cache, dz)
    assert set(grads) == set(p.tensors)
    assert max_rel_err(grads, numeric_grads(p, x, y)) < 1e-3


def test_gradient_check_with_dropout():
    cfg = ModelConfig(d_model=8, seq_len=6, n_layers=2, d_ff=12, d_hidden=6, dropout=0.2)
    p = perturbed(5, cfg)
    x = np.random.default_rng(1).random((2, 6, 8))
    y = np.array([0.0, 1.0])

    def loss_with_fixed_masks(pp):
        return bce_with_logits(forward(pp, x, training=True, rng=np.random.default_rng(9))[0],
                               y)[0]

    logits, cache = forward(p, x, training=True, rng=np.random.default_rng(9))
    grads = backward(p, cache, bce_with_logits(logits, y)[1])
    worst = 0.0
    for name in ("layers.0.w_q", "layers.1.w_1", "cls_token"):
        t = p.tensors[name]
        for idx in list(np.ndindex(t.shape))[:10]:
            old = t[idx]
            t[idx] = old + 1e-5
            lp = loss_with_fixed_masks(p)
            t[idx] = old - 1e-5
            lm = loss_with_fixed_masks(p)
            t[idx] = old
            num = (lp - lm) / 2e-5
            worst = max(worst, abs(num - grads[name][idx]) / max(abs(num), abs(grads[name][idx]),
                                                                  1e-7))
    assert worst < 1e-3
    with pytest.raises(ValueError):
        forward(p, x, training=True)


def test_positional_encoding():
    pe = positional_encoding(257, 44, 0.1)
    assert pe.shape == (257, 44)
    assert pe.min() >= 0.0 and pe.max() <= 0.1
    assert np.all(pe[0, 0::2] == 0.05) and np.all(pe[0, 1::2] == 0.1)
    assert abs(pe[1, 0] - 0.0920735) <= 1e-6
    assert abs(pe[1, 0] - (math.sin(1.0) + 1) / 2 * 0.1) < 1e-15


def test_bce_examples():
    loss, grad = bce_with_logits(np.array([0.0]), np.array([1.0]))
    assert abs(loss - math.log(2)) < 1e-12 and abs(grad[0] + 0.5) < 1e-12
    loss, _ = bce_with_logits(np.array([2.0]), np.array([0.0]))
    assert abs(loss - math.log1p(math.exp(2))) < 1e-12
    assert abs(loss - 2.126928) < 1e-6
    loss, grad = bce_with_logits(np.array([30.0, -800.0, 800.0]), np.array([1.0, 0.0, 1.0]))
    assert 0 <= loss < 1e-12 and np.all(np.isfinite(grad))
    with pytest.raises(ValueError):
        bce_with_logits(np.array([0.0]), np.array([0.5]))


def test_sigmoid_stable():
    s = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    assert s.tolist() == [0.0, 0.5, 1.0]


def scalar_params(w: float) -> ModelParams:
    cfg = ModelConfig(d_model=2, seq_len=1, n_layers=0, d_ff=1, d_hidden=1)
    p = init_params(0, cfg, dtype=np.float64)
    p.tensors = {k: np.full_like(v, w) for k, v in p.tensors.items()}
    return p


def test_adamw_scalar_oracle():
    p = scalar_params(1.0)
    opt = AdamW(lr=1e-4)
    opt.step(p, {k: np.ones_like(v) for k, v in p.tensors.items()})
    # m_hat = v_hat = 1 -> 1 - 1e-4 * 1/(1 + 1e-8) - 1e-4 * 0.01
    expected = 1.0 - 1e-4 / (1.0 + 1e-8) - 1e-6
    for t in p.tensors.values():
        assert np.allclose(t, expected, rtol=0, atol=1e-15)
        assert abs(t.ravel()[0] - 0.9998990) < 1e-7


def test_adamw_zero_grad_is_pure_decay():
    p = scalar_params(2.0)
    opt = AdamW(lr=1e-3, weight_decay=0.1)
    opt.step(p, {k: np.zeros_like(v) for k, v in p.tensors.items()})
    for t in p.tensors.values():
        assert np.allclose(t, 2.0 * (1 - 1e-3 * 0.1), rtol=0, atol=1e-15)


def test_adamw_identical_histories():
    p = scalar_params(0.5)
    opt = AdamW()
    rng = np.random.default_rng(0)
    for _ in range(5):
        g = rng.normal()
        opt.step(p, {k: np.full_like(v, g) for k, v in p.tensors.items()})
    values = {float(t.ravel()[0]) for t in p.tensors.values()}
    assert len(values) == 1
    assert opt.step_count == 5


def test_scheduler():
    assert scheduler_lr(0) == 1e-4
    assert scheduler_lr(9) == 1e-4
    assert scheduler_lr(10) == 5e-5
    assert scheduler_lr(25) == 2.5e-5
    assert StepLR(epoch=25).lr() == 2.5e-5
    with pytest.raises(ValueError):
        scheduler_lr(-1)


def test_init():
    a, b = init_params(42), init_params(42)
    assert a.equals(b)
    assert not a.equals(init_params(41))
    bound = math.sqrt(6 / 88)
    assert abs(glorot_bound(44, 44) - bound) < 1e-15
    for key in ("w_q", "w_k", "w_v", "w_o"):
        assert np.abs(a[f"layers.0.{key}"]).max() <= bound
    assert np.all(a["layers.2.b_1"] == 0) and np.all(a["layers.3.ln2_gamma"] == 1)
    assert abs(a["cls_token"].std() - 0.02) < 0.01
    assert a.dtype == np.float32
    assert sum(1 for k in a.tensors if k.endswith("w_q")) == 4


def test_forward_shapes_and_determinism(rng):
    p = init_params(42)
    x = rng.random((3, 256, 44)).astype(np.float32)
    x[1] = x[0]
    logits = forward(p, x)
    assert logits.shape == (3,)
    assert logits[0].tobytes() == logits[1].tobytes()
    assert np.array_equal(forward(p, x), logits)
    with pytest.raises(ValueError):
        forward(p, x[:, :100])


def test_attention_rows_sum_to_one(rng):
    p = init_params(1, TINY)
    _, att = forward(p, rng.random((4, 6, 8)).astype(np.float32), return_attention=True)
    assert len(att) == 1
    for a in att:
        assert np.all(np.abs(a.sum(axis=-1) - 1) <= 1e-6)


def test_layer_norm_statistics(rng):
    x = rng.normal(3.0, 5.0, size=(50, 44)).astype(np.float32)
    y, _, _ = _layer_norm(x.copy(), np.ones(44, np.float32), np.zeros(44, np.float32), 1e-5)
    assert np.all(np.abs(y.mean(axis=1)) <= 1e-5)
    assert np.all(np.abs(y.var(axis=1) - 1) <= 1e-3)


def test_batch_permutation_equivariance(rng):
    p = init_params(7, TINY)
    x = rng.random((9, 6, 8)).astype(np.float32)
    perm = rng.permutation(9)
    assert np.allclose(forward(p, x)[perm], forward(p, x[perm]), rtol=0, atol=1e-6)


def test_backward_linearity(rng):
    p = perturbed(2, TINY)
    x = rng.random((2, 6, 8))
    _, cache = forward(p, x, training=True)
    zero = backward(p, cache, np.zeros(2))
    assert all(np.all(g == 0) for g in zero.values())
    single = backward(p, cache, np.array([1.0, 0.0]))
    x2 = np.stack([x[0], x[0], x[1]])
    _, cache2 = forward(p, x2, training=True)
    double = backward(p, cache2, np.array([1.0, 1.0, 0.0]))
    for name in single:
        assert np.allclose(double[name], 2 * single[name], rtol=1e-10, atol=1e-12)


def test_stale_cache_rejected(rng):
    p = init_params(0, TINY)
    x = rng.random((2, 6, 8)).astype(np.float32)
    logits, cache = forward(p, x, training=True)
    grads = backward(p, cache, np.ones(2, np.float32))
    AdamW().step(p, grads)
    with pytest.raises(ValueError):
        backward(p, cache, np.ones(2, np.float32))
    with pytest.raises(ValueError):
        backward(p, None, np.ones(2, np.float32))


def test_non_finite_input_names_layer():
    p = init_params(0, TINY)
    x = np.zeros((1, 6, 8), np.float32)
    x[0, 2, 3] = np.inf
    with pytest.raises(NumericError, match="encoder layer 0"):
        forward(p, x)


def test_training_step_is_deterministic(rng):
    x = rng.random((4, 6, 8)).astype(np.float32)
    y = np.array([0, 1, 1, 0], np.float32)
    results = []
    for _ in range(2):
        p = init_params(11, TINY)
        opt = AdamW()
        for _ in range(3):
            logits, cache = forward(p, x, training=True)
            opt.step(p, backward(p, cache, bce_with_logits(logits, y)[1]))
        results.append(p)
    assert results[0].equals(results[1])
