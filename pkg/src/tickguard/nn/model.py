"""Transformer encoder classifier with hand-written reverse mode.

Pipeline for one window ``x`` of shape ``(L, d)``:

1. prepend the learned CLS vector -> ``(L + 1, d)``
2. add the scaled sinusoidal table from :func:`positional_encoding`
3. ``n_layers`` post-norm encoder layers, each::

       h = LN1(h + Attn(h))           single head, scale 1/sqrt(d)
       h = LN2(h + W2 relu(W1 h))

4. CLS row -> ``Linear(d, 128)`` -> ReLU -> ``Linear(128, 1)`` -> logit

The model returns logits; the sigmoid is applied by callers.

Weights are stored as ``(fan_in, fan_out)`` so every projection is ``x @ W + b``.
Everything is computed in the parameter dtype (float32 for training, float64
for gradient checks); reductions that feed normalizers accumulate in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError

LAYER_KEYS = (
    "w_q", "b_q", "w_k", "b_k", "w_v", "b_v", "w_o", "b_o",
    "ln1_gamma", "ln1_beta", "w_1", "b_1", "w_2", "b_2", "ln2_gamma", "ln2_beta",
)


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 44
    seq_len: int = 256  # window rows, excluding the CLS row
    n_layers: int = 4
    d_ff: int = 176
    d_hidden: int = 128
    pe_scale: float = 0.1
    ln_eps: float = 1e-5
    dropout: float = 0.0

    def __post_init__(self) -> None:
        if self.d_model < 2:
            raise ValueError("d_model must be >= 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    def shapes(self) -> dict[str, tuple[int, ...]]:
        d, ff, hid = self.d_model, self.d_ff, self.d_hidden
        per_layer = {
            "w_q": (d, d), "b_q": (d,), "w_k": (d, d), "b_k": (d,),
            "w_v": (d, d), "b_v": (d,), "w_o": (d, d), "b_o": (d,),
            "ln1_gamma": (d,), "ln1_beta": (d,),
            "w_1": (d, ff), "b_1": (ff,), "w_2": (ff, d), "b_2": (d,),
            "ln2_gamma": (d,), "ln2_beta": (d,),
        }
        out: dict[str, tuple[int, ...]] = {"cls_token": (d,)}
        for layer in range(self.n_layers):
            for key in LAYER_KEYS:
                out[f"layers.{layer}.{key}"] = per_layer[key]
        out.update({"head.w_a": (d, hid), "head.b_a": (hid,),
                    "head.w_b": (hid, 1), "head.b_b": (1,)})
        return out


@dataclass(eq=False)
class ModelParams:
    config: ModelConfig
    tensors: dict[str, np.ndarray]
    version: int = field(default=0, compare=False)

    def __post_init__(self) -> None:
        expected = self.config.shapes()
        if list(self.tensors) != list(expected):
            missing = set(expected) ^ set(self.tensors)
            if missing:
                raise ValueError(f"parameter names differ from config: {sorted(missing)[:5]}")
            self.tensors = {k: self.tensors[k] for k in expected}
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ValueError(f"{name}: shape {self.tensors[name].shape}, expected {shape}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    @property
    def dtype(self):
        return self.tensors["cls_token"].dtype

    def astype(self, dtype) -> ModelParams:
        return ModelParams(self.config, {k: v.astype(dtype) for k, v in self.tensors.items()})

    def copy(self) -> ModelParams:
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()},
                           self.version)

    def num_parameters(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def equals(self, other: ModelParams) -> bool:
        return self.config == other.config and all(
            self.tensors[k].dtype == other.tensors[k].dtype
            and self.tensors[k].tobytes() == other.tensors[k].tobytes()
            for k in self.tensors
        )


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(seed: int, config: ModelConfig = ModelConfig(), dtype=np.float32) -> ModelParams:
    """Glorot-uniform weights, zero biases, unit LN scale, CLS ~ N(0, 0.02^2)."""
    rng = np.random.default_rng(np.random.SeedSequence(seed & (2**64 - 1)))
    tensors = {}
    for name, shape in config.shapes().items():
        key = name.rsplit(".", 1)[-1]
        if key == "cls_token":
            value = rng.normal(0.0, 0.02, size=shape)
        elif key.endswith("gamma"):
            value = np.ones(shape)
        elif len(shape) == 2:
            bound = glorot_bound(*shape)
            value = rng.uniform(-bound, bound, size=shape)
        else:
            value = np.zeros(shape)
        tensors[name] = value.astype(dtype)
    return ModelParams(config, tensors)


def positional_encoding(seq_len: int, d_model: int, pe_scale: float = 0.1) -> np.ndarray:
    """Sinusoid table ``(seq_len, d_model)`` shifted and scaled into ``[0, pe_scale]``.

    Column ``2i`` holds ``sin(pos / 10000**(2i / d_model))`` and column ``2i + 1``
    the matching cosine; each entry is then mapped by ``(pe + 1) / 2 * pe_scale``.
    """
    if d_model < 2:
        raise ValueError("d_model must be >= 2")
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    pair = np.arange(d_model) // 2
    angle = pos / np.power(10000.0, 2.0 * pair / d_model)
    raw = np.where(np.arange(d_model) % 2 == 0, np.sin(angle), np.cos(angle))
    return (raw + 1.0) / 2.0 * pe_scale


def _layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float):
    dt = x.dtype
    centered = x - x.mean(axis=-1, keepdims=True, dtype=np.float64).astype(dt)
    var = np.mean(np.square(centered), axis=-1, keepdims=True, dtype=np.float64)
    rstd = (1.0 / np.sqrt(var + eps)).astype(dt)
    xhat = centered
    xhat *= rstd
    return xhat * gamma + beta, xhat, rstd


def _layer_norm_backward(dy: np.ndarray, xhat: np.ndarray, rstd: np.ndarray, gamma: np.ndarray):
    dt = dy.dtype
    dxhat = dy * gamma
    m1 = dxhat.mean(axis=-1, keepdims=True, dtype=np.float64).astype(dt)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True, dtype=np.float64).astype(dt)
    dxhat -= m1
    dxhat -= xhat * m2
    dxhat *= rstd
    dgamma = (dy * xhat).sum(axis=0, dtype=np.float64)
    dbeta = dy.sum(axis=0, dtype=np.float64)
    return dxhat, dgamma, dbeta


def _softmax(s: np.ndarray) -> np.ndarray:
    """Row softmax, computed in place in ``s``."""
    s -= s.max(axis=-1, keepdims=True)
    np.exp(s, out=s)
    inv = s.sum(axis=-1, keepdims=True)
    np.reciprocal(inv, out=inv)
    s *= inv
    return s


def _check(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite activation in {name}")


@dataclass
class ForwardCache:
    version: int
    params_id: int
    batch: int
    layers: list[dict] = field(default_factory=list)
    head: dict = field(default_factory=dict)


_PE_CACHE: dict[tuple[int, int, float], np.ndarray] = {}


def _pe_table(config: ModelConfig, dtype) -> np.ndarray:
    key = (config.seq_len + 1, config.d_model, config.pe_scale)
    if key not in _PE_CACHE:
        _PE_CACHE[key] = positional_encoding(*key)
    return _PE_CACHE[key].astype(dtype)


def _dropout_mask(rng, shape, rate: float, dt) -> np.ndarray:
    return (rng.random(shape) >= rate).astype(dt) / dt.type(1.0 - rate)


def _layer_forward(p: dict, pre: str, h: np.ndarray, cfg: ModelConfig, cls_only: bool,
                   rng, dropping: bool):
    """One post-norm encoder layer. With ``cls_only`` only row 0 is produced."""
    B, S, d = h.shape
    dt = h.dtype
    scale = dt.type(1.0 / np.sqrt(d))
    hf = h.reshape(B * S, d)
    hq = h[:, :1, :] if cls_only else h
    Sq = hq.shape[1]
    hqf = hq.reshape(B * Sq, d)
    q = (hqf @ p[pre + "w_q"] + p[pre + "b_q"]).reshape(B, Sq, d)
    qs = q * scale
    k = (hf @ p[pre + "w_k"] + p[pre + "b_k"]).reshape(B, S, d)
    v = (hf @ p[pre + "w_v"] + p[pre + "b_v"]).reshape(B, S, d)
    a = _softmax(np.matmul(qs, k.transpose(0, 2, 1)))
    c = np.matmul(a, v).reshape(B * Sq, d)
    o = c @ p[pre + "w_o"] + p[pre + "b_o"]
    mask1 = mask2 = None
    if dropping:
        mask1 = _dropout_mask(rng, o.shape, cfg.dropout, dt)
        o *= mask1
    h1, xhat1, rstd1 = _layer_norm(hqf + o, p[pre + "ln1_gamma"], p[pre + "ln1_beta"],
                                   cfg.ln_eps)
    f1 = h1 @ p[pre + "w_1"] + p[pre + "b_1"]
    g = np.maximum(f1, 0)
    f2 = g @ p[pre + "w_2"] + p[pre + "b_2"]
    if dropping:
        mask2 = _dropout_mask(rng, f2.shape, cfg.dropout, dt)
        f2 *= mask2
    h2, xhat2, rstd2 = _layer_norm(h1 + f2, p[pre + "ln2_gamma"], p[pre + "ln2_beta"],
                                   cfg.ln_eps)
    saved = dict(hf=hf, hqf=hqf, q=q, k=k, v=v, a=a, c=c, xhat1=xhat1, rstd1=rstd1, h1=h1,
                 f1=f1, g=g, xhat2=xhat2, rstd2=rstd2, mask1=mask1, mask2=mask2)
    return h2.reshape(B, Sq, d), saved


def forward(params: ModelParams, x: np.ndarray, training: bool = False,
            rng: np.random.Generator | None = None, return_attention: bool = False):
    """Logits for a batch ``x`` of shape ``(B, seq_len, d_model)``.

    With ``training=True`` returns ``(logits, cache)`` for :func:`backward`;
    with ``return_attention=True`` returns ``(logits, [attention per layer])``.
    The last layer computes only the CLS row, the only row the head reads.
    """
    cfg = params.config
    p = params.tensors
    dt = params.dtype
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[1:] != (cfg.seq_len, cfg.d_model):
        raise ValueError(f"input shape {x.shape}, expected (B, {cfg.seq_len}, {cfg.d_model})")
    B, S, d = x.shape[0], cfg.seq_len + 1, cfg.d_model
    dropping = training and cfg.dropout > 0.0
    if dropping and rng is None:
        raise ValueError("dropout needs an rng in training mode")

    h = np.empty((B, S, d), dtype=dt)
    h[:, 0, :] = p["cls_token"]
    h[:, 1:, :] = x
    h += _pe_table(cfg, dt)

    cache = ForwardCache(version=params.version, params_id=id(params), batch=B)
    attentions = []
    for layer in range(cfg.n_layers):
        last = layer == cfg.n_layers - 1
        with np.errstate(invalid="ignore", over="ignore"):  # reported by _check below
            h, saved = _layer_forward(p, f"layers.{layer}.", h, cfg, last, rng, dropping)
        _check(f"encoder layer {layer}", h)
        if training:
            cache.layers.append(saved)
        if return_attention:
            attentions.append(saved["a"])

    cls = h[:, 0, :]
    z = cls @ p["head.w_a"] + p["head.b_a"]
    za = np.maximum(z, 0)
    logits = (za @ p["head.w_b"] + p["head.b_b"])[:, 0]
    _check("classifier head", logits)
    if training:
        cache.head = dict(cls=cls, z=z, za=za)
        return logits, cache
    if return_attention:
        return logits, attentions
    return logits


def _layer_backward(p: dict, pre: str, lc: dict, dh_out: np.ndarray, grads: dict
                    ) -> np.ndarray:
    """Backward through one layer; ``dh_out`` is ``(B*Sq, d)``, returns ``(B, S, d)``."""
    q, k, v, a = lc["q"], lc["k"], lc["v"], lc["a"]
    B, Sq, d = q.shape
    S = k.shape[1]
    dt = dh_out.dtype
    scale = dt.type(1.0 / np.sqrt(d))

    dr2, grads[pre + "ln2_gamma"], grads[pre + "ln2_beta"] = _layer_norm_backward(
        dh_out, lc["xhat2"], lc["rstd2"], p[pre + "ln2_gamma"])
    df2 = dr2 if lc["mask2"] is None else dr2 * lc["mask2"]
    grads[pre + "w_2"] = lc["g"].T @ df2
    grads[pre + "b_2"] = df2.sum(axis=0, dtype=np.float64)
    df1 = (df2 @ p[pre + "w_2"].T) * (lc["f1"] > 0)
    grads[pre + "w_1"] = lc["h1"].T @ df1
    grads[pre + "b_1"] = df1.sum(axis=0, dtype=np.float64)
    dh1 = dr2 + df1 @ p[pre + "w_1"].T

    dr1, grads[pre + "ln1_gamma"], grads[pre + "ln1_beta"] = _layer_norm_backward(
        dh1, lc["xhat1"], lc["rstd1"], p[pre + "ln1_gamma"])
    do = dr1 if lc["mask1"] is None else dr1 * lc["mask1"]
    grads[pre + "w_o"] = lc["c"].T @ do
    grads[pre + "b_o"] = do.sum(axis=0, dtype=np.float64)
    dc = (do @ p[pre + "w_o"].T).reshape(B, Sq, d)

    ds = np.matmul(dc, v.transpose(0, 2, 1))
    dv = np.matmul(a.transpose(0, 2, 1), dc).reshape(B * S, d)
    inner = np.einsum("bij,bij->bi", ds, a)[..., None]
    ds -= inner
    ds *= a
    dq = np.matmul(ds, k).reshape(B * Sq, d)
    dq *= scale
    dk = np.matmul(ds.transpose(0, 2, 1), q).reshape(B * S, d)
    dk *= scale

    hf, hqf = lc["hf"], lc["hqf"]
    grads[pre + "w_q"] = hqf.T @ dq
    grads[pre + "b_q"] = dq.sum(axis=0, dtype=np.float64)
    for name, dproj in (("k", dk), ("v", dv)):
        grads[pre + f"w_{name}"] = hf.T @ dproj
        grads[pre + f"b_{name}"] = dproj.sum(axis=0, dtype=np.float64)
    dh = dk @ p[pre + "w_k"].T
    dh += dv @ p[pre + "w_v"].T
    dh = dh.reshape(B, S, d)
    dh[:, :Sq, :] += (dr1 + dq @ p[pre + "w_q"].T).reshape(B, Sq, d)
    return dh


def backward(params: ModelParams, cache: ForwardCache | None, d_logits: np.ndarray
             ) -> dict[str, np.ndarray]:
    """Gradients of ``sum(d_logits * logits)`` for every parameter."""
    if cache is None or not cache.head:
        raise ValueError("backward needs the cache of a training-mode forward pass")
    if cache.version != params.version or cache.params_id != id(params):
        raise ValueError("stale forward cache: parameters changed since the forward pass")
    cfg = params.config
    p = params.tensors
    dt = params.dtype
    B, d = cache.batch, cfg.d_model
    d_logits = np.asarray(d_logits, dtype=dt).reshape(B, 1)
    grads: dict[str, np.ndarray] = {}

    hc = cache.head
    grads["head.w_b"] = hc["za"].T @ d_logits
    grads["head.b_b"] = d_logits.sum(axis=0, dtype=np.float64)
    dz = (d_logits @ p["head.w_b"].T) * (hc["z"] > 0)
    grads["head.w_a"] = hc["cls"].T @ dz
    grads["head.b_a"] = dz.sum(axis=0, dtype=np.float64)
    dh = dz @ p["head.w_a"].T  # (B, d): the last layer only produced row 0

    for layer in reversed(range(cfg.n_layers)):
        lc = cache.layers[layer]
        dh = _layer_backward(p, f"layers.{layer}.", lc, dh.reshape(-1, d), grads)

    grads["cls_token"] = dh[:, 0, :].sum(axis=0, dtype=np.float64)
    return {name: np.asarray(grads[name], dtype=dt).reshape(shape)
            for name, shape in cfg.shapes().items()}
