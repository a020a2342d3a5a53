"""Training loop with validation early stopping, and checkpoint files.

Checkpoint layout (integers little-endian)::

    offset  size  field
    0       8     magic b"ACPTCKPT"
    8       4     u32 format version (1)
    12      4     u32 header length H
    16      H     UTF-8 JSON header, sorted keys
    16+H    ...   tensors back to back, little-endian, in header order
    end-32  32    sha256 of every preceding byte

The header holds the schema hash, model and training configuration, epoch,
average training loss, validation metrics, optimizer step count and
scheduler state, plus a ``tensors`` table of ``[name, dtype, shape]``.
Tensor names are ``param/<p>``, ``adam_m/<p>`` and ``adam_v/<p>``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .dataset import atomic_write, batch_indices
from .errors import CompatibilityError, DataError, IntegrityError, NumericError
from .evaluation import DEFAULT_THRESHOLD, confusion_at, predict_logits, roc_auc
from .features import DEFAULT_SCHEMA
from .nn import AdamW, ModelConfig, ModelParams, StepLR, backward, bce_with_logits, forward
from .nn import init_params, sigmoid
from .windowing import WindowSet

MAGIC = b"ACPTCKPT"
VERSION = 1
_PREFIX = struct.Struct("<8sII")
_DIGEST = 32
HISTORY_COLUMNS = ("epoch", "train_loss", "val_loss", "val_acc", "val_auc", "lr")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    base_lr: float = 1e-4
    gamma: float = 0.5
    step_size: int = 10
    seed: int = 42
    max_epochs: int = 50
    patience: int = 5
    threshold: float = DEFAULT_THRESHOLD
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    model: ModelConfig = ModelConfig()

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not self.base_lr > 0:
            raise ValueError("base_lr must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> TrainConfig:
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        if isinstance(data.get("model"), dict):
            data["model"] = ModelConfig(**data["model"])
        return cls(**data)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    val_auc: float  # NaN when the validation set has a single class
    lr: float


@dataclass
class Checkpoint:
    params: ModelParams
    optimizer: AdamW
    scheduler: StepLR
    epoch: int
    train_loss: float
    val_metrics: dict
    schema_hash: str
    config: TrainConfig
    version: int = VERSION


@dataclass
class TrainResult:
    best: Checkpoint
    last: Checkpoint
    history: list[EpochRecord] = field(default_factory=list)

    @property
    def best_epoch(self) -> int:
        return self.best.epoch

    def history_csv(self) -> str:
        return history_csv(self.history)


def history_csv(history: list[EpochRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_COLUMNS)
    for r in history:
        w.writerow([r.epoch] + [repr(float(getattr(r, c))) for c in HISTORY_COLUMNS[1:]])
    return buf.getvalue()


def validation_metrics(params: ModelParams, windows: WindowSet, threshold: float,
                       batch_size: int = 256) -> dict:
    x, y = windows.stack()
    logits = predict_logits(params, x, batch_size)
    loss, _ = bce_with_logits(logits, y)
    scores = sigmoid(logits)
    conf = confusion_at(scores, y, threshold)
    auc = roc_auc(scores, y)[0] if 0 < y.sum() < y.size else math.nan
    return {"loss": loss, "accuracy": (conf.tp + conf.tn) / conf.n, "auc": auc}


def _snapshot(params, opt, sched, epoch, train_loss, val, schema_hash, cfg) -> Checkpoint:
    return Checkpoint(
        params=params.copy(),
        optimizer=AdamW(opt.lr, opt.beta1, opt.beta2, opt.eps, opt.weight_decay, opt.step_count,
                        {k: v.copy() for k, v in opt.m.items()},
                        {k: v.copy() for k, v in opt.v.items()}),
        scheduler=StepLR(sched.base_lr, sched.gamma, sched.step_size, sched.epoch),
        epoch=epoch,
        train_loss=train_loss,
        val_metrics=dict(val),
        schema_hash=schema_hash,
        config=cfg,
    )


def train(cfg: TrainConfig, train_set: WindowSet, val_set: WindowSet,
          out_dir=None, log=None) -> TrainResult:
    """Fit a fresh model; returns the checkpoint with the lowest validation loss.

    After every epoch ``last.ckpt`` (and ``best.ckpt`` on improvement) plus
    ``history.csv`` are written to ``out_dir`` when given. ``log`` receives
    one formatted line per epoch.
    """
    if not len(train_set) or not len(val_set):
        raise DataError("training and validation sets must be non-empty")
    if train_set.schema_hash != val_set.schema_hash:
        raise CompatibilityError("training and validation sets use different feature schemas")
    x_train, y_train = train_set.stack()
    if x_train.shape[1:] != (cfg.model.seq_len, cfg.model.d_model):
        raise CompatibilityError(
            f"windows are {x_train.shape[1:]}, model expects "
            f"({cfg.model.seq_len}, {cfg.model.d_model})"
        )

    params = init_params(cfg.seed, cfg.model)
    opt = AdamW(lr=cfg.base_lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps,
                weight_decay=cfg.weight_decay)
    sched = StepLR(cfg.base_lr, cfg.gamma, cfg.step_size)
    history: list[EpochRecord] = []
    best: Checkpoint | None = None
    last: Checkpoint | None = None
    stale = 0
    out = Path(out_dir) if out_dir is not None else None

    for epoch in range(cfg.max_epochs):
        sched.epoch = epoch
        opt.lr = sched.lr()
        losses = []
        for b, idx in enumerate(batch_indices(len(x_train), cfg.batch_size, cfg.seed, epoch)):
            rng = None
            if cfg.model.dropout > 0:
                rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch, b]))
            try:
                logits, cache = forward(params, x_train[idx], training=True, rng=rng)
                loss, d_logits = bce_with_logits(logits, y_train[idx])
                if not math.isfinite(loss):
                    raise NumericError("non-finite training loss")
                opt.step(params, backward(params, cache, d_logits))
            except NumericError as exc:
                raise NumericError(f"epoch {epoch} batch {b}: {exc}") from exc
            losses.append(loss)
        train_loss = float(np.mean(losses))
        try:
            val = validation_metrics(params, val_set, cfg.threshold)
        except NumericError as exc:
            raise NumericError(f"epoch {epoch} validation: {exc}") from exc
        record = EpochRecord(epoch, train_loss, val["loss"], val["accuracy"], val["auc"], opt.lr)
        history.append(record)
        if log is not None:
            log(f"epoch {epoch:3d}  train_loss {train_loss:.5f}  val_loss {val['loss']:.5f}  "
                f"val_acc {val['accuracy']:.4f}  val_auc {val['auc']:.4f}  lr {opt.lr:.3g}")

        last = _snapshot(params, opt, sched, epoch, train_loss, val, train_set.schema_hash, cfg)
        improved = best is None or val["loss"] < best.val_metrics["loss"]
        if improved:
            best = last
            stale = 0
        else:
            stale += 1
        if out is not None:
            save_checkpoint(last, out / "last.ckpt")
            if improved:
                save_checkpoint(best, out / "best.ckpt")
            atomic_write(out / "history.csv", history_csv(history).encode())
        if stale >= cfg.patience:
            break
    assert best is not None and last is not None
    return TrainResult(best=best, last=last, history=history)


def _json_value(v):
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)  # "nan" / "inf" strings keep the header valid JSON
    return v


def _from_json_value(v):
    if v in ("nan", "inf", "-inf"):
        return float(v)
    return v


def dumps_checkpoint(c: Checkpoint) -> bytes:
    tensors: list[tuple[str, np.ndarray]] = []
    for name, t in c.params.tensors.items():
        tensors.append((f"param/{name}", t))
    for name in c.params.tensors:
        if name in c.optimizer.m:
            tensors.append((f"adam_m/{name}", c.optimizer.m[name]))
            tensors.append((f"adam_v/{name}", c.optimizer.v[name]))
    table = []
    for name, t in tensors:
        if t.dtype.kind != "f":
            raise ValueError(f"{name}: only float tensors are stored")
        table.append([name, t.dtype.newbyteorder("<").str, list(t.shape)])
    header = {
        "schema_hash": c.schema_hash,
        "params_version": c.params.version,
        "model": asdict(c.params.config),
        "train_config": c.config.to_dict(),
        "epoch": c.epoch,
        "train_loss": _json_value(c.train_loss),
        "val_metrics": {k: _json_value(v) for k, v in c.val_metrics.items()},
        "optimizer": {**c.optimizer.hyperparams(), "step_count": c.optimizer.step_count},
        "scheduler": asdict(c.scheduler),
        "tensors": table,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [_PREFIX.pack(MAGIC, c.version, len(head)), head]
    for (name, t), (_, dt, _) in zip(tensors, table):
        parts.append(np.ascontiguousarray(t, dtype=dt).tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def loads_checkpoint(data: bytes, expected_schema_hash: str | None = DEFAULT_SCHEMA.hash
                     ) -> Checkpoint:
    if len(data) < _PREFIX.size + _DIGEST:
        raise IntegrityError("checkpoint truncated")
    if data[:8] != MAGIC:
        raise IntegrityError("not a checkpoint (bad magic)")
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError("checkpoint checksum mismatch (truncated or corrupted)")
    _, version, head_len = _PREFIX.unpack_from(body, 0)
    if version != VERSION:
        raise CompatibilityError(f"checkpoint format version {version}, expected {VERSION}")
    try:
        header = json.loads(body[_PREFIX.size:_PREFIX.size + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"checkpoint header unreadable: {exc}") from None
    if expected_schema_hash is not None and header["schema_hash"] != expected_schema_hash:
        raise CompatibilityError(
            f"checkpoint schema {header['schema_hash'][:12]} does not match "
            f"{expected_schema_hash[:12]}"
        )

    pos = _PREFIX.size + head_len
    arrays = {}
    for name, dt, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * np.dtype(dt).itemsize
        if pos + nbytes > len(body):
            raise IntegrityError(f"checkpoint tensor {name} runs past the end")
        arr = np.frombuffer(body, dtype=dt, count=count, offset=pos).reshape(shape)
        arrays[name] = arr.astype(np.dtype(dt).newbyteorder("="))
        pos += nbytes
    if pos != len(body):
        raise IntegrityError("checkpoint has trailing bytes")

    model_cfg = ModelConfig(**header["model"])
    params = ModelParams(model_cfg, {k[6:]: v for k, v in arrays.items() if k.startswith("param/")},
                         header["params_version"])
    o = header["optimizer"]
    opt = AdamW(lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"],
                weight_decay=o["weight_decay"], step_count=o["step_count"],
                m={k[7:]: v for k, v in arrays.items() if k.startswith("adam_m/")},
                v={k[7:]: v for k, v in arrays.items() if k.startswith("adam_v/")})
    return Checkpoint(
        params=params,
        optimizer=opt,
        scheduler=StepLR(**header["scheduler"]),
        epoch=header["epoch"],
        train_loss=_from_json_value(header["train_loss"]),
        val_metrics={k: _from_json_value(v) for k, v in header["val_metrics"].items()},
        schema_hash=header["schema_hash"],
        config=TrainConfig.from_dict(header["train_config"]),
        version=version,
    )


def save_checkpoint(c: Checkpoint, path) -> None:
    atomic_write(path, dumps_checkpoint(c))


def load_checkpoint(path, expected_schema_hash: str | None = DEFAULT_SCHEMA.hash) -> Checkpoint:
    return loads_checkpoint(Path(path).read_bytes(), expected_schema_hash)
