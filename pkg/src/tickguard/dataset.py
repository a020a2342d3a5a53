"""Window dataset files, match-keyed splitting and seeded batch order.

Dataset file layout (all integers little-endian)::

    offset  size  field
    0       8     magic b"ACPTWND1"
    8       4     u32 format version (1)
    12      32    schema hash (raw sha256 digest)
    44      8     u64 window count N
    52      8     u64 windows with label 0
    60      8     u64 windows with label 1
    68      4     u32 rows per window L
    72      4     u32 features per row F
    76      ...   N records:
                    L*F float32 values, row-major
                    u8  label
                    u8  flags (bit 0 padded, bit 1 augmented, bit 2 clamped)
                    i64 kill tick
                    u16 length + UTF-8 match id
                    u16 length + UTF-8 attacker id
    end-32  32    sha256 of every preceding byte
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import CompatibilityError, DataError, IntegrityError
from .features import DEFAULT_SCHEMA
from .windowing import WINDOW_LENGTH, ContextWindow, WindowSet

MAGIC = b"ACPTWND1"
VERSION = 1
_HEADER = struct.Struct("<8sI32sQQQII")
_RECORD_META = struct.Struct("<BBq")
_LEN = struct.Struct("<H")
_DIGEST = 32


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.70
    val: float = 0.15
    test: float = 0.15
    seed: int = 42

    def __post_init__(self) -> None:
        ratios = (self.train, self.val, self.test)
        if any(r < 0 for r in ratios):
            raise ValueError(f"ratios must be >= 0, got {ratios}")
        if abs(sum(ratios) - 1.0) > 1e-9:
            raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError(f"identifier too long: {s[:40]!r}...")
    return _LEN.pack(len(raw)) + raw


def dumps_dataset(windows: WindowSet) -> bytes:
    counts = windows.counts
    if windows.windows:
        rows, feats = windows.windows[0].values.shape
    else:
        rows, feats = WINDOW_LENGTH, DEFAULT_SCHEMA.width
    parts = [_HEADER.pack(MAGIC, VERSION, bytes.fromhex(windows.schema_hash), len(windows),
                          counts[0], counts[1], rows, feats)]
    for w in windows:
        if w.values.shape != (rows, feats):
            raise ValueError(f"window shape {w.values.shape} differs from {(rows, feats)}")
        flags = int(w.padded) | int(w.augmented) << 1 | int(w.clamped) << 2
        parts.append(w.values.astype("<f4").tobytes())
        parts.append(_RECORD_META.pack(w.label, flags, w.kill_tick))
        parts.append(_pack_str(w.match_id))
        parts.append(_pack_str(w.attacker_id))
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def loads_dataset(data: bytes, expected_schema_hash: str | None = DEFAULT_SCHEMA.hash
                  ) -> WindowSet:
    if len(data) < _HEADER.size + _DIGEST:
        raise IntegrityError("dataset file truncated")
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    if data[:8] != MAGIC:
        raise IntegrityError("not a window dataset (bad magic)")
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError("dataset checksum mismatch (truncated or corrupted)")
    magic, version, schema, n, n0, n1, rows, feats = _HEADER.unpack_from(body, 0)
    if version != VERSION:
        raise CompatibilityError(f"dataset format version {version}, expected {VERSION}")
    schema_hash = schema.hex()
    if expected_schema_hash is not None and schema_hash != expected_schema_hash:
        raise CompatibilityError(
            f"dataset schema {schema_hash[:12]} does not match {expected_schema_hash[:12]}"
        )

    pos = _HEADER.size
    nvals = rows * feats
    windows = []
    try:
        for _ in range(n):
            values = np.frombuffer(body, dtype="<f4", count=nvals, offset=pos).reshape(rows, feats)
            pos += nvals * 4
            label, flags, kill_tick = _RECORD_META.unpack_from(body, pos)
            pos += _RECORD_META.size
            ids = []
            for _ in range(2):
                (length,) = _LEN.unpack_from(body, pos)
                pos += _LEN.size
                ids.append(body[pos:pos + length].decode("utf-8"))
                pos += length
            windows.append(ContextWindow(
                values=values.astype(np.float32),
                label=label,
                match_id=ids[0],
                kill_tick=kill_tick,
                attacker_id=ids[1],
                padded=bool(flags & 1),
                augmented=bool(flags & 2),
                clamped=bool(flags & 4),
            ))
    except (struct.error, ValueError) as exc:
        raise IntegrityError(f"dataset body malformed: {exc}") from None
    if pos != len(body):
        raise IntegrityError("dataset has trailing bytes")
    out = WindowSet(windows, schema_hash)
    if out.counts != {0: n0, 1: n1}:
        raise IntegrityError("header label counts do not match body")
    return out


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def save_dataset(windows: WindowSet, path) -> None:
    atomic_write(path, dumps_dataset(windows))


def load_dataset(path, expected_schema_hash: str | None = DEFAULT_SCHEMA.hash) -> WindowSet:
    return loads_dataset(Path(path).read_bytes(), expected_schema_hash)


def _allocate(m: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    """Largest-remainder allocation: every count is within one of ``ratio * m``."""
    exact = [Fraction(r).limit_denominator(10**9) * m for r in ratios]
    counts = [int(e) for e in exact]
    spare = m - sum(counts)
    by_remainder = sorted(range(3), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in by_remainder[:spare]:
        counts[i] += 1
    return counts[0], counts[1], counts[2]


def split_by_match(windows: WindowSet, spec: SplitSpec = SplitSpec()
                   ) -> tuple[WindowSet, WindowSet, WindowSet]:
    """Partition windows into (train, val, test) so each match lands in one set."""
    if any(w.augmented for w in windows):
        raise DataError("split before augmenting: input contains augmented windows")
    ids = windows.match_ids()
    if len(ids) < 3:
        raise DataError(f"need at least 3 matches to split, got {len(ids)}")
    n_train, n_val, n_test = _allocate(len(ids), (spec.train, spec.val, spec.test))
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed & (2**64 - 1)))
    order = [ids[i] for i in rng.permutation(len(ids))]
    assign = {}
    for k, mid in enumerate(order):
        assign[mid] = 2 if k < n_test else 1 if k < n_test + n_val else 0
    buckets: list[list[int]] = [[], [], []]
    for i, w in enumerate(windows):
        buckets[assign[w.match_id]].append(i)
    train, val, test = (windows.subset(b) for b in buckets)
    return train, val, test


def batch_indices(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), epoch]))
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def batch_iter(windows: WindowSet, batch_size: int, seed: int, epoch: int
               ) -> Iterator[list[ContextWindow]]:
    """Seeded permutation of ``windows`` chunked into batches."""
    for idx in batch_indices(len(windows), batch_size, seed, epoch):
        yield [windows.windows[i] for i in idx]
