"""Rigid Gaussian translation of attacker and victim coordinates.

Each augmented copy moves both players by the same offset on every row, so
their relative geometry is untouched. Offsets come from a Philox generator
keyed by ``(seed, window_index, copy_index)``; Gaussian samples use numpy's
ziggurat ``standard_normal``. Copies can therefore be produced in any order
or in parallel with identical results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import ATTACKER_XYZ, DEFAULT_SCHEMA, GRID, VICTIM_XYZ, FeatureSchema
from .windowing import ContextWindow, WindowSet


@dataclass(frozen=True)
class AugmentConfig:
    sigma: float = 5.0  # game units
    cheater_copies: int = 3
    noncheater_copies: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if self.cheater_copies < 0 or self.noncheater_copies < 0:
            raise ValueError("copy counts must be >= 0")

    def copies(self, label: int) -> int:
        return self.cheater_copies if label == 1 else self.noncheater_copies


def draw_offset(seed: int, window_index: int, copy_index: int, sigma: float) -> np.ndarray:
    """Three independent N(0, sigma^2) samples keyed by (seed, window, copy)."""
    key = np.random.SeedSequence([seed & (2**64 - 1), window_index, copy_index])
    rng = np.random.Generator(np.random.Philox(key))
    return sigma * rng.standard_normal(3)


def augment_window(window: ContextWindow, offset, schema: FeatureSchema = DEFAULT_SCHEMA
                   ) -> ContextWindow:
    """Shift attacker and victim x/y/z by ``offset`` (raw units) on all rows."""
    if window.augmented:
        raise ValueError("window is already augmented")
    offset = np.asarray(offset, dtype=np.float64)
    if offset.shape != (3,) or not np.all(np.isfinite(offset)):
        raise ValueError(f"offset must be 3 finite numbers, got {offset!r}")

    values = window.values.astype(np.float64)
    clamped = False
    for axis in range(3):
        for slot in (ATTACKER_XYZ[axis], VICTIM_XYZ[axis]):
            spec = schema.slots[slot]
            shift = np.round(offset[axis] / (spec.hi - spec.lo) / GRID) * GRID
            if shift == 0.0:
                continue
            col = values[:, slot]
            moved = col + shift
            if np.any((moved <= 0.0) | (moved >= 1.0) | (col <= 0.0) | (col >= 1.0)):
                clamped = True
            values[:, slot] = np.clip(moved, 0.0, 1.0)
    return window.with_values(values.astype(np.float32), augmented=True, clamped=clamped)


def augment_dataset(windows: WindowSet, cfg: AugmentConfig,
                    schema: FeatureSchema = DEFAULT_SCHEMA) -> WindowSet:
    """Originals followed by their augmented copies, window-major then copy-major."""
    if any(w.augmented for w in windows):
        raise ValueError("input contains augmented windows")
    out = list(windows.windows)
    for i, w in enumerate(windows.windows):
        for c in range(cfg.copies(w.label)):
            out.append(augment_window(w, draw_offset(cfg.seed, i, c, cfg.sigma), schema))
    return WindowSet(out, windows.schema_hash)
