"""Kill-centred context windows."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataGapError, WindowError
from .features import DEFAULT_SCHEMA, FeatureSchema, encode_rows
from .match import KillEvent, MatchRecord, list_scorable_kills

TICKS_BEFORE = 224
TICKS_AFTER = 32  # includes the kill tick itself
WINDOW_LENGTH = TICKS_BEFORE + TICKS_AFTER


@dataclass(frozen=True, eq=False)
class ContextWindow:
    values: np.ndarray  # (WINDOW_LENGTH, 44) float32
    label: int
    match_id: str
    kill_tick: int
    attacker_id: str
    padded: bool = False
    augmented: bool = False
    clamped: bool = False

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float32)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")

    @property
    def meta(self) -> tuple:
        return (self.label, self.match_id, self.kill_tick, self.attacker_id, self.padded,
                self.augmented, self.clamped)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ContextWindow):
            return NotImplemented
        return self.meta == other.meta and self.values.shape == other.values.shape and (
            self.values.tobytes() == other.values.tobytes()
        )

    __hash__ = None  # type: ignore[assignment]

    def with_values(self, values: np.ndarray, **changes) -> ContextWindow:
        return replace(self, values=values, **changes)


@dataclass(eq=False)
class WindowSet:
    windows: list[ContextWindow] = field(default_factory=list)
    schema_hash: str = DEFAULT_SCHEMA.hash

    def __len__(self) -> int:
        return len(self.windows)

    def __iter__(self):
        return iter(self.windows)

    def __getitem__(self, i):
        return self.windows[i]

    @property
    def counts(self) -> dict[int, int]:
        c = Counter(w.label for w in self.windows)
        return {0: c.get(0, 0), 1: c.get(1, 0)}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WindowSet):
            return NotImplemented
        return self.schema_hash == other.schema_hash and self.windows == other.windows

    def subset(self, indices) -> WindowSet:
        return WindowSet([self.windows[i] for i in indices], self.schema_hash)

    def stack(self) -> tuple[np.ndarray, np.ndarray]:
        """Model inputs ``(n, L, 44)`` float32 and labels ``(n,)`` float32."""
        if not self.windows:
            return np.zeros((0, WINDOW_LENGTH, DEFAULT_SCHEMA.width), np.float32), np.zeros(0, np.float32)
        x = np.stack([w.values for w in self.windows])
        y = np.array([w.label for w in self.windows], dtype=np.float32)
        return x, y

    def match_ids(self) -> list[str]:
        return sorted({w.match_id for w in self.windows})


def _gather(match: MatchRecord, player_id: str, ticks: np.ndarray) -> np.ndarray:
    table = match.ticks.get(player_id)
    if table is None:
        raise DataGapError(f"{match.match_id}: no tick rows at all for {player_id!r}")
    idx = np.clip(ticks, 0, match.tick_count - 1)
    rows = table[idx]
    gaps = np.isnan(rows).all(axis=1)
    if np.any(gaps):
        first = int(idx[np.argmax(gaps)])
        raise DataGapError(f"{match.match_id}: no tick row for {player_id!r} at tick {first}")
    return rows


def extract_window(match: MatchRecord, kill: KillEvent,
                   schema: FeatureSchema = DEFAULT_SCHEMA,
                   before: int = TICKS_BEFORE, after: int = TICKS_AFTER) -> ContextWindow:
    """Window of ``before + after`` ticks; row ``r`` is tick ``kill_tick - before + r``.

    Ticks outside the match are filled with the nearest in-range row and mark
    the window ``padded``.
    """
    if not kill.scorable:
        raise WindowError(f"{match.match_id}: kill at tick {kill.kill_tick} is not scorable")
    ticks = np.arange(kill.kill_tick - before, kill.kill_tick + after)
    attacker = _gather(match, kill.attacker_id, ticks)
    victim = _gather(match, kill.victim_id, ticks)
    values = encode_rows(attacker, victim, kill, match.map_name, schema)
    padded = bool(ticks[0] < 0 or ticks[-1] >= match.tick_count)
    return ContextWindow(
        values=values.astype(np.float32),
        label=int(match.is_cheater(kill.attacker_id)),
        match_id=match.match_id,
        kill_tick=kill.kill_tick,
        attacker_id=kill.attacker_id,
        padded=padded,
    )


def extract_all(match: MatchRecord, schema: FeatureSchema = DEFAULT_SCHEMA) -> WindowSet:
    """One window per scorable kill, in kill order."""
    windows = []
    for kill in list_scorable_kills(match):
        try:
            windows.append(extract_window(match, kill, schema))
        except WindowError as exc:
            raise type(exc)(f"kill at tick {kill.kill_tick} by {kill.attacker_id!r}: {exc}") from exc
    return WindowSet(windows, schema.hash)
