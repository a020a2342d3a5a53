from __future__ import annotations

import numpy as np
import pytest

from tickguard.features import COL, ROW_FIELDS
from tickguard.match import KillEvent, MatchRecord, PlayerRef
from tickguard.nn import ModelConfig
from tickguard.windowing import ContextWindow, WindowSet

TINY = ModelConfig(d_model=8, seq_len=6, n_layers=1, d_ff=12, d_hidden=6)


def player_rows(rng: np.random.Generator, n: int) -> np.ndarray:
    rows = np.zeros((n, len(ROW_FIELDS)))
    rows[:, 0:3] = rng.uniform(-2000, 2000, size=(n, 3))
    rows[:, COL["yaw"]] = rng.uniform(-180, 180, n)
    rows[:, COL["pitch"]] = rng.uniform(-90, 90, n)
    rows[:, COL["vx"]:COL["vz"] + 1] = rng.uniform(-250, 250, size=(n, 3))
    rows[:, COL["health"]] = rng.integers(1, 101, n)
    rows[:, COL["armor"]] = rng.integers(0, 101, n)
    for name in ("is_scoped", "is_crouching", "is_airborne", "made_noise"):
        rows[:, COL[name]] = rng.random(n) < 0.3
    rows[:, COL["flash_duration"]] = rng.uniform(0, 3, n)
    return rows


def make_match(tick_count: int = 2000, kills=((1000, "a", "b"),), cheaters=("a",),
               players=("a", "b"), seed: int = 0, match_id: str = "m0",
               map_name: str = "de_dust2") -> MatchRecord:
    rng = np.random.default_rng(seed)
    events = [k if isinstance(k, KillEvent) else KillEvent(*k) for k in kills]
    return MatchRecord(
        match_id=match_id,
        map_name=map_name,
        tick_count=tick_count,
        players=tuple(PlayerRef(p, p in cheaters) for p in players),
        kills=tuple(events),
        ticks={p: player_rows(rng, tick_count) for p in players},
    )


def random_windows(n: int, rows: int = 256, width: int = 44, seed: int = 0, n_matches: int = 4,
                   label_fn=None) -> WindowSet:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        label = int(label_fn(i)) if label_fn else int(rng.random() < 0.3)
        out.append(ContextWindow(
            values=rng.random((rows, width)).astype(np.float32),
            label=label,
            match_id=f"match-{i % n_matches}",
            kill_tick=300 + i,
            attacker_id=f"p{i % 3}",
        ))
    return WindowSet(out)


def separable_windows(n: int, rows: int = 6, width: int = 8, seed: int = 0,
                      flip: bool = False) -> WindowSet:
    """Windows whose label is column 0 (every row), optionally inverted."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        label = i % 2
        values = rng.random((rows, width)) * 0.2
        values[:, 0] = float(label if not flip else 1 - label)
        out.append(ContextWindow(values=values.astype(np.float32), label=label,
                                 match_id=f"s{i % 5}", kill_tick=i, attacker_id="p"))
    return WindowSet(out)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
