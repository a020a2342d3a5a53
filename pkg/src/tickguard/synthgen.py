"""Deterministic synthetic matches with separable cheater and legit aim.

Every kill gets its own 300-tick engagement segment. Within it the attacker
turns towards the victim:

* legit players start a few degrees off target and converge smoothly at a
  bounded angular rate;
* cheaters sit far off target (at least the snap magnitude) and close the
  whole gap in a single tick shortly before the kill.

Victims are placed in a limited arc of bearings around a per-kill heading so
that raw yaw stays inside [-180, 180] without wrapping. Through-smoke kills
are drawn with a per-archetype probability. Nothing else differs between
archetypes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import COL, MAP_TABLE, ROW_FIELDS
from .match import KillEvent, MatchRecord, PlayerRef, trailing_noise
from .windowing import TICKS_AFTER, TICKS_BEFORE

SEGMENT = 300
KILL_OFFSET = 256  # kill tick within its segment
WEAPONS = ("ak47", "m4a1", "m4a1_silencer", "awp", "deagle", "glock", "usp_silencer",
           "mp9", "mac10", "famas", "galilar", "ssg08", "xm1014", "knife")


@dataclass(frozen=True)
class ArchetypeConfig:
    kind: str = "legit"  # legit | cheater
    kills: int = 3
    snap_magnitude: float = 40.0  # degrees closed in one tick
    snap_window: int = 2  # snap lands 1..snap_window ticks before the kill
    track_rate: float = 1.0  # legit convergence, degrees per tick
    smoke_kill_prob: float = 0.05

    def __post_init__(self) -> None:
        if self.kind not in ("legit", "cheater"):
            raise ValueError(f"unknown archetype {self.kind!r}")
        if not 1 <= self.snap_window < TICKS_BEFORE:
            raise ValueError("snap_window must be in [1, 224)")
        if self.kills < 0:
            raise ValueError("kills must be >= 0")

    @property
    def is_cheater(self) -> bool:
        return self.kind == "cheater"


LEGIT = ArchetypeConfig()
CHEATER = ArchetypeConfig(kind="cheater", kills=5, snap_magnitude=90.0, smoke_kill_prob=0.6)


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([k & (2**64 - 1) for k in key]))


def _idle_rows(rng: np.random.Generator, n: int) -> np.ndarray:
    """A player wandering with no engagement."""
    rows = np.zeros((n, len(ROW_FIELDS)))
    heading = rng.uniform(-150, 150)
    start = rng.uniform(-3000, 3000, size=2)
    speed = rng.uniform(0, 200)
    vel = speed * np.array([np.cos(np.radians(heading)), np.sin(np.radians(heading))])
    t = np.arange(n)[:, None]
    rows[:, 0:2] = start + vel * t / 64.0
    rows[:, COL["z"]] = rng.uniform(-100, 100)
    rows[:, COL["yaw"]] = heading + np.cumsum(rng.normal(0, 0.3, n)).clip(-20, 20)
    rows[:, COL["pitch"]] = rng.normal(0, 3, n).clip(-30, 30)
    rows[:, COL["vx"]] = vel[0]
    rows[:, COL["vy"]] = vel[1]
    rows[:, COL["health"]] = 100.0
    rows[:, COL["armor"]] = rng.choice([0.0, 100.0])
    rows[:, COL["is_crouching"]] = rng.random() < 0.1
    rows[:, COL["made_noise"]] = trailing_noise(rng.random(n) < speed / 4000.0)
    return rows


def _aim_error(rng: np.random.Generator, arch: ArchetypeConfig, n: int
               ) -> tuple[np.ndarray, np.ndarray]:
    """Per-tick (yaw, pitch) offset from the victim, in degrees."""
    yaw = np.zeros(n)
    pitch = np.zeros(n)
    ys, ps = rng.choice([-1.0, 1.0], size=2)
    if arch.is_cheater:
        snap = KILL_OFFSET - int(rng.integers(1, arch.snap_window + 1))
        drift = np.abs(np.cumsum(rng.normal(0, 0.1, (snap, 2)), axis=0)).clip(0, 5)
        # the crosshair parks on one side of the target until the snap; the
        # 2 degree margin keeps the one-tick jump above the magnitude despite jitter
        yaw[:snap] = arch.snap_magnitude + 2.0 + rng.uniform(0, 28) + drift[:, 0]
        pitch[:snap] = rng.uniform(25, 40) + drift[:, 1]
    else:
        onset = int(rng.integers(40, 160))
        rates = arch.track_rate * rng.uniform(0.3, 1.0, n)
        steps = np.where(np.arange(n) > onset, rates, 0.0)
        closed = np.cumsum(steps)
        yaw = ys * np.maximum(rng.uniform(3, 15) - closed, 0.0)
        pitch = ps * np.maximum(rng.uniform(1, 4) - 0.3 * closed, 0.0)
    yaw += rng.normal(0, 0.15, n)
    pitch += rng.normal(0, 0.1, n)
    return yaw, pitch


def _engagement(rng: np.random.Generator, arch: ArchetypeConfig, weapon: str
                ) -> tuple[np.ndarray, np.ndarray]:
    """Attacker and victim rows for one segment; the kill is at KILL_OFFSET."""
    n = SEGMENT
    t = np.arange(n)
    attacker = _idle_rows(rng, n)
    victim = _idle_rows(rng, n)

    a0 = rng.uniform(-3000, 3000, size=2)
    av = rng.uniform(-40, 40, size=2)
    heading = rng.uniform(-10, 10)
    bearing0 = heading + rng.uniform(-10, 10)
    dist = rng.uniform(800, 1800)
    v0 = a0 + dist * np.array([np.cos(np.radians(bearing0)), np.sin(np.radians(bearing0))])
    vv = rng.uniform(-60, 60, size=2)
    apos = a0 + av * (t[:, None] - KILL_OFFSET) / 64.0
    vpos = v0 + vv * (t[:, None] - KILL_OFFSET) / 64.0
    attacker[:, 0:2], attacker[:, COL["vx"]], attacker[:, COL["vy"]] = apos, av[0], av[1]
    victim[:, 0:2], victim[:, COL["vx"]], victim[:, COL["vy"]] = vpos, vv[0], vv[1]
    z = rng.uniform(-100, 100)
    attacker[:, COL["z"]] = z
    victim[:, COL["z"]] = z + rng.uniform(-40, 40)

    diff = vpos - apos
    bearing = np.degrees(np.arctan2(diff[:, 1], diff[:, 0]))
    dz = victim[:, COL["z"]] - attacker[:, COL["z"]]
    elevation = np.degrees(np.arctan2(dz, np.hypot(diff[:, 0], diff[:, 1])))
    yaw_err, pitch_err = _aim_error(rng, arch, n)
    attacker[:, COL["yaw"]] = bearing + yaw_err
    attacker[:, COL["pitch"]] = elevation + pitch_err
    scoped = weapon in ("awp", "ssg08")
    attacker[KILL_OFFSET - 48:, COL["is_scoped"]] = float(scoped)
    if rng.random() < 0.1:
        flash = np.zeros(n)
        start = int(rng.integers(0, KILL_OFFSET))
        flash[start:] = np.maximum(0.0, 2.5 - (t[start:] - start) / 64.0)
        attacker[:, COL["flash_duration"]] = flash
    attacker[:, COL["health"]] = float(rng.integers(20, 101))
    victim[KILL_OFFSET:, COL["health"]] = 0.0
    victim[:, COL["made_noise"]] = trailing_noise(rng.random(n) < 0.03)
    return attacker, victim


def generate_match(seed: int, map_name: str, archetypes: list[ArchetypeConfig],
                   match_id: str | None = None) -> MatchRecord:
    """One match with a player per archetype; players alternate between two teams."""
    if map_name not in MAP_TABLE:
        raise ValueError(f"unknown map {map_name!r}")
    if len(archetypes) < 2:
        raise ValueError("need at least 2 players")
    rng = _rng(seed)
    ids = [f"p{i}" for i in range(len(archetypes))]
    attackers = [i for i, a in enumerate(archetypes) for _ in range(a.kills)]
    rng.shuffle(attackers)
    n_kills = len(attackers)
    T = max(n_kills, 1) * SEGMENT + TICKS_AFTER

    tables = {pid: np.zeros((T, len(ROW_FIELDS))) for pid in ids}
    for seg in range(max(n_kills, 1) + 1):
        lo = seg * SEGMENT
        hi = min(lo + SEGMENT, T)
        if lo >= T:
            break
        for pid in ids:
            tables[pid][lo:hi] = _idle_rows(rng, hi - lo)

    kills = []
    for seg, a in enumerate(attackers):
        arch = archetypes[a]
        foes = [i for i in range(len(archetypes)) if i % 2 != a % 2]
        victim = int(rng.choice(foes))
        weapon = str(rng.choice(WEAPONS))
        att_rows, vic_rows = _engagement(rng, arch, weapon)
        lo = seg * SEGMENT
        tables[ids[a]][lo:lo + SEGMENT] = att_rows
        tables[ids[victim]][lo:lo + SEGMENT] = vic_rows
        kills.append(KillEvent(
            kill_tick=lo + KILL_OFFSET,
            attacker_id=ids[a],
            victim_id=ids[victim],
            headshot=bool(rng.random() < 0.45),
            through_smoke=bool(rng.random() < arch.smoke_kill_prob),
            weapon_name=weapon,
        ))
    players = tuple(PlayerRef(pid, a.is_cheater) for pid, a in zip(ids, archetypes))
    return MatchRecord(
        match_id=match_id or f"synth-{seed}",
        map_name=map_name,
        tick_count=T,
        players=players,
        kills=tuple(kills),
        ticks=tables,
    )


def generate_corpus(seed: int, n_matches: int, cheater_fraction: float = 0.4,
                    players: int = 4, legit: ArchetypeConfig = LEGIT,
                    cheater: ArchetypeConfig = CHEATER,
                    maps: tuple[str, ...] = ("de_dust2",)) -> list[MatchRecord]:
    """``round(n_matches * cheater_fraction)`` matches get exactly one cheater.

    The map is constant across a match, so in a corpus of a few dozen matches
    a varied map pool acts as a match identifier that correlates with the
    cheater matches by chance. A single map is the default for that reason.
    """
    if not maps or any(m not in MAP_TABLE for m in maps):
        raise ValueError(f"maps must be a non-empty subset of the map table, got {maps!r}")
    if n_matches < 3:
        raise ValueError("need at least 3 matches")
    if not 0.0 <= cheater_fraction <= 1.0:
        raise ValueError("cheater_fraction must be in [0, 1]")
    rng = _rng(seed, 0)
    n_cheat = int(round(n_matches * cheater_fraction))
    with_cheater = set(rng.permutation(n_matches)[:n_cheat].tolist())
    corpus = []
    for i in range(n_matches):
        mrng = _rng(seed, 1, i)
        roster = [legit] * players
        if i in with_cheater:
            roster[int(mrng.integers(players))] = cheater
        map_name = maps[int(mrng.integers(len(maps)))]
        corpus.append(generate_match(int(mrng.integers(2**63)), map_name, roster,
                                     match_id=f"synth-{seed}-{i:04d}"))
    return corpus
