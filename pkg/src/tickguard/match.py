"""Match records and the intermediate two-file match format.

A match named ``<stem>`` lives in two sibling files:

``<stem>.ticks.csv``
    One row per (tick, player)::

        tick,player_id,x,y,z,yaw,pitch,vx,vy,vz,health,armor,is_scoped,is_crouching,is_airborne,flash_duration,made_noise

    Booleans are written as 0/1. Ticks a player has no row for are gaps.

``<stem>.events.jsonl``
    The first line is a header object
    ``{"match_id", "map_name", "tick_count", "players": [{"player_id", "is_cheater"}]}``.
    Every following line is a kill event with the :class:`KillEvent` keys;
    ``attacker_id``/``victim_id`` are ``null`` for bots.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, fields
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .errors import MatchParseError, MatchValidationError
from .features import COL, MAP_TABLE, ROW_FIELDS

TICK_RATE = 64
TICKS_SUFFIX = ".ticks.csv"
EVENTS_SUFFIX = ".events.jsonl"
CSV_HEADER = ("tick", "player_id") + ROW_FIELDS
BOOL_FIELDS = ("is_scoped", "is_crouching", "is_airborne", "made_noise")
NOISE_HORIZON = 16  # ticks an audible event keeps made_noise set


@dataclass(frozen=True)
class PlayerRef:
    player_id: str
    is_cheater: bool = False


@dataclass(frozen=True)
class KillEvent:
    kill_tick: int
    attacker_id: str | None
    victim_id: str | None
    headshot: bool = False
    through_smoke: bool = False
    weapon_name: str = "ak47"

    @property
    def scorable(self) -> bool:
        return bool(self.attacker_id) and bool(self.victim_id)


@dataclass(frozen=True)
class TickRow:
    x: float
    y: float
    z: float
    yaw: float
    pitch: float
    vx: float
    vy: float
    vz: float
    health: float
    armor: float
    is_scoped: bool
    is_crouching: bool
    is_airborne: bool
    flash_duration: float
    made_noise: bool

    def as_array(self) -> np.ndarray:
        return np.array([float(getattr(self, f)) for f in ROW_FIELDS], dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> TickRow:
        kwargs = {}
        for f, v in zip(ROW_FIELDS, values):
            kwargs[f] = bool(v) if f in BOOL_FIELDS else float(v)
        return cls(**kwargs)


@dataclass(frozen=True, eq=False)
class MatchRecord:
    """One validated match.

    ``ticks`` maps each player id to a ``(tick_count, 15)`` float64 array in
    ``ROW_FIELDS`` column order; rows of NaN mark ticks with no data.
    """

    match_id: str
    map_name: str
    tick_count: int
    players: tuple[PlayerRef, ...]
    kills: tuple[KillEvent, ...]
    ticks: Mapping[str, np.ndarray]

    def __post_init__(self) -> None:
        frozen = {}
        for pid, arr in self.ticks.items():
            arr = np.array(arr, dtype=np.float64)
            arr.setflags(write=False)
            frozen[pid] = arr
        object.__setattr__(self, "players", tuple(self.players))
        object.__setattr__(self, "kills", tuple(self.kills))
        object.__setattr__(self, "ticks", MappingProxyType(frozen))
        validate_match(self)

    def __reduce__(self):
        # the read-only proxy is not picklable; rebuild (and revalidate) from a plain dict
        return (type(self), (self.match_id, self.map_name, self.tick_count, self.players,
                             self.kills, dict(self.ticks)))

    def player(self, player_id: str) -> PlayerRef:
        for p in self.players:
            if p.player_id == player_id:
                return p
        raise KeyError(player_id)

    def is_cheater(self, player_id: str) -> bool:
        return self.player(player_id).is_cheater

    def has_row(self, player_id: str, tick: int) -> bool:
        return not bool(np.isnan(self.ticks[player_id][tick]).all())

    def row(self, player_id: str, tick: int) -> TickRow:
        if not self.has_row(player_id, tick):
            raise KeyError(f"no row for {player_id!r} at tick {tick}")
        return TickRow.from_array(self.ticks[player_id][tick])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MatchRecord):
            return NotImplemented
        if (self.match_id, self.map_name, self.tick_count, self.players, self.kills) != (
            other.match_id, other.map_name, other.tick_count, other.players, other.kills
        ):
            return False
        if set(self.ticks) != set(other.ticks):
            return False
        return all(
            np.array_equal(self.ticks[p], other.ticks[p], equal_nan=True) for p in self.ticks
        )

    __hash__ = None  # type: ignore[assignment]


def validate_match(match: MatchRecord) -> None:
    """Raise :class:`MatchValidationError` naming the first violated invariant."""
    T = match.tick_count
    if T <= 0:
        raise MatchValidationError("empty tick range", f"tick_count={T}")
    if match.map_name not in MAP_TABLE:
        raise MatchValidationError("unknown map", repr(match.map_name))

    ids = [p.player_id for p in match.players]
    if any(not pid for pid in ids):
        raise MatchValidationError("empty player id")
    if len(set(ids)) != len(ids):
        raise MatchValidationError("duplicate player id")
    known = set(ids)

    for pid, arr in match.ticks.items():
        if pid not in known:
            raise MatchValidationError("tick rows for undeclared player", repr(pid))
        if arr.shape != (T, len(ROW_FIELDS)):
            raise MatchValidationError("tick table shape", f"{pid}: {arr.shape}")
        present = ~np.isnan(arr).all(axis=1)
        rows = arr[present]
        if not np.all(np.isfinite(rows)):
            raise MatchValidationError("non-finite tick value", pid)
        for name in ("health", "armor"):
            col = rows[:, COL[name]]
            if np.any((col < 0) | (col > 100)):
                raise MatchValidationError(f"{name} out of range", pid)
        if np.any(rows[:, COL["flash_duration"]] < 0):
            raise MatchValidationError("flash_duration negative", pid)
        for name in BOOL_FIELDS:
            col = rows[:, COL[name]]
            if np.any((col != 0) & (col != 1)):
                raise MatchValidationError(f"{name} not boolean", pid)

    if not match.kills:
        raise MatchValidationError("no rounds played", match.match_id)
    for k in match.kills:
        if not 0 <= k.kill_tick < T:
            raise MatchValidationError("kill out of tick range", f"tick {k.kill_tick}, T={T}")
        for pid in (k.attacker_id, k.victim_id):
            if pid is not None and pid not in known:
                raise MatchValidationError("kill references undeclared player", repr(pid))
        if k.attacker_id is not None and k.attacker_id == k.victim_id:
            raise MatchValidationError("self-kill", f"{k.attacker_id} at tick {k.kill_tick}")


def trailing_noise(events, horizon: int = NOISE_HORIZON) -> np.ndarray:
    """``made_noise`` column from per-tick audible events.

    Tick ``t`` is set when any event fell in ticks ``(t - horizon, t]``.
    """
    ev = np.asarray(events, dtype=bool).astype(np.int64)
    csum = np.cumsum(ev)
    before = np.concatenate([np.zeros(horizon, np.int64), csum])[: ev.size]
    return (csum - before) > 0


def list_scorable_kills(match: MatchRecord) -> list[KillEvent]:
    """Kills with both participants present (bot kills dropped), in tick order."""
    return sorted((k for k in match.kills if k.scorable), key=lambda k: k.kill_tick)


def match_paths(path) -> tuple[Path, Path]:
    """Resolve a stem, a ``.ticks.csv`` path or a ``.events.jsonl`` path to both files."""
    s = str(path)
    for suffix in (TICKS_SUFFIX, EVENTS_SUFFIX):
        if s.endswith(suffix):
            s = s[: -len(suffix)]
            break
    return Path(s + TICKS_SUFFIX), Path(s + EVENTS_SUFFIX)


def discover_matches(directory) -> list[Path]:
    """Stems of all matches in ``directory``, sorted by name."""
    directory = Path(directory)
    return sorted(
        directory / p.name[: -len(EVENTS_SUFFIX)]
        for p in directory.iterdir()
        if p.name.endswith(EVENTS_SUFFIX)
    )


def _parse_bool(value, path, line, key) -> bool:
    if isinstance(value, bool):
        return value
    if value in (0, 1):
        return bool(value)
    raise MatchParseError(path, line, f"{key} must be a boolean, got {value!r}")


def _read_events(path: Path) -> tuple[dict, list[KillEvent]]:
    header = None
    kills: list[KillEvent] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise MatchParseError(path, lineno, f"invalid JSON: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise MatchParseError(path, lineno, "expected a JSON object")
            if header is None:
                missing = {"match_id", "map_name", "players"} - obj.keys()
                if missing:
                    raise MatchParseError(path, lineno, f"header missing {sorted(missing)}")
                players = []
                for p in obj["players"]:
                    if not isinstance(p, dict) or "player_id" not in p:
                        raise MatchParseError(path, lineno, "malformed player entry")
                    players.append(PlayerRef(
                        str(p["player_id"]),
                        _parse_bool(p.get("is_cheater", False), path, lineno, "is_cheater"),
                    ))
                header = dict(obj, players=players)
                continue
            if obj.get("type", "kill") != "kill":
                continue
            try:
                tick = obj["kill_tick"]
                weapon = obj["weapon_name"]
            except KeyError as exc:
                raise MatchParseError(path, lineno, f"kill event missing {exc.args[0]!r}") from None
            if not isinstance(tick, int) or isinstance(tick, bool):
                raise MatchParseError(path, lineno, f"kill_tick must be an integer, got {tick!r}")
            kills.append(KillEvent(
                kill_tick=tick,
                attacker_id=obj.get("attacker_id") or None,
                victim_id=obj.get("victim_id") or None,
                headshot=_parse_bool(obj.get("headshot", False), path, lineno, "headshot"),
                through_smoke=_parse_bool(obj.get("through_smoke", False), path, lineno,
                                          "through_smoke"),
                weapon_name=str(weapon),
            ))
    if header is None:
        raise MatchParseError(path, None, "missing header object")
    return header, kills


def _read_ticks(path: Path, player_ids: list[str]) -> tuple[dict[str, dict[int, list[float]]], int]:
    rows: dict[str, dict[int, list[float]]] = {pid: {} for pid in player_ids}
    max_tick = -1
    bool_cols = {ROW_FIELDS.index(f) for f in BOOL_FIELDS}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        head = next(reader, None)
        if head is None or tuple(h.strip() for h in head) != CSV_HEADER:
            raise MatchParseError(path, 1, "unexpected tick table header")
        width = len(CSV_HEADER)
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != width:
                raise MatchParseError(path, lineno, f"expected {width} fields, got {len(rec)}")
            try:
                tick = int(rec[0])
            except ValueError:
                raise MatchParseError(path, lineno, f"bad tick {rec[0]!r}") from None
            if tick < 0:
                raise MatchParseError(path, lineno, f"negative tick {tick}")
            pid = rec[1]
            if pid not in rows:
                raise MatchParseError(path, lineno, f"undeclared player {pid!r}")
            try:
                values = [float(v) for v in rec[2:]]
            except ValueError as exc:
                raise MatchParseError(path, lineno, str(exc)) from None
            for c in bool_cols:
                if rec[2 + c] not in ("0", "1"):
                    raise MatchParseError(path, lineno, f"{ROW_FIELDS[c]} must be 0 or 1")
            if not all(math.isfinite(v) for v in values):
                raise MatchParseError(path, lineno, "non-finite value")
            if tick in rows[pid]:
                raise MatchValidationError("duplicate tick row", f"{pid} at tick {tick}")
            rows[pid][tick] = values
            max_tick = max(max_tick, tick)
    return rows, max_tick


def load_match(path) -> MatchRecord:
    """Load and validate a match from its stem or either of its two files."""
    ticks_path, events_path = match_paths(path)
    header, kills = _read_events(events_path)
    player_ids = [p.player_id for p in header["players"]]
    rows, max_tick = _read_ticks(ticks_path, player_ids)

    tick_count = header.get("tick_count")
    if tick_count is None:
        tick_count = max_tick + 1
    if not isinstance(tick_count, int) or isinstance(tick_count, bool):
        raise MatchParseError(events_path, 1, f"tick_count must be an integer, got {tick_count!r}")
    if max_tick >= tick_count:
        raise MatchValidationError("tick row out of range", f"tick {max_tick}, T={tick_count}")

    tables = {}
    for pid in player_ids:
        arr = np.full((max(tick_count, 0), len(ROW_FIELDS)), np.nan)
        for tick, values in rows[pid].items():
            arr[tick] = values
        tables[pid] = arr
    return MatchRecord(
        match_id=str(header["match_id"]),
        map_name=str(header["map_name"]),
        tick_count=tick_count,
        players=tuple(header["players"]),
        kills=tuple(kills),
        ticks=tables,
    )


def _fmt(value: float, is_bool: bool) -> str:
    if is_bool:
        return "1" if value else "0"
    return repr(float(value))


def save_match(match: MatchRecord, path) -> tuple[Path, Path]:
    """Write ``match`` as a tick table and an event file; returns both paths."""
    ticks_path, events_path = match_paths(path)
    ticks_path.parent.mkdir(parents=True, exist_ok=True)
    is_bool = [f in BOOL_FIELDS for f in ROW_FIELDS]

    tmp = ticks_path.with_name(ticks_path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        order = [p.player_id for p in match.players]
        for tick in range(match.tick_count):
            for pid in order:
                row = match.ticks[pid][tick]
                if np.isnan(row).all():
                    continue
                writer.writerow([tick, pid] + [_fmt(v, b) for v, b in zip(row, is_bool)])
    os.replace(tmp, ticks_path)

    tmp = events_path.with_name(events_path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        header = {
            "match_id": match.match_id,
            "map_name": match.map_name,
            "tick_count": match.tick_count,
            "players": [
                {"player_id": p.player_id, "is_cheater": p.is_cheater} for p in match.players
            ],
        }
        fh.write(json.dumps(header) + "\n")
        for k in match.kills:
            fh.write(json.dumps({f.name: getattr(k, f.name) for f in fields(k)}) + "\n")
    os.replace(tmp, events_path)
    return ticks_path, events_path
