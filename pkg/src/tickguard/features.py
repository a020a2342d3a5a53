"""The 44-slot tick-vector layout, its normalization bounds and categorical tables.

Slot layout::

    0-16   attacker state and kill attributes (scalars)
    17-23  weapon group one-hot (attacker's weapon)
    24-28  victim state (scalars)
    29-43  map one-hot

Every scalar is mapped to [0, 1] by clamped min-max normalization against
fixed bounds, so encoding needs no fitted statistics.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import FeatureError

SCHEMA_VERSION = 1

# Normalized values are snapped to multiples of 2**-24. Every such value in
# [0, 1] is exact in float32, which keeps coordinate shifts (augmentation)
# exact after the float32 round-trip.
GRID = 2.0**-24

COORD_BOUNDS = (-8192.0, 8192.0)
YAW_BOUNDS = (-180.0, 180.0)
PITCH_BOUNDS = (-90.0, 90.0)
VELOCITY_BOUNDS = (-450.0, 450.0)
PERCENT_BOUNDS = (0.0, 100.0)
FLASH_BOUNDS = (0.0, 5.0)
DISTANCE_BOUNDS = (0.0, 8192.0)
FLAG_BOUNDS = (0.0, 1.0)


class WeaponGroup(IntEnum):
    KNIFE = 0
    AUTOMATIC_RIFLE = 1
    SEMI_AUTOMATIC_RIFLE = 2
    PISTOL = 3
    GRENADE = 4
    SUBMACHINE_GUN = 5
    SHOTGUN = 6


# Bolt-action snipers (awp, ssg08) sit with the semi-automatic rifles and
# machine guns with the automatic rifles; the zeus counts as a pistol.
WEAPON_TABLE: dict[str, WeaponGroup] = {
    **{
        name: WeaponGroup.KNIFE
        for name in (
            "knife", "knife_t", "knifegg", "bayonet", "knife_bayonet", "knife_butterfly",
            "knife_karambit", "knife_m9_bayonet", "knife_flip", "knife_gut", "knife_tactical",
            "knife_falchion", "knife_push", "knife_survival_bowie", "knife_ursus",
            "knife_gypsy_jackknife", "knife_stiletto", "knife_widowmaker", "knife_css",
            "knife_cord", "knife_canis", "knife_outdoor", "knife_skeleton", "knife_kukri",
        )
    },
    **{
        name: WeaponGroup.AUTOMATIC_RIFLE
        for name in (
            "ak47", "m4a1", "m4a1_silencer", "m4a4", "famas", "galilar", "aug", "sg556",
            "m249", "negev",
        )
    },
    **{
        name: WeaponGroup.SEMI_AUTOMATIC_RIFLE
        for name in ("awp", "ssg08", "scar20", "g3sg1")
    },
    **{
        name: WeaponGroup.PISTOL
        for name in (
            "glock", "hkp2000", "usp_silencer", "p250", "fiveseven", "tec9", "cz75a",
            "deagle", "revolver", "elite", "taser",
        )
    },
    **{
        name: WeaponGroup.GRENADE
        for name in (
            "hegrenade", "molotov", "incgrenade", "inferno", "flashbang", "smokegrenade",
            "decoy",
        )
    },
    **{
        name: WeaponGroup.SUBMACHINE_GUN
        for name in ("mac10", "mp9", "mp7", "mp5sd", "ump45", "p90", "bizon")
    },
    **{
        name: WeaponGroup.SHOTGUN
        for name in ("nova", "xm1014", "sawedoff", "mag7")
    },
}

MAP_TABLE: tuple[str, ...] = (
    "de_ancient",
    "de_anubis",
    "de_dust2",
    "de_inferno",
    "de_mirage",
    "de_nuke",
    "de_overpass",
    "de_vertigo",
    "de_train",
    "de_thera",
    "de_mills",
    "de_edin",
    "de_basalt",
    "cs_office",
    "cs_italy",
)


@dataclass(frozen=True)
class Slot:
    name: str
    source: str  # attacker | kill | victim | map
    kind: str  # scalar | onehot
    lo: float = 0.0
    hi: float = 1.0


@dataclass(frozen=True)
class FeatureSchema:
    slots: tuple[Slot, ...]
    weapons: tuple[tuple[str, int], ...]
    maps: tuple[str, ...]
    version: int = SCHEMA_VERSION

    def __post_init__(self) -> None:
        if len(self.slots) != 44:
            raise ValueError(f"schema must have 44 slots, got {len(self.slots)}")
        for slot in self.slots:
            if not slot.lo < slot.hi:
                raise ValueError(f"slot {slot.name}: bounds must satisfy lo < hi")
        if len(self.maps) != 15:
            raise ValueError("schema must list 15 maps")

    @property
    def width(self) -> int:
        return len(self.slots)

    def index(self, name: str) -> int:
        for i, slot in enumerate(self.slots):
            if slot.name == name:
                return i
        raise KeyError(name)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([s.lo for s in self.slots], dtype=np.float64)
        hi = np.array([s.hi for s in self.slots], dtype=np.float64)
        return lo, hi

    def to_json(self) -> str:
        doc = {
            "version": self.version,
            "slots": [
                {"name": s.name, "source": s.source, "kind": s.kind, "lo": s.lo, "hi": s.hi}
                for s in self.slots
            ],
            "weapons": {name: group for name, group in self.weapons},
            "weapon_groups": [g.name.lower() for g in WeaponGroup],
            "maps": list(self.maps),
            "grid": GRID,
        }
        return json.dumps(doc, sort_keys=True, indent=2)

    @property
    def hash(self) -> str:
        """Hex sha256 of the canonical JSON document."""
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()


def _build_default_schema() -> FeatureSchema:
    slots = [
        Slot("attacker_x", "attacker", "scalar", *COORD_BOUNDS),
        Slot("attacker_y", "attacker", "scalar", *COORD_BOUNDS),
        Slot("attacker_z", "attacker", "scalar", *COORD_BOUNDS),
        Slot("attacker_yaw", "attacker", "scalar", *YAW_BOUNDS),
        Slot("attacker_pitch", "attacker", "scalar", *PITCH_BOUNDS),
        Slot("attacker_vx", "attacker", "scalar", *VELOCITY_BOUNDS),
        Slot("attacker_vy", "attacker", "scalar", *VELOCITY_BOUNDS),
        Slot("attacker_vz", "attacker", "scalar", *VELOCITY_BOUNDS),
        Slot("attacker_health", "attacker", "scalar", *PERCENT_BOUNDS),
        Slot("attacker_armor", "attacker", "scalar", *PERCENT_BOUNDS),
        Slot("attacker_is_scoped", "attacker", "scalar", *FLAG_BOUNDS),
        Slot("attacker_is_crouching", "attacker", "scalar", *FLAG_BOUNDS),
        Slot("attacker_is_airborne", "attacker", "scalar", *FLAG_BOUNDS),
        Slot("attacker_flash_duration", "attacker", "scalar", *FLASH_BOUNDS),
        Slot("kill_headshot", "kill", "scalar", *FLAG_BOUNDS),
        Slot("kill_through_smoke", "kill", "scalar", *FLAG_BOUNDS),
        Slot("kill_distance", "kill", "scalar", *DISTANCE_BOUNDS),
    ]
    slots += [Slot(f"weapon_{g.name.lower()}", "attacker", "onehot") for g in WeaponGroup]
    slots += [
        Slot("victim_x", "victim", "scalar", *COORD_BOUNDS),
        Slot("victim_y", "victim", "scalar", *COORD_BOUNDS),
        Slot("victim_z", "victim", "scalar", *COORD_BOUNDS),
        Slot("victim_health", "victim", "scalar", *PERCENT_BOUNDS),
        Slot("victim_made_noise", "victim", "scalar", *FLAG_BOUNDS),
    ]
    slots += [Slot(f"map_{m}", "map", "onehot") for m in MAP_TABLE]
    weapons = tuple(sorted((name, int(group)) for name, group in WEAPON_TABLE.items()))
    return FeatureSchema(slots=tuple(slots), weapons=weapons, maps=MAP_TABLE)


DEFAULT_SCHEMA = _build_default_schema()

ATTACKER_XYZ = (0, 1, 2)
VICTIM_XYZ = (24, 25, 26)
DISTANCE_SLOT = 16
WEAPON_SLOTS = slice(17, 24)
MAP_SLOTS = slice(29, 44)

# Columns of a raw tick row, shared with the match file format.
ROW_FIELDS = (
    "x", "y", "z", "yaw", "pitch", "vx", "vy", "vz", "health", "armor",
    "is_scoped", "is_crouching", "is_airborne", "flash_duration", "made_noise",
)
COL = {name: i for i, name in enumerate(ROW_FIELDS)}


def quantize(values):
    return np.round(np.asarray(values, dtype=np.float64) / GRID) * GRID


def normalize(value, bounds: tuple[float, float]):
    """Clamped min-max map of ``value`` into [0, 1]. Works on scalars and arrays."""
    lo, hi = bounds
    if not lo < hi:
        raise ValueError(f"bounds must satisfy lo < hi, got {bounds}")
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise FeatureError(f"cannot normalize non-finite value {value!r}")
    out = quantize(np.clip((arr - lo) / (hi - lo), 0.0, 1.0))
    return float(out) if out.ndim == 0 else out


def denormalize(value, bounds: tuple[float, float]):
    lo, hi = bounds
    return lo + np.asarray(value, dtype=np.float64) * (hi - lo)


def weapon_group_of(weapon_name: str) -> WeaponGroup:
    key = weapon_name.strip().lower().removeprefix("weapon_")
    try:
        return WEAPON_TABLE[key]
    except KeyError:
        raise FeatureError(f"unknown weapon: {weapon_name!r}") from None


def map_index(map_name: str, schema: FeatureSchema = DEFAULT_SCHEMA) -> int:
    try:
        return schema.maps.index(map_name)
    except ValueError:
        raise FeatureError(f"unknown map: {map_name!r}") from None


def encode_rows(attacker: np.ndarray, victim: np.ndarray, kill, map_name: str,
                schema: FeatureSchema = DEFAULT_SCHEMA) -> np.ndarray:
    """Encode aligned (n, 15) attacker/victim row arrays into an (n, 44) float64 matrix."""
    attacker = np.atleast_2d(np.asarray(attacker, dtype=np.float64))
    victim = np.atleast_2d(np.asarray(victim, dtype=np.float64))
    if attacker.shape != victim.shape or attacker.shape[1] != len(ROW_FIELDS):
        raise ValueError(f"row shape mismatch: {attacker.shape} vs {victim.shape}")
    group = int(weapon_group_of(kill.weapon_name))
    m = map_index(map_name, schema)

    n = attacker.shape[0]
    raw = np.zeros((n, schema.width), dtype=np.float64)
    raw[:, 0:14] = attacker[:, [COL[f] for f in ROW_FIELDS[:14]]]
    raw[:, 14] = float(kill.headshot)
    raw[:, 15] = float(kill.through_smoke)
    delta = attacker[:, 0:3] - victim[:, 0:3]
    raw[:, DISTANCE_SLOT] = np.sqrt(np.sum(delta * delta, axis=1))
    raw[:, 24:27] = victim[:, 0:3]
    raw[:, 27] = victim[:, COL["health"]]
    raw[:, 28] = victim[:, COL["made_noise"]]
    if not np.all(np.isfinite(raw)):
        raise FeatureError("non-finite value in tick rows")

    lo, hi = schema.bounds()
    out = quantize(np.clip((raw - lo) / (hi - lo), 0.0, 1.0))
    out[:, WEAPON_SLOTS] = 0.0
    out[:, 17 + group] = 1.0
    out[:, MAP_SLOTS] = 0.0
    out[:, 29 + m] = 1.0
    return out


def encode_tick(attacker, victim, kill, map_name: str,
                schema: FeatureSchema = DEFAULT_SCHEMA) -> np.ndarray:
    """Encode a single (attacker, victim) tick pair into a 44-vector.

    ``attacker`` and ``victim`` are :class:`~tickguard.match.TickRow` objects or
    15-element arrays in ``ROW_FIELDS`` order.
    """
    a = attacker.as_array() if hasattr(attacker, "as_array") else np.asarray(attacker)
    v = victim.as_array() if hasattr(victim, "as_array") else np.asarray(victim)
    return encode_rows(a[None, :], v[None, :], kill, map_name, schema)[0]
