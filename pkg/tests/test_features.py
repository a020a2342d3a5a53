from __future__ import annotations

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tickguard.errors import FeatureError
from tickguard.features import (
    DEFAULT_SCHEMA,
    DISTANCE_SLOT,
    GRID,
    MAP_SLOTS,
    MAP_TABLE,
    WEAPON_SLOTS,
    FeatureSchema,
    WeaponGroup,
    denormalize,
    encode_rows,
    encode_tick,
    normalize,
    weapon_group_of,
)
from tickguard.match import KillEvent, TickRow

from conftest import player_rows


def tick(**overrides) -> TickRow:
    base = dict(x=0.0, y=0.0, z=0.0, yaw=0.0, pitch=0.0, vx=0.0, vy=0.0, vz=0.0, health=100.0,
                armor=0.0, is_scoped=False, is_crouching=False, is_airborne=False,
                flash_duration=0.0, made_noise=False)
    base.update(overrides)
    return TickRow(**base)


def test_normalize_examples():
    assert normalize(100, (0, 100)) == 1.0
    assert normalize(-9000, (-8192, 8192)) == 0.0
    assert normalize(90, (-180, 180)) == 0.75
    assert normalize(9000, (-8192, 8192)) == 1.0


def test_normalize_rejects_non_finite():
    with pytest.raises(FeatureError):
        normalize(float("nan"), (0, 1))
    with pytest.raises(FeatureError):
        normalize(np.array([1.0, np.inf]), (0, 1))


def test_normalize_roundtrip_within_grid():
    x = np.linspace(-8192, 8192, 1001)
    back = denormalize(normalize(x, (-8192, 8192)), (-8192, 8192))
    assert np.max(np.abs(back - x)) <= 16384 * GRID / 2 + 1e-12


def test_weapon_groups():
    ak = weapon_group_of("ak47")
    assert ak is WeaponGroup.AUTOMATIC_RIFLE
    block = np.zeros(7)
    block[int(ak)] = 1
    kill = KillEvent(10, "a", "b", weapon_name="ak47")
    vec = encode_tick(tick(), tick(x=10.0), kill, "de_dust2")
    assert vec[WEAPON_SLOTS].tolist() == [0, 1, 0, 0, 0, 0, 0]
    knife = encode_tick(tick(), tick(), dataclasses.replace(kill, weapon_name="knife"), "de_dust2")
    assert knife[17] == 1.0 and knife[WEAPON_SLOTS].sum() == 1.0
    assert weapon_group_of("weapon_AWP") is WeaponGroup.SEMI_AUTOMATIC_RIFLE


def test_unknown_weapon_names_the_weapon():
    with pytest.raises(FeatureError, match="bayonet9000"):
        weapon_group_of("bayonet9000")


def test_weapon_group_order():
    names = [g.name for g in sorted(WeaponGroup)]
    assert names == ["KNIFE", "AUTOMATIC_RIFLE", "SEMI_AUTOMATIC_RIFLE", "PISTOL", "GRENADE",
                     "SUBMACHINE_GUN", "SHOTGUN"]


def test_encode_tick_examples():
    kill = KillEvent(10, "a", "b", headshot=True, through_smoke=False)
    same = tick(x=123.0, y=-40.0, z=7.0)
    vec = encode_tick(same, same, kill, "de_dust2")
    assert vec[DISTANCE_SLOT] == 0.0
    assert vec[14] == 1.0 and vec[15] == 0.0
    k = MAP_TABLE.index("de_dust2")
    expected = np.zeros(15)
    expected[k] = 1.0
    assert np.array_equal(vec[MAP_SLOTS], expected)


def test_encode_tick_unknown_map():
    with pytest.raises(FeatureError):
        encode_tick(tick(), tick(), KillEvent(1, "a", "b"), "de_cache")


def test_victim_slots():
    v = tick(x=8192.0, y=-8192.0, z=0.0, health=50.0, made_noise=True)
    vec = encode_tick(tick(), v, KillEvent(1, "a", "b"), "cs_italy")
    assert vec[24:29].tolist() == [1.0, 0.0, 0.5, 0.5, 1.0]


def test_schema_layout():
    s = DEFAULT_SCHEMA
    assert s.width == 44
    assert [sl.source for sl in s.slots[:17]].count("attacker") == 14
    assert all(sl.kind == "onehot" for sl in s.slots[17:24])
    assert all(sl.source == "victim" for sl in s.slots[24:29])
    assert all(sl.source == "map" for sl in s.slots[29:44])
    assert len(MAP_TABLE) == 15


def test_schema_hash_tracks_bounds():
    changed = list(DEFAULT_SCHEMA.slots)
    changed[0] = dataclasses.replace(changed[0], lo=-4096.0)
    other = FeatureSchema(slots=tuple(changed), weapons=DEFAULT_SCHEMA.weapons,
                          maps=DEFAULT_SCHEMA.maps)
    assert other.hash != DEFAULT_SCHEMA.hash
    assert DEFAULT_SCHEMA.hash == FeatureSchema(DEFAULT_SCHEMA.slots, DEFAULT_SCHEMA.weapons,
                                                DEFAULT_SCHEMA.maps).hash


def test_schema_rejects_bad_bounds():
    bad = list(DEFAULT_SCHEMA.slots)
    bad[3] = dataclasses.replace(bad[3], lo=1.0, hi=1.0)
    with pytest.raises(ValueError):
        FeatureSchema(slots=tuple(bad), weapons=DEFAULT_SCHEMA.weapons, maps=DEFAULT_SCHEMA.maps)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.1, 10.0),
       map_name=st.sampled_from(MAP_TABLE))
def test_encoded_rows_are_unit_interval_with_one_hots(seed, scale, map_name):
    rng = np.random.default_rng(seed)
    a = player_rows(rng, 8) * scale  # scale > 1 pushes values out of bounds
    v = player_rows(rng, 8) * scale
    a[:, 8:10] = np.clip(a[:, 8:10], 0, 100)
    out = encode_rows(a, v, KillEvent(1, "a", "b", weapon_name="mp9"), map_name)
    assert np.all((out >= 0) & (out <= 1))
    assert np.all(out[:, WEAPON_SLOTS].sum(axis=1) == 1)
    assert np.all(out[:, MAP_SLOTS].sum(axis=1) == 1)
    assert np.array_equal(out.astype(np.float32).astype(np.float64), out)
    assert np.array_equal(out, encode_rows(a, v, KillEvent(1, "a", "b", weapon_name="mp9"),
                                           map_name))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1),
       shift=st.tuples(*[st.floats(-500, 500)] * 3))
def test_distance_symmetric_and_translation_invariant(seed, shift):
    rng = np.random.default_rng(seed)
    a = player_rows(rng, 4)
    v = player_rows(rng, 4)
    kill = KillEvent(1, "a", "b")
    d = encode_rows(a, v, kill, "de_nuke")[:, DISTANCE_SLOT]
    assert np.array_equal(d, encode_rows(v, a, kill, "de_nuke")[:, DISTANCE_SLOT])
    a2, v2 = a.copy(), v.copy()
    a2[:, 0:3] += shift
    v2[:, 0:3] += shift
    d2 = encode_rows(a2, v2, kill, "de_nuke")[:, DISTANCE_SLOT]
    assert np.max(np.abs(d2 - d)) <= 2 * GRID
