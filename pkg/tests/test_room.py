import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glasswave.errors import DegenerateGeometryError, PlacementError, RoomError
from glasswave.geometry import SPEED_OF_SOUND, ArrayGeometry, random_geometry
from glasswave.room import (
    ArrayPose,
    RirSet,
    RoomRanges,
    RoomSpec,
    convolve_multichannel,
    eyring_reflection,
    image_sources,
    sample_room,
    simulate_rir,
)

from oracles import direct_convolve, first_order_images

FS = 16000.0
MONO = ArrayGeometry([[0.0, 0.0, 0.0]])


def random_config(rng, order=0, beta=0.0):
    dims = rng.uniform((5, 5, 2), (10, 10, 6))
    room = RoomSpec(dims, (beta,) * 6, order, FS)
    src = rng.uniform(0.3, dims - 0.3)
    pose = ArrayPose(tuple(rng.uniform(0.3, dims - 0.3)), rng.uniform(0, 360))
    return room, src, pose


def impulse_set(taps, fs=FS):
    return RirSet(np.asarray(taps, dtype=float)[None], fs, np.zeros(3), np.zeros((1, 3)),
                  RoomSpec((5, 5, 3)))


def test_direct_path_arrival_and_level(rng):
    for _ in range(20):
        room, src, pose = random_config(rng)
        rir = simulate_rir(room, src, MONO, pose)
        d = np.linalg.norm(np.asarray(pose.position) - src)
        assert abs(np.argmax(np.abs(rir.rirs[0])) - d / SPEED_OF_SOUND * FS) <= 1.0
        # the windowed sinc has unit DC gain, so the taps sum to the path gain
        assert rir.rirs[0].sum() == pytest.approx(1 / (4 * np.pi * d), rel=2e-3)


def test_first_order_has_seven_images(rng):
    room = RoomSpec((6.0, 7.0, 3.0), (0.9,) * 6, 1, FS)
    src = np.array([1.5, 2.0, 1.2])
    pos, orders, _ = image_sources(room, src)
    assert len(pos) == 7
    assert orders.tolist() == [0] + [1] * 6
    expect = first_order_images(src, room.dimensions)
    got = sorted(map(tuple, np.round(pos, 12)))
    assert got == sorted(map(tuple, np.round(expect, 12)))


def test_first_order_rir_arrivals(rng):
    room = RoomSpec((6.0, 7.0, 3.0), (0.9,) * 6, 1, FS, energy_cutoff_db=None)
    src = np.array([1.5, 2.0, 1.2])
    rir = simulate_rir(room, src, MONO, ArrayPose((4.0, 4.5, 1.6)))
    assert rir.images["kept"][:, 0].sum() == 7
    dist = np.linalg.norm(first_order_images(src, room.dimensions) - [4.0, 4.5, 1.6], axis=1)
    np.testing.assert_allclose(np.sort(rir.images["delays"][:, 0]), np.sort(dist / SPEED_OF_SOUND * FS))


def test_zero_reflection_equals_direct_only(rng):
    room, src, pose = random_config(rng, order=5, beta=0.0)
    direct = simulate_rir(RoomSpec(room.dimensions, 0.0, 0, FS), src, MONO, pose)
    full = simulate_rir(room, src, MONO, pose)
    np.testing.assert_array_equal(full.rirs, direct.rirs)


def test_onset_causality(rng):
    for _ in range(20):
        room, src, pose = random_config(rng, order=2, beta=0.7)
        geo = random_geometry(rng, 3)
        rir = simulate_rir(room, src, geo, pose)
        for m in range(3):
            d = np.linalg.norm(rir.mic_positions[m] - src)
            taps = np.abs(rir.rirs[m])
            onset = np.flatnonzero(taps > 0.25 * taps.max())[0]
            assert onset >= np.floor(d / SPEED_OF_SOUND * FS) - 1


def test_lead_samples_shift(rng):
    room, src, pose = random_config(rng, order=1, beta=0.5)
    base = simulate_rir(room, src, MONO, pose)
    led = simulate_rir(room, src, MONO, pose, lead_samples=41)
    np.testing.assert_allclose(led.rirs[0, 41:41 + base.rirs.shape[1]], base.rirs[0], atol=1e-12)


def test_energy_monotone_in_reflection(rng):
    room, src, pose = random_config(rng, order=4, beta=0.0)
    energies = []
    for beta in (0.2, 0.5, 0.8):
        r = RoomSpec(room.dimensions, (beta, 0.8, 0.8, 0.8, 0.8, 0.8), 4, FS, energy_cutoff_db=None)
        energies.append(np.sum(simulate_rir(r, src, MONO, pose).rirs ** 2))
    assert energies[0] <= energies[1] <= energies[2]


def test_simulation_deterministic(rng):
    room, src, pose = random_config(rng, order=3, beta=0.6)
    a = simulate_rir(room, src, MONO, pose).rirs
    b = simulate_rir(room, src, MONO, pose).rirs
    np.testing.assert_array_equal(a, b)


def test_rejects_outside_and_coincident():
    room = RoomSpec((5.0, 5.0, 3.0), 0.5, 1, FS)
    pose = ArrayPose((2.0, 2.0, 1.5))
    with pytest.raises(RoomError):
        simulate_rir(room, (6.0, 1.0, 1.0), MONO, pose)
    with pytest.raises(RoomError):
        simulate_rir(room, (1.0, 1.0, 1.0), MONO, ArrayPose((9.0, 2.0, 1.5)))
    with pytest.raises(DegenerateGeometryError):
        simulate_rir(room, (2.0, 2.0, 1.5), MONO, pose)


@pytest.mark.parametrize("kwargs", [
    {"dimensions": (5, 5)},
    {"dimensions": (5, 5, 3), "reflection": (1.0,) * 6},
    {"dimensions": (5, 5, 3), "max_order": -1},
])
def test_room_spec_validation(kwargs):
    with pytest.raises(RoomError):
        RoomSpec(**kwargs)


def test_convolve_identity_and_delay(rng):
    x = rng.standard_normal(500)
    np.testing.assert_allclose(convolve_multichannel(x, impulse_set([1.0]))[0], x, atol=1e-12)
    taps = np.zeros(101)
    taps[100] = 1.0
    y = convolve_multichannel(x, impulse_set(taps))[0]
    assert y.size == x.size + 100
    np.testing.assert_allclose(y[100:], x, atol=1e-12)
    np.testing.assert_allclose(y[:100], 0.0, atol=1e-12)


def test_convolve_matches_direct_oracle(rng):
    x = rng.standard_normal(16000)
    h = rng.standard_normal(4096) * np.exp(-np.arange(4096) / 800)
    fast = convolve_multichannel(x, impulse_set(h))[0]
    assert np.max(np.abs(fast - direct_convolve(x, h))) < 1e-9


def test_convolve_sample_rate_mismatch(rng):
    with pytest.raises(RoomError):
        convolve_multichannel(rng.standard_normal(10), impulse_set([1.0]), sample_rate_hz=8000.0)


def test_eyring_round_trip():
    dims = (7.0, 6.0, 3.0)
    for rt60 in (0.2, 0.4, 0.6):
        beta = eyring_reflection(rt60, dims)
        v, s = np.prod(dims), 2 * (7 * 6 + 7 * 3 + 6 * 3)
        back = 24 * np.log(10) * v / (SPEED_OF_SOUND * s * (-np.log(beta**2)))
        assert back == pytest.approx(rt60)


def test_sample_room_determinism_and_ranges(glasses):
    a = sample_room(np.random.default_rng(5), bystanders=2, geometry=glasses)
    b = sample_room(np.random.default_rng(5), bystanders=2, geometry=glasses)
    assert a[0] == b[0]
    np.testing.assert_array_equal(a[1].partner, b[1].partner)
    rng = np.random.default_rng(0)
    for _ in range(10000):
        dims = np.asarray(sample_room(rng)[0].dimensions)
        assert np.all(dims >= (5, 5, 2)) and np.all(dims <= (10, 10, 6))


def test_sample_room_placement_policy(glasses):
    rng = np.random.default_rng(3)
    for _ in range(200):
        room, pl = sample_room(rng, bystanders=3, geometry=glasses)
        center = np.asarray(pl.pose.position)
        assert np.linalg.norm(pl.wearer - center) == pytest.approx(np.linalg.norm(glasses.mouth))
        rel = pl.partner[:2] - center[:2]
        assert 1.0 <= np.linalg.norm(rel) <= 2.5
        az = (np.rad2deg(np.arctan2(rel[1], rel[0])) - pl.pose.yaw_deg + 180) % 360 - 180
        assert abs(az) <= 45.0 + 1e-9
        for b in pl.bystanders:
            assert 1.5 <= np.linalg.norm(b[:2] - center[:2]) <= 4.0
        assert room.contains(np.vstack(list(pl.sources().values())), 0.3)


def test_sample_room_without_bystanders():
    _, pl = sample_room(np.random.default_rng(1), bystanders=0)
    assert set(pl.sources()) == {"wearer", "partner", "noise"}


def test_sample_room_gives_up():
    ranges = RoomRanges(min_dims=(2, 2, 2), max_dims=(2, 2, 2), max_tries=20)
    with pytest.raises(PlacementError):
        sample_room(np.random.default_rng(0), ranges, bystanders=1)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_direct_arrival_property(seed):
    rng = np.random.default_rng(seed)
    room, src, pose = random_config(rng)
    rir = simulate_rir(room, src, MONO, pose)
    d = np.linalg.norm(np.asarray(pose.position) - src)
    assert abs(np.argmax(np.abs(rir.rirs[0])) - d / SPEED_OF_SOUND * FS) <= 1.0
