import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glasswave.errors import AssetError, PlacementError, ValidationError
from glasswave.scene import (
    DatasetConfig,
    load_dataset_manifest,
    load_scene,
    measured_snr,
    overlap_samples,
    place_overlap,
    sample_manifest,
    snr_gain,
    synthesize_scene,
    write_scene,
)

FS = 16000


def test_snr_gain_cases(rng):
    x = rng.standard_normal(1000)
    assert snr_gain(x, x, 0.0) == pytest.approx(1.0)
    assert snr_gain(x, x, 20.0) == pytest.approx(0.1)
    with pytest.raises(ValidationError):
        snr_gain(x, np.zeros(10), 0.0)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), target=st.floats(-20, 50))
def test_snr_round_trip(seed, target):
    r = np.random.default_rng(seed)
    s, n = r.standard_normal((2, 500)) * r.uniform(0.1, 10, (2, 1))
    assert abs(measured_snr(s, snr_gain(s, n, target) * n) - target) < 1e-6


def test_place_overlap_zero_is_disjoint(rng):
    main = [(1000, 5000), (8000, 12000)]
    off = place_overlap(main, 2000, 0.0, rng, 20000)
    assert overlap_samples(main, off, 2000) == 0


def test_place_overlap_half_of_four_seconds(rng):
    n = 4 * FS
    main = [(0, 10 * FS)]
    off = place_overlap(main, n, 0.5, rng, 12 * FS)
    assert abs(overlap_samples(main, off, n) - 2 * FS) <= 0.02 * n


def test_place_overlap_seeded():
    main = [(1000, 5000)]
    a = place_overlap(main, 3000, 0.25, np.random.default_rng(4), 20000)
    b = place_overlap(main, 3000, 0.25, np.random.default_rng(4), 20000)
    assert a == b


def test_place_overlap_infeasible(rng):
    with pytest.raises(PlacementError):
        place_overlap([(0, 10000)], 2000, 0.0, rng, 10000)
    with pytest.raises(PlacementError):
        place_overlap([(0, 100)], 2000, 0.9, rng, 10000)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), ratio=st.sampled_from([0.0, 0.05, 0.1, 0.25, 0.4, 0.5]))
def test_place_overlap_property(seed, ratio):
    r = np.random.default_rng(seed)
    a = int(r.integers(2000, 6000))
    main = [(a, a + int(r.integers(6000, 12000)))]
    length = int(r.integers(2000, 6000))
    off = place_overlap(main, length, ratio, r, 30000)
    assert abs(overlap_samples(main, off, length) / length - ratio) <= 0.02


def test_manifest_sampling(glasses, assets):
    m = sample_manifest(3, 2, assets, glasses)
    assert m.bystander_count == 2
    assert float(m.target_snr_db).is_integer() and -8 <= m.target_snr_db <= 40
    assert 0.05 <= m.overlap_ratio <= 0.5
    again = sample_manifest(3, 2, assets, glasses)
    assert again.to_dict() == m.to_dict()
    with pytest.raises(ValidationError):
        sample_manifest(3, 4, assets, glasses)


def test_manifest_needs_speech(glasses, assets):
    noise_only = {k: v for k, v in assets.items() if v.kind == "noise"}
    with pytest.raises(AssetError):
        sample_manifest(1, 0, noise_only, glasses)


def test_noise_free_two_talker_scene(glasses, assets, quick_config):
    m = sample_manifest(21, 0, assets, glasses, quick_config)
    scene = synthesize_scene(m, assets, glasses, noise_gain=0.0)
    np.testing.assert_array_equal(scene.mixture, scene.stems["wearer"] + scene.stems["partner"])


def test_scene_fidelity(small_scene, glasses):
    s = small_scene
    total = sum(s.stems.values())
    assert np.max(np.abs(s.mixture - total)) <= 1e-12
    ref = glasses.reference_index
    snr = measured_snr(s.stems["wearer"][ref] + s.stems["partner"][ref], s.stems["noise"][ref])
    assert abs(snr - s.manifest.target_snr_db) <= 0.01
    for name, ratio in s.info["realized_overlap"].items():
        assert abs(ratio - s.manifest.overlap_ratio) <= 0.02
    assert set(s.stems) == {"wearer", "partner", "bystander_1", "noise"}
    assert all(v.shape == s.mixture.shape for v in s.stems.values())


def test_scene_deterministic(glasses, assets, quick_config, small_scene):
    m = sample_manifest(11, 1, assets, glasses, quick_config, scene_id="t-0011")
    again = synthesize_scene(m, assets, glasses)
    np.testing.assert_array_equal(again.mixture, small_scene.mixture)


def test_missing_asset(glasses, assets, quick_config):
    m = sample_manifest(5, 0, assets, glasses, quick_config)
    m.wearer = "nope"
    with pytest.raises(AssetError):
        synthesize_scene(m, assets, glasses)


def test_pink_noise_fallback(glasses, assets, quick_config):
    speech = {k: v for k, v in assets.items() if v.kind == "speech"}
    m = sample_manifest(8, 0, speech, glasses, quick_config)
    assert m.noise == "pink"
    scene = synthesize_scene(m, speech, glasses)
    assert abs(scene.info["realized_snr_db"] - m.target_snr_db) <= 0.01


def test_scene_round_trip(tmp_path, small_scene):
    back = load_scene(write_scene(small_scene, tmp_path / "s"))
    assert back.manifest.to_dict() == small_scene.manifest.to_dict()
    np.testing.assert_allclose(back.mixture, small_scene.mixture, atol=1e-6)
    assert set(back.stems) == set(small_scene.stems)


def tree_hash(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_dataset_reproducible_across_workers(tmp_path, glasses, assets, quick_config):
    from glasswave.scene import generate_dataset

    cfg = DatasetConfig(scenes_per_scenario=1, bystander_counts=(1, 2, 3), seed=7, scene=quick_config)
    a = generate_dataset(cfg, assets, tmp_path / "a", glasses, workers=1)
    generate_dataset(cfg, assets, tmp_path / "b", glasses, workers=2)
    assert (tmp_path / "a" / "dataset.json").read_bytes() == (tmp_path / "b" / "dataset.json").read_bytes()
    assert tree_hash(tmp_path / "a") == tree_hash(tmp_path / "b")
    assert sorted(p.name for p in (tmp_path / "a").iterdir() if p.is_dir()) == ["B1", "B2", "B3"]
    assert load_dataset_manifest(tmp_path / "a" / "dataset.json")["scenes"] == a["scenes"]
    for e in a["scenes"]:
        assert abs(e["realized_snr_db"] - e["target_snr_db"]) <= 0.01


def test_dataset_snr_buckets(tmp_path, glasses, assets, quick_config):
    from glasswave.scene import generate_dataset

    cfg = DatasetConfig(1, (1,), ((-8, 0), (30, 40)), seed=2, scene=quick_config)
    d = generate_dataset(cfg, assets, tmp_path, glasses, workers=1)
    labels = [e["scenario"] for e in d["scenes"]]
    assert labels == ["B1_snr-8..0", "B1_snr30..40"]
    assert -8 <= d["scenes"][0]["target_snr_db"] <= 0
    assert 30 <= d["scenes"][1]["target_snr_db"] <= 40


def test_dataset_manifest_validation(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{}")
    with pytest.raises(ValidationError):
        load_dataset_manifest(p)
