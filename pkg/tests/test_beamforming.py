import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glasswave.beamforming import (
    BeamformerBank,
    BeamformerWeights,
    NlcmvProblem,
    NlcmvSolver,
    apply_bank,
    bank_from_dict,
    bank_to_dict,
    beam_pattern,
    design_bank,
    design_das,
    design_mvdr,
    design_nlcmv,
    lateral_gains,
    load_bank,
    save_bank,
    weights_at,
    white_noise_gain,
    write_beam_pattern,
)
from glasswave.errors import DesignError, InfeasibleBinError, NumericalError, ValidationError
from glasswave.geometry import (
    ArrayGeometry,
    ChannelResponse,
    Direction,
    FrequencyGrid,
    Point,
    diffuse_covariance,
    random_geometry,
    steering_vector,
)

from oracles import nlcmv_pgd, whitened_diffuse_snapshots


def hdot(h, g):
    return np.sum(np.conj(h) * g, axis=-1)


def response(g):
    return ChannelResponse(np.atleast_2d(np.asarray(g, dtype=complex)), source=Direction(0.0, 0.0))


def random_problem(rng, grid, alpha=10.0, m=None):
    geo = random_geometry(rng, m)
    target = steering_vector(geo, Direction(rng.uniform(0, 360), rng.uniform(-30, 30)), grid)
    null = steering_vector(geo, Direction(rng.uniform(0, 360), 0.0), grid)
    return geo, NlcmvProblem(target, diffuse_covariance(geo, grid), [(null, alpha)])


def test_das_single_mic():
    w = design_das(response([[1.0]]))
    np.testing.assert_allclose(w.h, [[1.0]])


def test_das_unit_modulus_weights(grid, rng):
    geo = random_geometry(rng, 4)
    w = design_das(steering_vector(geo, Direction(30.0, 0.0), grid))
    np.testing.assert_allclose(np.abs(w.h), 0.25, atol=1e-15)


def test_das_wng_seven_mics(glasses, grid):
    target = steering_vector(glasses, Direction(120.0, 0.0), grid)
    wng = white_noise_gain(design_das(target), target)
    np.testing.assert_allclose(wng, 10 * np.log10(7), atol=1e-10)


def test_das_rejects_zero_response():
    with pytest.raises(ValidationError):
        design_das(response([[0.0, 0.0]]))


def test_wng_single_mic():
    target = response([[1.0]])
    assert white_noise_gain(design_das(target), target)[0] == pytest.approx(0.0)


def test_mvdr_identity_equals_das(glasses, grid):
    target = steering_vector(glasses, Direction(45.0, 0.0), grid)
    mvdr = design_mvdr(target, np.eye(7))
    np.testing.assert_allclose(mvdr.h, design_das(target).h, atol=1e-14)


def test_mvdr_hand_case():
    target = response([[1.0, 1.0]])
    w = design_mvdr(target, np.array([[1.0, 0.5], [0.5, 1.0]]), loading=0.0)
    np.testing.assert_allclose(w.h, [[0.5, 0.5]], atol=1e-15)


def test_mvdr_rejects_non_hermitian():
    with pytest.raises(ValidationError):
        design_mvdr(response([[1.0, 1.0]]), np.array([[1.0, 0.9], [0.1, 1.0]]))


def test_mvdr_singular_without_loading():
    with pytest.raises(NumericalError):
        design_mvdr(response([[1.0, 1.0]]), np.ones((2, 2)), loading=0.0)


def test_mvdr_rejects_negative_loading():
    with pytest.raises(ValidationError):
        design_mvdr(response([[1.0, 1.0]]), np.eye(2), loading=-1.0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_mvdr_distortionless(seed):
    rng = np.random.default_rng(seed)
    grid = FrequencyGrid(16000.0, 64)
    geo = random_geometry(rng)
    target = steering_vector(geo, Direction(rng.uniform(0, 360), 0.0), grid)
    w = design_mvdr(target, diffuse_covariance(geo, grid))
    assert np.max(np.abs(hdot(w.h, target.g) - 1)) <= 1e-8


def test_mvdr_beats_das_on_diffuse_snapshots(rng):
    grid = FrequencyGrid(16000.0, 128)
    geo = random_geometry(rng, 5)
    cov = diffuse_covariance(geo, grid)
    target = steering_vector(geo, Direction(rng.uniform(0, 360), 0.0), grid)
    x = whitened_diffuse_snapshots(cov, 400, rng)
    power = {}
    for name, w in (("das", design_das(target)), ("mvdr", design_mvdr(target, cov))):
        y = np.einsum("fm,fmn->fn", np.conj(w.h), x)
        power[name] = np.mean(np.abs(y) ** 2, axis=1)
    assert np.all(power["mvdr"] <= power["das"] * (1 + 1e-9))


def test_nlcmv_reduces_to_mvdr_when_inactive(grid, rng):
    # with a white-noise objective the MVDR solution already meets the WNG bound
    geo = random_geometry(rng, 4)
    target = steering_vector(geo, Direction(10.0, 0.0), grid)
    cov = np.broadcast_to(np.eye(4), (grid.num_bins, 4, 4)) + 0.1 * diffuse_covariance(geo, grid)
    w = design_nlcmv(NlcmvProblem(target, cov))
    assert np.all(w.diagnostics["lambda"] == 0)
    np.testing.assert_allclose(w.h, design_mvdr(target, cov).h, atol=1e-12)


def test_nlcmv_contract(grid, rng):
    geo, problem = random_problem(rng, grid)
    w = design_nlcmv(problem)
    g = problem.target.g
    assert np.max(np.abs(hdot(w.h, g) - 1)) <= 1e-8
    assert np.max(w.diagnostics["constraint"]) <= 1e-6
    bound = 10 * np.log10(np.sum(np.abs(g) ** 2, axis=1) / g.shape[1])
    assert np.all(white_noise_gain(w, problem.target) >= bound - 1e-4)
    # low bins of the diffuse model force the constraint active
    assert np.any(w.diagnostics["lambda"] > 0)


def test_nlcmv_matches_pgd_oracle(rng):
    grid = FrequencyGrid(16000.0, 16)
    _, problem = random_problem(rng, grid, alpha=10.0, m=3)
    w = design_nlcmv(problem)
    a = problem.objective_matrix()
    for k in range(grid.num_bins):
        ref, _ = nlcmv_pgd(a[k], problem.target.g[k], restarts=200, rng=rng)
        assert w.diagnostics["objective"][k] <= ref * 1.01 + 1e-12


def test_nlcmv_deterministic(grid, rng):
    _, problem = random_problem(rng, grid)
    a = design_nlcmv(problem).h
    b = design_nlcmv(problem).h
    np.testing.assert_array_equal(a, b)


def test_nlcmv_infeasible_bin_reported(grid, rng):
    _, problem = random_problem(rng, grid, alpha=1e6)
    with pytest.raises(InfeasibleBinError) as info:
        design_nlcmv(problem, NlcmvSolver(max_lambda_decades=1))
    assert 0 <= info.value.bin_index < grid.num_bins


def test_nlcmv_non_psd_objective(grid, rng):
    geo = random_geometry(rng, 3)
    target = steering_vector(geo, Direction(0.0, 0.0), grid)
    cov = -np.broadcast_to(np.eye(3), (grid.num_bins, 3, 3))
    with pytest.raises(NumericalError):
        design_nlcmv(NlcmvProblem(target, cov))


def test_nlcmv_rejects_negative_alpha(grid, rng):
    geo = random_geometry(rng, 3)
    target = steering_vector(geo, Direction(0.0, 0.0), grid)
    with pytest.raises(ValidationError):
        NlcmvProblem(target, diffuse_covariance(geo, grid), [(target, -1.0)])


def test_null_deepens_with_alpha(rng):
    grid = FrequencyGrid(16000.0, 512)
    geo = random_geometry(rng, 5)
    target = steering_vector(geo, Direction(0.0, 0.0), grid)
    null = steering_vector(geo, Direction(100.0, 0.0), grid)
    gains = []
    for alpha in (0.0, 1.0, 10.0, 100.0):
        w = design_nlcmv(NlcmvProblem(target, diffuse_covariance(geo, grid), [(null, alpha)]))
        gains.append(beam_pattern(dataclasses.replace(w, grid=grid), geo, 1000.0).gain_at(100.0))
    assert all(b <= a + 1e-9 for a, b in zip(gains, gains[1:]))


@pytest.mark.parametrize("k,channels", [(4, 5), (12, 13), (1, 2)])
def test_bank_channel_count(glasses, grid, k, channels):
    bank = design_bank(glasses, grid, k, designer="das")
    assert len(bank.channels) == channels
    assert isinstance(bank.channels[0].steer, Point)
    az = [ch.steer.azimuth_deg for ch in bank.channels[1:]]
    np.testing.assert_allclose(az, 360.0 * np.arange(k) / k)


def test_bank_rejects_bad_k(glasses, grid):
    with pytest.raises(ValidationError):
        design_bank(glasses, grid, 0)


def test_bank_design_error_names_channel(glasses, grid):
    with pytest.raises(DesignError) as info:
        design_bank(glasses, grid, 2, designer="mvdr", designer_args={"noise_cov": np.eye(3)})
    assert info.value.channel == 0


def test_bank_mouth_beam_distortionless(glasses, grid):
    bank = design_bank(glasses, grid, 4)
    g = steering_vector(glasses, bank.channels[0].steer, grid).g
    assert np.max(np.abs(hdot(bank.channels[0].h, g) - 1)) <= 1e-8


def test_bank_nulls_recorded(glasses, grid):
    args = {"nulls": [{"azimuth_deg": 90.0, "alpha": 10.0}], "null_mouth": 5.0}
    bank = design_bank(glasses, grid, 4, designer_args=args)
    assert bank.provenance["nulls"] == args["nulls"]
    assert bank.provenance["null_mouth"] == 5.0


def test_beam_pattern_steer_is_0db(glasses, grid):
    bank = design_bank(glasses, grid, 4)
    for ch in bank.channels[1:]:
        pat = beam_pattern(ch, glasses, 250.0)
        assert abs(pat.gain_at(ch.steer.azimuth_deg)) <= 1e-6


def test_beam_pattern_single_mic(grid):
    geo = ArrayGeometry([[0, 0, 0]])
    w = BeamformerWeights(np.ones((grid.num_bins, 1)), grid=grid)
    np.testing.assert_allclose(beam_pattern(w, geo, 1000.0).gain_db, 0.0, atol=1e-12)


def test_beam_pattern_endfire_null_clamped(grid):
    # the wearable bound forbids a 0.343 m pair; half the spacing at twice the frequency
    geo = ArrayGeometry([[0, 0, 0], [0.1715, 0, 0]])
    w = dataclasses.replace(design_das(steering_vector(geo, Direction(90.0, 0.0), grid)), grid=grid)
    pat = beam_pattern(w, geo, 1000.0)
    assert pat.gain_at(0.0) == -80.0
    assert pat.gain_at(90.0) == pytest.approx(0.0, abs=1e-9)


def test_weights_at_interpolates_and_bounds(grid):
    h = np.arange(grid.num_bins)[:, None] * np.ones((1, 2))
    w = BeamformerWeights(h.astype(complex), grid=grid)
    np.testing.assert_allclose(weights_at(w, 31.25 * 2.5), [2.5, 2.5])
    with pytest.raises(ValidationError):
        weights_at(w, 9000.0)


def test_apply_bank_properties(glasses, grid, rng):
    one_hot = np.zeros((grid.num_bins, 7), dtype=complex)
    one_hot[:, 0] = 1.0
    chans = [BeamformerWeights(one_hot, grid=grid) for _ in range(3)]
    bank = BeamformerBank(chans, 2, grid)
    x = rng.standard_normal((7, grid.num_bins, 5)) + 1j * rng.standard_normal((7, grid.num_bins, 5))
    np.testing.assert_array_equal(apply_bank(bank, x)[1], x[0])
    assert not np.any(apply_bank(bank, np.zeros_like(x)))
    real = design_bank(glasses, grid, 2, designer="das")
    y = rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape)
    np.testing.assert_allclose(apply_bank(real, x + y), apply_bank(real, x) + apply_bank(real, y), atol=1e-10)


def test_bank_round_trip(tmp_path, glasses, grid):
    bank = design_bank(glasses, grid, 4)
    back = load_bank(save_bank(bank, tmp_path / "bank.json"))
    np.testing.assert_array_equal(back.weights, bank.weights)
    assert back.K == 4 and back.grid == grid
    assert isinstance(back.channels[0].steer, Point)
    assert bank_from_dict(bank_to_dict(bank)).channels[2].steer == bank.channels[2].steer


def test_bank_file_rejects_other_json(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{}")
    with pytest.raises(ValidationError):
        load_bank(p)


def test_beam_pattern_table(tmp_path, glasses, grid):
    bank = design_bank(glasses, grid, 4, designer="das")
    path = write_beam_pattern(beam_pattern(bank.channels[1], glasses, 250.0), tmp_path / "p.tsv")
    lines = path.read_text().splitlines()
    assert lines[0] == "# frequency_hz\t250"
    assert lines[1] == "azimuth_deg\tgain_db"
    assert len(lines) == 2 + 360
    assert lateral_gains(bank, glasses, 250.0).shape == (5, 2)
