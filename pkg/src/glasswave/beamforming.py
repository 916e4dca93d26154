"""Fixed beamformer design (DAS, MVDR, NLCMV), K+1 banks, and beam-pattern analysis.

Weights are stored as complex arrays of shape (bins, M) and applied as
``y = h^H x``. Every designer here is distortionless toward its steer:
``h^H g = 1`` at every bin.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DesignError,
    GlasswaveError,
    InfeasibleBinError,
    NumericalError,
    ShapeError,
    ValidationError,
)
from .geometry import (
    SPEED_OF_SOUND,
    ArrayGeometry,
    ChannelResponse,
    Direction,
    FrequencyGrid,
    SourceDescriptor,
    diffuse_covariance,
    mouth_point,
    source_from_dict,
    steering_vector,
)

DEFAULT_LOADING = 1e-6
PATTERN_FLOOR_DB = -80.0
BANK_FORMAT = "glasswave-bank"

DESIGNERS = ("das", "mvdr", "nlcmv", "refined")


@dataclass(frozen=True)
class BeamformerWeights:
    h: np.ndarray
    steer: SourceDescriptor | None = None
    designer: str = "das"
    grid: FrequencyGrid | None = None
    diagnostics: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        h = np.array(self.h, dtype=complex)
        if h.ndim != 2:
            raise ShapeError(f"weights must be (bins, M), got {h.shape}")
        if not np.all(np.isfinite(h)):
            raise NumericalError("non-finite beamformer weights")
        if self.designer not in DESIGNERS:
            raise ValidationError(f"unknown designer {self.designer!r}")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    @property
    def num_bins(self) -> int:
        return self.h.shape[0]

    @property
    def num_mics(self) -> int:
        return self.h.shape[1]


def _hdot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-bin inner product a^H b over the last axis."""
    return np.sum(np.conj(a) * b, axis=-1)


def _loaded(cov: np.ndarray, loading: float) -> np.ndarray:
    m = cov.shape[-1]
    scale = np.real(np.trace(cov, axis1=-2, axis2=-1)) / m
    scale = np.where(scale > 0, scale, 1.0)
    return cov + (loading * scale)[..., None, None] * np.eye(m)


def _check_response(target: ChannelResponse):
    power = np.sum(np.abs(target.g) ** 2, axis=-1)
    if np.any(power == 0):
        raise ValidationError(f"zero response vector at bin {int(np.argmin(power))}")
    return power


def design_das(target: ChannelResponse) -> BeamformerWeights:
    """Delay-and-sum: ``h = g / (g^H g)``."""
    power = _check_response(target)
    h = target.g / power[:, None]
    return BeamformerWeights(h, steer=target.source, designer="das")


def _distortionless_solve(cov: np.ndarray, g: np.ndarray) -> np.ndarray:
    try:
        s = np.linalg.solve(cov, g[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular covariance: {exc}") from exc
    denom = _hdot(g, s)
    if not np.all(np.isfinite(s)) or np.any(np.abs(denom) < 1e-300):
        bad = int(np.argmax(~np.isfinite(s).all(axis=-1) | (np.abs(denom) < 1e-300)))
        raise NumericalError(f"singular covariance at bin {bad}")
    return s / denom[:, None]


def design_mvdr(target: ChannelResponse, noise_cov: np.ndarray,
                loading: float = DEFAULT_LOADING) -> BeamformerWeights:
    """MVDR weights ``h = P^-1 g / (g^H P^-1 g)`` with ``P = noise_cov + loading * tr/M * I``."""
    _check_response(target)
    cov = np.asarray(noise_cov, dtype=complex)
    if cov.ndim == 2:
        cov = np.broadcast_to(cov, (target.num_bins,) + cov.shape)
    if cov.shape != (target.num_bins, target.num_mics, target.num_mics):
        raise ShapeError(f"noise covariance shape {cov.shape} does not match response {target.g.shape}")
    if loading < 0:
        raise ValidationError("loading must be nonnegative")
    if np.max(np.abs(cov - np.conj(np.swapaxes(cov, -1, -2)))) > 1e-9 * max(1.0, np.max(np.abs(cov))):
        raise ValidationError("noise covariance must be Hermitian")
    loaded = _loaded(cov, loading)
    cond = np.linalg.cond(loaded)
    if np.any(~np.isfinite(cond)) or np.any(cond > 1e15):
        raise NumericalError(f"noise covariance singular after loading at bin {int(np.argmax(cond))}")
    h = _distortionless_solve(loaded, target.g)
    return BeamformerWeights(h, steer=target.source, designer="mvdr")


@dataclass
class NlcmvProblem:
    """Per-bin data of the non-linearly constrained minimum variance design.

    ``point_sources`` is a list of ``(ChannelResponse, alpha)`` pairs; ``point_psd``
    defaults to ones across bins.
    """

    target: ChannelResponse
    diffuse_cov: np.ndarray
    point_sources: list = field(default_factory=list)
    point_psd: np.ndarray | None = None

    def __post_init__(self):
        f, m = self.target.g.shape
        self.diffuse_cov = np.asarray(self.diffuse_cov, dtype=complex)
        if self.diffuse_cov.shape != (f, m, m):
            raise ShapeError(f"diffuse covariance {self.diffuse_cov.shape} vs response {(f, m)}")
        if self.point_psd is None:
            self.point_psd = np.ones(f)
        self.point_psd = np.broadcast_to(np.asarray(self.point_psd, dtype=float), (f,))
        if np.any(self.point_psd < 0):
            raise ValidationError("point-noise PSD must be nonnegative")
        for resp, alpha in self.point_sources:
            if alpha < 0:
                raise ValidationError("point-source weights must be nonnegative")
            if resp.g.shape != (f, m):
                raise ShapeError("point-source responses must share the target's grid and M")

    @property
    def mic_count(self) -> int:
        return self.target.num_mics

    def objective_matrix(self) -> np.ndarray:
        """``Phi_dd + phi_pp * sum_n alpha_n g_n g_n^H`` per bin."""
        a = self.diffuse_cov.copy()
        for resp, alpha in self.point_sources:
            outer = resp.g[:, :, None] * np.conj(resp.g[:, None, :])
            a += (alpha * self.point_psd)[:, None, None] * outer
        return a

    def constraint_matrix(self) -> np.ndarray:
        """``I - g g^H * M / sum_m |G_m|^2`` per bin."""
        g = self.target.g
        m = self.mic_count
        power = np.sum(np.abs(g) ** 2, axis=-1)
        outer = g[:, :, None] * np.conj(g[:, None, :])
        return np.eye(m) - outer * (m / power)[:, None, None]


@dataclass(frozen=True)
class NlcmvSolver:
    max_bisection_steps: int = 200
    tol: float = 1e-12
    loading: float = DEFAULT_LOADING
    max_lambda_decades: int = 30


def quad_form(h: np.ndarray, mat: np.ndarray) -> np.ndarray:
    """Real part of ``h^H mat h`` per bin."""
    return np.real(np.einsum("fi,fij,fj->f", np.conj(h), mat, h))


def design_nlcmv(problem: NlcmvProblem, solver: NlcmvSolver | None = None) -> BeamformerWeights:
    """Minimize ``h^H A h`` subject to ``h^H g = 1`` and ``h^H Psi h <= 0`` per bin.

    A single multiplier ``lam >= 0`` on the quadratic constraint is found by
    bisection. On the distortionless plane ``h^H Psi h = ||h||^2 - M/||g||^2``, so
    the stationary point for a given ``lam`` is the distortionless solution of
    ``A + lam I``; the constraint value decreases monotonically in ``lam``.
    """
    solver = solver or NlcmvSolver()
    g = problem.target.g
    f, m = g.shape
    power = _check_response(problem.target)
    a = problem.objective_matrix()
    a_loaded = _loaded(a, solver.loading)
    eig_min = np.linalg.eigvalsh(a_loaded)[:, 0]
    scale = np.real(np.trace(a_loaded, axis1=-2, axis2=-1)) / m
    if np.any(eig_min < -1e-10 * scale):
        raise NumericalError(f"objective matrix not PSD at bin {int(np.argmin(eig_min / scale))}")
    psi = problem.constraint_matrix()
    eye = np.eye(m)
    # feasibility slack, relative to the bound M / ||g||^2
    slack = 1e-12 * m / power

    def solve_at(lam):
        return _distortionless_solve(a_loaded + lam[:, None, None] * eye, g)

    def constraint(h, sel=slice(None)):
        return quad_form(h, psi[sel])

    lam_lo = np.zeros(f)
    h0 = solve_at(lam_lo)
    active = constraint(h0) > slack
    lam_hi = np.zeros(f)
    if np.any(active):
        idx = np.flatnonzero(active)
        hi = scale[idx] * 1e-9
        lo = np.zeros_like(hi)
        pending = np.ones(idx.size, dtype=bool)
        for _ in range(solver.max_lambda_decades):
            c = constraint(_distortionless_solve(a_loaded[idx] + hi[:, None, None] * eye, g[idx]), idx)
            pending = c > slack[idx]
            if not np.any(pending):
                break
            lo = np.where(pending, hi, lo)
            hi = np.where(pending, hi * 10.0, hi)
        if np.any(pending):
            raise InfeasibleBinError(int(idx[np.argmax(pending)]))
        for _ in range(solver.max_bisection_steps):
            if np.all(hi - lo <= solver.tol * hi):
                break
            mid = 0.5 * (lo + hi)
            c = constraint(_distortionless_solve(a_loaded[idx] + mid[:, None, None] * eye, g[idx]), idx)
            ok = c <= slack[idx]
            hi = np.where(ok, mid, hi)
            lo = np.where(ok, lo, mid)
        lam_hi[idx] = hi
    h = solve_at(lam_hi)
    diagnostics = {
        "lambda": lam_hi,
        "objective": quad_form(h, a),
        "constraint": constraint(h),
    }
    return BeamformerWeights(h, steer=problem.target.source, designer="nlcmv", diagnostics=diagnostics)


def white_noise_gain(weights: BeamformerWeights, target: ChannelResponse) -> np.ndarray:
    """``10 log10(|h^H g|^2 / ||h||^2)`` per bin."""
    norm = np.sum(np.abs(weights.h) ** 2, axis=-1)
    if np.any(norm == 0):
        raise ValidationError("zero-norm beamformer weights")
    return 10 * np.log10(np.abs(_hdot(weights.h, target.g)) ** 2 / norm)


@dataclass(frozen=True)
class BeamformerBank:
    """Channel 0 is the mouth beam; channels 1..K steer horizontally at 360 k / K degrees."""

    channels: tuple
    K: int
    grid: FrequencyGrid
    geometry: dict = field(default_factory=dict, compare=False)
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        if self.K < 1:
            raise ValidationError("K must be >= 1")
        if len(self.channels) != self.K + 1:
            raise ValidationError(f"bank needs K+1={self.K + 1} channels, got {len(self.channels)}")
        shapes = {ch.h.shape for ch in self.channels}
        if len(shapes) != 1:
            raise ShapeError(f"bank channels disagree on shape: {sorted(shapes)}")

    @property
    def weights(self) -> np.ndarray:
        """Stacked weights, shape (K+1, bins, M)."""
        return np.stack([ch.h for ch in self.channels])

    @property
    def num_mics(self) -> int:
        return self.channels[0].num_mics

    def with_weights(self, weights: np.ndarray, designer: str = "refined", provenance=None) -> "BeamformerBank":
        chans = [dataclasses.replace(ch, h=w, designer=designer, diagnostics={})
                 for ch, w in zip(self.channels, weights)]
        return BeamformerBank(chans, self.K, self.grid, self.geometry,
                              provenance if provenance is not None else dict(self.provenance))


def horizontal_azimuths(K: int) -> np.ndarray:
    return 360.0 * np.arange(K) / K


def _nlcmv_point_sources(geometry, grid, steer, args, c, horizontal):
    sources = []
    for null in args.get("nulls", []):
        d = Direction(float(null["azimuth_deg"]), float(null.get("elevation_deg", 0.0)))
        sources.append((steering_vector(geometry, d, grid, c=c), float(null["alpha"])))
    if horizontal:
        for null in args.get("relative_nulls", []):
            d = Direction(steer.azimuth_deg + float(null["azimuth_deg"]), float(null.get("elevation_deg", 0.0)))
            sources.append((steering_vector(geometry, d, grid, c=c), float(null["alpha"])))
        if args.get("null_mouth"):
            sources.append((steering_vector(geometry, mouth_point(geometry), grid, c=c),
                            float(args["null_mouth"])))
    return sources


def design_bank(geometry: ArrayGeometry, grid: FrequencyGrid, K: int,
                mouth: SourceDescriptor | None = None, designer: str = "nlcmv",
                designer_args: dict | None = None, c: float = SPEED_OF_SOUND) -> BeamformerBank:
    """Design the mouth beam plus ``K`` evenly spaced horizontal beams.

    ``designer_args`` keys: ``loading`` (mvdr/nlcmv), ``noise_cov`` (mvdr, defaults
    to the diffuse model), ``point_psd``, ``nulls`` / ``relative_nulls`` (lists of
    ``{"azimuth_deg", "elevation_deg", "alpha"}``), ``null_mouth`` (alpha applied to
    horizontal beams) and ``solver`` (NlcmvSolver fields).
    """
    if int(K) != K or K < 1:
        raise ValidationError(f"K must be a positive integer, got {K}")
    K = int(K)
    if designer not in ("das", "mvdr", "nlcmv"):
        raise ValidationError(f"unknown designer {designer!r}")
    args = dict(designer_args or {})
    mouth = mouth if mouth is not None else mouth_point(geometry)
    steers = [mouth] + [Direction(az, 0.0) for az in horizontal_azimuths(K)]
    loading = float(args.get("loading", DEFAULT_LOADING))
    cov = None
    if designer in ("mvdr", "nlcmv"):
        cov = args.get("noise_cov")
        cov = diffuse_covariance(geometry, grid, c=c) if cov is None else np.asarray(cov)
    channels = []
    for k, steer in enumerate(steers):
        try:
            target = steering_vector(geometry, steer, grid, c=c)
            if designer == "das":
                w = design_das(target)
            elif designer == "mvdr":
                w = design_mvdr(target, cov, loading)
            else:
                problem = NlcmvProblem(
                    target, cov,
                    _nlcmv_point_sources(geometry, grid, steer, args, c, horizontal=k > 0),
                    args.get("point_psd"),
                )
                solver = NlcmvSolver(loading=loading, **args.get("solver", {}))
                w = design_nlcmv(problem, solver)
        except GlasswaveError as exc:
            raise DesignError(k, exc) from exc
        channels.append(dataclasses.replace(w, grid=grid))
    provenance = {"designer": designer, "K": K}
    for key in ("loading", "nulls", "relative_nulls", "null_mouth"):
        if key in args:
            provenance[key] = args[key]
    return BeamformerBank(channels, K, grid, geometry.to_dict(), provenance)


def apply_bank(bank: BeamformerBank, spectrogram):
    """Beamform an (M, bins, frames) spectrogram into (K+1, bins, frames): ``y_k = h_k^H x``.

    Accepts a raw complex array or a :class:`~glasswave.spectral.Spectrogram`
    (returned as the same type, without a Nyquist row).
    """
    wrapped = dataclasses.is_dataclass(spectrogram)
    x = np.asarray(spectrogram.data if wrapped else spectrogram)
    w = bank.weights
    if x.ndim != 3 or x.shape[0] != w.shape[2] or x.shape[1] != w.shape[1]:
        raise ShapeError(f"spectrogram shape {x.shape} incompatible with bank weights {w.shape}")
    y = np.einsum("kfm,mft->kft", np.conj(w), x)
    if wrapped:
        return dataclasses.replace(spectrogram, data=y, nyquist=None)
    return y


@dataclass(frozen=True)
class BeamPattern:
    frequency_hz: float
    azimuth_deg: np.ndarray
    gain_db: np.ndarray

    def gain_at(self, azimuth_deg: float) -> float:
        az = np.mod(self.azimuth_deg, 360.0)
        i = int(np.argmin(np.abs((az - np.mod(azimuth_deg, 360.0) + 180.0) % 360.0 - 180.0)))
        return float(self.gain_db[i])


def weights_at(weights: BeamformerWeights, frequency_hz: float) -> np.ndarray:
    """Weights at ``frequency_hz``, linearly interpolated between neighbouring bins."""
    if weights.grid is None:
        raise ValidationError("weights carry no frequency grid")
    freqs = weights.grid.bin_frequencies_hz
    if not freqs[0] <= frequency_hz <= freqs[-1]:
        raise ValidationError(f"{frequency_hz} Hz is outside the weight grid [{freqs[0]}, {freqs[-1]}]")
    hit = np.flatnonzero(np.isclose(freqs, frequency_hz, rtol=0, atol=1e-9))
    if hit.size:
        return weights.h[hit[0]]
    i = int(np.searchsorted(freqs, frequency_hz)) - 1
    t = (frequency_hz - freqs[i]) / (freqs[i + 1] - freqs[i])
    return (1 - t) * weights.h[i] + t * weights.h[i + 1]


def far_field_response(geometry: ArrayGeometry, azimuth_deg: np.ndarray, frequency_hz: float,
                       elevation_deg: float = 0.0, c: float = SPEED_OF_SOUND) -> np.ndarray:
    """Far-field responses for a fan of azimuths at one frequency, shape (azimuths, M)."""
    az = np.deg2rad(np.asarray(azimuth_deg, dtype=float))
    el = np.deg2rad(elevation_deg)
    u = np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.full_like(az, np.sin(el))], axis=-1)
    rel = geometry.mics - geometry.mics[geometry.reference_index]
    tau = -(u @ rel.T) / c
    return np.exp(-2j * np.pi * frequency_hz * tau)


def beam_pattern(weights: BeamformerWeights, geometry: ArrayGeometry, frequency_hz: float,
                 azimuth_step_deg: float = 1.0, floor_db: float = PATTERN_FLOOR_DB,
                 elevation_deg: float = 0.0, c: float = SPEED_OF_SOUND) -> BeamPattern:
    """Horizontal far-field gain ``20 log10 |h^H g(theta)|``, clamped below at ``floor_db``."""
    if azimuth_step_deg <= 0:
        raise ValidationError("azimuth step must be positive")
    h = weights_at(weights, frequency_hz)
    az = np.arange(0.0, 360.0, azimuth_step_deg)
    g = far_field_response(geometry, az, frequency_hz, elevation_deg, c)
    resp = np.abs(g @ np.conj(h))
    with np.errstate(divide="ignore"):
        gain = 20 * np.log10(resp)
    return BeamPattern(float(frequency_hz), az, np.maximum(gain, floor_db))


# ---------------------------------------------------------------------------
# serialization


def _complex_to_pairs(a: np.ndarray) -> list:
    return np.stack([a.real, a.imag], axis=-1).tolist()


def bank_to_dict(bank: BeamformerBank) -> dict:
    return {
        "format": BANK_FORMAT,
        "version": 1,
        "K": bank.K,
        "grid": bank.grid.to_dict(),
        "geometry": bank.geometry,
        "provenance": bank.provenance,
        "channels": [
            {
                "index": k,
                "designer": ch.designer,
                "steer": ch.steer.to_dict() if ch.steer is not None else None,
                "weights": _complex_to_pairs(ch.h),
            }
            for k, ch in enumerate(bank.channels)
        ],
    }


def bank_from_dict(d: dict) -> BeamformerBank:
    if d.get("format") != BANK_FORMAT:
        raise ValidationError("not a beamformer bank file")
    grid = FrequencyGrid(**d["grid"])
    channels = []
    for ch in d["channels"]:
        pairs = np.asarray(ch["weights"], dtype=float)
        steer = source_from_dict(ch["steer"]) if ch.get("steer") else None
        channels.append(BeamformerWeights(pairs[..., 0] + 1j * pairs[..., 1], steer, ch["designer"], grid))
    return BeamformerBank(channels, int(d["K"]), grid, d.get("geometry", {}), d.get("provenance", {}))


def save_bank(bank: BeamformerBank, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(bank_to_dict(bank), indent=1, sort_keys=True))
    return path


def load_bank(path: str | Path) -> BeamformerBank:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read bank file {path}: {exc}") from exc
    return bank_from_dict(data)


def write_beam_pattern(pattern: BeamPattern, path: str | Path) -> Path:
    path = Path(path)
    lines = [f"# frequency_hz\t{pattern.frequency_hz:g}", "azimuth_deg\tgain_db"]
    lines += [f"{a:.6g}\t{g:.6f}" for a, g in zip(pattern.azimuth_deg, pattern.gain_db)]
    path.write_text("\n".join(lines) + "\n")
    return path


def lateral_gains(bank: BeamformerBank, geometry: ArrayGeometry, frequency_hz: float,
                  azimuths: Sequence[float] = (90.0, 270.0)) -> np.ndarray:
    """Gain (dB) of every bank channel toward the given azimuths, shape (K+1, len(azimuths))."""
    out = np.empty((len(bank.channels), len(azimuths)))
    for k, ch in enumerate(bank.channels):
        pat = beam_pattern(ch, geometry, frequency_hz, azimuth_step_deg=1.0)
        out[k] = [pat.gain_at(a) for a in azimuths]
    return out
