"""Microphone array geometry, propagation models and noise-field coherence."""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence, Union

import numpy as np
import yaml

from .errors import DegenerateGeometryError, GeometryError

SPEED_OF_SOUND = 343.0
MAX_APERTURE_M = 0.5

FAR_FIELD = "far-field"
NEAR_FIELD = "near-field"


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ArrayGeometry:
    """Microphone positions (meters, array-centered frame) and reference channel.

    The frame is x forward, y left, z up. ``mouth`` is the wearer's mouth
    position in the same frame, used by the mouth beam and the simulator.
    """

    mics: np.ndarray
    reference_index: int = 0
    name: str = "array"
    mouth: np.ndarray | None = None

    def __post_init__(self):
        mics = np.asarray(self.mics, dtype=float)
        if mics.ndim == 1 and mics.size == 3:
            mics = mics[None, :]
        if mics.ndim != 2 or mics.shape[1] != 3 or mics.shape[0] < 1:
            raise GeometryError(f"mics must be an (M, 3) array with M >= 1, got shape {mics.shape}")
        if not np.all(np.isfinite(mics)):
            raise GeometryError("mic positions must be finite")
        ref = int(self.reference_index)
        if not 0 <= ref < mics.shape[0]:
            raise GeometryError(f"reference_index {ref} out of range for {mics.shape[0]} mics")
        if mics.shape[0] > 1:
            dist = pairwise_distances(mics)
            if dist.max() >= MAX_APERTURE_M:
                raise GeometryError(
                    f"mic spacing {dist.max():.3f} m exceeds wearable bound {MAX_APERTURE_M} m"
                )
        object.__setattr__(self, "mics", _frozen(mics))
        object.__setattr__(self, "reference_index", ref)
        if self.mouth is not None:
            mouth = np.asarray(self.mouth, dtype=float).reshape(3)
            object.__setattr__(self, "mouth", _frozen(mouth))

    @property
    def num_mics(self) -> int:
        return self.mics.shape[0]

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "reference_index": self.reference_index,
            "mics": self.mics.tolist(),
        }
        if self.mouth is not None:
            out["mouth"] = self.mouth.tolist()
        return out


@dataclass(frozen=True)
class FrequencyGrid:
    """Discrete STFT frequency axis; bins ``0 .. retained_bins-1`` of an ``fft_size`` DFT."""

    sample_rate_hz: float = 16000.0
    fft_size: int = 512
    retained_bins: int | None = None

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise GeometryError("sample_rate_hz must be positive")
        if self.fft_size <= 0 or self.fft_size % 2:
            raise GeometryError("fft_size must be a positive even integer")
        if self.retained_bins is None:
            object.__setattr__(self, "retained_bins", self.fft_size // 2)
        if not 1 <= self.retained_bins <= self.fft_size // 2 + 1:
            raise GeometryError("retained_bins must lie in [1, fft_size/2 + 1]")

    @property
    def num_bins(self) -> int:
        return int(self.retained_bins)

    @property
    def bin_frequencies_hz(self) -> np.ndarray:
        return np.arange(self.num_bins) * (self.sample_rate_hz / self.fft_size)

    @property
    def omega(self) -> np.ndarray:
        return 2 * np.pi * self.bin_frequencies_hz

    def to_dict(self) -> dict:
        return {
            "sample_rate_hz": float(self.sample_rate_hz),
            "fft_size": int(self.fft_size),
            "retained_bins": int(self.retained_bins),
        }


@dataclass(frozen=True)
class Direction:
    """Far-field source direction; azimuth counter-clockwise from +x, elevation up from the xy-plane."""

    azimuth_deg: float
    elevation_deg: float = 0.0

    def unit_vector(self) -> np.ndarray:
        az = np.deg2rad(self.azimuth_deg)
        el = np.deg2rad(self.elevation_deg)
        return np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])

    def to_dict(self) -> dict:
        return {"type": "direction", "azimuth_deg": float(self.azimuth_deg),
                "elevation_deg": float(self.elevation_deg)}


@dataclass(frozen=True)
class Point:
    """Near-field source location in the array frame (meters)."""

    xyz: tuple

    def __post_init__(self):
        object.__setattr__(self, "xyz", tuple(float(v) for v in np.asarray(self.xyz).reshape(3)))

    def to_dict(self) -> dict:
        return {"type": "point", "xyz": list(self.xyz)}


SourceDescriptor = Union[Direction, Point]


def source_from_dict(d: dict) -> SourceDescriptor:
    if d.get("type") == "point":
        return Point(d["xyz"])
    return Direction(d["azimuth_deg"], d.get("elevation_deg", 0.0))


@dataclass(frozen=True)
class ChannelResponse:
    """Complex response ``g`` of shape (bins, M) from one source to every mic."""

    g: np.ndarray
    source: SourceDescriptor | None = None
    model: str = FAR_FIELD
    frequencies_hz: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        g = np.asarray(self.g, dtype=complex)
        if g.ndim == 1:
            g = g[None, :]
        if not np.all(np.isfinite(g)):
            raise GeometryError("channel response must be finite")
        object.__setattr__(self, "g", _frozen(g, complex))

    @property
    def num_bins(self) -> int:
        return self.g.shape[0]

    @property
    def num_mics(self) -> int:
        return self.g.shape[1]


def pairwise_distances(mics: np.ndarray) -> np.ndarray:
    diff = mics[:, None, :] - mics[None, :, :]
    return np.sqrt(np.sum(diff**2, axis=-1))


def steering_vector(geometry: ArrayGeometry, source: SourceDescriptor, grid: FrequencyGrid,
                    model: str | None = None, c: float = SPEED_OF_SOUND) -> ChannelResponse:
    """Relative transfer function from ``source`` to every mic, normalized to the reference mic.

    Far-field entries are ``exp(-j w tau_m)`` with ``tau_m`` the plane-wave delay
    relative to the reference mic. Near-field entries follow a spherical wave,
    ``(d_ref / d_m) exp(-j w (d_m - d_ref) / c)``.
    """
    if model is None:
        model = NEAR_FIELD if isinstance(source, Point) else FAR_FIELD
    omega = grid.omega[:, None]
    mics = geometry.mics
    ref = geometry.reference_index
    if model == FAR_FIELD:
        if isinstance(source, Point):
            u = np.asarray(source.xyz, dtype=float)
        else:
            u = source.unit_vector()
        norm = np.linalg.norm(u)
        if norm == 0:
            raise DegenerateGeometryError("far-field model needs a nonzero direction")
        u = u / norm
        # A plane wave from direction u reaches mic m earlier by (p_m . u) / c.
        tau = -((mics - mics[ref]) @ u) / c
        g = np.exp(-1j * omega * tau[None, :])
    elif model == NEAR_FIELD:
        if not isinstance(source, Point):
            raise GeometryError("near-field model needs a point source")
        d = np.linalg.norm(mics - np.asarray(source.xyz), axis=1)
        if np.any(d < 1e-9):
            raise DegenerateGeometryError("near-field source coincides with a microphone")
        g = (d[ref] / d)[None, :] * np.exp(-1j * omega * (d - d[ref])[None, :] / c)
    else:
        raise GeometryError(f"unknown propagation model {model!r}")
    return ChannelResponse(g, source=source, model=model, frequencies_hz=grid.bin_frequencies_hz)


def diffuse_covariance(geometry: ArrayGeometry, grid: FrequencyGrid,
                       c: float = SPEED_OF_SOUND) -> np.ndarray:
    """Spherically isotropic noise coherence, shape (bins, M, M), entries ``sin(x)/x`` with ``x = w d_ij / c``."""
    dist = pairwise_distances(geometry.mics)
    # np.sinc is sin(pi x)/(pi x); w d / c = pi * (2 f d / c)
    x = 2.0 * grid.bin_frequencies_hz[:, None, None] * dist[None, :, :] / c
    cov = np.sinc(x).astype(complex)
    idx = np.arange(geometry.num_mics)
    cov[:, idx, idx] = 1.0
    return cov


def _geometry_from_mapping(cfg: dict) -> ArrayGeometry:
    if not isinstance(cfg, dict) or "mics" not in cfg:
        raise GeometryError("geometry config needs a 'mics' list")
    try:
        mics = np.array(cfg["mics"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise GeometryError(f"malformed mic list: {exc}") from exc
    return ArrayGeometry(
        mics=mics,
        reference_index=int(cfg.get("reference_index", 0)),
        name=str(cfg.get("name", "array")),
        mouth=cfg.get("mouth"),
    )


def load_geometry(path: str | Path) -> ArrayGeometry:
    """Read a YAML/JSON geometry file with ``name``, ``reference_index`` and ``mics``."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise GeometryError(f"cannot read geometry file {path}: {exc}") from exc
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise GeometryError(f"malformed geometry file {path}: {exc}") from exc
    return _geometry_from_mapping(cfg)


def default_geometry() -> ArrayGeometry:
    """Bundled 7-mic glasses-like layout (illustrative coordinates only)."""
    text = resources.files("glasswave").joinpath("presets/glasses7.yaml").read_text()
    return _geometry_from_mapping(yaml.safe_load(text))


def mouth_point(geometry: ArrayGeometry | None = None) -> Point:
    if geometry is None or geometry.mouth is None:
        # 8 cm from the array origin, 45 degrees down-front
        return Point((0.08 * np.sqrt(0.5), 0.0, -0.08 * np.sqrt(0.5)))
    return Point(geometry.mouth)


def random_geometry(rng: np.random.Generator, num_mics: int | None = None,
                    half_width: float = 0.08) -> ArrayGeometry:
    """Random wearable-scale layout, used by property tests and sweeps."""
    if num_mics is None:
        num_mics = int(rng.integers(2, 9))
    mics = rng.uniform(-half_width, half_width, size=(num_mics, 3))
    return ArrayGeometry(mics, reference_index=0, name="random")


def rotation_z(yaw_deg: float) -> np.ndarray:
    a = np.deg2rad(yaw_deg)
    return np.array([[np.cos(a), -np.sin(a), 0.0], [np.sin(a), np.cos(a), 0.0], [0.0, 0.0, 1.0]])


def to_world(points: Sequence, position: Sequence[float], yaw_deg: float) -> np.ndarray:
    """Map array-frame points to room coordinates for an array at ``position`` rotated by ``yaw_deg``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return pts @ rotation_z(yaw_deg).T + np.asarray(position, dtype=float)
