"""Shoebox image-source room simulation with fractional-delay taps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .errors import DegenerateGeometryError, PlacementError, RoomError
from .geometry import SPEED_OF_SOUND, ArrayGeometry, mouth_point, to_world

FD_TAPS = 81
_FD_HALF = FD_TAPS // 2
_FD_WINDOW = FD_TAPS + 1  # Hann support, keeps every tap strictly inside the window

ROOM_MIN = (5.0, 5.0, 2.0)
ROOM_MAX = (10.0, 10.0, 6.0)
WALL_MARGIN = 0.3


@dataclass(frozen=True)
class RoomSpec:
    """Shoebox room. Reflection coefficients are amplitude factors ordered
    ``(x=0, x=Lx, y=0, y=Ly, z=0, z=Lz)``."""

    dimensions: tuple
    reflection: tuple = (0.0,) * 6
    max_order: int = 17
    sample_rate_hz: float = 16000.0
    energy_cutoff_db: float | None = 60.0

    def __post_init__(self):
        dims = tuple(float(v) for v in self.dimensions)
        if len(dims) != 3 or min(dims) <= 0:
            raise RoomError(f"room dimensions must be three positive lengths, got {self.dimensions}")
        refl = self.reflection
        if np.isscalar(refl):
            refl = (refl,) * 6
        refl = tuple(float(b) for b in refl)
        if len(refl) != 6 or any(not 0.0 <= b < 1.0 for b in refl):
            raise RoomError("need 6 reflection coefficients in [0, 1)")
        if self.max_order < 0:
            raise RoomError("max_order must be nonnegative")
        if self.sample_rate_hz <= 0:
            raise RoomError("sample rate must be positive")
        object.__setattr__(self, "dimensions", dims)
        object.__setattr__(self, "reflection", refl)
        object.__setattr__(self, "max_order", int(self.max_order))

    def contains(self, points, margin: float = 0.0) -> bool:
        p = np.atleast_2d(points)
        return bool(np.all(p > margin) and np.all(p < np.asarray(self.dimensions) - margin))

    def to_dict(self) -> dict:
        return {
            "dimensions": list(self.dimensions),
            "reflection": list(self.reflection),
            "max_order": self.max_order,
            "sample_rate_hz": self.sample_rate_hz,
            "energy_cutoff_db": self.energy_cutoff_db,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RoomSpec":
        return cls(tuple(d["dimensions"]), tuple(d["reflection"]), d.get("max_order", 17),
                   d.get("sample_rate_hz", 16000.0), d.get("energy_cutoff_db", 60.0))


@dataclass(frozen=True)
class ArrayPose:
    position: tuple
    yaw_deg: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))

    def to_dict(self) -> dict:
        return {"position": list(self.position), "yaw_deg": float(self.yaw_deg)}


@dataclass
class RirSet:
    """Impulse responses from one source to every mic, shape (M, taps).

    Tap ``i`` corresponds to time ``(i - lead_samples) / fs``.
    """

    rirs: np.ndarray
    sample_rate_hz: float
    source_position: np.ndarray
    mic_positions: np.ndarray
    room: RoomSpec
    lead_samples: int = 0
    images: dict = field(default_factory=dict, repr=False)

    @property
    def num_mics(self) -> int:
        return self.rirs.shape[0]


def eyring_reflection(rt60_s: float, dimensions, c: float = SPEED_OF_SOUND) -> float:
    """Uniform amplitude reflection coefficient giving ``rt60_s`` under Eyring's formula."""
    lx, ly, lz = dimensions
    volume = lx * ly * lz
    surface = 2 * (lx * ly + lx * lz + ly * lz)
    if rt60_s <= 0:
        return 0.0
    # RT60 = 24 ln(10) V / (c S (-ln(1 - a))),  beta = sqrt(1 - a)
    return float(np.exp(-12.0 * np.log(10.0) * volume / (c * surface * rt60_s)))


def _axis_images(src: float, length: float, order: int, b_lo: float, b_hi: float):
    n = np.arange(-order, order + 1)
    q = np.array([0, 1])
    n, q = np.meshgrid(n, q, indexing="ij")
    n, q = n.ravel(), q.ravel()
    coord = (1 - 2 * q) * src + 2 * n * length
    hits_lo = np.abs(n - q)
    hits_hi = np.abs(n)
    with np.errstate(divide="ignore", invalid="ignore"):
        amp = np.power(b_lo, hits_lo) * np.power(b_hi, hits_hi)
    return coord, hits_lo + hits_hi, amp


def image_sources(room: RoomSpec, source) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All image positions up to ``room.max_order`` reflections with nonzero weight.

    Returns ``(positions (I, 3), orders (I,), amplitudes (I,))``; the direct path is first.
    """
    src = np.asarray(source, dtype=float)
    axes = [
        _axis_images(src[a], room.dimensions[a], room.max_order,
                     room.reflection[2 * a], room.reflection[2 * a + 1])
        for a in range(3)
    ]
    (cx, ox, ax), (cy, oy, ay), (cz, oz, az) = axes
    order = ox[:, None, None] + oy[None, :, None] + oz[None, None, :]
    amp = ax[:, None, None] * ay[None, :, None] * az[None, None, :]
    keep = (order <= room.max_order) & (amp > 0)
    i, j, k = np.nonzero(keep)
    pos = np.stack([cx[i], cy[j], cz[k]], axis=-1)
    orders = order[i, j, k]
    amps = amp[i, j, k]
    first = np.argsort(orders, kind="stable")
    return pos[first], orders[first], amps[first]


def fractional_delay_taps(delay: np.ndarray):
    """Hann-windowed sinc taps for each delay; returns ``(indices, values)`` of shape (..., 81)."""
    center = np.round(delay).astype(np.int64)
    offsets = np.arange(-_FD_HALF, _FD_HALF + 1)
    idx = center[..., None] + offsets
    t = idx - delay[..., None]
    window = 0.5 * (1.0 + np.cos(2.0 * np.pi * t / _FD_WINDOW))
    return idx, window * np.sinc(t)


def simulate_rir(room: RoomSpec, source, geometry: ArrayGeometry, array_pose: ArrayPose,
                 c: float = SPEED_OF_SOUND, lead_samples: int = 0) -> RirSet:
    """Image-source impulse responses from ``source`` (room coordinates) to each mic.

    Each image contributes ``(prod of wall coefficients) / (4 pi d)`` at delay
    ``d / c * fs`` through an 81-tap windowed-sinc fractional delay. Images
    beyond ``room.max_order`` reflections, or quieter than the direct path by more
    than ``room.energy_cutoff_db``, are skipped. Taps before ``-lead_samples`` are
    dropped; a positive lead keeps the sinc's pre-ringing for very close sources.
    """
    src = np.asarray(source, dtype=float).reshape(3)
    mics = to_world(geometry.mics, array_pose.position, array_pose.yaw_deg)
    if not room.contains(src):
        raise RoomError(f"source {src.tolist()} is outside the room")
    if not room.contains(mics):
        raise RoomError("microphones are outside the room")
    direct = np.linalg.norm(mics - src, axis=1)
    if np.any(direct < 1e-6):
        raise DegenerateGeometryError("source coincides with a microphone")
    fs = room.sample_rate_hz
    pos, orders, amps = image_sources(room, src)
    dist = np.linalg.norm(pos[:, None, :] - mics[None, :, :], axis=-1)  # (I, M)
    gain = amps[:, None] / (4 * np.pi * dist)
    keep = np.ones_like(gain, dtype=bool)
    if room.energy_cutoff_db is not None:
        floor = (1.0 / (4 * np.pi * direct)) * 10 ** (-room.energy_cutoff_db / 20.0)
        keep = gain >= floor[None, :] * (1 - 1e-12)
    delay = dist / c * fs + lead_samples
    length = int(np.ceil(np.max(np.where(keep, delay, 0.0)))) + _FD_HALF + 2
    m_count = mics.shape[0]
    rirs = np.zeros((m_count, length))
    for m in range(m_count):
        sel = keep[:, m]
        idx, val = fractional_delay_taps(delay[sel, m])
        val = val * gain[sel, m][:, None]
        ok = idx >= 0
        rirs[m] = np.bincount(idx[ok], weights=val[ok], minlength=length)[:length]
    images = {"positions": pos, "orders": orders, "amplitudes": gain, "delays": delay - lead_samples,
              "kept": keep}
    return RirSet(rirs, fs, src, mics, room, int(lead_samples), images)


def convolve_multichannel(signal: np.ndarray, rirs: RirSet, sample_rate_hz: float | None = None) -> np.ndarray:
    """Full FFT convolution of a mono signal with every RIR, shape (M, len(signal) + taps - 1)."""
    if sample_rate_hz is not None and sample_rate_hz != rirs.sample_rate_hz:
        raise RoomError(f"sample-rate mismatch: signal {sample_rate_hz} Hz vs RIR {rirs.sample_rate_hz} Hz")
    x = np.asarray(signal, dtype=float)
    if x.ndim != 1:
        raise RoomError("signal must be mono")
    return fftconvolve(x[None, :], rirs.rirs, axes=1)


@dataclass(frozen=True)
class RoomRanges:
    min_dims: tuple = ROOM_MIN
    max_dims: tuple = ROOM_MAX
    rt60_s: tuple = (0.2, 0.6)
    max_order: int = 17
    energy_cutoff_db: float | None = 60.0
    sample_rate_hz: float = 16000.0
    partner_distance: tuple = (1.0, 2.5)
    partner_azimuth_deg: float = 45.0
    bystander_distance: tuple = (1.5, 4.0)
    array_height: tuple = (1.2, 1.8)
    max_tries: int = 1000

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


@dataclass
class Placements:
    pose: ArrayPose
    wearer: np.ndarray
    partner: np.ndarray
    bystanders: list
    noise: np.ndarray

    def sources(self) -> dict:
        out = {"wearer": self.wearer, "partner": self.partner}
        for i, b in enumerate(self.bystanders):
            out[f"bystander_{i + 1}"] = b
        out["noise"] = self.noise
        return out

    def to_dict(self) -> dict:
        return {
            "array_pose": self.pose.to_dict(),
            "wearer": np.asarray(self.wearer).tolist(),
            "partner": np.asarray(self.partner).tolist(),
            "bystanders": [np.asarray(b).tolist() for b in self.bystanders],
            "noise": np.asarray(self.noise).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Placements":
        pose = ArrayPose(tuple(d["array_pose"]["position"]), d["array_pose"]["yaw_deg"])
        return cls(pose, np.array(d["wearer"]), np.array(d["partner"]),
                   [np.array(b) for b in d["bystanders"]], np.array(d["noise"]))


def _ring_point(rng, center, yaw_deg, az_lo, az_hi, dist_lo, dist_hi, z):
    az = np.deg2rad(yaw_deg + rng.uniform(az_lo, az_hi))
    r = rng.uniform(dist_lo, dist_hi)
    return np.array([center[0] + r * np.cos(az), center[1] + r * np.sin(az), z])


def sample_room(rng: np.random.Generator, ranges: RoomRanges | None = None, bystanders: int = 0,
                geometry: ArrayGeometry | None = None) -> tuple[RoomSpec, Placements]:
    """Draw a room and source layout; every point stays 0.3 m from the walls."""
    ranges = ranges or RoomRanges()
    dims = tuple(float(v) for v in rng.uniform(ranges.min_dims, ranges.max_dims))
    beta = eyring_reflection(rng.uniform(*ranges.rt60_s), dims)
    room = RoomSpec(dims, (min(beta, 0.999),) * 6, ranges.max_order, ranges.sample_rate_hz,
                    ranges.energy_cutoff_db)
    lo, hi = np.full(3, WALL_MARGIN), np.asarray(dims) - WALL_MARGIN
    mouth = np.asarray(mouth_point(geometry).xyz)
    mics = geometry.mics if geometry is not None else np.zeros((1, 3))
    for _ in range(ranges.max_tries):
        center = np.array([rng.uniform(lo[0], hi[0]), rng.uniform(lo[1], hi[1]),
                           rng.uniform(*ranges.array_height)])
        yaw = float(rng.uniform(0.0, 360.0))
        pose = ArrayPose(tuple(center), yaw)
        wearer = to_world(mouth, center, yaw)[0]
        partner = _ring_point(rng, center, yaw, -ranges.partner_azimuth_deg, ranges.partner_azimuth_deg,
                              *ranges.partner_distance, center[2] + rng.uniform(-0.2, 0.2))
        byst = [
            _ring_point(rng, center, 0.0, 0.0, 360.0, *ranges.bystander_distance, rng.uniform(1.2, 1.9))
            for _ in range(bystanders)
        ]
        noise = rng.uniform(lo, hi)
        points = np.vstack([to_world(mics, center, yaw), wearer, partner, noise] + byst)
        if room.contains(points, WALL_MARGIN):
            return room, Placements(pose, wearer, partner, byst, noise)
    raise PlacementError(f"no valid placement in {ranges.max_tries} tries for room {dims}")
