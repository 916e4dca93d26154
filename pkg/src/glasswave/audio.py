"""WAV I/O, audio assets and the built-in synthetic fixture corpus."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import AssetError


def write_wav(path: str | Path, audio: np.ndarray, sample_rate: int) -> Path:
    """Write (channels, N) or (N,) audio as IEEE float-32 WAV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    x = np.asarray(audio, dtype=np.float32)
    wavfile.write(path, int(sample_rate), x.T if x.ndim == 2 else x)
    return path


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a WAV file as float64, shape (channels, N) or (N,) for mono."""
    try:
        sr, data = wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise AssetError(f"cannot read {path}: {exc}") from exc
    if np.issubdtype(data.dtype, np.integer):
        data = data / float(np.iinfo(data.dtype).max)
    data = np.asarray(data, dtype=float)
    return (data.T if data.ndim == 2 else data), int(sr)


@dataclass
class AudioAsset:
    samples: np.ndarray
    sample_rate: int
    kind: str = "speech"
    active: list = field(default_factory=list)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 1:
            raise AssetError("assets must be mono")
        if not self.active:
            self.active = [(0, self.samples.size)]


def pink_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    """1/f noise by spectral shaping of white noise, unit RMS."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spec.size, dtype=float)
    f[0] = 1.0
    x = np.fft.irfft(spec / np.sqrt(f), n=n)
    x -= x.mean()
    return x / np.sqrt(np.mean(x**2))


def _speech_like(rng: np.random.Generator, n: int, fs: int) -> np.ndarray:
    """Harmonic complex with a gliding pitch and syllable-rate envelope."""
    t = np.arange(n) / fs
    f0 = rng.uniform(90.0, 260.0)
    glide = 1.0 + 0.15 * np.sin(2 * np.pi * rng.uniform(0.3, 1.2) * t + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * np.cumsum(f0 * glide) / fs
    x = np.zeros(n)
    tilt = rng.uniform(0.6, 1.0)
    for k in range(1, int(0.45 * fs / (f0 * 1.15))):
        x += tilt**k / k * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    rate = rng.uniform(3.0, 6.0)
    env = np.clip(np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)), 0.0, None) ** 0.7
    x = x * (0.15 + env)
    # light fricative-like noise bursts
    x += 0.05 * rng.standard_normal(n) * (env > 0.9)
    edge = int(0.01 * fs)
    ramp = np.ones(n)
    ramp[:edge] = np.linspace(0, 1, edge)
    ramp[-edge:] = np.linspace(1, 0, edge)
    x *= ramp
    return x / np.sqrt(np.mean(x**2))


def _noise_burst(rng: np.random.Generator, n: int, fs: int) -> np.ndarray:
    x = pink_noise(n, rng) if rng.uniform() < 0.5 else rng.standard_normal(n)
    env = 0.5 + 0.5 * np.abs(np.sin(2 * np.pi * rng.uniform(0.2, 2.0) * np.arange(n) / fs))
    x = x * env
    return x / np.sqrt(np.mean(x**2))


FIXTURE_SPEECH = 14
FIXTURE_NOISE = 6


def fixture_assets(sample_rate: int = 16000, seed: int = 0) -> dict[str, AudioAsset]:
    """Deterministic 20-clip corpus: 14 speech-like tone complexes and 6 noise bursts."""
    rng = np.random.default_rng(seed)
    assets = {}
    for i in range(FIXTURE_SPEECH):
        n = int(rng.uniform(1.2, 2.2) * sample_rate)
        assets[f"fixture:speech_{i:02d}"] = AudioAsset(_speech_like(rng, n, sample_rate), sample_rate, "speech")
    for i in range(FIXTURE_NOISE):
        n = int(rng.uniform(2.0, 4.0) * sample_rate)
        assets[f"fixture:noise_{i:02d}"] = AudioAsset(_noise_burst(rng, n, sample_rate), sample_rate, "noise")
    return assets


def load_asset_index(path: str | Path | None, sample_rate: int = 16000) -> dict[str, AudioAsset]:
    """Load a JSON asset index ``[{"id", "path", "kind", "active"?}, ...]``.

    ``None`` returns the built-in fixture corpus. Relative paths resolve against
    the index file's directory.
    """
    if path is None:
        return fixture_assets(sample_rate)
    path = Path(path)
    try:
        entries = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise AssetError(f"cannot read asset index {path}: {exc}") from exc
    assets = {}
    for e in entries:
        wav = Path(e["path"])
        if not wav.is_absolute():
            wav = path.parent / wav
        x, sr = read_wav(wav)
        if x.ndim == 2:
            x = x[0]
        if sr != sample_rate:
            raise AssetError(f"{wav}: sample rate {sr} != {sample_rate}")
        active = [tuple(a) for a in e.get("active", [])]
        assets[e["id"]] = AudioAsset(x, sr, e.get("kind", "speech"), active)
    return assets


def fit_length(x: np.ndarray, n: int) -> np.ndarray:
    """Trim or loop ``x`` to exactly ``n`` samples."""
    if x.size >= n:
        return x[:n].copy()
    reps = -(-n // x.size)
    return np.tile(x, reps)[:n]
