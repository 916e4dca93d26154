"""STFT analysis/synthesis, masking, IPD features and the separation loss."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError
from .metrics import si_sdr_grad


@dataclass(frozen=True)
class StftConfig:
    """Periodic-Hann STFT. The default keeps 256 bins of a 512-point DFT (Nyquist dropped)."""

    fft_size: int = 512
    hop: int = 256
    retained_bins: int | None = None

    def __post_init__(self):
        if self.fft_size <= 0 or self.fft_size % 2:
            raise ValidationError("fft_size must be a positive even integer")
        if self.hop <= 0 or self.fft_size % self.hop:
            raise ValidationError("hop must divide fft_size")
        if self.retained_bins is None:
            object.__setattr__(self, "retained_bins", self.fft_size // 2)
        if not 1 <= self.retained_bins <= self.fft_size // 2 + 1:
            raise ValidationError("retained_bins must lie in [1, fft_size/2 + 1]")
        ola = overlap_add_sum(self.window(), self.hop)
        if np.max(np.abs(ola - ola[0])) > 1e-10:
            raise ValidationError(f"Hann window is not COLA at hop {self.hop}")

    def window(self) -> np.ndarray:
        n = np.arange(self.fft_size)
        return 0.5 - 0.5 * np.cos(2 * np.pi * n / self.fft_size)

    @property
    def keeps_nyquist(self) -> bool:
        return self.retained_bins == self.fft_size // 2 + 1

    @property
    def pad(self) -> int:
        return self.fft_size - self.hop

    def num_frames(self, length: int) -> int:
        return 1 + -(-(length + 2 * self.pad - self.fft_size) // self.hop)

    def to_dict(self) -> dict:
        return {"fft_size": self.fft_size, "hop": self.hop, "retained_bins": self.retained_bins}


def overlap_add_sum(window: np.ndarray, hop: int) -> np.ndarray:
    """Steady-state sum of hop-shifted copies of ``window`` over one hop."""
    return window.reshape(-1, hop).sum(axis=0)


@dataclass(frozen=True)
class Spectrogram:
    """Complex STFT of shape (channels, bins, frames).

    ``nyquist`` holds the dropped Nyquist row (channels, frames) of an analysed
    signal so that an untouched round trip is exact; processing steps drop it.
    """

    data: np.ndarray
    config: StftConfig
    length: int
    nyquist: np.ndarray | None = None

    @property
    def num_channels(self) -> int:
        return self.data.shape[0]

    def channel(self, index: int) -> "Spectrogram":
        nyq = None if self.nyquist is None else self.nyquist[index:index + 1]
        return dataclasses.replace(self, data=self.data[index:index + 1], nyquist=nyq)


def _frames(x: np.ndarray, config: StftConfig) -> np.ndarray:
    n_frames = config.num_frames(x.shape[-1])
    right = (n_frames - 1) * config.hop + config.fft_size - x.shape[-1] - config.pad
    xp = np.pad(x, [(0, 0)] * (x.ndim - 1) + [(config.pad, right)])
    idx = np.arange(n_frames)[:, None] * config.hop + np.arange(config.fft_size)[None, :]
    return xp[..., idx]  # (..., frames, fft_size)


def stft(audio, config: StftConfig | None = None) -> Spectrogram:
    """Analyse mono ``(N,)`` or multichannel ``(C, N)`` audio."""
    config = config or StftConfig()
    x = np.asarray(audio, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ShapeError("audio must be (N,) or (channels, N)")
    if x.shape[1] < config.fft_size:
        raise ValidationError(f"audio of {x.shape[1]} samples is shorter than fft_size {config.fft_size}")
    frames = _frames(x, config) * config.window()
    full = np.fft.rfft(frames, axis=-1)  # (C, T, N/2+1)
    data = np.ascontiguousarray(np.swapaxes(full[..., :config.retained_bins], 1, 2))
    nyquist = None if config.keeps_nyquist else full[..., config.fft_size // 2].real.copy()
    return Spectrogram(data, config, x.shape[1], nyquist)


def _window_sum(config: StftConfig, n_frames: int) -> np.ndarray:
    total = (n_frames - 1) * config.hop + config.fft_size
    wsum = np.zeros(total)
    w = config.window()
    for t in range(n_frames):
        wsum[t * config.hop:t * config.hop + config.fft_size] += w
    return wsum


def _full_spectrum(spec: Spectrogram) -> np.ndarray:
    cfg = spec.config
    c, f, t = spec.data.shape
    full = np.zeros((c, t, cfg.fft_size // 2 + 1), dtype=complex)
    full[..., :f] = np.swapaxes(spec.data, 1, 2)
    if spec.nyquist is not None and not cfg.keeps_nyquist:
        full[..., cfg.fft_size // 2] = spec.nyquist
    return full


def istft(spec: Spectrogram) -> np.ndarray:
    """Overlap-add synthesis, shape (channels, length)."""
    cfg = spec.config
    frames = np.fft.irfft(_full_spectrum(spec), n=cfg.fft_size, axis=-1)  # (C, T, N)
    c, t, n = frames.shape
    out = np.zeros((c, (t - 1) * cfg.hop + n))
    for i in range(t):
        out[:, i * cfg.hop:i * cfg.hop + n] += frames[:, i]
    wsum = _window_sum(cfg, t)
    out = out / np.where(wsum > 1e-8, wsum, 1.0)
    return out[:, cfg.pad:cfg.pad + spec.length]


def istft_adjoint(grad_audio: np.ndarray, config: StftConfig, n_frames: int) -> np.ndarray:
    """Gradient on retained bins (bins, frames) given the gradient on ``istft`` output samples.

    Complex entries hold ``dL/dRe + j dL/dIm``.
    """
    wsum = _window_sum(config, n_frames)
    g = np.zeros(wsum.size)
    g[config.pad:config.pad + grad_audio.size] = grad_audio
    g = g / np.where(wsum > 1e-8, wsum, 1.0)
    idx = np.arange(n_frames)[:, None] * config.hop + np.arange(config.fft_size)[None, :]
    spec = np.fft.rfft(g[idx], axis=-1) * (2.0 / config.fft_size)
    # irfft discards the imaginary parts of the DC and Nyquist bins
    spec[:, 0] = spec[:, 0].real / 2.0
    half = config.fft_size // 2
    spec[:, half] = spec[:, half].real / 2.0
    return spec[:, :config.retained_bins].T


def stft_adjoint(grad_spec: np.ndarray, config: StftConfig, length: int) -> np.ndarray:
    """Gradient on input samples given ``dL/dRe + j dL/dIm`` on the retained bins (bins, frames)."""
    n = config.fft_size
    f, t = grad_spec.shape
    padded = np.zeros((t, n), dtype=complex)
    padded[:, :f] = grad_spec.T
    # d/dx of Re(conj(G) X) with X = sum_n w x e^{-j k n}: Re(sum_k G e^{+j k n}) w
    frames = np.real(np.fft.ifft(padded, axis=-1)) * n * config.window()
    total = (t - 1) * config.hop + n
    out = np.zeros(total)
    for i in range(t):
        out[i * config.hop:i * config.hop + n] += frames[i]
    return out[config.pad:config.pad + length]


def frame_energy(spec: Spectrogram) -> np.ndarray:
    """Per-frame energy (channels, frames) via Parseval on the one-sided spectrum."""
    full = _full_spectrum(spec)
    n = spec.config.fft_size
    p = np.abs(full) ** 2
    p[..., 1:n // 2] *= 2.0
    return p.sum(axis=-1) / n


def ipd_features(spec: Spectrogram, reference_channel: int = 0) -> np.ndarray:
    """Inter-channel phase differences against the reference, in (-pi, pi], shape (C-1, bins, frames)."""
    x = spec.data
    if x.shape[0] < 2:
        raise ValidationError("IPD features need at least two channels")
    others = [c for c in range(x.shape[0]) if c != reference_channel]
    diff = np.angle(x[others]) - np.angle(x[reference_channel])[None]
    ipd = np.mod(diff + np.pi, 2 * np.pi) - np.pi
    return np.where(ipd <= -np.pi, np.pi, ipd)


def apply_mask(spec_ref, mask) -> Spectrogram:
    """Scale a single-channel spectrogram by a real mask in [0, 1]; phase is kept."""
    mask = np.asarray(mask, dtype=float)
    data = spec_ref.data if isinstance(spec_ref, Spectrogram) else np.asarray(spec_ref)
    if data.ndim == 3:
        if data.shape[0] != 1:
            raise ShapeError("apply_mask expects a single-channel spectrogram")
        data = data[0]
    if mask.shape != data.shape:
        raise ShapeError(f"mask shape {mask.shape} != spectrogram shape {data.shape}")
    if np.any(mask < 0) or np.any(mask > 1) or not np.all(np.isfinite(mask)):
        raise ValidationError("mask values must lie in [0, 1]")
    out = (data * mask)[None]
    if isinstance(spec_ref, Spectrogram):
        return dataclasses.replace(spec_ref, data=out, nyquist=None)
    return Spectrogram(out, StftConfig(), 0)


@dataclass(frozen=True)
class LossBreakdown:
    l1: float
    stft: float
    neg_log_si_sdr: float
    weights: tuple = (1.0, 1.0, 1.0)

    @property
    def total(self) -> float:
        w1, w2, w3 = self.weights
        return w1 * self.l1 + w2 * self.stft + w3 * self.neg_log_si_sdr


def _padded(x: np.ndarray, n: int) -> np.ndarray:
    return x if x.size >= n else np.pad(x, (0, n - x.size))


def separation_loss(estimate, reference, weights=(1.0, 1.0, 1.0),
                    config: StftConfig | None = None) -> LossBreakdown:
    """L1 waveform + single-resolution STFT magnitude L1 + negative SI-SDR (dB)."""
    return separation_loss_grad(estimate, reference, weights, config, with_grad=False)[0]


def separation_loss_grad(estimate, reference, weights=(1.0, 1.0, 1.0),
                         config: StftConfig | None = None, with_grad: bool = True):
    """Loss breakdown and gradient of ``total`` with respect to ``estimate``."""
    config = config or StftConfig()
    est = np.asarray(estimate, dtype=float).ravel()
    ref = np.asarray(reference, dtype=float).ravel()
    if est.shape != ref.shape:
        raise ShapeError(f"estimate length {est.size} != reference length {ref.size}")
    if not np.any(ref):
        raise ValidationError("separation loss needs a nonzero reference")
    w1, w2, w3 = (float(w) for w in weights)
    diff = est - ref
    l1 = float(np.mean(np.abs(diff)))
    n = max(est.size, config.fft_size)
    s_est = stft(_padded(est, n), config).data[0]
    s_ref = stft(_padded(ref, n), config).data[0]
    mag_diff = np.abs(s_est) - np.abs(s_ref)
    stft_l1 = float(np.mean(np.abs(mag_diff)))
    score, sdr_grad = si_sdr_grad(est, ref)
    loss = LossBreakdown(l1, stft_l1, -score, (w1, w2, w3))
    if not with_grad:
        return loss, None
    grad = w1 * np.sign(diff) / est.size
    mag = np.abs(s_est)
    phase = np.divide(s_est, mag, out=np.zeros_like(s_est), where=mag > 0)
    g_spec = np.sign(mag_diff) * phase / mag_diff.size
    grad = grad + w2 * stft_adjoint(g_spec, config, n)[:est.size]
    grad = grad - w3 * sdr_grad
    return loss, grad
