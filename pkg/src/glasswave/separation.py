"""Oracle-mask directional separation and gradient refinement of bank weights.

The pipeline is: multichannel STFT -> beamformer bank -> banked channel 0 as
the reference spectrogram -> wearer/partner masks -> inverse STFT. Refinement
descends the separation loss with respect to the complex bank weights, with
the oracle masks recomputed and then held fixed at every iteration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .beamforming import BeamformerBank, apply_bank
from .errors import RefinementError, ShapeError, ValidationError
from .spectral import (
    Spectrogram,
    StftConfig,
    apply_mask,
    istft,
    istft_adjoint,
    separation_loss_grad,
    stft,
)

log = logging.getLogger(__name__)

MASK_EPS = 1e-8
TALKERS = ("wearer", "partner")


def _values(spec) -> np.ndarray:
    return np.asarray(spec.data if isinstance(spec, Spectrogram) else spec)


def oracle_mask(mix_spec_ref, target_spec_ref, interferer_spec_ref, eps: float = MASK_EPS) -> np.ndarray:
    """Ideal ratio mask ``|T| / (|T| + |I| + eps)``."""
    t = np.abs(_values(target_spec_ref))
    i = np.abs(_values(interferer_spec_ref))
    mix = _values(mix_spec_ref)
    if t.shape != i.shape or t.shape != mix.shape:
        raise ShapeError(f"mask inputs disagree: {mix.shape}, {t.shape}, {i.shape}")
    mask = t / (t + i + eps)
    return mask[0] if mask.ndim == 3 else mask


def stft_config_for(bank: BeamformerBank, hop: int | None = None) -> StftConfig:
    n = bank.grid.fft_size
    return StftConfig(n, hop or n // 2, bank.grid.retained_bins)


@dataclass
class SeparationResult:
    wearer_estimate: np.ndarray
    partner_estimate: np.ndarray
    masks: dict
    bank_id: str = ""


def _bank_id(bank: BeamformerBank) -> str:
    p = bank.provenance
    return str(p.get("id") or f"{p.get('designer', bank.channels[0].designer)}-K{bank.K}")


def separate(bank: BeamformerBank, scene, mask_source: str = "oracle", masks: dict | None = None,
             config: StftConfig | None = None) -> SeparationResult:
    """Separate wearer and partner from ``scene.mixture`` (M, N).

    ``mask_source="oracle"`` derives ideal ratio masks from the scene stems on
    banked channel 0; ``"provided"`` takes ``masks={"wearer": ..., "partner": ...}``.
    """
    config = config or stft_config_for(bank)
    mixture = np.asarray(scene.mixture, dtype=float)
    if mixture.shape[0] != bank.num_mics:
        raise ShapeError(f"scene has {mixture.shape[0]} channels, bank expects {bank.num_mics}")
    banked = apply_bank(bank, stft(mixture, config))
    ref = banked.channel(0)
    if mask_source == "oracle":
        masks = {}
        for who in TALKERS:
            target = apply_bank(bank, stft(scene.stems[who], config)).data[0]
            masks[who] = oracle_mask(ref.data[0], target, ref.data[0] - target)
    elif mask_source == "provided":
        if not masks or any(who not in masks for who in TALKERS):
            raise ValidationError("provided masks need 'wearer' and 'partner' entries")
    else:
        raise ValidationError(f"unknown mask source {mask_source!r}")
    est = {who: istft(apply_mask(ref, masks[who]))[0] for who in TALKERS}
    return SeparationResult(est["wearer"], est["partner"], masks, _bank_id(bank))


# ---------------------------------------------------------------------------
# refinement


@dataclass(frozen=True)
class RefinementConfig:
    step_size: float = 1e-3
    iterations: int = 50
    loss_weights: tuple = (1.0, 1.0, 1.0)
    gradient_mode: str = "analytic"
    optimizer: str = "adam"
    fd_step: float = 1e-5

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValidationError("step_size must be positive")
        if self.iterations < 0:
            raise ValidationError("iterations must be nonnegative")
        if self.gradient_mode not in ("analytic", "finite-difference"):
            raise ValidationError(f"unknown gradient mode {self.gradient_mode!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        return {"step_size": self.step_size, "iterations": self.iterations,
                "loss_weights": list(self.loss_weights), "gradient_mode": self.gradient_mode,
                "optimizer": self.optimizer}


@dataclass
class _Prepared:
    mix: np.ndarray  # (M, F, T)
    stems: dict  # talker -> (M, F, T)
    refs: dict  # talker -> reference-mic waveform
    length: int
    config: StftConfig


def prepare_scene(scene, config: StftConfig, reference_index: int) -> _Prepared:
    mix = stft(np.asarray(scene.mixture, dtype=float), config).data
    stems = {who: stft(scene.stems[who], config).data for who in TALKERS}
    refs = {who: np.asarray(scene.stems[who], dtype=float)[reference_index] for who in TALKERS}
    return _Prepared(mix, stems, refs, scene.mixture.shape[1], config)


def _beam(h: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.einsum("fm,mft->ft", np.conj(h), x)


def scene_masks(h0: np.ndarray, data: _Prepared) -> dict:
    y = _beam(h0, data.mix)
    out = {}
    for who in TALKERS:
        t = _beam(h0, data.stems[who])
        out[who] = oracle_mask(y, t, y - t)
    return out


def scene_loss(h0: np.ndarray, data: _Prepared, weights, masks: dict | None = None,
               with_grad: bool = True):
    """Total wearer+partner loss for mouth-beam weights ``h0`` (F, M) and its gradient.

    The gradient is returned as ``dL/dRe h + j dL/dIm h``.
    """
    masks = masks if masks is not None else scene_masks(h0, data)
    cfg = data.config
    y = _beam(h0, data.mix)
    n_frames = y.shape[1]
    total = 0.0
    parts = {}
    grad_y = np.zeros_like(y)
    for who in TALKERS:
        e = masks[who] * y
        est = _istft_plain(e, cfg, data.length)
        loss, g_est = separation_loss_grad(est, data.refs[who], weights, cfg, with_grad)
        parts[who] = loss
        total += loss.total
        if with_grad:
            grad_y += masks[who] * istft_adjoint(g_est, cfg, n_frames)
    if not with_grad:
        return total, None, parts
    grad_h = np.einsum("ft,mft->fm", np.conj(grad_y), data.mix)
    return total, grad_h, parts


def _istft_plain(e: np.ndarray, cfg: StftConfig, length: int) -> np.ndarray:
    return istft(Spectrogram(e[None], cfg, length))[0]


def finite_difference_gradient(h0: np.ndarray, data: _Prepared, weights, masks: dict,
                               step: float = 1e-5) -> np.ndarray:
    """Central differences over the real and imaginary part of every weight."""
    grad = np.zeros_like(h0)
    base = h0.copy()
    for idx in np.ndindex(h0.shape):
        for unit in (1.0, 1j):
            hp = base.copy()
            hm = base.copy()
            hp[idx] += step * unit
            hm[idx] -= step * unit
            lp = scene_loss(hp, data, weights, masks, with_grad=False)[0]
            lm = scene_loss(hm, data, weights, masks, with_grad=False)[0]
            d = (lp - lm) / (2 * step)
            grad[idx] += d if unit == 1.0 else 1j * d
    return grad


def batch_loss_and_gradient(weights: np.ndarray, prepared: list, refinement: RefinementConfig):
    """Mean loss over scenes and its gradient for the full (K+1, F, M) weight tensor."""
    h0 = weights[0]
    losses, grads = [], []
    for data in prepared:
        masks = scene_masks(h0, data)
        if refinement.gradient_mode == "analytic":
            loss, g, _ = scene_loss(h0, data, refinement.loss_weights, masks)
        else:
            loss = scene_loss(h0, data, refinement.loss_weights, masks, with_grad=False)[0]
            g = finite_difference_gradient(h0, data, refinement.loss_weights, masks, refinement.fd_step)
        losses.append(loss)
        grads.append(g)
    grad = np.zeros_like(weights)
    # only channel 0 feeds the separation output; the other channels get zero gradient
    grad[0] = np.sum(np.stack(grads), axis=0) / len(prepared)
    return float(np.sum(losses) / len(prepared)), grad


@dataclass
class RefinementResult:
    bank: BeamformerBank
    loss_trace: list = field(default_factory=list)


def refine_beamformer(bank_init: BeamformerBank, training_scenes: list,
                      refinement: RefinementConfig | None = None, reference_index: int = 0,
                      config: StftConfig | None = None, provenance: dict | None = None) -> RefinementResult:
    """Gradient refinement of the bank weights against the separation loss.

    Adam (default) or plain gradient steps on the real and imaginary parts of
    the weights. ``loss_trace`` has ``iterations + 1`` entries: the loss before
    every update and after the last one.
    """
    refinement = refinement or RefinementConfig()
    if not training_scenes:
        raise ValidationError("refinement needs at least one training scene")
    config = config or stft_config_for(bank_init)
    prepared = [prepare_scene(s, config, reference_index) for s in training_scenes]
    for p in prepared:
        if p.mix.shape[0] != bank_init.num_mics:
            raise ShapeError("training scene channel count does not match the bank")
    if refinement.iterations == 0:
        loss, _ = batch_loss_and_gradient(bank_init.weights, prepared, refinement)
        return RefinementResult(bank_init, [loss])
    w = bank_init.weights.copy()
    m1 = np.zeros_like(w)
    m2 = np.zeros(w.shape + (2,))
    b1, b2, eps = 0.9, 0.999, 1e-8
    trace = []
    for it in range(refinement.iterations + 1):
        with np.errstate(invalid="ignore", over="ignore"):
            loss, grad = batch_loss_and_gradient(w, prepared, refinement)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise RefinementError(it, "non-finite loss or gradient")
        trace.append(loss)
        log.debug("refine iteration %d loss %.6f", it, loss)
        if it == refinement.iterations:
            break
        if refinement.optimizer == "sgd":
            w = w - refinement.step_size * grad
            continue
        m1 = b1 * m1 + (1 - b1) * grad
        sq = np.stack([grad.real**2, grad.imag**2], axis=-1)
        m2 = b2 * m2 + (1 - b2) * sq
        m_hat = m1 / (1 - b1 ** (it + 1))
        v_hat = m2 / (1 - b2 ** (it + 1))
        step = m_hat.real / (np.sqrt(v_hat[..., 0]) + eps) + 1j * m_hat.imag / (np.sqrt(v_hat[..., 1]) + eps)
        w = w - refinement.step_size * step
    prov = dict(bank_init.provenance)
    prov.update({"refinement": refinement.to_dict(), "initial_designer": bank_init.channels[0].designer})
    prov.update(provenance or {})
    return RefinementResult(bank_init.with_weights(w, "refined", prov), trace)
