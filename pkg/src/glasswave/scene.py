"""Conversational scene rendering: wearer, partner, bystanders and point noise.

A scene places the wearer's utterance first, the partner's after a short
turn gap, and each bystander at an offset chosen to hit the requested overlap
ratio with the two main talkers. Noise is scaled so that the reference-mic SNR
against the combined wearer+partner stems matches the manifest target.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioAsset, fit_length, load_asset_index, pink_noise, read_wav, write_wav
from .errors import AssetError, GlasswaveError, PlacementError, ValidationError
from .geometry import ArrayGeometry
from .room import Placements, RoomRanges, RoomSpec, convolve_multichannel, sample_room, simulate_rir

log = logging.getLogger(__name__)

SNR_RANGE_DB = (-8, 40)
OVERLAP_RANGE = (0.05, 0.5)
DATASET_FORMAT = "glasswave-dataset"
RIR_LEAD = 41


def _power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x)))


def snr_gain(speech_ref, noise, target_snr_db: float) -> float:
    """Gain for ``noise`` so that ``10 log10(P_speech / (g^2 P_noise))`` equals the target."""
    p_noise = _power(np.asarray(noise, dtype=float))
    if p_noise == 0.0:
        raise ValidationError("noise signal is silent")
    p_speech = _power(np.asarray(speech_ref, dtype=float))
    return float(np.sqrt(p_speech / (p_noise * 10.0 ** (target_snr_db / 10.0))))


def measured_snr(speech_ref, noise) -> float:
    return 10.0 * np.log10(_power(np.asarray(speech_ref)) / _power(np.asarray(noise)))


def _activity(intervals, n: int) -> np.ndarray:
    on = np.zeros(n, dtype=bool)
    for start, end in intervals:
        on[max(0, int(start)):max(0, min(n, int(end)))] = True
    return on


def overlap_samples(intervals, start: int, length: int) -> int:
    """Number of samples of ``[start, start + length)`` covered by ``intervals``."""
    end = start + length
    on = _activity([(max(a, start), min(b, end)) for a, b in intervals if b > start and a < end], end)
    return int(on.sum())


def place_overlap(main_active, bystander_len: int, ratio: float, rng: np.random.Generator,
                  scene_len: int, tolerance: float = 0.005) -> int:
    """Start offset for a bystander segment overlapping the main talkers by ``ratio``.

    All offsets whose overlap fraction lies within ``tolerance`` of ``ratio`` are
    candidates (exactly zero overlap when ``ratio == 0``); one is drawn from ``rng``.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValidationError(f"overlap ratio {ratio} outside [0, 1]")
    if bystander_len <= 0 or bystander_len > scene_len:
        raise PlacementError(f"bystander length {bystander_len} does not fit a {scene_len}-sample scene")
    cum = np.concatenate([[0], np.cumsum(_activity(main_active, scene_len))])
    starts = np.arange(scene_len - bystander_len + 1)
    frac = (cum[starts + bystander_len] - cum[starts]) / bystander_len
    if ratio == 0.0:
        ok = frac == 0.0
    else:
        ok = np.abs(frac - ratio) <= tolerance
    candidates = starts[ok]
    if candidates.size == 0:
        raise PlacementError(f"overlap ratio {ratio} infeasible for this timeline")
    return int(candidates[rng.integers(candidates.size)])


@dataclass
class SceneConfig:
    sample_rate: int = 16000
    ranges: RoomRanges = field(default_factory=RoomRanges)
    snr_range_db: tuple = SNR_RANGE_DB
    overlap_range: tuple = OVERLAP_RANGE
    turn_gap_s: tuple = (0.1, 0.4)
    lead_in_s: float = 0.1
    tail_s: float = 0.3

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ranges"] = self.ranges.to_dict()
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        d = dict(d)
        ranges = RoomRanges(**{k: (tuple(v) if isinstance(v, list) else v)
                               for k, v in d.pop("ranges", {}).items()})
        return cls(ranges=ranges, **{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


@dataclass
class SceneManifest:
    scene_id: str
    seed: int
    room: RoomSpec
    placements: Placements
    wearer: str
    partner: str
    bystanders: list
    noise: str
    target_snr_db: float
    overlap_ratio: float
    config: SceneConfig = field(default_factory=SceneConfig)

    @property
    def bystander_count(self) -> int:
        return len(self.bystanders)

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "seed": int(self.seed),
            "room": self.room.to_dict(),
            "placements": self.placements.to_dict(),
            "wearer": self.wearer,
            "partner": self.partner,
            "bystanders": list(self.bystanders),
            "noise": self.noise,
            "target_snr_db": float(self.target_snr_db),
            "overlap_ratio": float(self.overlap_ratio),
            "config": self.config.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneManifest":
        return cls(d["scene_id"], int(d["seed"]), RoomSpec.from_dict(d["room"]),
                   Placements.from_dict(d["placements"]), d["wearer"], d["partner"],
                   list(d["bystanders"]), d["noise"], float(d["target_snr_db"]),
                   float(d["overlap_ratio"]), SceneConfig.from_dict(d.get("config", {})))


def _children(seed: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(int(seed)).spawn(2)]


def sample_manifest(seed: int, bystanders: int, assets: dict, geometry: ArrayGeometry,
                    config: SceneConfig | None = None, scene_id: str | None = None,
                    snr_range_db: tuple | None = None, overlap_ratio: float | None = None) -> SceneManifest:
    """Draw a room, layout, asset choice, SNR (integer dB) and overlap ratio from ``seed``."""
    config = config or SceneConfig()
    if bystanders not in (0, 1, 2, 3):
        raise ValidationError("bystander count must be 0..3")
    rng = _children(seed)[0]
    room, placements = sample_room(rng, config.ranges, bystanders, geometry)
    speech = sorted(k for k, a in assets.items() if a.kind == "speech")
    noise = sorted(k for k, a in assets.items() if a.kind == "noise")
    if len(speech) < 2:
        raise AssetError("need at least two speech assets")
    replace = len(speech) < 2 + bystanders
    picks = [speech[i] for i in rng.choice(len(speech), 2 + bystanders, replace=replace)]
    noise_id = noise[int(rng.integers(len(noise)))] if noise else "pink"
    lo, hi = snr_range_db or config.snr_range_db
    snr = int(rng.integers(int(lo), int(hi) + 1))
    if overlap_ratio is None:
        overlap_ratio = round(float(rng.uniform(*config.overlap_range)), 2)
    return SceneManifest(scene_id or f"scene-{seed}", int(seed), room, placements, picks[0], picks[1],
                         picks[2:], noise_id, float(snr), float(overlap_ratio), config)


@dataclass
class SceneAudio:
    mixture: np.ndarray
    stems: dict
    alignment: dict
    sample_rate: int
    manifest: SceneManifest | None = None
    info: dict = field(default_factory=dict)

    @property
    def num_samples(self) -> int:
        return self.mixture.shape[1]


def _unit_rms(x: np.ndarray) -> np.ndarray:
    p = np.sqrt(_power(x))
    if p == 0:
        raise AssetError("silent asset")
    return x / p


def _asset(assets: dict, key: str, seed: int, n: int | None = None) -> AudioAsset:
    if key.startswith("pink"):
        return AudioAsset(pink_noise(n, np.random.default_rng(seed)), 0, "noise")
    if key not in assets:
        raise AssetError(f"missing asset {key!r}")
    return assets[key]


def synthesize_scene(manifest: SceneManifest, audio_assets: dict, geometry: ArrayGeometry,
                     noise_gain: float | None = None) -> SceneAudio:
    """Render every source through its RIRs and mix; ``mixture`` is the exact sum of ``stems``.

    ``noise_gain`` overrides the SNR-derived noise scaling (e.g. 0 for a noise-free scene).
    """
    cfg = manifest.config
    fs = cfg.sample_rate
    rng = _children(manifest.seed)[1]
    wearer = _unit_rms(_asset(audio_assets, manifest.wearer, manifest.seed).samples)
    partner = _unit_rms(_asset(audio_assets, manifest.partner, manifest.seed).samples)
    w_start = int(round(cfg.lead_in_s * fs))
    p_start = w_start + wearer.size + int(round(rng.uniform(*cfg.turn_gap_s) * fs))
    main_end = p_start + partner.size
    w_asset = audio_assets.get(manifest.wearer)
    p_asset = audio_assets.get(manifest.partner)
    alignment = {
        "wearer": [(w_start + a, w_start + b) for a, b in (w_asset.active if w_asset else [(0, wearer.size)])],
        "partner": [(p_start + a, p_start + b) for a, b in (p_asset.active if p_asset else [(0, partner.size)])],
    }
    main_active = alignment["wearer"] + alignment["partner"]
    span = main_end - w_start
    byst = []
    for key in manifest.bystanders:
        clip = _unit_rms(_asset(audio_assets, key, manifest.seed).samples)
        byst.append(fit_length(clip, min(clip.size, span)))
    scene_len = main_end + max((b.size for b in byst), default=0) + int(round(cfg.tail_s * fs))

    dry = {"wearer": (w_start, wearer), "partner": (p_start, partner)}
    offsets = {"wearer": w_start, "partner": p_start}
    for i, clip in enumerate(byst):
        name = f"bystander_{i + 1}"
        off = place_overlap(main_active, clip.size, manifest.overlap_ratio, rng, scene_len)
        dry[name] = (off, clip)
        offsets[name] = off
        alignment[name] = [(off, off + clip.size)]
    noise_clip = _asset(audio_assets, manifest.noise, manifest.seed, scene_len).samples
    dry["noise"] = (0, fit_length(_unit_rms(noise_clip), scene_len))
    alignment["noise"] = [(0, scene_len)]

    sources = manifest.placements.sources()
    stems = {}
    for name, (off, clip) in dry.items():
        rirs = simulate_rir(manifest.room, sources[name], geometry, manifest.placements.pose,
                            lead_samples=RIR_LEAD)
        placed = np.zeros(scene_len)
        placed[off:off + clip.size] = clip[:scene_len - off]
        stems[name] = convolve_multichannel(placed, rirs)[:, :scene_len]

    ref = geometry.reference_index
    main_ref = stems["wearer"][ref] + stems["partner"][ref]
    gain = snr_gain(main_ref, stems["noise"][ref], manifest.target_snr_db) if noise_gain is None else noise_gain
    stems["noise"] = stems["noise"] * gain
    mixture = np.zeros_like(stems["wearer"])
    for stem in stems.values():
        mixture = mixture + stem
    info = {
        "offsets": offsets,
        "noise_gain": float(gain),
        "scene_samples": int(scene_len),
        "rir_lead_samples": RIR_LEAD,
        "realized_overlap": {
            name: overlap_samples(main_active, offsets[name], dry[name][1].size) / dry[name][1].size
            for name in offsets if name.startswith("bystander")
        },
    }
    if gain > 0:
        info["realized_snr_db"] = float(measured_snr(main_ref, stems["noise"][ref]))
    return SceneAudio(mixture, stems, alignment, fs, manifest, info)


# ---------------------------------------------------------------------------
# persistence


def write_scene(scene: SceneAudio, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    (out_dir / "stems").mkdir(parents=True, exist_ok=True)
    write_wav(out_dir / "mixture.wav", scene.mixture, scene.sample_rate)
    for name, stem in scene.stems.items():
        write_wav(out_dir / "stems" / f"{name}.wav", stem, scene.sample_rate)
    doc = {
        "manifest": scene.manifest.to_dict() if scene.manifest else None,
        "stems": list(scene.stems),
        "alignment": {k: [list(map(int, iv)) for iv in v] for k, v in scene.alignment.items()},
        "info": scene.info,
    }
    (out_dir / "manifest.json").write_text(json.dumps(doc, indent=1, sort_keys=True))
    return out_dir


def load_scene(scene_dir: str | Path) -> SceneAudio:
    scene_dir = Path(scene_dir)
    doc = json.loads((scene_dir / "manifest.json").read_text())
    mixture, sr = read_wav(scene_dir / "mixture.wav")
    stems = {name: read_wav(scene_dir / "stems" / f"{name}.wav")[0] for name in doc["stems"]}
    stems = {k: (v[None] if v.ndim == 1 else v) for k, v in stems.items()}
    mixture = mixture[None] if mixture.ndim == 1 else mixture
    manifest = SceneManifest.from_dict(doc["manifest"]) if doc.get("manifest") else None
    alignment = {k: [tuple(iv) for iv in v] for k, v in doc["alignment"].items()}
    return SceneAudio(mixture, stems, alignment, sr, manifest, doc.get("info", {}))


# ---------------------------------------------------------------------------
# dataset generation


@dataclass
class DatasetConfig:
    scenes_per_scenario: int = 200
    bystander_counts: tuple = (1, 2, 3)
    snr_buckets: tuple | None = None
    seed: int = 0
    scene: SceneConfig = field(default_factory=SceneConfig)

    def buckets(self) -> list:
        if self.snr_buckets:
            return [tuple(b) for b in self.snr_buckets]
        return [tuple(self.scene.snr_range_db)]

    def to_dict(self) -> dict:
        return {
            "scenes_per_scenario": self.scenes_per_scenario,
            "bystander_counts": list(self.bystander_counts),
            "snr_buckets": [list(b) for b in self.buckets()],
            "seed": int(self.seed),
            "scene": self.scene.to_dict(),
        }


def bucket_label(bucket) -> str:
    return f"snr{int(bucket[0])}..{int(bucket[1])}"


def scene_seed(root_seed: int, scenario: int, index: int) -> int:
    ss = np.random.SeedSequence([int(root_seed), int(scenario), int(index)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _render_job(job):
    manifest, assets, geometry, out_dir = job
    try:
        scene = synthesize_scene(manifest, assets, geometry)
    except GlasswaveError as exc:
        raise type(exc)(f"scene {manifest.scene_id}: {exc}") from exc
    write_scene(scene, out_dir)
    return scene.info


def generate_dataset(config: DatasetConfig, asset_index, out_dir: str | Path,
                     geometry: ArrayGeometry, workers: int | None = 1) -> dict:
    """Write ``<out>/<scenario>/<scene_id>/`` directories and ``<out>/dataset.json``.

    Scenarios are the grid of bystander counts and SNR buckets. Every scene seed
    is derived from the root seed and the scene's grid position, so the output
    does not depend on ``workers``.
    """
    out_dir = Path(out_dir)
    if isinstance(asset_index, dict):
        assets = asset_index
    else:
        assets = load_asset_index(asset_index, config.scene.sample_rate)
    jobs, entries = [], []
    scenario_idx = 0
    for b in config.bystander_counts:
        for bucket in config.buckets():
            label = f"B{b}" if len(config.buckets()) == 1 else f"B{b}_{bucket_label(bucket)}"
            for i in range(config.scenes_per_scenario):
                seed = scene_seed(config.seed, scenario_idx, i)
                scene_id = f"{label}-{i:04d}"
                manifest = sample_manifest(seed, b, assets, geometry, config.scene, scene_id, bucket)
                rel = Path(label) / scene_id
                jobs.append((manifest, assets, geometry, out_dir / rel))
                entries.append({
                    "scene_id": scene_id,
                    "scenario": label,
                    "bystanders": b,
                    "snr_bucket": bucket_label(bucket),
                    "target_snr_db": manifest.target_snr_db,
                    "overlap_ratio": manifest.overlap_ratio,
                    "seed": seed,
                    "path": rel.as_posix(),
                })
            scenario_idx += 1
    workers = workers or os.cpu_count() or 1
    log.info("rendering %d scenes with %d worker(s)", len(jobs), workers)
    if workers == 1:
        infos = [_render_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            infos = list(pool.map(_render_job, jobs))
    for entry, info in zip(entries, infos):
        entry["realized_snr_db"] = info.get("realized_snr_db")
        entry["realized_overlap"] = info["realized_overlap"]
    dataset = {
        "format": DATASET_FORMAT,
        "root_seed": int(config.seed),
        "config": config.to_dict(),
        "geometry": geometry.to_dict(),
        "assets": "fixture" if asset_index is None else ("inline" if isinstance(asset_index, dict)
                                                         else str(asset_index)),
        "scenes": entries,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "dataset.json").write_text(json.dumps(dataset, indent=1, sort_keys=True))
    return dataset


def load_dataset_manifest(path: str | Path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read dataset manifest {path}: {exc}") from exc
    if data.get("format") != DATASET_FORMAT:
        raise ValidationError(f"{path} is not a dataset manifest")
    return data
