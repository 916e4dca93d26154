"""SI-SDR and condition-wise evaluation reports."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeError, ValidationError

SI_SDR_CLAMP_DB = 60.0
_DB = 10.0 / math.log(10.0)


def _pair(estimate, reference):
    est = np.asarray(estimate, dtype=float).ravel()
    ref = np.asarray(reference, dtype=float).ravel()
    if est.shape != ref.shape:
        raise ShapeError(f"estimate length {est.size} != reference length {ref.size}")
    ref_energy = float(np.dot(ref, ref))
    if ref_energy == 0.0:
        raise ValidationError("SI-SDR reference is all zeros")
    return est, ref, ref_energy


def si_sdr_raw(estimate, reference) -> float:
    """Unclamped SI-SDR in dB; may be +/-inf for perfect or degenerate estimates."""
    est, ref, ref_energy = _pair(estimate, reference)
    alpha = np.dot(est, ref) / ref_energy
    target = alpha * ref
    err = target - est
    num = float(np.dot(target, target))
    den = float(np.dot(err, err))
    if num == 0.0:
        return -math.inf
    if den == 0.0:
        return math.inf
    return 10.0 * math.log10(num / den)


def si_sdr(estimate, reference, clamp_db: float = SI_SDR_CLAMP_DB) -> float:
    """Scale-invariant SDR in dB, clamped to ``[-clamp_db, clamp_db]``.

    >>> si_sdr([1.0, 1.0], [1.0, 0.0])
    0.0
    """
    return float(min(max(si_sdr_raw(estimate, reference), -clamp_db), clamp_db))


def si_sdr_grad(estimate, reference, clamp_db: float = SI_SDR_CLAMP_DB) -> tuple[float, np.ndarray]:
    """Clamped SI-SDR and its gradient with respect to ``estimate``.

    With ``a = <e, r>``, ``R = ||r||^2`` and ``E = ||e||^2`` the score is
    ``10 log10(a^2 / (R E - a^2))``; the gradient is zero where the clamp binds.
    """
    est, ref, ref_energy = _pair(estimate, reference)
    value = si_sdr(est, ref, clamp_db)
    if abs(value) >= clamp_db:
        return value, np.zeros_like(est)
    a = float(np.dot(est, ref))
    resid = ref_energy * float(np.dot(est, est)) - a * a
    grad = _DB * (2.0 * ref / a - 2.0 * (ref_energy * est - a * ref) / resid)
    return value, grad


def si_sdr_improvement(estimate, mixture_ref_channel, reference) -> float:
    """SI-SDR gain of ``estimate`` over the unprocessed mixture channel.

    Unclamped scores are differenced; infinities fall back to the clamp.
    """
    def score(x):
        v = si_sdr_raw(x, reference)
        return v if math.isfinite(v) else math.copysign(SI_SDR_CLAMP_DB, v)

    return score(estimate) - score(mixture_ref_channel)


# ---------------------------------------------------------------------------
# reports

METRIC_KEYS = ("wearer_si_sdr", "partner_si_sdr", "wearer_si_sdri", "partner_si_sdri")


def summarize(values) -> dict:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return {"count": 0}
    return {
        "count": int(v.size),
        "mean": float(np.mean(v)),
        "median": float(np.median(v)),
        "p10": float(np.percentile(v, 10)),
        "p90": float(np.percentile(v, 90)),
    }


def aggregate(records: list) -> dict:
    """Group records by scenario label and summarize every metric."""
    groups: dict = {}
    for rec in records:
        groups.setdefault(rec["scenario"], []).append(rec)
    out = {}
    for label in sorted(groups):
        recs = groups[label]
        out[label] = {key: summarize([r[key] for r in recs]) for key in METRIC_KEYS}
    return out


@dataclass
class EvaluationReport:
    records: list
    aggregates: dict
    missing: list = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return not self.missing

    def to_dict(self) -> dict:
        return {"records": self.records, "aggregates": self.aggregates, "missing": self.missing}

    def to_table(self) -> str:
        cols = ["scene_id", "scenario", "bystanders", "snr_bucket", *METRIC_KEYS]
        lines = ["\t".join(cols)]
        for r in self.records:
            lines.append("\t".join(
                f"{r[c]:.4f}" if isinstance(r[c], float) else str(r[c]) for c in cols
            ))
        lines.append("")
        lines.append("\t".join(["scenario", "metric", "count", "mean", "median", "p10", "p90"]))
        for label, metrics in self.aggregates.items():
            for key, s in metrics.items():
                if s["count"]:
                    lines.append(f"{label}\t{key}\t{s['count']}\t{s['mean']:.4f}\t{s['median']:.4f}"
                                 f"\t{s['p10']:.4f}\t{s['p90']:.4f}")
        for scene in self.missing:
            lines.append(f"# missing\t{scene}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        js = out_dir / "report.json"
        tsv = out_dir / "report.tsv"
        js.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))
        tsv.write_text(self.to_table())
        return js, tsv


def evaluate_run(dataset_manifest: str | Path, estimates_dir: str | Path) -> EvaluationReport:
    """Score ``<estimates_dir>/<scene_id>/{wearer,partner}.wav`` against each scene's stems.

    References are the reference-mic channels of the wearer and partner stems.
    Missing estimate files are collected, not raised; scored scenes still
    appear in the report.
    """
    from .audio import read_wav
    from .scene import load_dataset_manifest

    manifest_path = Path(dataset_manifest)
    dataset = load_dataset_manifest(manifest_path)
    root = manifest_path.parent
    estimates_dir = Path(estimates_dir)
    ref_ch = int(dataset["geometry"]["reference_index"])
    records, missing = [], []
    for entry in dataset["scenes"]:
        scene_id = entry["scene_id"]
        paths = {who: estimates_dir / scene_id / f"{who}.wav" for who in ("wearer", "partner")}
        absent = [str(p) for p in paths.values() if not p.is_file()]
        if absent:
            missing.extend(absent)
            continue
        scene_dir = root / entry["path"]
        mixture = read_wav(scene_dir / "mixture.wav")[0][ref_ch]
        rec = {
            "scene_id": scene_id,
            "scenario": entry["scenario"],
            "bystanders": int(entry["bystanders"]),
            "snr_bucket": entry["snr_bucket"],
        }
        for who, path in paths.items():
            ref = read_wav(scene_dir / "stems" / f"{who}.wav")[0][ref_ch]
            est = read_wav(path)[0]
            est = est[0] if est.ndim == 2 else est
            if est.size != ref.size:
                raise ShapeError(f"{path}: {est.size} samples, expected {ref.size}")
            rec[f"{who}_si_sdr"] = si_sdr(est, ref)
            rec[f"{who}_si_sdri"] = si_sdr_improvement(est, mixture, ref)
        records.append(rec)
    return EvaluationReport(records, aggregate(records), missing)
