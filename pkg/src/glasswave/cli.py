"""Command-line entry point: ``glasswave <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 validation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import secrets
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .audio import load_asset_index, write_wav
from .beamforming import (
    beam_pattern,
    design_bank,
    lateral_gains,
    load_bank,
    save_bank,
    write_beam_pattern,
)
from .errors import GlasswaveError, ValidationError
from .geometry import ArrayGeometry, FrequencyGrid, Point, default_geometry, load_geometry
from .metrics import evaluate_run
from .room import ArrayPose, RoomRanges, RoomSpec, eyring_reflection, sample_room, simulate_rir
from .scene import DatasetConfig, SceneConfig, generate_dataset, load_dataset_manifest, load_scene
from .separation import RefinementConfig, refine_beamformer, separate, stft_config_for

log = logging.getLogger("glasswave")

EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_VALIDATION = 3


def _floats(text: str, n: int | None = None) -> tuple:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if n is not None and len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} values, got {len(vals)}")
    return vals


def _vec3(text):
    return _floats(text, 3)


def _null(text: str) -> dict:
    try:
        az, alpha = text.split(":")
        return {"azimuth_deg": float(az), "alpha": float(alpha)}
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected AZIMUTH:ALPHA, got {text!r}")


def _ints(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _buckets(text: str) -> tuple:
    try:
        return tuple(tuple(int(v) for v in b.split(":")) for b in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI[,LO:HI...], got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="glasswave", allow_abbrev=False,
                                description="Directional front-end toolkit for wearable microphone arrays.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True, geometry=True):
        if out:
            sp.add_argument("--out", required=True, type=Path, help="output directory")
        if geometry:
            sp.add_argument("--geometry", type=Path, help="geometry YAML/JSON (default: bundled glasses7)")
        sp.add_argument("--seed", type=int, help="root seed (generated and logged when absent)")
        sp.add_argument("--workers", type=int, default=None, help="parallel workers (default: all cores)")

    d = sub.add_parser("design", allow_abbrev=False, help="design a K+1 beamformer bank")
    common(d)
    d.add_argument("--K", type=int, default=12, help="horizontal steering directions")
    d.add_argument("--designer", choices=("das", "mvdr", "nlcmv"), default="nlcmv")
    d.add_argument("--sample-rate", type=float, default=16000.0)
    d.add_argument("--fft-size", type=int, default=512)
    d.add_argument("--retained-bins", type=int, default=None)
    d.add_argument("--loading", type=float, default=1e-6, help="diagonal loading, relative to trace/M")
    d.add_argument("--null", type=_null, action="append", default=[], metavar="AZ:ALPHA",
                   help="absolute point-noise direction and weight (nlcmv)")
    d.add_argument("--relative-null", type=_null, action="append", default=[], metavar="AZ:ALPHA",
                   help="point-noise direction relative to each horizontal steer (nlcmv)")
    d.add_argument("--null-mouth", type=float, default=None, metavar="ALPHA",
                   help="point-noise weight on the mouth for horizontal beams (nlcmv)")
    d.add_argument("--mouth", type=_vec3, default=None, metavar="X,Y,Z")

    b = sub.add_parser("beampattern", allow_abbrev=False, help="tabulate beam patterns of a bank")
    common(b)
    b.add_argument("--bank", required=True, type=Path)
    b.add_argument("--freq", type=float, action="append", default=None, help="frequency in Hz (default 250)")
    b.add_argument("--step", type=float, default=1.0, help="azimuth step in degrees")
    b.add_argument("--compare", type=Path, default=None, help="second bank for the lateral-gain comparison")

    r = sub.add_parser("simulate-rir", allow_abbrev=False, help="image-source RIRs for one source")
    common(r)
    r.add_argument("--room", type=_vec3, default=None, metavar="LX,LY,LZ")
    r.add_argument("--reflection", type=_floats, default=None, help="1 or 6 amplitude coefficients")
    r.add_argument("--rt60", type=float, default=None, help="uniform coefficient from Eyring RT60")
    r.add_argument("--max-order", type=int, default=17)
    r.add_argument("--source", type=_vec3, default=None, metavar="X,Y,Z")
    r.add_argument("--array-position", type=_vec3, default=None, metavar="X,Y,Z")
    r.add_argument("--yaw", type=float, default=0.0)
    r.add_argument("--sample-rate", type=float, default=16000.0)

    s = sub.add_parser("synth", allow_abbrev=False, help="generate a scenario-grid dataset")
    common(s)
    s.add_argument("--scenes", type=int, default=200, help="scenes per scenario")
    s.add_argument("--bystanders", type=_ints, default=(1, 2, 3), metavar="B[,B...]")
    s.add_argument("--snr-buckets", type=_buckets, default=None, metavar="LO:HI[,LO:HI...]")
    s.add_argument("--assets", type=Path, default=None, help="asset index JSON (default: synthetic fixtures)")
    s.add_argument("--max-order", type=int, default=17)

    sp = sub.add_parser("separate", allow_abbrev=False, help="oracle-mask separation of a dataset")
    common(sp, geometry=False)
    sp.add_argument("--bank", required=True, type=Path)
    sp.add_argument("--dataset", required=True, type=Path)
    sp.add_argument("--limit", type=int, default=None, help="only the first N scenes")
    sp.add_argument("--dump-spectrogram", action="store_true",
                    help="also write the banked reference spectrogram as TSV")

    rf = sub.add_parser("refine", allow_abbrev=False, help="gradient refinement of bank weights")
    common(rf, geometry=False)
    rf.add_argument("--bank", required=True, type=Path)
    rf.add_argument("--dataset", required=True, type=Path)
    rf.add_argument("--scenes", type=int, default=4, help="training scenes taken from the dataset")
    rf.add_argument("--iterations", type=int, default=50)
    rf.add_argument("--step-size", type=float, default=1e-3)
    rf.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")

    e = sub.add_parser("evaluate", allow_abbrev=False, help="SI-SDR report for separated estimates")
    common(e, geometry=False)
    e.add_argument("--dataset", required=True, type=Path)
    e.add_argument("--estimates", required=True, type=Path)
    return p


def _geometry(args) -> ArrayGeometry:
    return load_geometry(args.geometry) if getattr(args, "geometry", None) else default_geometry()


def _resolve_seed(args) -> int:
    if args.seed is None:
        args.seed = secrets.randbits(32)
    return args.seed


def _log_config(args):
    cfg = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())}
    log.info("config %s", json.dumps(cfg, default=str, sort_keys=True))


def cmd_design(args) -> int:
    geo = _geometry(args)
    grid = FrequencyGrid(args.sample_rate, args.fft_size, args.retained_bins)
    designer_args = {"loading": args.loading}
    if args.null:
        designer_args["nulls"] = args.null
    if args.relative_null:
        designer_args["relative_nulls"] = args.relative_null
    if args.null_mouth:
        designer_args["null_mouth"] = args.null_mouth
    mouth = Point(args.mouth) if args.mouth else None
    bank = design_bank(geo, grid, args.K, mouth, args.designer, designer_args)
    args.out.mkdir(parents=True, exist_ok=True)
    path = save_bank(bank, args.out / "bank.json")
    log.info("wrote %d-channel bank to %s", len(bank.channels), path)
    return 0


def _bank_geometry(args, bank) -> ArrayGeometry:
    if args.geometry:
        return load_geometry(args.geometry)
    if bank.geometry:
        g = bank.geometry
        return ArrayGeometry(g["mics"], g.get("reference_index", 0), g.get("name", "array"), g.get("mouth"))
    return default_geometry()


def cmd_beampattern(args) -> int:
    bank = load_bank(args.bank)
    geo = _bank_geometry(args, bank)
    freqs = args.freq or [250.0]
    args.out.mkdir(parents=True, exist_ok=True)
    for f in freqs:
        for k, ch in enumerate(bank.channels):
            pat = beam_pattern(ch, geo, f, args.step)
            write_beam_pattern(pat, args.out / f"beampattern_ch{k:02d}_{f:g}Hz.tsv")
    other = load_bank(args.compare) if args.compare else None
    lines = ["frequency_hz\tchannel\tazimuth_deg\tgain_db" + ("\tcompare_gain_db\tdelta_db" if other else "")]
    for f in freqs:
        base = lateral_gains(bank, geo, f)
        cmp = lateral_gains(other, geo, f) if other else None
        for k in range(base.shape[0]):
            for j, az in enumerate((90.0, 270.0)):
                row = f"{f:g}\t{k}\t{az:g}\t{base[k, j]:.4f}"
                if other is not None:
                    row += f"\t{cmp[k, j]:.4f}\t{cmp[k, j] - base[k, j]:.4f}"
                lines.append(row)
    (args.out / "lateral_gain.tsv").write_text("\n".join(lines) + "\n")
    log.info("wrote %d pattern tables to %s", len(freqs) * len(bank.channels), args.out)
    return 0


def cmd_simulate_rir(args) -> int:
    geo = _geometry(args)
    seed = _resolve_seed(args)
    if args.room is None:
        rng = np.random.default_rng(seed)
        ranges = RoomRanges(max_order=args.max_order, sample_rate_hz=args.sample_rate)
        room, placements = sample_room(rng, ranges, 0, geo)
        pose = placements.pose
        source = args.source if args.source is not None else placements.partner
    else:
        if args.source is None or args.array_position is None:
            raise ValidationError("--room needs --source and --array-position")
        if args.rt60 is not None:
            refl = (eyring_reflection(args.rt60, args.room),) * 6
        elif args.reflection is not None:
            refl = args.reflection if len(args.reflection) == 6 else args.reflection * 6
        else:
            refl = (0.0,) * 6
        room = RoomSpec(args.room, refl, args.max_order, args.sample_rate)
        pose = ArrayPose(args.array_position, args.yaw)
        source = args.source
    rirs = simulate_rir(room, source, geo, pose)
    args.out.mkdir(parents=True, exist_ok=True)
    write_wav(args.out / "rir.wav", rirs.rirs, int(room.sample_rate_hz))
    sidecar = {
        "room": room.to_dict(),
        "source": np.asarray(source, dtype=float).tolist(),
        "array_pose": pose.to_dict(),
        "mic_positions": rirs.mic_positions.tolist(),
        "geometry": geo.to_dict(),
        "seed": seed,
        "lead_samples": rirs.lead_samples,
        "taps": int(rirs.rirs.shape[1]),
    }
    (args.out / "rir_manifest.json").write_text(json.dumps(sidecar, indent=1, sort_keys=True))
    return 0


def cmd_synth(args) -> int:
    geo = _geometry(args)
    seed = _resolve_seed(args)
    if args.scenes < 1:
        raise ValidationError("--scenes must be >= 1")
    if any(b not in (0, 1, 2, 3) for b in args.bystanders):
        raise ValidationError("bystander counts must lie in 0..3")
    scene_cfg = SceneConfig(ranges=RoomRanges(max_order=args.max_order))
    cfg = DatasetConfig(args.scenes, args.bystanders, args.snr_buckets, seed, scene_cfg)
    assets = load_asset_index(args.assets, scene_cfg.sample_rate)
    dataset = generate_dataset(cfg, assets, args.out, geo, args.workers)
    log.info("wrote %d scenes to %s", len(dataset["scenes"]), args.out)
    return 0


def _scenes(dataset_path: Path, limit=None):
    dataset = load_dataset_manifest(dataset_path)
    entries = dataset["scenes"][:limit] if limit else dataset["scenes"]
    for entry in entries:
        yield entry, load_scene(dataset_path.parent / entry["path"])


def _dump_spectrogram(path: Path, spec) -> None:
    data = spec.data[0]
    f_idx, t_idx = np.meshgrid(np.arange(data.shape[0]), np.arange(data.shape[1]), indexing="ij")
    table = np.column_stack([f_idx.ravel(), t_idx.ravel(), data.real.ravel(), data.imag.ravel()])
    np.savetxt(path, table, fmt=["%d", "%d", "%.9g", "%.9g"], delimiter="\t",
               header="bin\tframe\treal\timag", comments="")


def cmd_separate(args) -> int:
    from .beamforming import apply_bank
    from .spectral import stft

    bank = load_bank(args.bank)
    count = 0
    for entry, scene in _scenes(args.dataset, args.limit):
        result = separate(bank, scene)
        out = args.out / entry["scene_id"]
        write_wav(out / "wearer.wav", result.wearer_estimate, scene.sample_rate)
        write_wav(out / "partner.wav", result.partner_estimate, scene.sample_rate)
        if args.dump_spectrogram:
            spec = apply_bank(bank, stft(scene.mixture, stft_config_for(bank))).channel(0)
            _dump_spectrogram(out / "reference_spectrogram.tsv", spec)
        count += 1
    log.info("separated %d scenes into %s", count, args.out)
    return 0


def cmd_refine(args) -> int:
    seed = _resolve_seed(args)
    bank = load_bank(args.bank)
    dataset = load_dataset_manifest(args.dataset)
    ref = int(dataset["geometry"]["reference_index"])
    pairs = list(_scenes(args.dataset, args.scenes))
    config = RefinementConfig(step_size=args.step_size, iterations=args.iterations, optimizer=args.optimizer)
    provenance = {"seed": seed, "scenes": [e["scene_id"] for e, _ in pairs]}
    result = refine_beamformer(bank, [s for _, s in pairs], config, ref, provenance=provenance)
    args.out.mkdir(parents=True, exist_ok=True)
    save_bank(result.bank, args.out / "bank.json")
    trace = "iteration\tloss\n" + "".join(f"{i}\t{v:.9f}\n" for i, v in enumerate(result.loss_trace))
    (args.out / "loss_trace.tsv").write_text(trace)
    log.info("refined loss %.4f -> %.4f", result.loss_trace[0], result.loss_trace[-1])
    return 0


def cmd_evaluate(args) -> int:
    report = evaluate_run(args.dataset, args.estimates)
    report.write(args.out)
    for label, metrics in report.aggregates.items():
        m = metrics["wearer_si_sdri"]
        if m["count"]:
            log.info("%s: wearer SI-SDRi mean %.2f dB over %d scenes", label, m["mean"], m["count"])
    if report.missing:
        log.error("%d estimate files missing; first: %s", len(report.missing), report.missing[0])
        return EXIT_RUNTIME
    return 0


COMMANDS = {
    "design": cmd_design,
    "beampattern": cmd_beampattern,
    "simulate-rir": cmd_simulate_rir,
    "synth": cmd_synth,
    "separate": cmd_separate,
    "refine": cmd_refine,
    "evaluate": cmd_evaluate,
}


def run(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("GLASSWAVE_LOG", "INFO").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    if args.workers is not None and args.workers < 1:
        log.error("--workers must be >= 1")
        return EXIT_VALIDATION
    if args.seed is None and args.command in ("synth", "simulate-rir", "refine"):
        _resolve_seed(args)
    if args.seed is not None:
        log.info("root seed %d", args.seed)
    _log_config(args)
    try:
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        log.error("[%s] %s", getattr(exc, "module", "glasswave"), exc)
        return EXIT_VALIDATION
    except GlasswaveError as exc:
        log.error("[%s] %s", exc.module, exc)
        return EXIT_RUNTIME
    except OSError as exc:
        log.error("[io] %s", exc)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())
