"""Command-line workflow: synthesize data, inject noise, train, evaluate,
convert coordinates, export tracks.

Every artifact-producing subcommand writes the fully resolved configuration it
ran with to <out>/resolved.json, so a run can be reproduced from its output
directory alone. Settings resolve in three layers: built-in defaults, then the
--config JSON file, then explicit command-line flags.
"""

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .dataset import (
    ImageStore,
    ManifestHeader,
    NoiseModel,
    Sample,
    SyntheticWorldConfig,
    export_tracks_geojson,
    generate_synthetic_world,
    load_manifest,
    make_targets,
    save_png,
    simulate_gps_noise,
    split_trajectory,
    write_manifest,
)
from .errors import (
    ConfigError,
    DeltaLocError,
    DivergenceError,
    DomainError,
    IncompleteSampleError,
    ManifestError,
)
from .evaluation import compare_table, moving_average_filter
from .geodesy import DeltaLocation, GeoPoint, apply_delta, geo_to_utm
from .layers import load_params, save_params
from .model import ModelConfig, forward, validate_params
from .training import TrainConfig, center_crop, fix_features, train, write_train_log

EXIT_CODES_HELP = """\
exit codes:
  0  success
  2  command-line usage error
  3  input file or directory not found
  4  malformed manifest or configuration
  5  training diverged (non-finite loss)
  6  geodesy domain error (latitude band, distortion guard, oversized delta)
  7  other library error

Seeds default to 0 everywhere; no subcommand consults the clock or
environment variables, so identical invocations produce identical output.
"""


def _fail(message: str) -> None:
    print(f"error: {message}", file=sys.stderr)


def resolve_config(defaults: dict, config_path, args: argparse.Namespace) -> dict:
    """Layer defaults < JSON config file < explicit CLI flags."""
    resolved = dict(defaults)
    if config_path:
        with open(config_path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{config_path}: not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{config_path}: config must be a JSON object")
        unknown = sorted(set(data) - set(defaults))
        if unknown:
            raise ConfigError(f"{config_path}: unknown config keys {unknown}")
        resolved.update(data)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    return resolved


def write_resolved(out_dir: Path, subcommand: str, resolved: dict) -> None:
    doc = {"subcommand": subcommand, **resolved}
    with open(out_dir / "resolved.json", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _parse_floats(text: str, n: int, what: str) -> tuple:
    parts = text.split(",")
    if len(parts) != n:
        raise ConfigError(f"{what} needs {n} comma-separated values, got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"{what}: {exc}") from exc


def _parse_ints(text: str) -> tuple:
    try:
        return tuple(int(p) for p in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"stage widths: {exc}") from exc


# ---------------------------------------------------------------------------
# synth


SYNTH_DEFAULTS = {
    "length": 2000.0,
    "spacing": 1.0,
    "image_size": 32,
    "encoding_strength": 1.0,
    "course": "loop",
    "laps": 1,
    "footprint": 64.0,
    "center_lat": 37.4,
    "center_lon": -122.1,
    "mode": "gps-relative",
    "seed": 0,
}


def cmd_synth(args) -> int:
    cfg = resolve_config(SYNTH_DEFAULTS, args.config, args)
    out = Path(args.out)
    world_config = SyntheticWorldConfig(
        trajectory_length=float(cfg["length"]),
        waypoint_spacing=float(cfg["spacing"]),
        image_size=int(cfg["image_size"]),
        texture_seed=int(cfg["seed"]),
        encoding_strength=float(cfg["encoding_strength"]),
        course=str(cfg["course"]),
        laps=int(cfg["laps"]),
        ground_footprint=float(cfg["footprint"]),
        center_lat=float(cfg["center_lat"]),
        center_lon=float(cfg["center_lon"]),
    )
    mode = str(cfg["mode"])
    if mode not in ("gps-relative", "gcp"):
        raise ConfigError(f"mode must be 'gps-relative' or 'gcp', got {mode!r}")
    world = generate_synthetic_world(world_config)
    (out / "images").mkdir(parents=True, exist_ok=True)
    samples = []
    for i, (point, ts) in enumerate(zip(world.track, world.timestamps)):
        ref = f"images/{i:05d}.png"
        save_png(out / ref, world.render(point))
        samples.append(Sample(
            image_ref=ref, timestamp=ts,
            raw_fix=point if mode == "gps-relative" else None,
            truth=point))
    header = ManifestHeader(
        zone=world.zone, mode=mode,
        gcp=world.center if mode == "gcp" else None)
    write_manifest_path = out / "manifest.csv"
    write_manifest(write_manifest_path, header, samples)
    write_resolved(out, "synth", cfg)
    print(f"synth: {len(samples)} samples, zone {world.zone}, "
          f"course {world_config.course}, manifest {write_manifest_path}")
    return 0


# ---------------------------------------------------------------------------
# noise


NOISE_DEFAULTS = {
    "mean": 9.8772,
    "sd": 11.7547,
    "clip_lo": 0.37419,
    "clip_hi": 61.7118,
    "rho": 0.9,
    "seed": 0,
}


def cmd_noise(args) -> int:
    cfg = resolve_config(NOISE_DEFAULTS, args.config, args)
    header, samples = load_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    truths = []
    for i, s in enumerate(samples):
        if s.truth is None:
            raise IncompleteSampleError(
                f"row {i + 1}: noise injection needs a truth position on every row")
        truths.append(s.truth)
    model = NoiseModel(
        mean=float(cfg["mean"]), sd=float(cfg["sd"]),
        clip_lo=float(cfg["clip_lo"]), clip_hi=float(cfg["clip_hi"]),
        ar_coeff=float(cfg["rho"]), seed=int(cfg["seed"]))
    noisy = simulate_gps_noise(truths, model, zone=header.zone)
    manifest_dir = os.path.dirname(os.path.abspath(args.manifest))
    rewritten = []
    for s, raw in zip(samples, noisy):
        src = os.path.join(manifest_dir, s.image_ref)
        ref = os.path.relpath(src, out).replace(os.sep, "/")
        rewritten.append(replace(s, image_ref=ref, raw_fix=raw))
    write_manifest(out / "manifest.csv", header, rewritten)
    write_resolved(out, "noise", cfg)
    print(f"noise: perturbed {len(rewritten)} fixes "
          f"(mean {model.mean} m, sd {model.sd} m, rho {model.ar_coeff})")
    return 0


# ---------------------------------------------------------------------------
# train


TRAIN_DEFAULTS = {
    "input_size": 32,
    "in_channels": 1,
    "stage_widths": [8, 16, 32],
    "feature_dim": 64,
    "lstm_layers": 2,
    "lstm_hidden": 32,
    "use_fix_features": False,
    "sequence_split": 1,
    "learning_rate": 0.045,
    "batch_size": 8,
    "epochs": 30,
    "crop_fraction": 0.875,
    "target_scale": 10.0,
    "fix_feature_scale": 100.0,
    "splits": [0.7, 0.15, 0.15],
    "checkpoint_every": 0,
    "seed": 0,
}


def _geo_or_none(value):
    return None if value is None else [value.lat, value.lon]


def cmd_train(args) -> int:
    cfg = resolve_config(TRAIN_DEFAULTS, args.config, args)
    header, samples = load_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    use_fix = bool(cfg["use_fix_features"])
    model_config = ModelConfig(
        input_size=int(cfg["input_size"]),
        in_channels=int(cfg["in_channels"]),
        stage_widths=tuple(int(w) for w in cfg["stage_widths"]),
        feature_dim=int(cfg["feature_dim"]),
        lstm_layers=int(cfg["lstm_layers"]),
        lstm_hidden=int(cfg["lstm_hidden"]),
        use_fix_features=use_fix,
        fix_shortcut_gain=(float(cfg["fix_feature_scale"]) / float(cfg["target_scale"])
                           if use_fix else 0.0),
        sequence_split=int(cfg["sequence_split"]),
    )
    train_config = TrainConfig(
        learning_rate=float(cfg["learning_rate"]),
        batch_size=int(cfg["batch_size"]),
        epochs=int(cfg["epochs"]),
        crop_fraction=float(cfg["crop_fraction"]),
        target_scale=float(cfg["target_scale"]),
        fix_feature_scale=float(cfg["fix_feature_scale"]),
        seed=int(cfg["seed"]),
        checkpoint_every=int(cfg["checkpoint_every"]),
    )
    splits = tuple(float(f) for f in cfg["splits"])

    targeted = make_targets(samples, header.mode, gcp=header.gcp, zone=header.zone)
    train_seg, val_seg, _test_seg = split_trajectory(targeted, splits)
    store = ImageStore(os.path.dirname(os.path.abspath(args.manifest)))

    def progress(epoch, train_loss, val_loss, val_err):
        print(f"epoch {epoch}/{train_config.epochs}  train {train_loss:.5f}  "
              f"val {val_loss:.5f}  val_err {val_err:.3f} m", file=sys.stderr)

    state = train(train_seg, val_seg, store, model_config, train_config,
                  checkpoint_dir=str(out) if train_config.checkpoint_every else None,
                  zone=header.zone, progress=progress if args.verbose else None)

    save_params(out / "checkpoint.bin", state.best_params)
    write_train_log(out / "trainlog.csv", state)
    sidecar = {
        "model": {
            "input_size": model_config.input_size,
            "in_channels": model_config.in_channels,
            "stage_widths": list(model_config.stage_widths),
            "feature_dim": model_config.feature_dim,
            "lstm_layers": model_config.lstm_layers,
            "lstm_hidden": model_config.lstm_hidden,
            "use_fix_features": model_config.use_fix_features,
            "fix_shortcut_gain": model_config.fix_shortcut_gain,
            "sequence_split": model_config.sequence_split,
        },
        "target_scale": train_config.target_scale,
        "fix_feature_scale": train_config.fix_feature_scale,
        "crop_fraction": train_config.crop_fraction,
        "mode": header.mode,
        "gcp": _geo_or_none(header.gcp),
        "fix_ref": _geo_or_none(state.fix_ref),
        "zone": header.zone,
        "splits": list(splits),
        "best_epoch": state.best_epoch,
        "best_val_meter_error": state.best_val_meter_error,
    }
    with open(out / "model.json", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(sidecar, sort_keys=True, indent=2) + "\n")
    write_resolved(out, "train", cfg)
    print(f"train: {state.epoch} epochs on {len(train_seg)} samples; "
          f"best val error {state.best_val_meter_error:.3f} m at epoch {state.best_epoch}")
    return 0


# ---------------------------------------------------------------------------
# eval


EVAL_DEFAULTS = {
    "split": "test",
    "window": 9,
    "seed": 0,
}


def _load_model_dir(model_dir):
    model_dir = Path(model_dir)
    sidecar_path = model_dir / "model.json"
    ckpt_path = model_dir / "checkpoint.bin"
    with open(sidecar_path, encoding="utf-8") as fh:
        try:
            sidecar = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{sidecar_path}: not valid JSON: {exc}") from exc
    try:
        model_config = ModelConfig(
            input_size=int(sidecar["model"]["input_size"]),
            in_channels=int(sidecar["model"]["in_channels"]),
            stage_widths=tuple(int(w) for w in sidecar["model"]["stage_widths"]),
            feature_dim=int(sidecar["model"]["feature_dim"]),
            lstm_layers=int(sidecar["model"]["lstm_layers"]),
            lstm_hidden=int(sidecar["model"]["lstm_hidden"]),
            use_fix_features=bool(sidecar["model"]["use_fix_features"]),
            fix_shortcut_gain=float(sidecar["model"]["fix_shortcut_gain"]),
            sequence_split=int(sidecar["model"]["sequence_split"]),
        )
    except KeyError as exc:
        raise ConfigError(f"{sidecar_path}: missing key {exc}") from exc
    params = load_params(ckpt_path)
    validate_params(params, model_config)
    return sidecar, model_config, params


def _predict_track(segment, store, params, model_config, sidecar, zone):
    target_scale = float(sidecar["target_scale"])
    crop_fraction = float(sidecar["crop_fraction"])
    fix_feats = None
    if model_config.use_fix_features:
        if sidecar.get("fix_ref") is None:
            raise ConfigError("model consumes fix features but sidecar has no fix_ref")
        ref = GeoPoint(*sidecar["fix_ref"])
        fix_feats = fix_features(segment, ref, float(sidecar["fix_feature_scale"]), zone)
    deltas = np.zeros((len(segment), 2))
    for start in range(0, len(segment), 64):
        chunk = segment[start:start + 64]
        crops = []
        for s in chunk:
            img = center_crop(store.load(s.image_ref), crop_fraction,
                              model_config.input_size)
            crops.append(img[None] if img.ndim == 2 else img)
        x = np.stack(crops, axis=0)
        ff = None if fix_feats is None else fix_feats[start:start + 64]
        deltas[start:start + len(chunk)] = forward(x, ff, params, model_config).data
    deltas *= target_scale
    track = []
    for s, (de, dn) in zip(segment, deltas):
        track.append(apply_delta(s.anchor, DeltaLocation(float(de), float(dn)), zone))
    return track


def cmd_eval(args) -> int:
    cfg = resolve_config(EVAL_DEFAULTS, args.config, args)
    header, samples = load_manifest(args.manifest)
    sidecar, model_config, params = _load_model_dir(args.model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if sidecar["mode"] != header.mode:
        raise ConfigError(
            f"model was trained in {sidecar['mode']!r} mode but the manifest "
            f"is {header.mode!r}")
    targeted = make_targets(samples, header.mode, gcp=header.gcp, zone=header.zone)
    splits = tuple(float(f) for f in sidecar["splits"])
    segments = dict(zip(("train", "val", "test"), split_trajectory(targeted, splits)))
    segments["all"] = targeted
    which = str(cfg["split"])
    if which not in segments:
        raise ConfigError(f"split must be one of train/val/test/all, got {which!r}")
    segment = segments[which]

    for i, s in enumerate(segment):
        if s.truth is None:
            raise IncompleteSampleError(
                f"evaluation sample {i} ({s.image_ref}) has no truth position")
    truth = [s.truth for s in segment]
    store = ImageStore(os.path.dirname(os.path.abspath(args.manifest)))
    predicted = _predict_track(segment, store, params, model_config, sidecar,
                               header.zone)

    rows = []
    tracks = [("truth", truth)]
    if all(s.raw_fix is not None for s in segment):
        raw = [s.raw_fix for s in segment]
        filtered = moving_average_filter(raw, int(cfg["window"]), header.zone)
        rows.append(("raw", raw, truth))
        rows.append(("filtered", filtered, truth))
        tracks.append(("raw", raw))
        tracks.append(("filtered", filtered))
    rows.append(("model", predicted, truth))
    tracks.append(("predicted", predicted))

    text, csv = compare_table(rows, zone=header.zone)
    with open(out / "table.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    with open(out / "table.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(csv)
    export_tracks_geojson(out / "tracks.geojson", tracks)
    write_resolved(out, "eval", cfg)
    print(text, end="")
    return 0


# ---------------------------------------------------------------------------
# convert / export


def cmd_convert(args) -> int:
    point = GeoPoint(args.lat, args.lon)
    coord = geo_to_utm(point, zone=args.zone)
    print(f"zone {coord.zone} {coord.hemisphere} "
          f"easting {coord.easting:.6f} northing {coord.northing:.6f}")
    return 0


def cmd_export(args) -> int:
    header, samples = load_manifest(args.manifest)
    tracks = []
    if all(s.truth is not None for s in samples) and samples:
        tracks.append(("truth", [s.truth for s in samples]))
    if all(s.raw_fix is not None for s in samples) and samples:
        raw = [s.raw_fix for s in samples]
        tracks.append(("raw", raw))
        if args.window is not None:
            tracks.append(("filtered",
                           moving_average_filter(raw, args.window, header.zone)))
    if not tracks:
        raise ManifestError("manifest has no complete truth or raw track to export")
    out = Path(args.out)
    if out.parent != Path("."):
        out.parent.mkdir(parents=True, exist_ok=True)
    export_tracks_geojson(out, tracks)
    print(f"export: wrote {len(tracks)} tracks to {out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deltaloc",
        description="Deep direct localization: correct noisy GPS fixes from images.",
        epilog=EXIT_CODES_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="subcommand", required=True, metavar="SUBCOMMAND")

    p = sub.add_parser("synth", help="generate a synthetic world, images, and manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="texture seed (default 0)")
    p.add_argument("--length", type=float, help="course length in meters")
    p.add_argument("--spacing", type=float, help="waypoint spacing in meters")
    p.add_argument("--image-size", dest="image_size", type=int, help="rendered pixels per side")
    p.add_argument("--encoding-strength", dest="encoding_strength", type=float)
    p.add_argument("--course", choices=("loop", "line"))
    p.add_argument("--laps", type=int,
                   help="repeat the course this many times within --length")
    p.add_argument("--footprint", type=float, help="ground meters one image covers")
    p.add_argument("--center-lat", dest="center_lat", type=float)
    p.add_argument("--center-lon", dest="center_lon", type=float)
    p.add_argument("--mode", choices=("gps-relative", "gcp"))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("noise", help="inject calibrated GPS noise into a manifest")
    p.add_argument("--manifest", required=True, help="input manifest.csv")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="noise seed (default 0)")
    p.add_argument("--mean", type=float, help="target mean error in meters")
    p.add_argument("--sd", type=float, help="target error sd in meters")
    p.add_argument("--clip-lo", dest="clip_lo", type=float)
    p.add_argument("--clip-hi", dest="clip_hi", type=float)
    p.add_argument("--rho", type=float, help="AR(1) heading correlation in [0, 1)")
    p.set_defaults(func=cmd_noise)

    p = sub.add_parser("train", help="train the delta regressor on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="init/shuffle/crop seed (default 0)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--input-size", dest="input_size", type=int)
    p.add_argument("--stage-widths", dest="stage_widths", type=_parse_ints,
                   help="comma-separated channel widths, e.g. 8,16,32")
    p.add_argument("--feature-dim", dest="feature_dim", type=int)
    p.add_argument("--lstm-layers", dest="lstm_layers", type=int)
    p.add_argument("--lstm-hidden", dest="lstm_hidden", type=int)
    p.add_argument("--sequence-split", dest="sequence_split", type=int)
    p.add_argument("--use-fix-features", dest="use_fix_features",
                   action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--crop-fraction", dest="crop_fraction", type=float)
    p.add_argument("--target-scale", dest="target_scale", type=float)
    p.add_argument("--fix-feature-scale", dest="fix_feature_scale", type=float)
    p.add_argument("--splits", type=lambda s: _parse_floats(s, 3, "splits"),
                   help="train,val,test fractions, e.g. 0.7,0.15,0.15")
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--verbose", action="store_true", help="per-epoch progress on stderr")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="compare raw/filtered/model tracks against truth")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True, help="directory with checkpoint.bin + model.json")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--split", choices=("train", "val", "test", "all"))
    p.add_argument("--window", type=int, help="moving-average window (odd, default 9)")
    p.add_argument("--seed", type=int, help="unused; accepted for uniformity")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("convert", help="convert a lat/lon to UTM")
    p.add_argument("--lat", type=float, required=True)
    p.add_argument("--lon", type=float, required=True)
    p.add_argument("--zone", type=int, help="pin a zone instead of deriving it")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("export", help="export manifest tracks to GeoJSON")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output .geojson file")
    p.add_argument("--window", type=int,
                   help="also export a moving-average filtered track")
    p.set_defaults(func=cmd_export)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        _fail(f"file not found: {exc.filename or exc}")
        return 3
    except (ManifestError, ConfigError) as exc:
        _fail(f"{type(exc).__name__}: {exc}")
        return 4
    except DivergenceError as exc:
        _fail(f"DivergenceError: {exc}")
        return 5
    except DomainError as exc:
        _fail(f"{type(exc).__name__}: {exc}")
        return 6
    except DeltaLocError as exc:
        _fail(f"{type(exc).__name__}: {exc}")
        return 7


def run() -> None:
    sys.exit(main())
