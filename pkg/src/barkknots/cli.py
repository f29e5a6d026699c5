"""Command-line entry point.

Every subcommand accepts ``--config FILE`` (a JSON object whose keys are
the subcommand's option names) plus flags; flags override the file.
Results are printed as ``name value`` lines.

Exit codes: 0 success, 2 usage error, 3 invalid configuration,
4 unreadable or malformed input data.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import extract, io, metrics, raster, synthesis
from .errors import BarkKnotsError, ConfigError, FormatError

EXIT_USAGE, EXIT_CONFIG, EXIT_DATA = 2, 3, 4


@dataclass(frozen=True)
class Opt:
    name: str
    kind: str  # int, float, str, path, flag, dims, floats, choice
    default: object = None
    required: bool = False
    check: object = None  # callable(value) -> error message or None
    choices: tuple = ()
    help: str = ""


def _positive(v):
    return None if v > 0 else "must be > 0"


def _non_negative(v):
    return None if v >= 0 else "must be >= 0"


def _k_range(v):
    return None if synthesis.K_MIN <= v <= synthesis.K_MAX else f"must be in [{synthesis.K_MIN}, {synthesis.K_MAX}]"


def _unit(v):
    return None if 0 <= v <= 1 else "must be in [0, 1]"


def _odd3(v):
    return None if v >= 3 and v % 2 == 1 else "must be an odd integer >= 3"


def _dims(v):
    return None if len(v) == 3 and all(d > 0 for d in v) else "must be three positive integers"


SEED = Opt("seed", "int", required=True, check=_non_negative, help="random seed (required)")
MANIFEST = Opt("manifest", "path", required=True, help="manifest.jsonl written by forge")
LOG = Opt("log", "str", required=True, help="log id from the manifest")
EXTENT = Opt("extent", "float", raster.EXTENT, check=_positive, help="half-width of the field of view")
HEIGHT = Opt("height", "float", synthesis.DEFAULT_CONFIG.height, check=_positive, help="log height")

COMMANDS = {
    "forge": [
        Opt("per_k", "int", required=True, check=_positive, help="logs per knot count"),
        Opt("k_min", "int", synthesis.K_MIN, check=_k_range),
        Opt("k_max", "int", synthesis.K_MAX, check=_k_range),
        SEED,
        Opt("out", "path", required=True, help="output directory"),
    ],
    "split": [
        MANIFEST,
        SEED,
        Opt("fractions", "floats", metrics.SPLIT_FRACTIONS),
        Opt("out", "path", required=True),
    ],
    "render": [
        MANIFEST,
        LOG,
        Opt("kind", "choice", "patch", choices=("patch", "half-plane", "cross-section", "stack", "annotations")),
        Opt("theta", "float", 0.0, help="azimuth in degrees (patch, half-plane)"),
        Opt("z", "float", None, help="height of the cross-section (default: mid-height)"),
        Opt("size", "int", 512, check=_positive),
        Opt("slices", "int", 64, check=_positive),
        EXTENT,
        Opt("r_max", "float", raster.R_MAX, check=_positive),
        Opt("out", "path", required=True),
    ],
    "voxelize": [
        MANIFEST,
        LOG,
        Opt("dims", "dims", raster.VOLUME_DIMS, check=_dims),
        EXTENT,
        Opt("out_input", "path", required=True),
        Opt("out_target", "path", required=True),
    ],
    "sequence": [Opt("volume", "path", required=True), Opt("out", "path", required=True)],
    "extract": [
        Opt("stack", "path", required=True, help="cross-section stack (nx, ny, nz)"),
        Opt("rays", "int", extract.DEFAULT_EXTRACT.rays, check=lambda v: None if v >= 8 else "must be >= 8"),
        Opt("out", "path", required=True, help="contours (rays, nz), pixels"),
    ],
    "detect": [
        Opt("stack", "path", required=True),
        Opt("log", "str", "log"),
        Opt("density_threshold", "float", extract.DEFAULT_EXTRACT.density_threshold, check=_unit),
        Opt("min_area", "int", extract.DEFAULT_EXTRACT.min_area, check=_positive),
        Opt("out", "path", required=True),
    ],
    "track": [
        Opt("detections", "path", required=True),
        Opt("max_gap", "int", extract.DEFAULT_EXTRACT.max_gap, check=_non_negative),
        Opt("max_jump", "float", extract.DEFAULT_EXTRACT.max_jump_px, check=_positive),
        Opt("window", "int", extract.DEFAULT_EXTRACT.size_window, check=_odd3),
        Opt("min_length", "int", extract.DEFAULT_EXTRACT.min_track_length, check=_positive),
        Opt("out", "path", required=True),
    ],
    "train": [
        MANIFEST,
        Opt("split", "path", required=True),
        SEED,
        Opt("epochs", "int", 50, check=_positive),
        Opt("batch_size", "int", 2, check=_positive),
        Opt("azimuths", "int", 8, check=_positive),
        Opt("channels", "floats", (16, 32, 64)),
        Opt("out", "path", required=True, help="checkpoint file"),
        Opt("history", "path", None, help="training history (JSON lines)"),
    ],
    "predict": [
        Opt("checkpoint", "path", required=True),
        MANIFEST,
        LOG,
        Opt("slices", "int", 90, check=lambda v: None if v >= 4 else "must be >= 4"),
        Opt("out", "path", required=True, help="half-planes (cols, rows, slices)"),
    ],
    "reconstruct": [
        Opt("halfplanes", "path", required=True),
        Opt("dims", "dims", raster.VOLUME_DIMS, check=_dims),
        EXTENT,
        HEIGHT,
        Opt("r_max", "float", raster.R_MAX, check=_positive),
        Opt("out", "path", required=True),
    ],
    "eval-rmse": [],  # positional a b
    "eval-map": [
        Opt("preds", "path", required=True),
        Opt("gt", "path", required=True),
        Opt("iou", "floats", (0.5, 0.75)),
    ],
    "export-vtk": [
        Opt("volume", "path", required=True),
        EXTENT,
        HEIGHT,
        Opt("binary", "flag", False),
        Opt("out", "path", required=True),
    ],
    "diagnostics": [],
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


SUMMARIES = {
    "forge": "write a manifest of random log specs",
    "render": "render a patch, half-plane, cross-section, slice stack or annotations",
    "voxelize": "sample the bark shell and density on a grid",
    "sequence": "reorder a volume into a 64-view sequence",
    "split": "stratified train/val/test split of a manifest",
    "extract": "bark contours of a slice stack",
    "detect": "knot blobs in every slice of a stack",
    "track": "link detections into knot tracks",
    "train": "train the encoder-decoder on patch/half-plane pairs",
    "predict": "predict half-planes for one log",
    "reconstruct": "rebuild a volume from half-planes",
    "eval-rmse": "RMSE between two volumes",
    "eval-map": "mAP of detections against ground truth",
    "export-vtk": "write a volume as legacy VTK structured points",
    "diagnostics": "resolution and dataset arithmetic",
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="barkknots", description="Synthetic log knots: data, extraction, training, evaluation.")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True
    for name, opts in COMMANDS.items():
        sp = sub.add_parser(name, help=SUMMARIES.get(name), description=SUMMARIES.get(name))
        sp.add_argument("--config", type=Path, default=None, help="JSON config file")
        if name == "eval-rmse":
            sp.add_argument("a")
            sp.add_argument("b")
        for o in opts:
            flag = "--" + o.name.replace("_", "-")
            if o.kind == "flag":
                sp.add_argument(flag, dest=o.name, action="store_true", default=None, help=o.help)
            else:
                sp.add_argument(flag, dest=o.name, default=None, help=o.help)
    return p


def _convert(o: Opt, raw):
    if raw is None:
        return None
    if o.kind == "int":
        if isinstance(raw, bool) or (isinstance(raw, float) and not raw.is_integer()):
            raise ValueError("expected an integer")
        return int(raw)
    if o.kind == "float":
        if isinstance(raw, bool):
            raise ValueError("expected a number")
        v = float(raw)
        if not math.isfinite(v):
            raise ValueError("expected a finite number")
        return v
    if o.kind in ("str", "path"):
        if not isinstance(raw, str):
            raise ValueError("expected a string")
        return Path(raw) if o.kind == "path" else raw
    if o.kind == "flag":
        if not isinstance(raw, bool):
            raise ValueError("expected true or false")
        return raw
    if o.kind == "choice":
        if raw not in o.choices:
            raise ValueError(f"expected one of {', '.join(o.choices)}")
        return raw
    if o.kind in ("dims", "floats"):
        items = raw.split(",") if isinstance(raw, str) else list(raw)
        vals = [float(v) for v in items]
        if o.kind == "dims":
            if not all(v.is_integer() for v in vals):
                raise ValueError("expected integers")
            return tuple(int(v) for v in vals)
        return tuple(vals)
    raise AssertionError(o.kind)


def resolve_options(command: str, args: argparse.Namespace) -> dict:
    """Merge defaults, the config file and flags; raise ConfigError on problems."""
    opts = COMMANDS[command]
    known = {o.name for o in opts}
    cfg = {}
    problems = []
    if args.config is not None:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError([("config", str(exc))]) from exc
        if not isinstance(cfg, dict):
            raise ConfigError([("config", "must be a JSON object")])
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        for k in sorted(set(cfg) - known):
            problems.append((k, "unknown option"))
    out = {}
    for o in opts:
        raw = getattr(args, o.name, None)
        src = raw if raw is not None else cfg.get(o.name)
        try:
            val = _convert(o, src)
        except (TypeError, ValueError) as exc:
            problems.append((o.name, str(exc)))
            continue
        if val is None:
            if o.required:
                problems.append((o.name, "is required"))
                continue
            val = o.default
        elif o.check is not None:
            msg = o.check(val)
            if msg:
                problems.append((o.name, msg))
                continue
        out[o.name] = val
    if problems:
        raise ConfigError(problems)
    return out


def emit(name, value, stream=None):
    stream = stream or sys.stdout
    if isinstance(value, float):
        value = repr(value)
    print(f"{name} {value}", file=stream)


# ----------------------------------------------------------------------------
# helpers


def _entry(o):
    return io.read_manifest(o["manifest"]).by_id(o["log"])


def _stack_to_file(stack):
    """``[z, row, col]`` image stack -> WLOG dims ``(nx, ny, nz)``."""
    return np.ascontiguousarray(np.asarray(stack, dtype=np.float32).transpose(2, 1, 0))


def _stack_from_file(arr):
    if arr.ndim != 3:
        raise FormatError(f"expected a 3-D stack, got {arr.ndim} dims")
    return arr.transpose(2, 1, 0)


def _halfplanes_to_file(grids):
    return np.ascontiguousarray(np.stack(grids, axis=-1).transpose(1, 0, 2).astype(np.float32))


def _halfplanes_from_file(arr):
    if arr.ndim != 3:
        raise FormatError("expected a 3-D half-plane stack")
    return [arr[:, :, i].T for i in range(arr.shape[2])]


# ----------------------------------------------------------------------------
# commands


def cmd_forge(o):
    if o["k_min"] > o["k_max"]:
        raise ConfigError([("k_min", "must not exceed k_max")])
    man = synthesis.forge_dataset(o["per_k"], (o["k_min"], o["k_max"]), o["seed"])
    io.write_manifest(man, Path(o["out"]) / "manifest.jsonl")
    emit("logs", len(man))
    for k, n in man.counts_per_k().items():
        emit(f"k{k}", n)


def cmd_split(o):
    fr = o["fractions"]
    if len(fr) != 3 or abs(sum(fr) - 1.0) > 1e-9:
        raise ConfigError([("fractions", "must be three numbers summing to 1")])
    sp = metrics.split_dataset(io.read_manifest(o["manifest"]), fr, o["seed"])
    io.atomic_write_text(o["out"], json.dumps(sp.to_dict(), sort_keys=True) + "\n")
    for name, n in zip(("train", "val", "test"), sp.sizes()):
        emit(name, n)


def cmd_render(o):
    e = _entry(o)
    spec = e.spec
    kind = o["kind"]
    theta = math.radians(o["theta"])
    if kind == "patch":
        grid = raster.render_surface_patch(spec, theta).grid
        io.write_array(np.ascontiguousarray(grid.T.astype(np.float32)), o["out"])
    elif kind == "half-plane":
        grid = raster.render_half_plane(spec, theta, o["r_max"]).grid
        io.write_array(np.ascontiguousarray(grid.T.astype(np.float32)), o["out"])
    elif kind == "cross-section":
        z = spec.height / 2 if o["z"] is None else o["z"]
        img = raster.render_cross_section(spec, z, o["size"], o["extent"]).image
        io.write_array(np.ascontiguousarray(img.T.astype(np.float32)), o["out"])
    elif kind == "stack":
        stack = raster.render_stack(spec, o["size"], o["slices"], o["extent"])
        io.write_array(_stack_to_file(stack), o["out"])
    else:
        anns = raster.annotate_slices(spec, o["size"], o["slices"], o["extent"])
        recs = []
        for a in anns:
            for el, box in zip(a.ellipses, a.boxes):
                det = extract.EllipseDetection(a.z_index, box, el, 1.0)
                recs.append(io.detection_to_record(det, e.id, "ground_truth", o["size"]))
        io.write_detections(recs, o["out"])
        emit("annotations", len(recs))
    emit("written", o["out"])


def cmd_voxelize(o):
    spec = _entry(o).spec
    vin, vt = raster.voxelize(spec, o["dims"], o["extent"])
    io.write_volume(vin, o["out_input"])
    io.write_volume(vt, o["out_target"])
    emit("dims", " ".join(str(d) for d in vt.dims))


def cmd_sequence(o):
    vol = io.read_volume(o["volume"])
    views = raster.sequence_views(vol)
    io.write_array(_stack_to_file(views), o["out"])
    emit("views", len(views))


def cmd_extract(o):
    stack = _stack_from_file(io.read_array(o["stack"]))
    contours = []
    for img in stack:
        work = extract.median_filter_3x3(extract.recenter_to_pith(img))
        contours.append(extract.extract_bark_contour(work, o["rays"]))
    io.write_array(np.ascontiguousarray(np.array(contours, dtype=np.float64).T), o["out"])
    emit("slices", len(contours))
    emit("mean_radius_px", float(np.mean(contours)))


def cmd_detect(o):
    stack = _stack_from_file(io.read_array(o["stack"]))
    cfg = extract.ExtractConfig(density_threshold=o["density_threshold"], min_area=o["min_area"])
    res = extract.process_stack(stack, cfg)
    size = stack.shape[1]
    recs = [io.detection_to_record(d, o["log"], "detector", size) for dets in res.detections for d in dets]
    io.write_detections(recs, o["out"])
    emit("detections", len(recs))


def cmd_track(o):
    recs = io.read_detections(o["detections"])
    groups: dict = {}
    for r in recs:
        groups.setdefault(r["log_id"], []).append(r)
    out = []
    n_tracks = 0
    for log_id in sorted(groups):
        rs = groups[log_id]
        size = rs[0]["image_size"]
        nz = max(r["z_index"] for r in rs) + 1
        per_slice = [[] for _ in range(nz)]
        for r in rs:
            per_slice[r["z_index"]].append(io.record_to_detection(r))
        tracks = extract.track_knots(per_slice, o["max_gap"], o["max_jump"])
        tracks = extract.filter_short_tracks(tracks, o["min_length"])
        for tid, t in enumerate(extract.smooth_track_sizes(t, o["window"]) for t in tracks):
            n_tracks += 1
            for e in t.entries:
                rec = io.detection_to_record(e.detection, log_id, "tracker", size)
                rec["track"] = tid
                rec["interpolated"] = e.interpolated
                out.append(rec)
    io.write_detections(out, o["out"])
    emit("tracks", n_tracks)
    emit("entries", len(out))


def cmd_train(o):
    from . import minimodel as mm

    man = io.read_manifest(o["manifest"])
    sp = metrics.SplitAssignment.from_dict(json.loads(Path(o["split"]).read_text()))
    specs = {e.id: e.spec for e in man}
    try:
        sets = [[specs[i] for i in ids] for ids in (sp.train, sp.val, sp.test)]
    except KeyError as exc:
        raise FormatError(f"split references unknown log {exc}") from exc
    xtr, ytr = mm.build_patch_dataset(sets[0], o["azimuths"])
    xva, yva = mm.build_patch_dataset(sets[1], o["azimuths"])
    channels = tuple(int(c) for c in o["channels"])
    cfg = mm.TrainConfig(epochs=o["epochs"], batch_size=o["batch_size"], seed=o["seed"])
    res = mm.train(mm.ModelSpec(channels=channels), cfg, mm.TrainData(xtr, ytr, xva, yva))
    mm.save_checkpoint(res.model, o["out"], {"train_config": cfg.to_dict(), "best_epoch": res.best_epoch})
    if o["history"] is not None:
        io.atomic_write_text(o["history"], "".join(ln + "\n" for ln in res.history_lines()))
    emit("best_epoch", res.best_epoch)
    emit("val_loss", res.history[res.best_epoch - 1]["val_loss"])
    if sets[2]:
        xte, yte = mm.build_patch_dataset(sets[2], o["azimuths"])
        emit("test_rmse", metrics.rmse(res.model.predict(xte), yte))
        emit("baseline_rmse", metrics.rmse(mm.baseline_mean(ytr).predict(xte), yte))


def cmd_predict(o):
    from . import minimodel as mm

    model, _ = mm.load_checkpoint(o["checkpoint"])
    spec = _entry(o).spec
    thetas = raster.uniform_azimuths(o["slices"])
    x = np.stack([raster.render_surface_patch(spec, t).grid for t in thetas])
    pred = model.predict(mm.encode_patches(x))
    io.write_array(_halfplanes_to_file(list(pred)), o["out"])
    emit("slices", len(thetas))


def cmd_reconstruct(o):
    grids = _halfplanes_from_file(io.read_array(o["halfplanes"]))
    thetas = raster.uniform_azimuths(len(grids))
    zr = (0.0, o["height"])
    slices = [(t, raster.HalfPlaneTarget(g, float(t), o["r_max"], zr)) for t, g in zip(thetas, grids)]
    vol = raster.reconstruct_volume(slices, o["dims"], o["extent"], zr)
    io.write_volume(vol, o["out"])
    emit("dims", " ".join(str(d) for d in vol.dims))


def cmd_eval_rmse(a, b):
    emit("rmse", metrics.rmse(io.read_volume(a), io.read_volume(b)))


def _scored(recs):
    return [metrics.Scored((r["log_id"], r["z_index"]), tuple(r["box"]), r["score"]) for r in recs]


def cmd_eval_map(o):
    preds = _scored(io.read_detections(o["preds"]))
    gts = _scored(io.read_detections(o["gt"]))
    for t in o["iou"]:
        emit(f"map@{int(round(t * 100))}", metrics.mean_average_precision(preds, gts, t))


def cmd_export_vtk(o):
    vol = io.read_volume(o["volume"], extent=o["extent"], z_range=(0.0, o["height"]))
    io.export_vtk(vol, o["out"], binary=bool(o["binary"]))
    emit("points", int(np.prod(vol.dims)))


def cmd_diagnostics(o):
    emit("patch_px_per_degree", raster.patch_px_per_degree())
    emit("voxel_px_per_degree", raster.voxel_px_per_degree())
    per_k, n_k = 300, synthesis.K_MAX - synthesis.K_MIN + 1
    n = per_k * n_k
    emit("dataset_logs", n)
    sizes = [metrics._round_half_up(f * n) for f in metrics.SPLIT_FRACTIONS[:2]]
    emit("split_train", sizes[0])
    emit("split_val", sizes[1])
    emit("split_test", n - sum(sizes))


HANDLERS = {
    "forge": cmd_forge,
    "split": cmd_split,
    "render": cmd_render,
    "voxelize": cmd_voxelize,
    "sequence": cmd_sequence,
    "extract": cmd_extract,
    "detect": cmd_detect,
    "track": cmd_track,
    "train": cmd_train,
    "predict": cmd_predict,
    "reconstruct": cmd_reconstruct,
    "eval-map": cmd_eval_map,
    "export-vtk": cmd_export_vtk,
    "diagnostics": cmd_diagnostics,
}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        opts = resolve_options(args.command, args)
        if args.command == "eval-rmse":
            cmd_eval_rmse(args.a, args.b)
        else:
            HANDLERS[args.command](opts)
    except ConfigError as exc:
        for field, msg in exc.problems:
            print(f"config error: {field}: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except (BarkKnotsError, OSError, KeyError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


def main():
    sys.exit(run_cli())
