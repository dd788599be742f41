"""Command-line entry point: ``meshconf <subcommand> [options]``.

Exit codes: 0 success, 1 runtime failure (adapter crash, diverged training,
partial sensitivity map), 2 usage or validation error.

Option values come from, in order of precedence: the command line, the JSON
file given by ``--config`` (flat keys, or a section named after the
subcommand), and the built-in defaults shown in ``--help``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from ._io import atomic_write
from .estimators import (
    TECHNIQUES,
    Artifacts,
    FeatureStats,
    LinearJointModel,
    MlpModel,
    TrainConfig,
    fit_linear,
    train_mesh_classifier,
    train_worst_joint_classifier,
)
from .evaluation import AblationTable, SampleLabels, evaluate, format_report, predict, synthetic_benchmark
from .estimators.base import label_arrays
from .geometry import SMPL_NUM_VERTICES, load_mesh, load_regressor
from .joints import NUM_JOINTS, Joint
from .metrics import SeVector, feature_matrix, pearson_from_arrays
from .poses import dumps_dataset, load_dataset
from .sensitivity import (
    ESTIMATORS,
    FileAdapter,
    SubprocessAdapter,
    association_from_regressor,
    colored_ply,
    colorize_mesh,
    load_association,
    read_map_csv,
    sweep_joints,
    sweep_locations,
)
from .synth import SynthConfig, generate, make_adapter

DEFAULT_SEED = 0
GLOBAL_DEFAULTS = {"config": None, "seed": DEFAULT_SEED, "jobs": 1, "format": "text", "threshold": 10.0}


class UsageError(Exception):
    """Bad flags or inputs; exit status 2."""


# ---------------------------------------------------------------------------
# feature files


@dataclass
class Features:
    """Rows of a feature file: ED with undetected joints masked, and SE."""

    image_ids: List[str]
    splits: List[str]
    ed: np.ndarray
    mask: np.ndarray
    se: np.ndarray
    name: str = "features"

    def __len__(self) -> int:
        return len(self.image_ids)

    def select(self, split: str) -> "Features":
        if split == "all":
            return self
        keep = np.array([s == split for s in self.splits], dtype=bool)
        idx = np.flatnonzero(keep)
        return Features(
            [self.image_ids[i] for i in idx], [self.splits[i] for i in idx],
            self.ed[keep], self.mask[keep], self.se[keep], self.name,
        )

    def arrays(self):
        return self.ed, self.mask, self.se


def _empty_features(name: str) -> Features:
    z = np.zeros((0, NUM_JOINTS))
    return Features([], [], z, z.astype(bool), z.copy(), name)


def dumps_features(dataset, normalize: bool = False) -> str:
    ed, mask, se = feature_matrix(dataset, normalize)
    lines = []
    for s, e, m, v in zip(dataset, ed, mask, se):
        row = {
            "image_id": s.image_id,
            "split": s.split,
            "ed": [float(x) if ok else None for x, ok in zip(e, m)],
            "se": [float(x) for x in v],
        }
        lines.append(json.dumps(row))
    return "".join(line + "\n" for line in lines)


def load_features(path: str) -> Features:
    """Feature file rows, or a pose fixture whose features are computed on the fly."""
    name = os.path.splitext(os.path.basename(path))[0]
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        return _empty_features(name)
    first = json.loads(lines[0])
    if "ed" not in first:
        ds = load_dataset(path)
        ed, mask, se = feature_matrix(ds)
        return Features([s.image_id for s in ds], [s.split for s in ds], ed, mask, se, name)
    ids, splits, ed, mask, se = [], [], [], [], []
    for lineno, line in enumerate(lines, 1):
        try:
            row = json.loads(line)
            e = [np.nan if v is None else float(v) for v in row["ed"]]
            s = [float(v) for v in row["se"]]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"{path} line {lineno}: bad feature row ({exc})") from None
        if len(e) != NUM_JOINTS or len(s) != NUM_JOINTS:
            raise UsageError(f"{path} line {lineno}: expected {NUM_JOINTS} ED and SE values")
        ids.append(str(row["image_id"]))
        splits.append(str(row.get("split", "test")))
        ed.append(e)
        mask.append([v is not None for v in row["ed"]])
        se.append(s)
    ed_a = np.array(ed, dtype=np.float64)
    return Features(ids, splits, np.where(np.isnan(ed_a), 0.0, ed_a), np.array(mask), np.array(se), name)


# ---------------------------------------------------------------------------
# small helpers


def _emit(args, text: str, out: Optional[str] = None) -> None:
    sys.stdout.write(text)
    if out:
        atomic_write(out, text)


def _write_json(path: str, doc: dict) -> None:
    atomic_write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _read_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.learning_rate, batch_size=args.batch_size, epochs=args.epochs,
        patience=args.patience, seed=args.seed,
    )


def _split_rows(feats: Features, split: str, what: str) -> Features:
    rows = feats.select(split)
    if not len(rows):
        raise UsageError(f"no {what} rows (split {split!r}) in {feats.name}")
    return rows


def _load_model(path: Optional[str], kind: str):
    if path is None:
        return None, None
    doc = _read_json(path)
    if kind == "linear":
        model = LinearJointModel.from_dict(doc)
        stats = doc.get("input_stats")
        return model, FeatureStats.from_dict(stats) if stats else None
    model = MlpModel.from_dict(doc)
    return model, model.input_stats


def _artifacts(args, techniques: Sequence[str]) -> Artifacts:
    linear, lstats = _load_model(args.linear, "linear")
    mc, mstats = _load_model(args.mc, "mlp")
    wjc, wstats = _load_model(args.wjc, "mlp")
    if "linear" in techniques and linear is None:
        raise UsageError("technique 'linear' needs --linear MODEL")
    if "mlp" in techniques and (mc is None or wjc is None):
        raise UsageError("technique 'mlp' needs both --mc MODEL and --wjc MODEL")
    if mc is not None and mc.head != "binary":
        raise UsageError("--mc must be a mesh classifier (binary head)")
    if wjc is not None and wjc.head != "softmax":
        raise UsageError("--wjc must be a worst-joint classifier (softmax head)")
    stats = lstats or mstats or wstats
    return Artifacts(threshold=args.threshold, stats=stats, linear=linear, mc=mc, wjc=wjc)


def _techniques(spec: str) -> List[str]:
    items = [t.strip() for t in spec.split(",") if t.strip()]
    bad = [t for t in items if t not in TECHNIQUES]
    if bad or not items:
        raise UsageError(f"--techniques takes a comma list drawn from {','.join(TECHNIQUES)}")
    return items


def _report(feats: Features, artifacts: Artifacts, techniques, variant: str):
    if not len(feats):
        raise UsageError(f"no rows to evaluate in {feats.name}")
    ed, mask, se = feats.arrays()
    bad, worst = label_arrays(se, artifacts.threshold)
    labels = [SampleLabels(bool(b), Joint(int(w)), SeVector.full(s)) for b, w, s in zip(bad, worst, se)]
    pcc = pearson_from_arrays(ed, se, mask).mean_r
    preds = {t: predict(t, artifacts, ed, mask) for t in techniques}
    if all(p is None for p in next(iter(preds.values()))):
        raise UsageError(f"every sample in {feats.name} has zero detected joints")
    return evaluate(preds, labels, feats.name, variant, None if np.isnan(pcc) else float(pcc))


# ---------------------------------------------------------------------------
# subcommands


def cmd_compute(args) -> int:
    ds = load_dataset(args.dataset)
    atomic_write(args.output, dumps_features(ds, args.normalize))
    if args.format == "machine":
        print(json.dumps({"rows": len(ds), "output": args.output}))
    else:
        print(f"wrote {len(ds)} feature rows to {args.output}")
    return 0


def cmd_correlate(args) -> int:
    feats = load_features(args.input).select(args.split)
    report = pearson_from_arrays(feats.ed, feats.se, feats.mask)
    _emit(args, format_report(report, args.format), args.output)
    return 0


def cmd_fit_linear(args) -> int:
    train = _split_rows(load_features(args.input), args.split, "training")
    ed, mask, se = train.arrays()
    doc = fit_linear(ed, se, mask).to_dict()
    doc["input_stats"] = FeatureStats.fit(ed, mask).to_dict()
    doc["threshold"] = args.threshold
    _write_json(args.output, doc)
    print(f"fitted linear model on {len(train)} rows -> {args.output}")
    return 0


def _cmd_train(args, which: str) -> int:
    feats = load_features(args.input)
    train = _split_rows(feats, args.split, "training")
    val = load_features(args.val) if args.val else feats.select(args.val_split) if args.val_split != "none" else None
    val_arrays = val.arrays() if val is not None and len(val) else None
    cfg = _train_config(args)
    if which == "mc":
        model, hist = train_mesh_classifier(*train.arrays(), args.threshold, val_arrays, cfg)
    else:
        model, hist = train_worst_joint_classifier(*train.arrays(), val_arrays, cfg)
    _write_json(args.output, model.to_dict())
    summary = {
        "rows": len(train),
        "val_rows": len(val) if val_arrays is not None else 0,
        "best_epoch": hist.best_epoch,
        "epochs_run": len(hist.train_loss) - 1,
        "final_train_loss": hist.train_loss[-1],
        "output": args.output,
    }
    if args.format == "machine":
        print(json.dumps(summary, sort_keys=True))
    else:
        print(
            f"trained on {summary['rows']} rows ({summary['val_rows']} validation); "
            f"best epoch {summary['best_epoch']} of {summary['epochs_run']} -> {args.output}"
        )
    return 0


def cmd_train_mc(args) -> int:
    return _cmd_train(args, "mc")


def cmd_train_wjc(args) -> int:
    return _cmd_train(args, "wjc")


def cmd_evaluate(args) -> int:
    techniques = _techniques(args.techniques)
    artifacts = _artifacts(args, techniques)
    feats = load_features(args.input).select(args.split)
    report = _report(feats, artifacts, techniques, args.variant)
    _emit(args, format_report(report, args.format), args.output)
    return 0


def cmd_ablation(args) -> int:
    techniques = _techniques(args.techniques)
    if args.synthetic:
        table = synthetic_benchmark(
            seed=args.seed, n_train=args.n_train, n_test=args.n_test, occlusion_rate=args.occlusion_rate,
            target_rho=args.target_rho, threshold=args.threshold, config=_train_config(args), techniques=techniques,
        )
    else:
        if not args.variant:
            raise UsageError("give --synthetic or at least one --variant NAME=FEATURES")
        artifacts = _artifacts(args, techniques)
        reports = {}
        for item in args.variant:
            name, sep, path = item.partition("=")
            if not sep or not name or not path:
                raise UsageError(f"--variant expects NAME=PATH, got {item!r}")
            reports[name] = _report(load_features(path).select(args.split), artifacts, techniques, name)
        table = AblationTable(args.name, tuple(techniques), reports)
    _emit(args, format_report(table, args.format), args.output)
    return 0


def _adapter(args, dataset):
    spec = args.adapter
    if spec == "synthetic":
        return make_adapter(
            SynthConfig(seed=args.seed), dataset, args.estimator, base_error=args.base_error,
            occlusion_error=args.occlusion_error, boost=args.boost, miss_rate=args.miss_rate,
        )
    if spec.startswith("file:"):
        return FileAdapter(spec[5:])
    if spec.startswith("cmd:"):
        return SubprocessAdapter(spec[4:])
    raise UsageError("--adapter must be 'synthetic', 'file:PATH' or 'cmd:COMMAND'")


def _safe_name(image_id: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in image_id)


def cmd_sensitivity(args) -> int:
    ds = load_dataset(args.dataset)
    if not len(ds):
        raise UsageError(f"{args.dataset} holds no samples")
    adapter = _adapter(args, ds)
    try:
        if args.mode == "joint":
            maps = [sweep_joints(ds, adapter, args.size, estimator=args.estimator, jobs=args.jobs)]
            names = ["joint_map"]
        else:
            maps = sweep_locations(ds, adapter, args.size, args.stride, estimator=args.estimator, jobs=args.jobs)
            names = [_safe_name(m.image_id) for m in maps]
    finally:
        if isinstance(adapter, SubprocessAdapter):
            adapter.close()
    os.makedirs(args.out_dir, exist_ok=True)
    rows = []
    for name, m in zip(names, maps):
        atomic_write(os.path.join(args.out_dir, name + ".csv"), m.to_csv())
        if not args.no_pgm:
            atomic_write(os.path.join(args.out_dir, name + ".pgm"), m.to_pgm())
        g = np.atleast_2d(m.grid)
        rows.append({"map": name, "shape": list(g.shape), "missing": m.n_missing, "units": m.units})
    missing = sum(r["missing"] for r in rows)
    if args.format == "machine":
        print(json.dumps({"maps": rows, "missing_cells": missing}, sort_keys=True))
    else:
        for r in rows:
            print(f"{r['map']}: {r['shape'][0]}x{r['shape'][1]} {r['units']}, {r['missing']} missing")
    if missing:
        print(f"error: {missing} cells missing (adapter failures); maps are partial", file=sys.stderr)
        return 1
    return 0


def _joint_values(args) -> np.ndarray:
    if (args.values is None) == (args.one_hot is None):
        raise UsageError("give exactly one of --values FILE or --one-hot JOINT")
    if args.one_hot is not None:
        v = np.zeros(NUM_JOINTS)
        try:
            v[int(Joint.parse(int(args.one_hot) if args.one_hot.isdigit() else args.one_hot))] = 1.0
        except (KeyError, ValueError) as exc:
            raise UsageError(f"--one-hot: {exc}") from None
        return v
    with open(args.values, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        values = json.loads(text)
    except json.JSONDecodeError:
        m = read_map_csv(text)
        if m.kind != "joint":
            raise UsageError(f"{args.values} is a location map; colorize needs 14 joint values") from None
        values = m.grid
    if isinstance(values, dict):
        values = [values[j.label] for j in Joint]
    return np.asarray(values, dtype=np.float64)


def cmd_colorize(args) -> int:
    values = _joint_values(args)
    if (args.association is None) == (args.regressor is None):
        raise UsageError("give exactly one of --association FILE or --regressor FILE")
    if args.association is not None:
        assoc = load_association(args.association)
    else:
        assoc = association_from_regressor(load_regressor(args.regressor))
    if args.mesh is not None:
        vertices, faces = load_mesh(args.mesh)
    else:
        vertices, faces = np.zeros((args.n_vertices, 3)), None
    coloring = colorize_mesh(values, assoc, args.reduce, n_vertices=len(vertices))
    atomic_write(args.output, colored_ply(vertices, coloring.colors, faces))
    n_assoc = int(coloring.associated.sum())
    if args.format == "machine":
        print(json.dumps({"vertices": coloring.n_vertices, "associated": n_assoc, "output": args.output}))
    else:
        print(f"coloured {coloring.n_vertices} vertices ({n_assoc} associated) -> {args.output}")
    return 0


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        n_samples=args.n_samples, seed=args.seed, target_rho=args.target_rho, occlusion_rate=args.occlusion_rate,
        occlusion_error_boost=args.boost, detector_miss_rate=args.miss_rate, image_size=tuple(args.image_size),
        split=args.split, id_prefix=args.id_prefix,
    )
    ds = generate(cfg, start_index=args.start_index)
    atomic_write(args.output, dumps_dataset(ds))
    if args.format == "machine":
        print(json.dumps({"samples": len(ds), "output": args.output}))
    else:
        print(f"wrote {len(ds)} samples to {args.output}")
    return 0


# ---------------------------------------------------------------------------
# parser


class _Options:
    """Registers options with suppressed argparse defaults so config files can slot in between."""

    def __init__(self, parser: argparse.ArgumentParser, defaults: Dict[str, object]):
        self.parser = parser
        self.defaults = defaults

    def add(self, *flags, default=None, help: str = "", **kw):
        shown = f" (default: {default})" if default not in (None, False) else ""
        action = self.parser.add_argument(*flags, default=argparse.SUPPRESS, help=help + shown, **kw)
        self.defaults[action.dest] = default
        return action


def _common(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("global options")
    g.add_argument("--config", default=argparse.SUPPRESS, help="JSON file of option values (flat, or per-subcommand sections)")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help=f"random seed (default: {DEFAULT_SEED})")
    g.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="worker threads for sweeps (default: 1)")
    g.add_argument("--format", choices=("text", "machine"), default=argparse.SUPPRESS, help="report format; machine is JSON (default: text)")
    g.add_argument("--threshold", type=float, default=argparse.SUPPRESS, help="SE threshold for a bad mesh, in feature units (default: 10.0)")


def _training_flags(o: _Options) -> None:
    o.add("--epochs", type=int, default=200, help="maximum epochs")
    o.add("--patience", type=int, default=20, help="early-stopping patience in epochs")
    o.add("--learning-rate", type=float, default=1e-3, help="Adam step size")
    o.add("--batch-size", type=int, default=64, help="mini-batch size")


def _model_flags(o: _Options) -> None:
    o.add("--techniques", default=",".join(TECHNIQUES), help="comma list of techniques")
    o.add("--linear", help="linear model file (from fit-linear)")
    o.add("--mc", help="mesh classifier file (from train-mc)")
    o.add("--wjc", help="worst-joint classifier file (from train-wjc)")


COMMANDS = {
    "compute": (cmd_compute, "per-joint ED and SE feature rows from a pose fixture"),
    "correlate": (cmd_correlate, "per-joint Pearson correlation between ED and SE"),
    "fit-linear": (cmd_fit_linear, "fit the per-joint linear SE-from-ED model"),
    "train-mc": (cmd_train_mc, "train the mesh classifier"),
    "train-wjc": (cmd_train_wjc, "train the worst-joint classifier"),
    "evaluate": (cmd_evaluate, "score techniques on a test set"),
    "ablation": (cmd_ablation, "technique-by-variant table, from files or the synthetic benchmark"),
    "sensitivity": (cmd_sensitivity, "occlusion sensitivity maps through an estimator adapter"),
    "colorize": (cmd_colorize, "colour mesh vertices by per-joint values"),
    "synth": (cmd_synth, "generate a synthetic pose fixture"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="meshconf", description="Mesh confidence from mesh/detector disagreement.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _common(parser)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    defaults: Dict[str, Dict[str, object]] = {}
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        _common(p)
        o = _Options(p, defaults.setdefault(name, {}))
        if name == "compute":
            p.add_argument("dataset", help="pose fixture (JSONL)")
            o.add("-o", "--output", required=True, help="feature file to write")
            o.add("--normalize", action="store_true", default=False, help="rescale distances to a 224-pixel frame")
        elif name == "correlate":
            p.add_argument("input", help="feature file or pose fixture")
            o.add("-o", "--output", help="also write the report here")
            o.add("--split", default="all", help="rows to use: train, val, test or all")
        elif name == "fit-linear":
            p.add_argument("input", help="feature file or pose fixture")
            o.add("-o", "--output", required=True, help="model file to write")
            o.add("--split", default="train", help="training rows: train, val, test or all")
        elif name in ("train-mc", "train-wjc"):
            p.add_argument("input", help="feature file or pose fixture")
            o.add("-o", "--output", required=True, help="model file to write")
            o.add("--split", default="train", help="training rows: train, val, test or all")
            o.add("--val", help="separate validation feature file")
            o.add("--val-split", default="val", help="validation rows taken from the input when --val is absent ('none' disables)")
            _training_flags(o)
        elif name == "evaluate":
            p.add_argument("input", help="test feature file or pose fixture")
            _model_flags(o)
            o.add("-o", "--output", help="also write the report here")
            o.add("--split", default="all", help="rows to score: train, val, test or all")
            o.add("--variant", default="regular", help="variant label for the report")
        elif name == "ablation":
            _model_flags(o)
            o.add("--variant", action="append", help="NAME=FEATURES, repeatable")
            o.add("--split", default="all", help="rows to score in each variant file")
            o.add("--name", default="dataset", help="dataset label")
            o.add("--synthetic", action="store_true", default=False, help="train and score on the synthetic benchmark instead")
            o.add("--n-train", type=int, default=10000, help="synthetic training samples")
            o.add("--n-test", type=int, default=2000, help="synthetic test samples per variant")
            o.add("--occlusion-rate", type=float, default=0.5, help="synthetic occlusion rate")
            o.add("--target-rho", type=float, default=0.7, help="synthetic ED/SE correlation")
            _training_flags(o)
            o.add("-o", "--output", help="also write the table here")
        elif name == "sensitivity":
            p.add_argument("dataset", help="pose fixture (JSONL)")
            o.add("--adapter", default="synthetic", help="'synthetic', 'file:PATH' or 'cmd:COMMAND'")
            o.add("--mode", choices=("location", "joint"), default="location", help="occluder sweep type")
            o.add("--estimator", choices=ESTIMATORS, default="SPIN", help="whose error is measured")
            o.add("--size", type=int, default=40, help="occluder side in pixels")
            o.add("--stride", type=int, default=20, help="grid stride in pixels")
            o.add("--out-dir", required=True, help="directory for map files")
            o.add("--no-pgm", action="store_true", default=False, help="skip the grayscale images")
            o.add("--base-error", type=float, default=4.0, help="synthetic adapter: unoccluded error")
            o.add("--boost", type=float, default=3.0, help="synthetic adapter: occluded error multiplier")
            o.add("--occlusion-error", type=float, default=0.0, help="synthetic adapter: error added under the occluder")
            o.add("--miss-rate", type=float, default=0.0, help="synthetic adapter: detector drop rate under the occluder")
        elif name == "colorize":
            o.add("--values", help="JSON list/object of 14 joint values, or a joint sensitivity map")
            o.add("--one-hot", help="colour a single joint (name or index) at the ramp maximum")
            o.add("--association", help="vertex-to-joint table")
            o.add("--regressor", help="joint regressor file; vertices with positive weight are associated")
            o.add("--mesh", help="template mesh (OBJ, ASCII PLY or plain vertex text)")
            o.add("--n-vertices", type=int, default=SMPL_NUM_VERTICES, help="vertex count when no mesh is given")
            o.add("--reduce", choices=("mean", "max"), default="mean", help="combine values of multi-joint vertices")
            o.add("-o", "--output", required=True, help="coloured PLY to write")
        elif name == "synth":
            o.add("-o", "--output", required=True, help="fixture to write")
            o.add("--n-samples", type=int, default=1000, help="number of samples")
            o.add("--target-rho", type=float, default=0.7, help="ED/SE correlation of the base model")
            o.add("--occlusion-rate", type=float, default=0.0, help="fraction of samples with an occluded joint")
            o.add("--boost", type=float, default=3.0, help="error multiplier under occlusion")
            o.add("--miss-rate", type=float, default=0.5, help="probability the detector drops the occluded joint")
            o.add("--split", choices=("train", "val", "test"), default="train", help="split label")
            o.add("--start-index", type=int, default=0, help="index of the first sample's random stream")
            o.add("--image-size", type=int, nargs=2, default=[224, 224], metavar=("W", "H"), help="image size")
            o.add("--id-prefix", default="synth", help="image id prefix")
    return parser, defaults


def _resolve(ns: argparse.Namespace, defaults: Dict[str, Dict[str, object]]) -> argparse.Namespace:
    given = vars(ns)
    command = given["command"]
    own = defaults[command]
    merged = dict(GLOBAL_DEFAULTS)
    merged.update(own)
    path = given.get("config")
    if path:
        try:
            cfg = _read_json(path)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"--config {path}: {exc}") from None
        if not isinstance(cfg, dict):
            raise UsageError(f"--config {path}: expected a JSON object")
        known_anywhere = set(GLOBAL_DEFAULTS).union(*defaults.values())
        flat = {k.replace("-", "_"): v for k, v in cfg.items() if k not in defaults}
        section = {k.replace("-", "_"): v for k, v in (cfg.get(command) or {}).items()}
        for key in list(flat) + list(section):
            if key not in known_anywhere:
                raise UsageError(f"--config {path}: unknown option {key!r}")
        for key in section:
            if key not in merged:
                raise UsageError(f"--config {path}: option {key!r} does not apply to {command}")
        merged.update({k: v for k, v in flat.items() if k in merged})
        merged.update(section)
    merged.update(given)
    return argparse.Namespace(**merged)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser, defaults = build_parser()
    ns = parser.parse_args(argv)
    try:
        args = _resolve(ns, defaults)
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        return COMMANDS[args.command][0](args)
    except UsageError as exc:
        print(f"meshconf {ns.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError) as exc:
        print(f"meshconf {ns.command}: error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, ArithmeticError) as exc:
        print(f"meshconf {ns.command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
