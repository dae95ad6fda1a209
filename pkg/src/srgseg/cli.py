"""Command-line interface: ``srgseg <subcommand> ...``.

Exit codes: 0 success, 2 I/O, 3 format, 4 geometry or data, 5 instance too large.
"""
from __future__ import annotations

import argparse
import dataclasses
import configparser
import json
import logging
import os
import platform
import shutil
import sys
import tempfile
from typing import List, Optional

import numpy as np

from . import __version__
from .estimator import assignment_to_labels
from .evaluation import dice_report, render_overlay
from .exceptions import InvalidSpec, IoFailure, SrgError, UnsupportedFormat
from .graph import ModelStatistics, RegionStats, build_srg, fit_model, load_graph, save_graph
from .matching import (
    DEFAULT_SWEEP_PROFILES,
    CostWeights,
    DistanceSpec,
    evaluate,
    exhaustive_best,
    greedy_initial,
    n_regions,
    sweep_weights,
)
from .phantom import perturb_phantom, read_phantom_spec
from .superseg import ELEMENTS, morphological_gradient, watershed
from .volume import LabelVolume, check_same_geometry, load_volume, save_volume

log = logging.getLogger("srgseg")


def _triple(text: str):
    vals = [float(v) for v in text.replace(" ", "").split(",") if v]
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}")
    return tuple(vals)


def _shift(text: str):
    label, _, vec = text.partition(":")
    try:
        return int(label), _triple(vec)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"shift must look like LABEL:dx,dy,dz, got {text!r}") from exc


def _require(*paths) -> None:
    for p in paths:
        if p is not None and not os.path.exists(p):
            raise IoFailure(f"input file not found: {p}")


def _load_model(path):
    model = load_graph(path)
    if not isinstance(model, ModelStatistics):
        raise UnsupportedFormat(f"{path} is a plain graph, not a model (no stddev records)")
    return model


def _weights(args) -> CostWeights:
    try:
        return CostWeights.normalized(args.alpha, args.vweights, args.eweights)
    except ValueError as exc:
        raise InvalidSpec(str(exc)) from exc


def _super_graph(scalar, super_labels):
    k = n_regions(super_labels)
    return RegionStats.from_volumes(scalar, super_labels, size=k + 1).graph(range(1, k + 1))


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        try:
            with open(out, "w", encoding="utf-8") as fh:
                fh.write(text)
        except OSError as exc:
            raise IoFailure(f"cannot write {out}: {exc}") from exc
    else:
        sys.stdout.write(text)


# ----------------------------------------------------------------- commands


def cmd_phantom(args) -> int:
    _require(args.spec)
    spec = read_phantom_spec(args.spec)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    scalar, labels = perturb_phantom(spec, dict(args.shift or []))
    ext = ".nii" if args.format == "nifti" else ".srgvol"
    parent = os.path.dirname(args.out_prefix)
    if parent:
        os.makedirs(parent, exist_ok=True)
    save_volume(scalar, args.out_prefix + "_scalar" + ext)
    save_volume(labels, args.out_prefix + "_labels" + ext)
    print(f"wrote {args.out_prefix}_scalar{ext} {args.out_prefix}_labels{ext}")
    return 0


def run_superseg(scalar, min_depth: float, element: str):
    return watershed(morphological_gradient(scalar, element), min_depth, element)


def cmd_superseg(args) -> int:
    _require(args.input)
    scalar = load_volume(args.input, "scalar")
    result = run_superseg(scalar, args.min_depth, args.element)
    save_volume(result.labels, args.out)
    print(f"n_super={result.n_super}")
    return 0


def cmd_build_model(args) -> int:
    if len(args.scalar) != len(args.labels):
        raise InvalidSpec("give one --labels per --scalar")
    _require(*args.scalar, *args.labels)
    pairs = [(load_volume(s, "scalar"), load_volume(t, "label")) for s, t in zip(args.scalar, args.labels)]
    for s, t in pairs:
        check_same_geometry(s, t)
    if args.label_map:
        label_map = [int(v) for v in args.label_map.split(",")]
    else:
        found = sorted(set().union(*(set(np.unique(t.data).tolist()) for _, t in pairs)))
        label_map = [v for v in found if v != 0 or not args.no_background]
    stats = fit_model([build_srg(s, t, label_map) for s, t in pairs])
    save_graph(stats, args.out)
    print(f"model n={stats.n} k={stats.k} labels={','.join(map(str, label_map))}")
    return 0


def match_files(model_path, scalar_path, super_path, weights, ignore_volume, empty_penalty, exhaustive=False, cap=250_000):
    stats = _load_model(model_path)
    scalar = load_volume(scalar_path, "scalar")
    super_labels = load_volume(super_path, "label")
    check_same_geometry(scalar, super_labels)
    model = stats.mean
    dist = DistanceSpec.from_stats(stats)
    if exhaustive:
        s, _ = exhaustive_best(super_labels, scalar, model, weights, dist, cap, empty_penalty)
    else:
        s = greedy_initial(_super_graph(scalar, super_labels), model, weights, dist, ignore_volume)
    solution = evaluate(s, super_labels, scalar, model, weights, dist, empty_penalty)
    seg = assignment_to_labels(solution.assignment, super_labels, model.labels)
    return solution, seg


def cmd_match(args) -> int:
    _require(args.model, args.scalar, args.super)
    solution, seg = match_files(
        args.model, args.scalar, args.super, _weights(args),
        not args.greedy_volume, args.empty_penalty, args.exhaustive, args.cap,
    )
    save_volume(seg, args.out)
    if args.report:
        _emit(solution.report(), args.report)
    print(f"cost={solution.cost:.17g}")
    return 0


def read_profiles(path) -> List[tuple]:
    profiles = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                profiles.append(tuple(float(v) for v in line.replace(",", " ").split()))
    if not profiles:
        raise InvalidSpec(f"{path} contains no weight profiles")
    return profiles


def cmd_sweep(args) -> int:
    _require(args.model, args.scalar, args.super, args.profiles)
    profiles = read_profiles(args.profiles) if args.profiles else list(DEFAULT_SWEEP_PROFILES)
    stats = _load_model(args.model)
    scalar = load_volume(args.scalar, "scalar")
    super_labels = load_volume(args.super, "label")
    check_same_geometry(scalar, super_labels)
    e = np.asarray(args.eweights, float)
    result = sweep_weights(
        profiles, _super_graph(scalar, super_labels), super_labels, scalar, stats.mean,
        DistanceSpec.from_stats(stats), args.alpha, tuple(e / e.sum()),
        not args.greedy_volume, args.empty_penalty,
    )
    text = json.dumps(result.to_dict(), indent=2) + "\n" if args.json else result.table()
    _emit(text, args.out)
    return 0


def cmd_eval(args) -> int:
    _require(args.pred, args.truth)
    pred = load_volume(args.pred, "label")
    truth = load_volume(args.truth, "label")
    labels = [int(v) for v in args.labels.split(",")] if args.labels else None
    report = dice_report(pred, truth, labels)
    text = json.dumps(report.to_dict(), indent=2) + "\n" if args.json else report.text()
    _emit(text, args.out)
    return 0


def cmd_render(args) -> int:
    _require(args.scalar, args.labels)
    render_overlay(load_volume(args.scalar, "scalar"), load_volume(args.labels, "label"), args.axis, args.index, args.out)
    return 0


# ----------------------------------------------------------------- pipeline

PIPELINE_DEFAULTS = {
    "pipeline": {"model": "", "scalar": "", "truth": "", "super": "", "output": "", "seed": "0"},
    "superseg": {"min_depth": "0", "element": "cross6"},
    "weights": {
        "alpha": "0.5",
        "vertex": "0.5,0.5,0",
        "edge": "1,1,1",
        "greedy_volume": "false",
        "empty_penalty": "10",
    },
}


def load_pipeline_config(path: Optional[str], args) -> dict:
    cp = configparser.ConfigParser()
    cp.read_dict(PIPELINE_DEFAULTS)
    if path:
        _require(path)
        try:
            cp.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise InvalidSpec(f"bad config {path}: {exc}") from exc
    flat = {
        "model": cp["pipeline"]["model"],
        "scalar": cp["pipeline"]["scalar"],
        "truth": cp["pipeline"]["truth"],
        "super": cp["pipeline"]["super"],
        "output": cp["pipeline"]["output"],
        "seed": cp["pipeline"].getint("seed"),
        "min_depth": cp["superseg"].getfloat("min_depth"),
        "element": cp["superseg"]["element"],
        "alpha": cp["weights"].getfloat("alpha"),
        "vertex": _triple(cp["weights"]["vertex"]),
        "edge": _triple(cp["weights"]["edge"]),
        "greedy_volume": cp["weights"].getboolean("greedy_volume"),
        "empty_penalty": cp["weights"].getfloat("empty_penalty"),
    }
    # command-line flags win over the file
    for key in flat:
        val = getattr(args, key, None)
        if val is not None and val is not False:
            flat[key] = val
    for key in ("model", "scalar", "output"):
        if not flat[key]:
            raise InvalidSpec(f"pipeline needs '{key}'")
    if flat["element"] not in ELEMENTS:
        raise InvalidSpec(f"element must be one of {ELEMENTS}")
    return flat


def run_pipeline(cfg: dict) -> dict:
    """Superseg, greedy match, join, evaluate; every artifact lands in ``cfg['output']``.

    Outputs are staged in a temporary directory and moved into place only
    when every step has succeeded.
    """
    inputs = [cfg["model"], cfg["scalar"]] + [cfg[k] for k in ("truth", "super") if cfg[k]]
    _require(*inputs)
    weights = CostWeights.normalized(cfg["alpha"], cfg["vertex"], cfg["edge"])
    out = cfg["output"]
    parent = os.path.dirname(os.path.abspath(out))
    os.makedirs(parent, exist_ok=True)
    stage = tempfile.mkdtemp(prefix=".srgseg-", dir=parent)
    try:
        scalar = load_volume(cfg["scalar"], "scalar")
        if cfg["super"]:
            super_path = cfg["super"]
            n_super = n_regions(load_volume(super_path, "label"))
        else:
            result = run_superseg(scalar, cfg["min_depth"], cfg["element"])
            super_path = os.path.join(stage, "super.srgvol")
            save_volume(result.labels, super_path)
            n_super = result.n_super
        solution, seg = match_files(
            cfg["model"], cfg["scalar"], super_path, weights,
            not cfg["greedy_volume"], cfg["empty_penalty"],
        )
        save_volume(seg, os.path.join(stage, "seg.srgvol"))
        with open(os.path.join(stage, "report.txt"), "w", encoding="utf-8") as fh:
            fh.write(solution.report())
        summary = {"cost": solution.cost, "n_super": n_super}
        if cfg["truth"]:
            truth = load_volume(cfg["truth"], "label")
            structures = [k for k in solution.observation.labels if k != 0]
            report = dice_report(seg, truth, structures)
            with open(os.path.join(stage, "eval.txt"), "w", encoding="utf-8") as fh:
                fh.write(report.text())
            summary["macro_dice"] = report.macro_dice
        manifest = {
            "srgseg_version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "seed": cfg["seed"],
            "inputs": {k: cfg[k] for k in ("model", "scalar", "truth", "super") if cfg[k]},
            "parameters": {
                "min_depth": cfg["min_depth"],
                "element": cfg["element"],
                "alpha": weights.alpha,
                "vertex_weights": list(weights.vertex),
                "edge_weights": list(weights.edge),
                "greedy_volume": cfg["greedy_volume"],
                "empty_penalty": cfg["empty_penalty"],
            },
            "outputs": sorted(os.listdir(stage) + ["manifest.json"]),
            "summary": summary,
        }
        with open(os.path.join(stage, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        if os.path.exists(out):
            shutil.rmtree(out)
        os.replace(stage, out)
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    return summary


def cmd_pipeline(args) -> int:
    cfg = load_pipeline_config(args.config, args)
    summary = run_pipeline(cfg)
    print(" ".join(f"{k}={v:.17g}" if isinstance(v, float) else f"{k}={v}" for k, v in summary.items()))
    return 0


# ------------------------------------------------------------------- parser


def _add_weight_flags(p, defaults=True):
    d = (lambda v: v) if defaults else (lambda v: None)
    p.add_argument("--alpha", type=float, default=d(0.5), help="vertex/edge balance in [0, 1]")
    p.add_argument("--vweights", type=_triple, default=d((0.5, 0.5, 0.0)), help="centroid,intensity,volume")
    p.add_argument("--eweights", type=_triple, default=d((1.0, 1.0, 1.0)), help="centroid_vector,volume_ratio,contrast")
    p.add_argument("--greedy-volume", action="store_true", help="keep the volume weight during greedy matching")
    p.add_argument("--empty-penalty", type=float, default=d(10.0))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srgseg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"srgseg {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic annotated volume")
    psub = p.add_subparsers(dest="action", required=True)
    g = psub.add_parser("generate", help="rasterize a phantom spec file")
    g.add_argument("--spec", required=True)
    g.add_argument("--out-prefix", required=True)
    g.add_argument("--format", choices=("raw", "nifti"), default="raw")
    g.add_argument("--seed", type=int)
    g.add_argument("--shift", type=_shift, action="append", metavar="LABEL:DX,DY,DZ", help="translate a structure (mm)")
    g.set_defaults(func=cmd_phantom)

    p = sub.add_parser("superseg", help="watershed over-segmentation of a scalar volume")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--min-depth", type=float, default=0.0)
    p.add_argument("--element", choices=ELEMENTS, default="cross6")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_superseg)

    p = sub.add_parser("build-model", help="fit a model graph from annotated volumes")
    p.add_argument("--scalar", action="append", required=True)
    p.add_argument("--labels", action="append", required=True)
    p.add_argument("--label-map", help="comma-separated structure ids (default: all labels)")
    p.add_argument("--no-background", action="store_true", help="do not model label 0")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_model)

    p = sub.add_parser("match", help="assign super-regions to model structures")
    p.add_argument("--model", required=True)
    p.add_argument("--scalar", required=True)
    p.add_argument("--super", required=True)
    _add_weight_flags(p)
    p.add_argument("--exhaustive", action="store_true", help="enumerate all assignments (small instances)")
    p.add_argument("--cap", type=int, default=250_000)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("sweep", help="greedy solution and cost for several vertex weight profiles")
    p.add_argument("--profiles", help="file with 'centroid intensity [volume]' per line (default: exploratory table)")
    p.add_argument("--model", required=True)
    p.add_argument("--scalar", required=True)
    p.add_argument("--super", required=True)
    _add_weight_flags(p)
    p.add_argument("--json", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="Dice report against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--labels", help="comma-separated structure ids")
    p.add_argument("--json", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="PNG overlay of one slice")
    p.add_argument("--scalar", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--axis", choices=("x", "y", "z"), default="z")
    p.add_argument("--index", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("pipeline", help="superseg, match and evaluate in one run")
    p.add_argument("--config", help="INI file; flags override it")
    for key in ("model", "scalar", "truth", "super", "output"):
        p.add_argument(f"--{key}")
    p.add_argument("--seed", type=int)
    p.add_argument("--min-depth", dest="min_depth", type=float)
    p.add_argument("--element", choices=ELEMENTS)
    p.add_argument("--alpha", type=float)
    p.add_argument("--vweights", dest="vertex", type=_triple)
    p.add_argument("--eweights", dest="edge", type=_triple)
    p.add_argument("--greedy-volume", dest="greedy_volume", action="store_true")
    p.add_argument("--empty-penalty", dest="empty_penalty", type=float)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except SrgError as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return IoFailure.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
