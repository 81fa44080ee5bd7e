"""Command-line interface.

Every subcommand writes its outputs plus a ``manifest.json`` into
``--out-dir`` (default: ``$SEGFUSION_OUT_DIR`` or the working directory).
Passing that manifest back with ``--manifest`` replays the run with the
recorded parameters; outputs come out byte-identical. On failure a JSON
error object is printed to stderr and the exit status is nonzero.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from itertools import combinations
from pathlib import Path

from . import __version__
from .exceptions import DegenerateMetricError
from .fileio import load_image, load_label_map, write_label_map, write_palette
from .fusion import FusionConfig, fuse
from .metrics import DistanceModel, fit_qd
from .model_selection import estimate_beta, estimate_c, kmeans_ensemble
from .protocol import DEFAULT_BETA_GRID, evaluate, run_protocol
from .segmenters import KMeansConfig, RandomSplit, RectangleSplit, kmeans_segment, split_train_test

OUT_DIR_ENV = "SEGFUSION_OUT_DIR"

# arguments that locate a run rather than define it; never replayed
_LOCATION_ARGS = {"out_dir", "manifest", "command", "func"}


class CLIError(Exception):
    def __init__(self, message, code="usage"):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError(message, "usage")


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write(out_dir, name, text):
    path = out_dir / name
    path.write_text(text)
    return name


def _require(args, *names):
    missing = [n for n in names if getattr(args, n) in (None, [])]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise CLIError(f"missing required option(s): {flags}")


def _ensemble_paths(args):
    paths = list(args.maps or [])
    if args.ensemble:
        listing = Path(args.ensemble)
        entries = json.loads(listing.read_text())
        paths += [str(listing.parent / p) for p in entries]
    if not paths:
        raise CLIError("no label maps given (use --maps or --ensemble)")
    return paths


def _load_maps(paths, mappings):
    parts = []
    for path in paths:
        part, mapping = load_label_map(path, return_mapping=True)
        mappings[str(path)] = {str(k): v for k, v in mapping.items()}
        parts.append(part)
    return parts


def _distance_model(args, n):
    if args.distance == "qd":
        if args.qd_model:
            model = DistanceModel.from_json(Path(args.qd_model).read_text())
            if model.kind != "qd":
                raise CLIError("--qd-model does not hold a qd model")
            return model
        return DistanceModel.qd_default(n)
    return DistanceModel(args.distance)


def _fusion_config(args, n, beta=None):
    return FusionConfig(
        beta=args.beta if beta is None else beta,
        t_max=args.t_max,
        seed=args.seed,
        distance=_distance_model(args, n),
        early_stop=args.early_stop,
        h_init=args.h_init,
        n_labels=args.n_labels,
        keep_best=not args.last_iterate,
    )


def cmd_segment(args, out_dir, ctx):
    _require(args, "image")
    img = load_image(args.image)
    cfg = KMeansConfig(k=args.k, max_iters=args.max_iters, tol=args.tol,
                       seed=args.seed, init=args.init, mode=args.mode,
                       standardize=args.standardize)
    parts = kmeans_segment(img, cfg)
    names = []
    for i, part in enumerate(parts):
        name = f"segment_{i:02d}.{args.format}"
        write_label_map(out_dir / name, part)
        names.append(name)
    ctx["outputs"] += names + [_write(out_dir, "ensemble.json", _dump(names))]
    return {"n_partitions": len(parts)}


def cmd_fuse(args, out_dir, ctx):
    paths = _ensemble_paths(args)
    members = _load_maps(paths, ctx["label_mappings"])
    cfg = _fusion_config(args, members[0].n)
    report = fuse(members, cfg)
    name = f"consensus.{args.format}"
    if args.format == "pgm" and report.consensus.num_labels > 65536:
        name = "consensus.csv"
    write_label_map(out_dir / name, report.consensus)
    ctx["outputs"] += [
        name,
        _write(out_dir, "report.json", _dump(report.to_dict())),
        _write(out_dir, "trace.csv", report.trace_csv()),
    ]
    ctx["timing"]["fusion_seconds"] = report.wall_time
    if args.palette:
        write_palette(out_dir / "palette.json", report.consensus.num_labels)
        ctx["outputs"].append("palette.json")
    return {"final_objective": report.final_objective,
            "moves_applied": report.moves_applied}


def cmd_fit_qd(args, out_dir, ctx):
    paths = _ensemble_paths(args)
    members = _load_maps(paths, ctx["label_mappings"])
    model = fit_qd(list(combinations(members, 2)), basis=args.basis)
    ctx["outputs"].append(_write(out_dir, "distance_model.json",
                                 model.to_json() + "\n"))
    return {"qd_min": model.qd_min, "qd_max": model.qd_max}


def _write_grid(out_dir, ctx, result):
    ctx["outputs"] += [_write(out_dir, "grid.json", result.to_json()),
                       _write(out_dir, "grid.csv", result.to_csv())]
    return {"chosen": result.chosen, "scores": result.scores}


def cmd_estimate_c(args, out_dir, ctx):
    _require(args, "image")
    img = load_image(args.image)
    grid = args.c_grid or list(range(2, args.c_max + 1))
    segmenter = kmeans_ensemble(mode=args.mode, max_iters=args.max_iters,
                                tol=args.tol, init=args.init,
                                standardize=args.standardize)
    result = estimate_c(img, segmenter, grid, args.direction, args.seed,
                        args.n_jobs)
    return _write_grid(out_dir, ctx, result)


def cmd_estimate_beta(args, out_dir, ctx):
    paths = _ensemble_paths(args)
    members = _load_maps(paths, ctx["label_mappings"])
    template = _fusion_config(args, members[0].n, beta=0.0)
    result = estimate_beta(members, template, args.beta_grid, args.direction,
                           args.n_jobs)
    return _write_grid(out_dir, ctx, result)


def cmd_evaluate(args, out_dir, ctx):
    _require(args, "consensus", "ground_truth")
    consensus, gt = _load_maps([args.consensus, args.ground_truth],
                               ctx["label_mappings"])
    metrics = evaluate(consensus, gt)
    ctx["outputs"].append(_write(out_dir, "metrics.json", _dump(metrics)))
    return metrics


def cmd_convert(args, out_dir, ctx):
    _require(args, "input", "output")
    part, mapping = load_label_map(args.input, return_mapping=True)
    ctx["label_mappings"][str(args.input)] = {str(k): v for k, v in mapping.items()}
    target = out_dir / Path(args.output).name
    write_label_map(target, part)
    ctx["outputs"].append(target.name)
    return {"n_pixels": part.n, "n_labels": part.num_labels}


def cmd_protocol(args, out_dir, ctx):
    _require(args, "image", "ground_truth")
    img = load_image(args.image)
    gt = load_label_map(args.ground_truth)
    if args.train_rows:
        y0, y1 = args.train_rows
        test = None
        if args.test_rows:
            test = (0, img.width, args.test_rows[0], args.test_rows[1])
        split = RectangleSplit((0, img.width, y0, y1), test)
    else:
        split = RandomSplit(args.train_fraction, args.seed)
    train, test = split_train_test(img, gt, split)
    grid = args.c_grid or list(range(2, args.c_max + 1))
    out = run_protocol(train, test, grid, args.beta_grid, args.t_max,
                       args.seed, args.mode, args.direction, args.n_jobs)
    summary = {"c_hat": out["c_hat"], "beta_hat": out["beta_hat"],
               "c_grid": out["c_grid"].to_dict(),
               "beta_grid": out["beta_grid"].to_dict(), "rows": out["rows"],
               "notes": out["notes"]}
    ctx["outputs"].append(_write(out_dir, "protocol.json", _dump(summary)))
    return {"c_hat": out["c_hat"], "beta_hat": out["beta_hat"],
            "rows": out["rows"]}


def _add_common(p):
    p.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    p.add_argument("--out-dir", default=None,
                   help=f"output directory (default ${OUT_DIR_ENV} or .)")
    p.add_argument("--manifest", default=None,
                   help="replay the run recorded in this manifest.json")


def _add_maps(p):
    p.add_argument("--maps", nargs="+", help="label-map files (PGM or CSV)")
    p.add_argument("--ensemble",
                   help="JSON list of label-map paths, relative to the file")


def _add_kmeans(p, with_k=True):
    if with_k:
        p.add_argument("--k", type=int, default=6, help="clusters (default 6)")
    p.add_argument("--mode", choices=("per-band", "joint"), default="per-band",
                   help="cluster each band alone or pixel vectors jointly")
    p.add_argument("--max-iters", type=int, default=100, help="Lloyd iteration cap")
    p.add_argument("--tol", type=float, default=1e-6,
                   help="relative inertia change that stops k-means")
    p.add_argument("--init", choices=("k-means++", "random"), default="k-means++",
                   help="centroid seeding")
    p.add_argument("--standardize", action="store_true",
                   help="z-score each band before clustering")


def _add_fusion(p, with_beta=True):
    if with_beta:
        p.add_argument("--beta", type=float, default=0.9,
                       help="forgetting factor in [0, 1] (default 0.9)")
    p.add_argument("--t-max", type=int, default=1000,
                   help="iteration cap T (default 1000)")
    p.add_argument("--distance", choices=("sdd", "dl", "qd"), default="sdd",
                   help="pairwise distance driving the moves")
    p.add_argument("--qd-model", help="distance_model.json from fit-qd")
    p.add_argument("--h-init", choices=("zeros", "full"), default="zeros",
                   help="initial accumulator")
    p.add_argument("--early-stop", type=int, default=None, metavar="EPOCHS",
                   help="stop after this many epochs without improvement")
    p.add_argument("--n-labels", type=int, default=None,
                   help="consensus label alphabet (default: largest input)")
    p.add_argument("--last-iterate", action="store_true",
                   help="return the final state instead of the best visited")


def _add_grid(p):
    p.add_argument("--direction", choices=("maximize", "minimize"),
                   default="maximize",
                   help="maximize agreement (default) or literal argmin")
    p.add_argument("--n-jobs", type=int, default=None,
                   help="parallel grid candidates (joblib)")


def _add_c_grid(p):
    p.add_argument("--c-grid", type=int, nargs="+", help="explicit c values")
    p.add_argument("--c-max", type=int, default=10,
                   help="grid 2..C_MAX when --c-grid is absent (default 10)")


def build_parser():
    parser = _Parser(prog="segfusion",
                     description="Consensus fusion of image segmentations.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("segment", help="k-means base segmentations of an image")
    p.add_argument("--image", help="JSON band manifest")
    p.add_argument("--format", choices=("pgm", "csv"), default="pgm",
                   help="label-map output format")
    _add_kmeans(p)
    _add_common(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("fuse", help="fuse label maps into a consensus")
    _add_maps(p)
    _add_fusion(p)
    p.add_argument("--format", choices=("pgm", "csv"), default="pgm",
                   help="consensus output format")
    p.add_argument("--palette", action="store_true",
                   help="also write palette.json with display colours")
    _add_common(p)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("fit-qd", help="learn the QD range from training maps")
    _add_maps(p)
    p.add_argument("--basis", choices=("sdd", "dl"), default="sdd",
                   help="distance to normalize")
    _add_common(p)
    p.set_defaults(func=cmd_fit_qd)

    p = sub.add_parser("estimate-c", help="grid search for the segment count")
    p.add_argument("--image", help="JSON band manifest")
    _add_c_grid(p)
    _add_kmeans(p, with_k=False)
    _add_grid(p)
    _add_common(p)
    p.set_defaults(func=cmd_estimate_c)

    p = sub.add_parser("estimate-beta", help="grid search for beta")
    _add_maps(p)
    p.add_argument("--beta-grid", type=float, nargs="+",
                   default=list(DEFAULT_BETA_GRID),
                   help="candidate betas (default 0.1 .. 0.9, 0.99)")
    _add_fusion(p, with_beta=False)
    _add_grid(p)
    _add_common(p)
    p.set_defaults(func=cmd_estimate_beta)

    p = sub.add_parser("evaluate", help="RI and ARI against ground truth")
    p.add_argument("--consensus", help="label map to score")
    p.add_argument("--ground-truth", help="reference label map")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("convert", help="convert a label map between PGM and CSV")
    p.add_argument("--input", help="source label map")
    p.add_argument("--output", help="target file name; extension picks format")
    _add_common(p)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("protocol",
                       help="train/test model selection and scoring")
    p.add_argument("--image", help="JSON band manifest")
    p.add_argument("--ground-truth", help="ground-truth label map")
    p.add_argument("--train-rows", type=int, nargs=2, metavar=("Y0", "Y1"),
                   help="training rows [Y0, Y1), 0-based")
    p.add_argument("--test-rows", type=int, nargs=2, metavar=("Y0", "Y1"),
                   help="test rows (default: all rows outside training)")
    p.add_argument("--train-fraction", type=float, default=0.5,
                   help="random split fraction when --train-rows is absent")
    p.add_argument("--beta-grid", type=float, nargs="+",
                   default=list(DEFAULT_BETA_GRID), help="candidate betas")
    p.add_argument("--t-max", type=int, default=1000, help="iteration cap T")
    p.add_argument("--mode", choices=("per-band", "joint"), default="per-band",
                   help="k-means mode for the base segmentations")
    _add_c_grid(p)
    _add_grid(p)
    _add_common(p)
    p.set_defaults(func=cmd_protocol)
    return parser


def _resolve_paths(args):
    for key in ("image", "ground_truth", "consensus", "input", "qd_model",
                "ensemble"):
        value = getattr(args, key, None)
        if value:
            setattr(args, key, str(Path(value).resolve()))
    if getattr(args, "maps", None):
        args.maps = [str(Path(m).resolve()) for m in args.maps]


def _replay(args, parser):
    recorded = json.loads(Path(args.manifest).read_text())
    if recorded.get("command") != args.command:
        raise CLIError(
            f"manifest records '{recorded.get('command')}', not '{args.command}'")
    fresh = parser.parse_args([args.command])
    for key, value in recorded["params"].items():
        setattr(fresh, key, value)
    fresh.out_dir = args.out_dir or recorded.get("out_dir")
    fresh.manifest = args.manifest
    return fresh


def run(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise CLIError("no subcommand given; see --help")
    if args.manifest:
        args = _replay(args, parser)
    _resolve_paths(args)
    out_dir = Path(args.out_dir or os.environ.get(OUT_DIR_ENV, "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    params = {k: v for k, v in vars(args).items() if k not in _LOCATION_ARGS}
    ctx = {"outputs": [], "label_mappings": {}, "timing": {}}
    started = time.perf_counter()
    summary = args.func(args, out_dir, ctx)
    ctx["timing"]["total_seconds"] = time.perf_counter() - started
    manifest = {
        "tool": "segfusion",
        "version": __version__,
        "command": args.command,
        "seed": args.seed,
        "params": params,
        "out_dir": str(out_dir.resolve()),
        "outputs": ctx["outputs"],
        "label_mappings": ctx["label_mappings"],
    }
    (out_dir / "manifest.json").write_text(_dump(manifest))
    (out_dir / "timing.json").write_text(_dump(ctx["timing"]))
    return summary


def main(argv=None):
    try:
        summary = run(argv)
    except CLIError as exc:
        print(json.dumps({"error": "usage", "code": exc.code,
                          "message": str(exc)}), file=sys.stderr)
        return 2
    except DegenerateMetricError as exc:
        print(json.dumps({"error": type(exc).__name__, "code": exc.code,
                          "message": str(exc)}), file=sys.stderr)
        return 1
    except (OSError, ValueError, ArithmeticError, KeyError, RuntimeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
