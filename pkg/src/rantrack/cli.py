"""Command line entry point: ``rantrack <command> [options]``.

Commands: synth, train, track, eval, gradcheck, ablate, sweep-span,
search-threshold. A ``--config`` JSON file overrides flags of the same name.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io, pipeline, synth
from .baselines import PredictorKind
from .errors import (CheckpointError, ConfigError, DomainError, EmptyDatasetError,
                     InvalidArgumentError, OrderError, ParseError, RanTrackError,
                     TrainingDivergedError)
from .metrics import clearmot, table_csv
from .tracker import MODALITIES, TrackerConfig, track_stream
from .training import (ModelDims, TrainConfig, TrajectoryPool, grad_check, init_model,
                       smoothed, train)

log = logging.getLogger("rantrack")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_NUMERIC = 4
EXIT_CHECK_FAILED = 5

DET_FILE = "det.txt"
GT_FILE = "gt.txt"
FEATURE_FILE = "features.txt"

PRESETS = ("parallel", "crossing", "occlusion")


class CheckFailed(RanTrackError):
    category = "check-failed"


def exit_code(exc):
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (ParseError, CheckpointError, EmptyDatasetError, FileNotFoundError,
                        OrderError)):
        return EXIT_INPUT
    if isinstance(exc, (TrainingDivergedError, DomainError)):
        return EXIT_NUMERIC
    if isinstance(exc, CheckFailed):
        return EXIT_CHECK_FAILED
    if isinstance(exc, InvalidArgumentError):
        return EXIT_CONFIG
    return EXIT_ERROR


def default_seed():
    raw = os.environ.get("RAN_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"RAN_SEED must be an integer, got {raw!r}")


# --------------------------------------------------------------------------
# argument groups
# --------------------------------------------------------------------------

def _common(p, seed):
    p.add_argument("--config", type=Path, help="JSON file whose keys override flags")
    p.add_argument("--seed", type=int, default=seed, help="base seed (env RAN_SEED)")
    p.add_argument("--log-level", default="WARNING",
                   choices=("DEBUG", "INFO", "WARNING", "ERROR"))


def _tracker_flags(p):
    d = TrackerConfig()
    g = p.add_argument_group("tracker")
    g.add_argument("--threshold", type=float, default=d.score_threshold,
                   help="log-score association threshold")
    g.add_argument("--gate-factor", type=float, default=d.gate_factor,
                   help="gate radius in box diagonals")
    g.add_argument("--t-terminate", type=int, default=d.t_terminate,
                   help="lost frames tolerated before deletion")
    g.add_argument("--min-conf", type=float, default=d.min_detection_confidence,
                   help="minimum detection confidence")
    g.add_argument("--predictor", default=d.predictor, choices=[k.value for k in PredictorKind])
    g.add_argument("--modality", default=d.modality, choices=MODALITIES)


def _train_flags(p, iterations):
    d = TrainConfig()
    dims = ModelDims()
    g = p.add_argument_group("training")
    g.add_argument("--iterations", type=int, default=iterations)
    g.add_argument("--batch", type=int, default=d.batch)
    g.add_argument("--lr", type=float, default=d.lr)
    g.add_argument("--beta1", type=float, default=d.beta1)
    g.add_argument("--beta2", type=float, default=d.beta2)
    g.add_argument("--eps", type=float, default=d.eps)
    g.add_argument("--keep-prob", type=float, default=d.keep_prob,
                   help="recurrent dropout keep probability")
    g.add_argument("--no-dropout", action="store_true", help="disable recurrent dropout")
    g.add_argument("--max-grad-norm", type=float, default=None)
    g.add_argument("--span", type=int, default=dims.span, help="external memory time span K")
    g.add_argument("--appearance-hidden", type=int, default=dims.appearance_hidden)
    g.add_argument("--motion-hidden", type=int, default=dims.motion_hidden)
    g.add_argument("--full-scale", action="store_true",
                   help="256-d appearance / 128 hidden, 32 motion hidden")


def _jobs(p):
    p.add_argument("--jobs", type=int, default=1, help="parallel evaluation workers")


class _Formatter(argparse.HelpFormatter):
    """Show the default of every optional flag, including those without help text."""

    def _get_help_string(self, action):
        text = action.help or ""
        if action.option_strings and action.default is not argparse.SUPPRESS \
                and not action.required and action.nargs != 0:
            text += " (default: %(default)s)"
        elif action.nargs == 0 and action.dest != "help":
            text += " (default: off)"
        return text.strip()


def build_parser():
    seed = default_seed()
    fmt = _Formatter
    parser = argparse.ArgumentParser(prog="rantrack", description=__doc__.splitlines()[0],
                                     formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene", formatter_class=fmt)
    _common(p, seed)
    p.add_argument("--preset", default="crossing", choices=PRESETS)
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("train", help="train a predictor pair", formatter_class=fmt)
    _common(p, seed)
    p.add_argument("--data", type=Path, action="append", default=[],
                   help="scene directory with gt, det and features (repeatable)")
    p.add_argument("--preset", default=None, choices=PRESETS,
                   help="train on generated scenes of this preset instead of --data")
    p.add_argument("--kind", default="RAN", choices=[k.value for k in PredictorKind])
    p.add_argument("--out", type=Path, required=True, help="checkpoint path")
    p.add_argument("--loss-csv", type=Path, default=None)
    _train_flags(p, TrainConfig().iterations)

    p = sub.add_parser("track", help="track detections with a checkpoint", formatter_class=fmt)
    _common(p, seed)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True, help="directory with det and features")
    p.add_argument("--out", type=Path, required=True, help="results file")
    _tracker_flags(p)

    p = sub.add_parser("eval", help="CLEAR-MOT metrics", formatter_class=fmt)
    _common(p, seed)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--results", type=Path, required=True)
    p.add_argument("--iou-threshold", type=float, default=0.5)
    p.add_argument("--format", default="text", choices=("text", "csv"))
    p.add_argument("--out", type=Path, default=None)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check", formatter_class=fmt)
    _common(p, seed)
    p.add_argument("--kind", default="RAN", choices=[k.value for k in PredictorKind])
    p.add_argument("--checkpoint", type=Path, default=None, help="check these parameters")
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--max-coords", type=int, default=300)

    p = sub.add_parser("ablate", help="predictor x modality table", formatter_class=fmt)
    _common(p, seed)
    p.add_argument("--preset", default="crossing", choices=PRESETS)
    p.add_argument("--eval-seeds", type=int, default=5, help="number of evaluation scenes")
    p.add_argument("--no-search", action="store_true",
                   help="use --threshold for every row instead of a validation grid search")
    p.add_argument("--out", type=Path, default=None, help="CSV path (stdout if omitted)")
    _tracker_flags(p)
    _train_flags(p, pipeline.EXPERIMENT_TRAINING.iterations)
    _jobs(p)

    p = sub.add_parser("sweep-span", help="memory time-span sweep", formatter_class=fmt)
    _common(p, seed)
    p.add_argument("--preset", default="occlusion", choices=PRESETS)
    p.add_argument("--spans", default="1-12", help="range a-b or comma list")
    p.add_argument("--eval-seeds", type=int, default=5)
    p.add_argument("--out", type=Path, default=None)
    _tracker_flags(p)
    _train_flags(p, pipeline.EXPERIMENT_TRAINING.iterations)
    _jobs(p)

    p = sub.add_parser("search-threshold", help="grid search of the association threshold",
                       formatter_class=fmt)
    _common(p, seed)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, default=None,
                   help="validation scene directory (default: generated preset scene)")
    p.add_argument("--preset", default="crossing", choices=PRESETS)
    p.add_argument("--grid", default=",".join(f"{g:g}" for g in pipeline.THRESHOLD_GRID))
    p.add_argument("--out", type=Path, default=None, help="curve CSV")
    _tracker_flags(p)
    for action in _all_actions(parser):
        if action.help is None:
            action.help = action.dest.replace("_", " ")
    return parser


def _all_actions(parser):
    for action in parser._actions:
        yield action
        if isinstance(action, argparse._SubParsersAction):
            for sub in action.choices.values():
                yield from _all_actions(sub)


# --------------------------------------------------------------------------
# config handling
# --------------------------------------------------------------------------

_PATH_KEYS = {"data", "out", "checkpoint", "gt", "results", "loss_csv"}


def apply_config_file(args, known_options):
    """Override ``args`` with the JSON file named by ``args.config``; reject unknown keys."""
    if args.config is None:
        return args
    try:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {args.config} does not exist")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {args.config}: {exc}")
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {args.config} must hold a JSON object")
    known = set(known_options) - {"command", "config"}
    problems = []
    for key, value in doc.items():
        name = key.replace("-", "_")
        if name not in known:
            problems.append(f"unknown config key {key!r}")
            continue
        if name in _PATH_KEYS and value is not None:
            value = [Path(v) for v in value] if isinstance(value, list) else Path(value)
        setattr(args, name, value)
    if problems:
        raise ConfigError(problems)
    return args


def tracker_config(args):
    return TrackerConfig(score_threshold=float(args.threshold), gate_factor=float(args.gate_factor),
                         t_terminate=int(args.t_terminate),
                         min_detection_confidence=float(args.min_conf),
                         predictor=args.predictor, modality=args.modality)


def train_config(args):
    return TrainConfig(iterations=int(args.iterations), batch=int(args.batch), lr=float(args.lr),
                       beta1=float(args.beta1), beta2=float(args.beta2), eps=float(args.eps),
                       keep_prob=float(args.keep_prob), dropout=not args.no_dropout,
                       max_grad_norm=args.max_grad_norm)


def model_dims(args):
    if args.full_scale:
        return replace(ModelDims.full_scale(), span=int(args.span))
    return ModelDims(appearance_hidden=int(args.appearance_hidden),
                     motion_hidden=int(args.motion_hidden), span=int(args.span))


def parse_spans(text):
    text = str(text).strip()
    try:
        if "-" in text:
            lo, hi = (int(v) for v in text.split("-", 1))
            return list(range(lo, hi + 1))
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse spans {text!r}")


def parse_grid(text):
    try:
        return tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"cannot parse threshold grid {text!r}")


def validate(args):
    """Collect every configuration problem before any work starts."""
    problems = []
    if hasattr(args, "threshold"):
        problems += tracker_config(args).validate()
    if hasattr(args, "iterations"):
        problems += train_config(args).validate()
        if args.span < 1:
            problems.append("span must be >= 1")
        if min(args.appearance_hidden, args.motion_hidden) < 1:
            problems.append("hidden sizes must be >= 1")
    if getattr(args, "jobs", 1) < 1:
        problems.append("jobs must be >= 1")
    if getattr(args, "eval_seeds", 1) < 1:
        problems.append("eval-seeds must be >= 1")
    if args.command == "train" and not args.data and args.preset is None:
        problems.append("train needs --data or --preset")
    if args.command == "sweep-span":
        spans = parse_spans(args.spans)
        if not spans or min(spans) < 1:
            problems.append("spans must be positive")
    if args.command == "search-threshold" and not parse_grid(args.grid):
        problems.append("threshold grid is empty")
    if args.command == "eval" and not 0 < args.iou_threshold <= 1:
        problems.append("iou-threshold must lie in (0, 1]")
    if args.command == "gradcheck" and not 0 < args.epsilon <= 1e-2:
        problems.append("epsilon must lie in (0, 1e-2]")
    for name in ("checkpoint", "gt", "results"):
        path = getattr(args, name, None)
        if path is not None and not Path(path).is_file():
            problems.append(f"{name} file {path} does not exist")
    data = getattr(args, "data", None)
    for d in data if isinstance(data, list) else ([data] if data is not None else []):
        if not Path(d).is_dir():
            problems.append(f"data directory {d} does not exist")
    if problems:
        raise ConfigError(problems)


# --------------------------------------------------------------------------
# scene directories
# --------------------------------------------------------------------------

def write_scene(directory, gt, dets):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    io.write_ground_truth(directory / GT_FILE, gt)
    io.write_detections(directory / DET_FILE, dets)
    io.write_features(directory / FEATURE_FILE, dets)


def read_scene_detections(directory):
    directory = Path(directory)
    dets = io.read_detections(directory / DET_FILE)
    return io.read_features(directory / FEATURE_FILE, dets)


def read_scene(directory):
    return io.read_ground_truth(Path(directory) / GT_FILE), read_scene_detections(directory)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_synth(args, out):
    cfg = synth.preset(args.preset, seed=args.seed)
    gt, dets = synth.generate(cfg)
    write_scene(args.out, gt, dets)
    print(f"wrote {args.preset} scene ({gt.num_frames} frames, {len(dets)} detections) "
          f"to {args.out}", file=out)


def cmd_train(args, out):
    if args.data:
        scenes = [read_scene(d) for d in args.data]
    else:
        scenes = pipeline.scenes(args.preset, pipeline.training_seeds(args.seed))
    dims = model_dims(args)
    feat_dim = next((d.appearance.shape[0] for _, ds in scenes for _, fr in ds.iter_frames()
                     for d in fr if d.appearance is not None), None)
    if feat_dim is None:
        raise EmptyDatasetError("no detections with appearance features")
    dims = replace(dims, appearance_dim=int(feat_dim))
    model, curve = train(args.kind, TrajectoryPool(scenes), train_config(args), seed=args.seed,
                         dims=dims)
    meta = {"seed": args.seed, "iterations": args.iterations, "final_nll": curve[-1] if curve else None}
    io.save_checkpoint(args.out, io.Checkpoint(model, dims, meta))
    if args.loss_csv is not None:
        rows = [{"iteration": i, "nll": v, "smoothed": s}
                for i, (v, s) in enumerate(zip(curve, smoothed(curve)))]
        Path(args.loss_csv).write_text(table_csv(rows), encoding="utf-8")
    if curve:
        print(f"trained {args.kind} for {len(curve)} iterations; "
              f"mean nll {curve[0]:.4f} -> {curve[-1]:.4f}; saved {args.out}", file=out)
    else:
        print(f"saved untrained {args.kind} model to {args.out}", file=out)


def _load_model(args):
    ckpt = io.load_checkpoint(args.checkpoint)
    if ckpt.kind.value != args.predictor:
        raise ConfigError(f"--predictor {args.predictor} does not match checkpoint kind "
                          f"{ckpt.kind.value}")
    return ckpt.model


def cmd_track(args, out):
    model = _load_model(args)
    dets = read_scene_detections(args.data)
    rows = track_stream(dets.iter_frames(), model, tracker_config(args))
    io.write_results(args.out, rows)
    print(f"wrote {len(rows)} result rows to {args.out}", file=out)


def cmd_eval(args, out):
    gt = io.read_ground_truth(args.gt)
    report = clearmot(gt, io.read_results(args.results), args.iou_threshold)
    text = report.to_csv() if args.format == "csv" else report.to_text()
    if args.out is not None:
        Path(args.out).write_text(text, encoding="utf-8")
    out.write(text)


def cmd_gradcheck(args, out):
    if args.checkpoint is not None:
        ckpt = io.load_checkpoint(args.checkpoint)
        kind, model, dims = ckpt.kind, ckpt.model, ckpt.dims
    else:
        kind = PredictorKind.parse(args.kind)
        dims = ModelDims(appearance_dim=4, appearance_hidden=5, motion_hidden=4, span=3)
        model = init_model(kind, dims, seed=args.seed)
    scene_cfg = replace(synth.preset("crossing", seed=args.seed),
                        appearance_dim=dims.appearance_dim, appearance_margin=0.5)
    pool = TrajectoryPool([synth.generate(scene_cfg)])
    sample = pool.sample(1, np.random.default_rng(args.seed), crop_min=6, crop_max=8)[0]
    report = grad_check(kind, model, sample, args.epsilon, args.tolerance, args.max_coords,
                        seed=args.seed)
    print(f"kind {kind.value}: checked {report.checked} coordinates, max relative error "
          f"{report.max_rel_error:.3e} at {report.worst_coordinate or '-'} "
          f"(tolerance {report.tolerance:g}) -> {'PASS' if report.passed else 'FAIL'}", file=out)
    if not report.passed:
        raise CheckFailed("gradient check failed")


def _emit_table(rows, path, out):
    text = table_csv(rows)
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    out.write(text)


def cmd_ablate(args, out):
    rows = pipeline.ablate(args.preset, range(args.eval_seeds), train_config(args), args.seed,
                           model_dims(args), tracker_config(args), search=not args.no_search,
                           jobs=args.jobs)
    _emit_table(rows, args.out, out)


def cmd_sweep_span(args, out):
    rows = pipeline.sweep_span(args.preset, parse_spans(args.spans), range(args.eval_seeds),
                               train_config(args), args.seed, model_dims(args),
                               tracker_config(args), jobs=args.jobs)
    _emit_table(rows, args.out, out)


def cmd_search_threshold(args, out):
    model = _load_model(args)
    if args.data is not None:
        gt, dets = read_scene(args.data)
    else:
        gt, dets = synth.generate(synth.preset(
            args.preset, seed=pipeline.VALIDATION_SEED_OFFSET + args.seed))
    best, curve = pipeline.search_threshold(model, gt, dets, tracker_config(args),
                                            parse_grid(args.grid))
    if args.out is not None:
        Path(args.out).write_text(table_csv(curve), encoding="utf-8")
    out.write(table_csv(curve))
    print(f"best threshold {best:g}", file=out)


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "track": cmd_track,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
    "sweep-span": cmd_sweep_span,
    "search-threshold": cmd_search_threshold,
}


def main(argv=None, out=None):
    out = sys.stdout if out is None else out
    try:
        parser = build_parser()
    except ConfigError as exc:
        print(f"error [{exc.category}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        apply_config_file(args, vars(args))
        validate(args)
        COMMANDS[args.command](args, out)
    except ConfigError as exc:
        print(f"error [{exc.category}]:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  - {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except (RanTrackError, FileNotFoundError) as exc:
        category = getattr(exc, "category", "io")
        print(f"error [{category}]: {exc}", file=sys.stderr)
        return exit_code(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
