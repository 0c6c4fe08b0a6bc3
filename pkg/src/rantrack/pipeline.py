"""Compositions of the modules: train on synthetic scenes, track, evaluate, sweep.

Every function derives its randomness from explicit seeds, so results are
reproducible and independent of how work is split across processes.
"""

import logging
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

from . import metrics, synth
from .baselines import PredictorKind
from .metrics import clearmot, report_row
from .tracker import MODALITIES, TrackerConfig, track_stream
from .training import ModelDims, TrainConfig, TrajectoryPool, train

log = logging.getLogger(__name__)

THRESHOLD_GRID = (-200.0, -100.0, -60.0, -40.0, -30.0, -20.0, -15.0, -10.0, -5.0, 0.0, 5.0)
TRAIN_SEED_OFFSET = 1000       # training scenes never share a seed with evaluation scenes
VALIDATION_SEED_OFFSET = 2000
TRAIN_SCENES = 3
# the appearance noise scale is only learned after ~1000 steps at the default lr
EXPERIMENT_TRAINING = TrainConfig(iterations=1000)


def scenes(preset_name, seeds):
    return [synth.generate(synth.preset(preset_name, seed=s)) for s in seeds]


def training_seeds(base_seed, count=TRAIN_SCENES):
    return [TRAIN_SEED_OFFSET + base_seed * count + i for i in range(count)]


def train_on_preset(kind, preset_name, config=TrainConfig(), seed=0, dims=ModelDims(),
                    callback=None):
    """Train a model pair of ``kind`` on held-out training scenes of a preset."""
    pool = TrajectoryPool(scenes(preset_name, training_seeds(seed)))
    return train(PredictorKind.parse(kind), pool, config, seed=seed, dims=dims, callback=callback)


def track_and_evaluate(model, gt, dets, config):
    rows = track_stream(dets.iter_frames(), model, config)
    return rows, clearmot(gt, rows)


def search_threshold(model, gt, dets, config, grid=THRESHOLD_GRID):
    """Best log-score threshold on one scene by MOTA.

    Ties go to fewer identity switches, then to the earliest grid entry.
    Returns ``(best_threshold, curve)``; the curve holds one row per grid point.
    """
    curve = []
    best = None
    for thr in grid:
        _, report = track_and_evaluate(model, gt, dets, replace(config, score_threshold=thr))
        row = {"threshold": thr}
        row.update(report_row(report))
        curve.append(row)
        key = (report.mota, -report.ids)
        if best is None or key > best[0]:
            best = (key, thr)
    return best[1], curve


def _median(values):
    return statistics.median(values)


def _evaluate_seed(args):
    model, preset_name, seed, config = args
    gt, dets = synth.generate(synth.preset(preset_name, seed=seed))
    _, report = track_and_evaluate(model, gt, dets, config)
    return report


def evaluate_seeds(model, preset_name, seeds, config, jobs=1):
    """Reports for each evaluation seed, in seed order."""
    work = [(model, preset_name, s, config) for s in seeds]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_evaluate_seed, work))
    return [_evaluate_seed(w) for w in work]


def median_row(reports):
    """Medians of the summary metric columns over several reports."""
    rows = [report_row(r) for r in reports]
    return {k: _median([r[k] for r in rows]) for k in rows[0]}


def ablate(preset_name="crossing", eval_seeds=range(5), train_config=EXPERIMENT_TRAINING, seed=0,
           dims=ModelDims(), base=TrackerConfig(), search=True, grid=THRESHOLD_GRID, jobs=1,
           kinds=tuple(PredictorKind)):
    """Ablation grid: every predictor kind under every modality setting.

    One model pair is trained per kind. With ``search`` the threshold of each
    row is picked on a validation scene of the same preset; otherwise
    ``base.score_threshold`` is used. Returns 12 rows of median metrics.
    """
    eval_seeds = list(eval_seeds)
    gt_val, dets_val = synth.generate(synth.preset(preset_name, seed=VALIDATION_SEED_OFFSET + seed))
    rows = []
    for kind in kinds:
        kind = PredictorKind.parse(kind)
        model, _ = train_on_preset(kind, preset_name, train_config, seed, dims)
        for modality in MODALITIES:
            cfg = replace(base, predictor=kind.value, modality=modality)
            if search:
                thr, _ = search_threshold(model, gt_val, dets_val, cfg, grid)
                cfg = replace(cfg, score_threshold=thr)
            reports = evaluate_seeds(model, preset_name, eval_seeds, cfg, jobs)
            row = {"modality": _modality_label(modality), "predictor": kind.value,
                   "threshold": cfg.score_threshold}
            row.update(median_row(reports))
            log.info("ablate %s %s: %s", kind.value, modality, row)
            rows.append(row)
    return rows


def _modality_label(modality):
    return {"a": "A", "m": "M", "am": "A+M"}[modality]


def sweep_span(preset_name="occlusion", spans=range(1, 13), eval_seeds=range(5),
               train_config=EXPERIMENT_TRAINING, seed=0, dims=ModelDims(), base=TrackerConfig(),
               jobs=1):
    """Span sweep: retrain the predictor with each memory span and track.

    Returns one row per span with median metrics over ``eval_seeds``.
    """
    eval_seeds = list(eval_seeds)
    kind = PredictorKind.parse(base.predictor)

    def one(span):
        model, _ = train_on_preset(kind, preset_name, train_config, seed, replace(dims, span=span))
        reports = evaluate_seeds(model, preset_name, eval_seeds, base, jobs)
        row = median_row(reports)
        log.info("span %d: %s", span, row)
        return row

    return metrics.sweep("span", list(spans), one)
