"""Online multi-object tracking with per-object sibling predictors.

Every track carries one predictor state for appearance features and one for
motion features. Each frame runs: gate candidate pairs, score them with the
factored log-likelihood, greedy one-to-one association, update matched
tracks, extrapolate lost ones, then terminate stale tracks and start new ones.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from . import baselines
from .baselines import PredictorKind
from .data import Box, Detection  # noqa: F401  (re-exported)
from .errors import ConfigError, OrderError

TRACKED = "tracked"
LOST = "lost"

MODALITIES = ("a", "m", "am")
MIN_EXTENT = 1.0


@dataclass(frozen=True)
class TrackerConfig:
    score_threshold: float = -60.0
    gate_factor: float = 2.0
    t_terminate: int = 20
    min_detection_confidence: float = 0.0
    predictor: str = "RAN"
    modality: str = "am"

    def validate(self):
        problems = []
        if self.t_terminate < 1:
            problems.append("t_terminate must be >= 1")
        if not self.gate_factor > 0:
            problems.append("gate_factor must be > 0")
        if self.modality not in MODALITIES:
            problems.append(f"modality must be one of {MODALITIES}")
        try:
            PredictorKind.parse(self.predictor)
        except ValueError as exc:
            problems.append(str(exc))
        if math.isnan(self.score_threshold):
            problems.append("score_threshold must not be NaN")
        return problems

    @property
    def use_appearance(self):
        return "a" in self.modality

    @property
    def use_motion(self):
        return "m" in self.modality


@dataclass(frozen=True, eq=False)
class Track:
    id: int
    appearance_state: object
    motion_state: object
    last_box: Box
    status: str
    lost_count: int
    birth_frame: int
    last_seen_frame: int
    history: tuple = ()


@dataclass
class Assignment:
    matches: list
    unmatched_tracks: list
    unmatched_detections: list


def motion_feature(det_box, prev_box):
    """``[dcx, dcy, w, h]``: detection center relative to the previous box, plus its size."""
    return np.array([det_box.cx - prev_box.cx, det_box.cy - prev_box.cy, det_box.w, det_box.h],
                    dtype=np.float64)


def in_gate(track, det, gate_factor):
    dist = math.hypot(det.box.cx - track.last_box.cx, det.box.cy - track.last_box.cy)
    return dist <= gate_factor * track.last_box.diagonal


def candidate_pairs(tracks, detections, gate_factor, min_confidence=0.0):
    """``(track_index, det_index)`` pairs passing the distance gate and confidence cut."""
    pairs = []
    for li, track in enumerate(tracks):
        for di, det in enumerate(detections):
            if det.confidence >= min_confidence and in_gate(track, det, gate_factor):
                pairs.append((li, di))
    return pairs


def _predictions(track, model):
    return (baselines.predict_any(model.appearance, track.appearance_state),
            baselines.predict_any(model.motion, track.motion_state))


def _score_from(preds, track, det, use_appearance=True, use_motion=True):
    pred_a, pred_m = preds
    total = 0.0
    if use_appearance:
        total += pred_a.logpdf(det.appearance)
    if use_motion:
        total += pred_m.logpdf(motion_feature(det.box, track.last_box))
    return total


def association_score(track, det, model, use_appearance=True, use_motion=True):
    """Log of the factored appearance x motion likelihood of ``det`` for ``track``."""
    return _score_from(_predictions(track, model), track, det, use_appearance, use_motion)


def associate(scored, threshold):
    """Greedy one-to-one matching on ``(track_id, det_index, log_score)`` triples.

    Highest score first; ties go to the lower track id, then the lower
    detection index. A pair is accepted only if its score exceeds ``threshold``.
    """
    matched_t, matched_d = set(), set()
    matches = []
    for tid, di, s in sorted(scored, key=lambda p: (-p[2], p[0], p[1])):
        if s > threshold and tid not in matched_t and di not in matched_d:
            matches.append((tid, di))
            matched_t.add(tid)
            matched_d.add(di)
    tids = sorted({p[0] for p in scored})
    dis = sorted({p[1] for p in scored})
    return Assignment(matches, [t for t in tids if t not in matched_t],
                      [d for d in dis if d not in matched_d])


def update_matched(track, det, model, frame=None):
    frame = det.frame if frame is None else frame
    mfeat = motion_feature(det.box, track.last_box)
    return replace(
        track,
        appearance_state=baselines.advance(model.appearance, track.appearance_state, det.appearance),
        motion_state=baselines.advance(model.motion, track.motion_state, mfeat),
        last_box=det.box,
        status=TRACKED,
        lost_count=0,
        last_seen_frame=frame,
        history=track.history + ((frame, det.box, False),),
    )


def update_lost(track, model, frame=None):
    """Extrapolate an unmatched track with its own predicted motion; appearance is frozen."""
    mu = baselines.predict_any(model.motion, track.motion_state).mu
    box = track.last_box
    new_box = Box.from_center(box.cx + mu[0], box.cy + mu[1],
                              max(float(mu[2]), MIN_EXTENT), max(float(mu[3]), MIN_EXTENT))
    frame = track.last_seen_frame + track.lost_count + 1 if frame is None else frame
    return replace(
        track,
        motion_state=baselines.advance(model.motion, track.motion_state, mu),
        last_box=new_box,
        status=LOST,
        lost_count=track.lost_count + 1,
        history=track.history + ((frame, new_box, True),),
    )


def new_track(track_id, det, model, frame=None):
    frame = det.frame if frame is None else frame
    return Track(
        id=track_id,
        appearance_state=baselines.init_state(model.appearance, det.appearance),
        motion_state=baselines.init_state(model.motion, [0.0, 0.0, det.box.w, det.box.h]),
        last_box=det.box,
        status=TRACKED,
        lost_count=0,
        birth_frame=frame,
        last_seen_frame=frame,
        history=((frame, det.box, False),),
    )


def lifecycle(tracks, unmatched_detections, config, next_id, model, frame=None):
    """Drop tracks lost for more than ``t_terminate`` frames; seed tracks from leftovers."""
    kept = [t for t in tracks if t.lost_count <= config.t_terminate]
    for det in unmatched_detections:
        if det.confidence >= config.min_detection_confidence:
            kept.append(new_track(next_id, det, model, frame))
            next_id += 1
    return kept, next_id


class Tracker:
    """Frame-by-frame driver; call :meth:`step` with strictly increasing frames."""

    def __init__(self, model, config=TrackerConfig()):
        problems = config.validate()
        if problems:
            raise ConfigError(problems)
        if PredictorKind.parse(config.predictor) is not model.kind:
            raise ConfigError(f"config names predictor {config.predictor} but the model is "
                              f"{model.kind.value}")
        self.model = model
        self.config = config
        self.tracks = []
        self.next_id = 1
        self.frame = 0
        self.assignments = {}

    def step(self, frame, detections):
        if frame <= self.frame:
            raise OrderError(f"frame {frame} does not follow frame {self.frame}")
        # missing frames still age the lost tracks
        for gap in range(self.frame + 1, frame):
            self._process(gap, [])
        return self._process(frame, detections)

    def _process(self, frame, detections):
        cfg = self.config
        self.frame = frame
        pairs = candidate_pairs(self.tracks, detections, cfg.gate_factor,
                                cfg.min_detection_confidence)
        preds = {}
        scored = []
        for li, di in pairs:
            track = self.tracks[li]
            if li not in preds:
                preds[li] = _predictions(track, self.model)
            s = _score_from(preds[li], track, detections[di], cfg.use_appearance, cfg.use_motion)
            scored.append((track.id, di, s))
        assignment = associate(scored, cfg.score_threshold)
        live_ids = [t.id for t in self.tracks]
        matched = dict(assignment.matches)
        used = set(matched.values())
        eligible = [i for i, d in enumerate(detections)
                    if d.confidence >= cfg.min_detection_confidence]
        assignment.unmatched_tracks = [tid for tid in live_ids if tid not in matched]
        assignment.unmatched_detections = [di for di in eligible if di not in used]
        self.assignments[frame] = assignment

        updated = []
        for track in self.tracks:
            if track.id in matched:
                updated.append(update_matched(track, detections[matched[track.id]], self.model, frame))
            else:
                updated.append(update_lost(track, self.model, frame))
        leftovers = [d for i, d in enumerate(detections) if i not in used]
        self.tracks, self.next_id = lifecycle(updated, leftovers, cfg, self.next_id, self.model, frame)
        return [(frame, t.id, t.last_box) for t in self.tracks if t.status == TRACKED]


def track_stream(frames, model, config=TrackerConfig()):
    """Run the tracker over ``(frame, detections)`` pairs; returns result rows.

    Rows are ``(frame, track_id, Box)`` for every tracked (not lost) track.
    """
    tracker = Tracker(model, config)
    rows = []
    for frame, dets in frames:
        rows.extend(tracker.step(frame, dets))
    return rows
