"""CLEAR-MOT evaluation: MOTA, MOTP, FP, FN, IDS, MT, ML and Frag."""

import csv
import io as _io
import math
from dataclasses import dataclass, field

from .data import GroundTruth, iou  # noqa: F401  (re-exported)

MT_RATIO = 0.8
ML_RATIO = 0.2


@dataclass
class MetricsReport:
    mota: float
    motp: float
    fp: int
    fn: int
    ids: int
    frag: int
    mt_fraction: float
    ml_fraction: float
    total_gt: int
    num_matches: int
    num_gt_tracks: int
    frame_log: dict = field(default_factory=dict, repr=False)

    def rows(self):
        return [
            ("mota", self.mota), ("motp", self.motp), ("fp", self.fp), ("fn", self.fn),
            ("ids", self.ids), ("frag", self.frag), ("mt", self.mt_fraction),
            ("ml", self.ml_fraction), ("total_gt", self.total_gt),
        ]

    def to_csv(self):
        buf = _io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["metric", "value"])
        for name, value in self.rows():
            writer.writerow([name, _fmt(value)])
        return buf.getvalue()

    def to_text(self):
        width = max(len(n) for n, _ in self.rows())
        return "\n".join(f"{n.upper():<{width}}  {_fmt(v)}" for n, v in self.rows()) + "\n"


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def _group_hyp(hyp):
    frames = {}
    for frame, tid, box in hyp:
        frames.setdefault(frame, []).append((tid, box))
    return frames


def clearmot(gt, hyp, iou_threshold=0.5):
    """Evaluate result rows ``(frame, track_id, Box)`` against ``gt``.

    Per frame, correspondences from the previous frame are kept when they still
    overlap by at least ``iou_threshold``; the remaining pairs are matched
    greedily by descending IoU. Invisible ground-truth boxes are excluded.
    """
    hyp_frames = _group_hyp(hyp)
    frames = sorted(set(gt.frames) | set(hyp_frames))
    last_match = {}      # gt_id -> hyp id of its most recent match (for IDS)
    prev_frame = {}      # gt_id -> hyp id matched in the previous evaluated frame
    fp = fn = ids = 0
    iou_sum = 0.0
    n_match = 0
    coverage = {}       # gt_id -> list of tracked flags over visible frames
    frame_log = {}
    for frame in frames:
        gts = [e for e in gt.entries(frame) if e.visible]
        hyps = hyp_frames.get(frame, [])
        hyp_box = dict(hyps)
        matches = {}
        used_h = set()
        # keep still-valid correspondences first
        for e in gts:
            prev = prev_frame.get(e.gt_id)
            if prev is not None and prev in hyp_box and prev not in used_h:
                o = iou(e.box, hyp_box[prev])
                if o >= iou_threshold:
                    matches[e.gt_id] = (prev, o)
                    used_h.add(prev)
        cands = []
        for e in gts:
            if e.gt_id in matches:
                continue
            for tid, box in hyps:
                if tid in used_h:
                    continue
                o = iou(e.box, box)
                if o >= iou_threshold:
                    cands.append((-o, e.gt_id, tid))
        for neg_o, gid, tid in sorted(cands):
            if gid in matches or tid in used_h:
                continue
            matches[gid] = (tid, -neg_o)
            used_h.add(tid)
        switches = []
        for gid, (tid, o) in matches.items():
            prev = last_match.get(gid)
            if prev is not None and prev != tid:
                ids += 1
                switches.append(gid)
            last_match[gid] = tid
            iou_sum += o
            n_match += 1
        prev_frame = {gid: tid for gid, (tid, _) in matches.items()}
        for e in gts:
            coverage.setdefault(e.gt_id, []).append(e.gt_id in matches)
        frame_fn = sum(1 for e in gts if e.gt_id not in matches)
        frame_fp = sum(1 for tid, _ in hyps if tid not in used_h)
        fn += frame_fn
        fp += frame_fp
        frame_log[frame] = {
            "matches": sorted((gid, tid) for gid, (tid, _) in matches.items()),
            "fp": frame_fp, "fn": frame_fn, "switches": sorted(switches),
        }

    total_gt = gt.total_visible()
    mota = 1.0 - (fp + fn + ids) / total_gt if total_gt else math.nan
    motp = iou_sum / n_match if n_match else 0.0
    mt = ml = frag = 0
    for flags in coverage.values():
        ratio = sum(flags) / len(flags)
        if ratio >= MT_RATIO:
            mt += 1
        elif ratio <= ML_RATIO:
            ml += 1
        frag += sum(1 for a, b in zip(flags, flags[1:]) if a and not b)
    n_tracks = len(coverage)
    return MetricsReport(
        mota=mota, motp=motp, fp=fp, fn=fn, ids=ids, frag=frag,
        mt_fraction=mt / n_tracks if n_tracks else 0.0,
        ml_fraction=ml / n_tracks if n_tracks else 0.0,
        total_gt=total_gt, num_matches=n_match, num_gt_tracks=n_tracks, frame_log=frame_log,
    )


def sweep(dimension, values, eval_fn):
    """Evaluate ``eval_fn(value) -> dict`` per value; rows carry ``dimension`` first.

    ``eval_fn`` must derive all randomness from its argument so rows do not
    depend on sweep order.
    """
    rows = []
    for value in values:
        row = {dimension: value}
        row.update(eval_fn(value))
        rows.append(row)
    return rows


def table_csv(rows):
    if not rows:
        return ""
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = list(rows[0])
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(row[k]) for k in header])
    return buf.getvalue()


def report_row(report):
    """The summary columns of a report."""
    return {"mota": report.mota, "mt": report.mt_fraction, "ml": report.ml_fraction,
            "fp": report.fp, "fn": report.fn, "ids": report.ids}
