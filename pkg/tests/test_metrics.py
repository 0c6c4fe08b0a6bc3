import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rantrack.data import Box, GroundTruth, GtEntry, iou
from rantrack.metrics import clearmot, report_row, sweep, table_csv


def gt_from(tracks, invisible=()):
    """``tracks``: {gt_id: {frame: Box}}."""
    frames = {}
    for gid, boxes in tracks.items():
        for f, b in boxes.items():
            frames.setdefault(f, []).append(GtEntry(gid, b, (gid, f) not in invisible))
    return GroundTruth(frames)


B = Box(0, 0, 10, 10)


# ---------------------------------------------------------------- iou

def test_iou_examples():
    assert iou(B, B) == 1.0
    assert iou(Box(0, 0, 2, 2), Box(5, 5, 2, 2)) == 0.0
    assert iou(Box(0, 0, 2, 2), Box(1, 0, 2, 2)) == pytest.approx(1 / 3, abs=1e-15)


@settings(max_examples=100)
@given(*[st.floats(-50, 50) for _ in range(2)], *[st.floats(0.5, 40) for _ in range(2)],
       *[st.floats(-50, 50) for _ in range(2)], *[st.floats(0.5, 40) for _ in range(2)])
def test_iou_symmetric_and_bounded(x1, y1, w1, h1, x2, y2, w2, h2):
    a, b = Box(x1, y1, w1, h1), Box(x2, y2, w2, h2)
    assert iou(a, b) == iou(b, a)
    assert 0.0 <= iou(a, b) <= 1.0
    assert iou(a, a) == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------- hand examples

def test_four_frame_identity_switch():
    gt = gt_from({1: {f: B for f in range(1, 5)}})
    hyp = [(1, 10, B), (2, 10, B), (3, 20, B), (4, 20, B)]
    r = clearmot(gt, hyp)
    assert (r.fp, r.fn, r.ids, r.frag) == (0, 0, 1, 0)
    assert r.mota == 0.75
    assert r.frame_log[3]["switches"] == [1]


def test_perfect_tracking():
    gt = gt_from({1: {f: B for f in range(1, 6)}, 2: {f: Box(50, 0, 10, 10) for f in range(2, 6)}})
    hyp = [(f, 1, B) for f in range(1, 6)] + [(f, 7, Box(50, 0, 10, 10)) for f in range(2, 6)]
    r = clearmot(gt, hyp)
    assert (r.mota, r.motp, r.fp, r.fn, r.ids, r.frag) == (1.0, 1.0, 0, 0, 0, 0)
    assert r.mt_fraction == 1.0 and r.ml_fraction == 0.0


def test_empty_hypothesis():
    gt = gt_from({1: {f: B for f in range(1, 4)}})
    r = clearmot(gt, [])
    assert r.fn == 3 and r.mota == 0.0 and r.ml_fraction == 1.0 and r.motp == 0.0


def test_no_ground_truth_gives_nan():
    r = clearmot(GroundTruth({}), [(1, 1, B)])
    assert math.isnan(r.mota) and r.fp == 1


def test_invisible_gt_is_not_counted():
    gt = gt_from({1: {1: B, 2: B, 3: B}}, invisible={(1, 2)})
    r = clearmot(gt, [(1, 1, B), (3, 1, B)])
    assert (r.total_gt, r.fn, r.fp, r.frag) == (2, 0, 0, 0)
    # a box on the invisible frame is an unmatched hypothesis
    assert clearmot(gt, [(1, 1, B), (2, 1, B), (3, 1, B)]).fp == 1


def test_fragmentation_and_mt_ml():
    gt = gt_from({1: {f: B for f in range(1, 11)}})
    hyp = [(f, 1, B) for f in (1, 2, 3, 6, 7, 8, 9, 10)]
    r = clearmot(gt, hyp)
    assert r.frag == 1 and r.fn == 2
    assert r.mt_fraction == 1.0          # 8/10 tracked is the inclusive MT boundary
    hyp = [(f, 1, B) for f in (1, 2)]
    r = clearmot(gt, hyp)
    assert r.ml_fraction == 1.0          # 2/10 is the inclusive ML boundary


def test_persistence_beats_better_overlap():
    gt = gt_from({1: {1: B, 2: B}})
    slightly_off = Box(1, 0, 10, 10)
    r = clearmot(gt, [(1, 5, slightly_off), (2, 5, slightly_off), (2, 6, B)])
    assert r.ids == 0 and r.fp == 1


def test_iou_threshold_is_inclusive():
    gt = gt_from({1: {1: Box(0, 0, 2, 2)}})
    half = Box(0, 0, 2, 1)  # IoU exactly 0.5
    assert clearmot(gt, [(1, 1, half)]).num_matches == 1


def test_report_outputs():
    gt = gt_from({1: {f: B for f in range(1, 5)}})
    r = clearmot(gt, [(1, 10, B), (2, 10, B), (3, 20, B), (4, 20, B)])
    csv_text = r.to_csv()
    assert csv_text.splitlines()[0] == "metric,value"
    assert "mota,0.7500" in csv_text and "ids,1" in csv_text
    assert "MOTA" in r.to_text()
    assert set(report_row(r)) == {"mota", "mt", "ml", "fp", "fn", "ids"}


# ---------------------------------------------------------------- fuzzing

def random_case(rng):
    n_frames = int(rng.integers(1, 8))
    n_gt = int(rng.integers(0, 4))
    tracks = {}
    invisible = set()
    for gid in range(1, n_gt + 1):
        tracks[gid] = {}
        for f in range(1, n_frames + 1):
            if rng.random() < 0.8:
                tracks[gid][f] = Box(*rng.uniform(0, 30, 2), *rng.uniform(5, 15, 2))
                if rng.random() < 0.1:
                    invisible.add((gid, f))
    hyp = []
    for f in range(1, n_frames + 1):
        ids = rng.permutation(6)[: int(rng.integers(0, 5))] + 1
        for tid in ids:
            anchor = tracks.get(int(tid))
            if anchor and f in anchor and rng.random() < 0.7:
                b = anchor[f]
                hyp.append((f, int(tid), Box(b.x + rng.normal(0, 2), b.y + rng.normal(0, 2), b.w, b.h)))
            else:
                hyp.append((f, int(tid), Box(*rng.uniform(0, 30, 2), *rng.uniform(5, 15, 2))))
    return gt_from(tracks, invisible), hyp


def test_mota_identity_on_1000_fuzzed_cases():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        gt, hyp = random_case(rng)
        r = clearmot(gt, hyp)
        if r.total_gt == 0:
            assert math.isnan(r.mota)
            continue
        assert r.mota == 1.0 - (r.fp + r.fn + r.ids) / r.total_gt
        assert r.mt_fraction + r.ml_fraction <= 1.0
        assert r.fn + r.num_matches == r.total_gt
        assert r.fp + r.num_matches == len(hyp)


def test_relabel_invariance():
    rng = np.random.default_rng(7)
    for _ in range(200):
        gt, hyp = random_case(rng)
        perm = {tid: 100 + int(v) for tid, v in zip(range(1, 7), rng.permutation(6))}
        a = clearmot(gt, hyp)
        b = clearmot(gt, [(f, perm[t], box) for f, t, box in hyp])
        assert (a.fp, a.fn, a.ids, a.frag, a.num_matches) == (b.fp, b.fn, b.ids, b.frag, b.num_matches)


def test_extra_false_positive_track():
    rng = np.random.default_rng(11)
    for _ in range(200):
        gt, hyp = random_case(rng)
        if gt.total_visible() == 0:
            continue
        base = clearmot(gt, hyp)
        frames = sorted(gt.frames)
        extra = hyp + [(frames[0], 999, Box(1000, 1000, 5, 5))]
        more = clearmot(gt, extra)
        assert more.mota < base.mota and more.ids == base.ids


# ---------------------------------------------------------------- sweep

def test_sweep_rows_independent_of_order():
    fn = lambda v: {"double": 2 * v}
    forward = sweep("k", [1, 2, 3], fn)
    backward = sweep("k", [3, 2, 1], fn)
    assert sorted(forward, key=lambda r: r["k"]) == sorted(backward, key=lambda r: r["k"])
    assert sweep("k", [5], fn) == [{"k": 5, "double": 10}]


def test_table_csv():
    text = table_csv([{"span": 1, "mota": 0.5}, {"span": 2, "mota": 0.25}])
    assert text == "span,mota\n1,0.5000\n2,0.2500\n"
    assert table_csv([]) == ""
