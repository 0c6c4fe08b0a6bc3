"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest -s tests/test_acceptance.py`` to see the lines inline;
they are also echoed in the terminal summary.
"""

import contextlib
import csv
import io as _io
import statistics
import time
from dataclasses import replace

import numpy as np
import pytest

from rantrack import baselines, cli, io, pipeline, synth
from rantrack.baselines import AveParams, PredictorKind, TivParams
from rantrack.data import Box, Detection, GroundTruth, GtEntry
from rantrack.metrics import clearmot
from rantrack.numerics import diag_gaussian_logpdf, softmax
from rantrack.ran import (ArCoefficients, ExternalMemory, GruParams, HeadParams, RanParams,
                          advance, gru_step, init_state, predict, predict_distribution)
from rantrack.tracker import (Tracker, TrackerConfig, association_score, in_gate, new_track,
                              track_stream)
from rantrack.training import (ModelDims, TrainConfig, TrajectoryPool, grad_check, init_model,
                               smoothed, train)

RESULTS = []


@contextlib.contextmanager
def criterion(number, title):
    start = time.perf_counter()
    detail = {}
    try:
        yield detail
    except BaseException as exc:
        line = f"[FAIL] criterion {number:>2}: {title} ({time.perf_counter() - start:.1f}s) {exc}"
        RESULTS.append(line)
        print("\n" + line)
        raise
    extra = "; ".join(f"{k}={v}" for k, v in detail.items())
    line = f"[PASS] criterion {number:>2}: {title} ({time.perf_counter() - start:.1f}s) {extra}"
    RESULTS.append(line)
    print("\n" + line)


def read_csv(text):
    return list(csv.DictReader(_io.StringIO(text)))


# ---------------------------------------------------------------------------

def test_c01_gradient_fidelity():
    with criterion(1, "analytic gradients match central differences") as d:
        t0 = time.perf_counter()
        pool = TrajectoryPool([synth.generate(synth.preset("crossing", seed=50))])
        worst = 0.0
        for kind in PredictorKind:
            for seed in range(3):
                model = init_model(kind, ModelDims(), seed=seed)
                sample = pool.sample(1, np.random.default_rng(seed), 8, 12)[0]
                report = grad_check(kind, model, sample, epsilon=1e-5, tolerance=1e-4,
                                    max_coords=150, seed=seed)
                assert report.passed, f"{kind.value} seed {seed}: {report}"
                worst = max(worst, report.max_rel_error)
        elapsed = time.perf_counter() - t0
        d["max_rel_error"] = f"{worst:.2e}"
        assert elapsed < 60.0, f"took {elapsed:.1f}s"


def test_c02_analytic_anchors():
    with criterion(2, "analytic anchors") as d:
        rng = np.random.default_rng(0)
        for _ in range(100):
            p = softmax(rng.normal(0, 30, int(rng.integers(1, 20))))
            assert abs(p.sum() - 1.0) <= 1e-12
        lp = diag_gaussian_logpdf(np.zeros(1), np.zeros(1), np.ones(1))
        assert abs(lp - (-0.918939)) <= 1e-9 or abs(lp + 0.9189385332046727) <= 1e-12
        d["logpdf"] = f"{lp:.12f}"

        params = RanParams.init(3, 5, 1, rng)
        state = init_state(params, rng.standard_normal(3))
        for _ in range(4):
            last = rng.standard_normal(3)
            state = advance(params, state, last)
        assert predict(params, state).mu.tobytes() == last.tobytes()

        h = rng.uniform(-1, 1, 7)
        assert gru_step(GruParams.zeros(3, 7), rng.standard_normal(3), h).tobytes() == \
            (0.5 * h).tobytes()


def test_c03_oracle_equivalences():
    with criterion(3, "AVE/TIV/score-factorisation equivalences") as d:
        rng = np.random.default_rng(1)
        worst = 0.0
        for _ in range(100):
            count = int(rng.integers(1, 11))
            mem = ExternalMemory(10)
            for row in rng.normal(0, 5, (count, 4)):
                mem = mem.push(row)
            alpha = np.zeros(10)
            alpha[:count] = 1.0 / count
            ran_mu = predict_distribution(mem, ArCoefficients(alpha, np.ones(4))).mu
            ave_mu = baselines.ave_predict(mem, AveParams(np.zeros(4), 10)).mu
            tiv_mu = baselines.tiv_predict(mem, TivParams(np.zeros(10), np.zeros(4))).mu
            worst = max(worst, float(np.max(np.abs(ave_mu - ran_mu))))
            assert np.max(np.abs(tiv_mu - ave_mu)) < 1e-12
        assert worst < 1e-12
        d["max_ave_ran_gap"] = f"{worst:.1e}"

        model = init_model("RAN", ModelDims(appearance_dim=8), seed=2)
        track = new_track(1, Detection(1, Box(10, 10, 20, 40), 1.0, rng.standard_normal(8)), model)
        for _ in range(20):
            cand = Detection(2, Box(*rng.uniform(0, 30, 2), *rng.uniform(10, 40, 2)), 1.0,
                             rng.standard_normal(8))
            both = association_score(track, cand, model)
            split = association_score(track, cand, model, use_motion=False) + \
                association_score(track, cand, model, use_appearance=False)
            assert abs(both - split) <= 1e-9 * max(1.0, abs(both))


def test_c04_training_convergence():
    with criterion(4, "RAN training reduces smoothed NLL >= 30%, deterministic") as d:
        t0 = time.perf_counter()
        pool = TrajectoryPool(pipeline.scenes("crossing", pipeline.training_seeds(0)))
        _, curve = train("RAN", pool, TrainConfig(iterations=200), seed=0)
        _, again = train("RAN", pool, TrainConfig(iterations=200), seed=0)
        elapsed = time.perf_counter() - t0
        s = smoothed(curve)
        reduction = 1.0 - s[-1] / s[9]
        d["nll_it10"] = f"{s[9]:.1f}"
        d["nll_it200"] = f"{s[-1]:.1f}"
        d["reduction"] = f"{reduction:.1%}"
        assert reduction >= 0.30
        assert curve == again
        assert elapsed < 120.0, f"took {elapsed:.1f}s for two runs"


def test_c05_end_to_end_parallel(tmp_path):
    with criterion(5, "parallel preset tracked perfectly end to end") as d:
        scene = tmp_path / "scene"
        assert cli.main(["synth", "--preset", "parallel", "--seed", "0", "--out", str(scene)],
                        out=_io.StringIO()) == 0
        ckpt = tmp_path / "m.json"
        assert cli.main(["train", "--preset", "parallel", "--out", str(ckpt)],
                        out=_io.StringIO()) == 0
        res = tmp_path / "res.txt"
        assert cli.main(["track", "--checkpoint", str(ckpt), "--data", str(scene),
                         "--out", str(res)], out=_io.StringIO()) == 0
        buf = _io.StringIO()
        assert cli.main(["eval", "--gt", str(scene / "gt.txt"), "--results", str(res),
                         "--format", "csv"], out=buf) == 0
        values = {r["metric"]: r["value"] for r in read_csv(buf.getvalue())}
        d.update(mota=values["mota"], ids=values["ids"], frag=values["frag"])
        report = clearmot(io.read_ground_truth(scene / "gt.txt"), io.read_results(res))
        assert report.mota == 1.0 and report.ids == 0 and report.frag == 0


def test_c06_occlusion_recovery():
    with criterion(6, "occluded targets keep their id across 5 seeds") as d:
        model, _ = pipeline.train_on_preset("RAN", "occlusion", pipeline.EXPERIMENT_TRAINING)
        cfg = TrackerConfig()
        occluded = sorted({t + 1 for t, _, _ in synth.preset("occlusion").occlusions})
        assert max(length for _, _, length in synth.preset("occlusion").occlusions) <= cfg.t_terminate
        checked = 0
        for seed in range(5):
            gt, dets = synth.generate(synth.preset("occlusion", seed=seed))
            report = clearmot(gt, track_stream(dets.iter_frames(), model, cfg))
            for gid in occluded:
                switches = [f for f, log in report.frame_log.items() if gid in log["switches"]]
                assert not switches, f"seed {seed}: target {gid} switched at frames {switches}"
                ids = {tid for log in report.frame_log.values()
                       for g, tid in log["matches"] if g == gid}
                assert len(ids) == 1, f"seed {seed}: target {gid} carried ids {sorted(ids)}"
                checked += 1
        d["target_runs"] = checked


def test_c07_ablation_ordering(tmp_path):
    with criterion(7, "A+M reduces IDS vs M-only; RAN >= AVE under A+M") as d:
        t0 = time.perf_counter()
        out = tmp_path / "ablate.csv"
        assert cli.main(["ablate", "--preset", "crossing", "--eval-seeds", "5", "--out", str(out)],
                        out=_io.StringIO()) == 0
        elapsed = time.perf_counter() - t0
        rows = read_csv(out.read_text())
        assert len(rows) == 12
        table = {(r["predictor"], r["modality"]): r for r in rows}
        ids_am = float(table[("RAN", "A+M")]["ids"])
        ids_m = float(table[("RAN", "M")]["ids"])
        mota_ran = float(table[("RAN", "A+M")]["mota"])
        mota_ave = float(table[("AVE", "A+M")]["mota"])
        d.update(ids_am=ids_am, ids_m=ids_m, mota_ran=mota_ran, mota_ave=mota_ave,
                 runtime=f"{elapsed:.0f}s")
        assert ids_am <= ids_m
        assert mota_ran >= mota_ave
        assert elapsed < 600.0


def test_c08_span_sweep(tmp_path):
    with criterion(8, "span sweep emits 12 rows; MOTA(K=10) >= MOTA(K=1)") as d:
        out = tmp_path / "span.csv"
        assert cli.main(["sweep-span", "--preset", "occlusion", "--spans", "1-12",
                         "--eval-seeds", "5", "--out", str(out)], out=_io.StringIO()) == 0
        rows = read_csv(out.read_text())
        assert [int(r["span"]) for r in rows] == list(range(1, 13))
        mota = {int(r["span"]): float(r["mota"]) for r in rows}
        d.update(mota_k1=mota[1], mota_k10=mota[10])
        assert mota[10] >= mota[1]


def _gt(tracks):
    frames = {}
    for gid, boxes in tracks.items():
        for f, b in boxes.items():
            frames.setdefault(f, []).append(GtEntry(gid, b, True))
    return GroundTruth(frames)


def test_c09_metrics_oracle():
    with criterion(9, "4-frame IDS example and MOTA identity on 1000 fuzzed cases") as d:
        b = Box(0, 0, 10, 10)
        r = clearmot(_gt({1: {f: b for f in range(1, 5)}}),
                     [(1, 7, b), (2, 7, b), (3, 8, b), (4, 8, b)])
        assert r.mota == 0.75 and r.ids == 1
        rng = np.random.default_rng(99)
        checked = 0
        for _ in range(1000):
            n_frames = int(rng.integers(1, 6))
            tracks = {g: {f: Box(*rng.uniform(0, 20, 2), *rng.uniform(4, 12, 2))
                          for f in range(1, n_frames + 1) if rng.random() < 0.8}
                      for g in range(1, int(rng.integers(1, 4)) + 1)}
            hyp = []
            for f in range(1, n_frames + 1):
                for tid in range(1, int(rng.integers(0, 5)) + 1):
                    src = tracks.get(tid, {}).get(f)
                    box = (Box(src.x + rng.normal(0, 1.5), src.y, src.w, src.h) if src is not None
                           else Box(*rng.uniform(0, 20, 2), *rng.uniform(4, 12, 2)))
                    hyp.append((f, int(rng.integers(1, 6)) * 10 + tid, box))
            rep = clearmot(_gt(tracks), hyp)
            if rep.total_gt:
                assert rep.mota == 1.0 - (rep.fp + rep.fn + rep.ids) / rep.total_gt
                checked += 1
        d["fuzzed_with_gt"] = checked


def test_c10_format_roundtrips(tmp_path):
    from pathlib import Path

    with criterion(10, "golden files round-trip bitwise") as d:
        data = Path(__file__).parent / "data"
        pairs = [("det.txt", io.read_detections, io.write_detections),
                 ("gt.txt", io.read_ground_truth, io.write_ground_truth),
                 ("results.txt", io.read_results, io.write_results)]
        for name, read, write in pairs:
            write(tmp_path / name, read(data / name))
            assert (tmp_path / name).read_bytes() == (data / name).read_bytes(), name
        dets = io.read_features(data / "features.txt", io.read_detections(data / "det.txt"))
        io.write_features(tmp_path / "features.txt", dets)
        assert (tmp_path / "features.txt").read_bytes() == (data / "features.txt").read_bytes()
        io.save_checkpoint(tmp_path / "ck.json", io.load_checkpoint(data / "checkpoint_ran.json"))
        assert (tmp_path / "ck.json").read_bytes() == (data / "checkpoint_ran.json").read_bytes()
        d["files"] = 5


def test_c11_lifecycle_boundaries():
    with criterion(11, "t_terminate and gate boundaries") as d:
        dims = ModelDims(appearance_dim=2, appearance_hidden=2, motion_hidden=2, span=3)
        model = init_model("AVE", dims)
        cfg = TrackerConfig(predictor="AVE", t_terminate=20)

        def survivors(lost_frames):
            trk = Tracker(model, cfg)
            trk.step(1, [Detection(1, Box(0, 0, 10, 20), 1.0, np.zeros(2))])
            for f in range(2, 2 + lost_frames):
                trk.step(f, [])
            return len(trk.tracks)

        assert survivors(20) == 1
        assert survivors(21) == 0
        track = new_track(1, Detection(1, Box(0, 0, 3, 4), 1.0, np.zeros(2)), model)
        on = Detection(2, Box.from_center(1.5 + 6.0, 2.0 + 8.0, 3, 4), 1.0, np.zeros(2))
        off = Detection(2, Box.from_center(1.5 + 6.0, 2.0 + 8.0 + 1e-9, 3, 4), 1.0, np.zeros(2))
        assert in_gate(track, on, 2.0) and not in_gate(track, off, 2.0)
        d["t_terminate"] = 20


def test_zz_summary(capsys):
    with capsys.disabled():
        print("\nacceptance summary")
        for line in RESULTS:
            print("  " + line)
