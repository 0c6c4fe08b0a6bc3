import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rantrack import synth
from rantrack.data import iou
from rantrack.errors import ConfigError
from rantrack.synth import SceneConfig, generate, identity_embeddings, preset


def test_noiseless_detections_equal_gt_and_embeddings():
    cfg = SceneConfig(num_targets=4, num_frames=20, seed=1)
    gt, dets = generate(cfg)
    rng = np.random.default_rng(1)
    emb = identity_embeddings(4, cfg.appearance_dim, cfg.appearance_margin, rng)
    for frame in range(1, 21):
        entries = gt.entries(frame)
        ds = dets.in_frame(frame)
        assert len(ds) == len(entries)
        for e, d in zip(entries, ds):
            assert d.box == e.box and iou(d.box, e.box) == 1.0
            assert d.appearance.tobytes() == emb[e.gt_id - 1].tobytes()


def test_full_miss_rate_gives_no_true_detections():
    _, dets = generate(SceneConfig(num_targets=3, num_frames=10, miss_rate=1.0))
    assert len(dets) == 0


def test_clutter_count_poisson_concentration():
    _, dets = generate(SceneConfig(num_targets=0, num_frames=100, fp_rate=2.0, seed=4))
    assert abs(len(dets) - 200) <= 3 * np.sqrt(200)


def test_embedding_margin_holds():
    emb = identity_embeddings(8, 16, 1.0, np.random.default_rng(0))
    for a, b in itertools.combinations(emb, 2):
        assert np.linalg.norm(a - b) >= 1.0
    np.testing.assert_allclose(np.linalg.norm(emb, axis=1), 1.0, atol=1e-12)


def test_infeasible_margin():
    with pytest.raises(ConfigError):
        identity_embeddings(3, 1, 1.0, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        identity_embeddings(2, 4, 2.5, np.random.default_rng(0))


def test_config_validation_lists_all_problems():
    with pytest.raises(ConfigError) as err:
        generate(SceneConfig(num_frames=0, miss_rate=2.0, layout="spiral"))
    assert len(err.value.problems) == 3


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000), st.sampled_from(synth.LAYOUTS))
def test_boxes_stay_in_arena(seed, layout):
    cfg = SceneConfig(num_targets=5, num_frames=60, layout=layout, velocity_noise=2.0,
                      velocity_change_every=10, seed=seed)
    gt, _ = generate(cfg)
    for frame in gt.frames:
        for e in gt.entries(frame):
            b = e.box
            assert b.w > 0 and b.h > 0
            assert b.x >= -1e-9 and b.y >= -1e-9
            assert b.x + b.w <= cfg.width + 1e-9 and b.y + b.h <= cfg.height + 1e-9


def test_occlusion_windows():
    cfg = SceneConfig(num_targets=2, num_frames=20, occlusions=((0, 5, 3),), seed=2)
    gt, dets = generate(cfg)
    hidden = [f for f in gt.frames for e in gt.entries(f) if not e.visible]
    assert hidden == [5, 6, 7]
    assert all(len(dets.in_frame(f)) == 1 for f in (5, 6, 7))


@pytest.mark.parametrize("name", ["parallel", "crossing", "occlusion"])
def test_presets_are_seed_stable(name):
    a_gt, a_d = generate(preset(name, seed=3))
    b_gt, b_d = generate(preset(name, seed=3))
    rows = lambda d: [(f, x.box.as_tuple(), x.confidence, x.appearance.tobytes())
                      for f, fr in d.iter_frames() for x in fr]
    assert rows(a_d) == rows(b_d)
    assert a_gt.total_visible() == b_gt.total_visible()


def test_preset_properties():
    par = preset("parallel")
    assert par == par.noiseless()
    occ = preset("occlusion")
    assert occ.occlusions and all(length >= 5 for _, _, length in occ.occlusions)
    cross = preset("crossing")
    assert cross.layout == "crossing" and cross.box_w_min == cross.box_w_max
    with pytest.raises(ConfigError):
        preset("mall")


def test_crossing_pairs_meet():
    cfg = preset("crossing", seed=0).noiseless()
    gt, _ = generate(cfg)
    traj = gt.trajectories()
    for a in range(1, cfg.num_targets, 2):
        d = min(np.hypot(ea.box.cx - eb.box.cx, ea.box.cy - eb.box.cy)
                for (_, ea), (_, eb) in zip(traj[a], traj[a + 1]))
        assert d < 10.0
