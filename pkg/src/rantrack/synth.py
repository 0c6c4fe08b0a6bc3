"""Synthetic multi-target scenes: ground truth, noisy detections, identity features.

Targets move with piecewise-constant velocity plus Gaussian jitter. Each
identity owns a unit-norm appearance embedding; every detection of it carries
the embedding plus isotropic noise, which is the only property of a re-id
feature the trackers rely on.
"""

from dataclasses import dataclass, replace

import numpy as np

from .data import Box, Detection, DetectionSet, GroundTruth, GtEntry
from .errors import ConfigError

LAYOUTS = ("random", "parallel", "crossing")


@dataclass(frozen=True)
class SceneConfig:
    num_targets: int = 6
    num_frames: int = 100
    width: float = 1920.0
    height: float = 1080.0
    layout: str = "random"
    speed_min: float = 2.0
    speed_max: float = 6.0
    velocity_noise: float = 0.0       # per-step position jitter of the ground truth
    velocity_change_every: int = 0    # frames between velocity resamples, 0 = never
    box_w_min: float = 30.0
    box_w_max: float = 60.0
    aspect: float = 2.0               # h / w
    appearance_dim: int = 16
    appearance_margin: float = 1.0
    appearance_noise: float = 0.0
    miss_rate: float = 0.0
    fp_rate: float = 0.0
    box_jitter: float = 0.0
    occlusions: tuple = ()            # (target index, start frame, length)
    seed: int = 0

    def validate(self):
        problems = []
        if self.num_targets < 0:
            problems.append("num_targets must be >= 0")
        if self.num_frames < 1:
            problems.append("num_frames must be >= 1")
        if self.appearance_dim < 1:
            problems.append("appearance_dim must be positive")
        if self.layout not in LAYOUTS:
            problems.append(f"layout must be one of {LAYOUTS}")
        if not 0 <= self.miss_rate <= 1:
            problems.append("miss_rate must lie in [0, 1]")
        if self.fp_rate < 0:
            problems.append("fp_rate must be >= 0")
        for name in ("velocity_noise", "appearance_noise", "box_jitter", "appearance_margin"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0")
        if not 0 < self.box_w_min <= self.box_w_max:
            problems.append("need 0 < box_w_min <= box_w_max")
        if not 0 <= self.speed_min <= self.speed_max:
            problems.append("need 0 <= speed_min <= speed_max")
        if self.width <= 2 * self.box_w_max * max(self.aspect, 1.0) or \
                self.height <= 2 * self.box_w_max * self.aspect:
            problems.append("arena too small for the box sizes")
        for occ in self.occlusions:
            if len(occ) != 3 or not 0 <= occ[0] < self.num_targets or occ[2] < 0:
                problems.append(f"bad occlusion window {occ!r}")
        return problems

    def noiseless(self):
        return replace(self, velocity_noise=0.0, appearance_noise=0.0, miss_rate=0.0,
                       fp_rate=0.0, box_jitter=0.0)


def identity_embeddings(n, dim, margin, rng, max_tries=2000):
    """``n`` unit vectors with pairwise Euclidean distance >= ``margin``."""
    if n == 0:
        return np.zeros((0, dim))
    if margin > 2.0 or (dim == 1 and n > 2) or (dim == 1 and n == 2 and margin > 2.0):
        raise ConfigError(f"cannot place {n} unit vectors in {dim}-d with margin {margin}")
    out = []
    tries = 0
    while len(out) < n:
        tries += 1
        if tries > max_tries * n:
            raise ConfigError(f"could not place {n} unit vectors in {dim}-d with margin {margin}")
        v = rng.standard_normal(dim)
        v /= np.linalg.norm(v)
        if all(np.linalg.norm(v - u) >= margin for u in out):
            out.append(v)
    return np.stack(out)


@dataclass
class _Target:
    cx: float
    cy: float
    w: float
    h: float
    vx: float
    vy: float


def _initial_targets(cfg, rng):
    targets = []
    n = cfg.num_targets
    for i in range(n):
        w = rng.uniform(cfg.box_w_min, cfg.box_w_max)
        h = w * cfg.aspect
        speed = rng.uniform(cfg.speed_min, cfg.speed_max)
        margin_x = w
        margin_y = h
        if cfg.layout == "parallel":
            # horizontal lanes, everyone heading right from the left third
            lane = (i + 1) * cfg.height / (n + 1)
            cx = rng.uniform(margin_x, cfg.width / 3)
            targets.append(_Target(cx, lane, w, h, speed, 0.0))
        elif cfg.layout == "crossing":
            # pair members travel the same way at similar speed on mirrored shallow
            # slopes, so their paths form an X through a shared point mid-sequence
            pair, side = divmod(i, 2)
            n_pairs = (n + 1) // 2
            if side == 0:
                meet = (cfg.width / 2 + rng.uniform(-0.1, 0.1) * cfg.width,
                        (pair + 1) * cfg.height / (n_pairs + 1),
                        cfg.num_frames / 2 + rng.uniform(-0.1, 0.1) * cfg.num_frames)
            meet_x, meet_y, meet_t = meet
            angle = rng.uniform(0.05, 0.2) * (1.0 if side == 0 else -1.0)
            direction = 1.0 if pair % 2 == 0 else -1.0
            vx = direction * speed * np.cos(angle)
            vy = speed * np.sin(angle)
            targets.append(_Target(meet_x - vx * meet_t, meet_y - vy * meet_t, w, h, vx, vy))
        else:
            angle = rng.uniform(0, 2 * np.pi)
            targets.append(_Target(rng.uniform(margin_x, cfg.width - margin_x),
                                   rng.uniform(margin_y, cfg.height - margin_y),
                                   w, h, speed * np.cos(angle), speed * np.sin(angle)))
    return targets


def _clip_to_arena(t, cfg):
    """Keep the box inside the arena, bouncing the velocity off the walls."""
    lo_x, hi_x = t.w / 2, cfg.width - t.w / 2
    lo_y, hi_y = t.h / 2, cfg.height - t.h / 2
    if t.cx < lo_x or t.cx > hi_x:
        t.vx = -t.vx
        t.cx = min(max(t.cx, lo_x), hi_x)
    if t.cy < lo_y or t.cy > hi_y:
        t.vy = -t.vy
        t.cy = min(max(t.cy, lo_y), hi_y)


def generate(cfg):
    """Generate ``(GroundTruth, DetectionSet)``; deterministic given ``cfg.seed``."""
    problems = cfg.validate()
    if problems:
        raise ConfigError(problems)
    rng = np.random.default_rng(cfg.seed)
    embeddings = identity_embeddings(cfg.num_targets, cfg.appearance_dim, cfg.appearance_margin, rng)
    targets = _initial_targets(cfg, rng)
    occluded = set()
    for target, start, length in cfg.occlusions:
        for f in range(start, start + length):
            occluded.add((target, f))

    gt_frames = {}
    det_frames = {}
    for frame in range(1, cfg.num_frames + 1):
        if frame > 1:
            for i, t in enumerate(targets):
                if cfg.velocity_change_every and (frame - 1) % cfg.velocity_change_every == 0:
                    speed = rng.uniform(cfg.speed_min, cfg.speed_max)
                    heading = np.arctan2(t.vy, t.vx) + rng.uniform(-0.5, 0.5)
                    t.vx, t.vy = speed * np.cos(heading), speed * np.sin(heading)
                t.cx += t.vx + cfg.velocity_noise * rng.standard_normal()
                t.cy += t.vy + cfg.velocity_noise * rng.standard_normal()
        entries = []
        dets = []
        for i, t in enumerate(targets):
            _clip_to_arena(t, cfg)
            box = Box.from_center(t.cx, t.cy, t.w, t.h)
            visible = (i, frame) not in occluded
            entries.append(GtEntry(i + 1, box, visible))
            if not visible or rng.random() < cfg.miss_rate:
                continue
            if cfg.box_jitter > 0:
                j = cfg.box_jitter * rng.standard_normal(4)
                det_box = Box(box.x + j[0], box.y + j[1], max(box.w + j[2], 1.0),
                              max(box.h + j[3], 1.0))
            else:
                det_box = box
            feat = embeddings[i].copy()
            if cfg.appearance_noise > 0:
                feat = feat + cfg.appearance_noise * rng.standard_normal(cfg.appearance_dim)
            dets.append(Detection(frame, det_box, 1.0, feat))
        for _ in range(int(rng.poisson(cfg.fp_rate)) if cfg.fp_rate > 0 else 0):
            w = rng.uniform(cfg.box_w_min, cfg.box_w_max)
            h = w * cfg.aspect
            box = Box(rng.uniform(0, cfg.width - w), rng.uniform(0, cfg.height - h), w, h)
            feat = rng.standard_normal(cfg.appearance_dim)
            feat /= np.linalg.norm(feat)
            dets.append(Detection(frame, box, float(rng.uniform(0.3, 1.0)), feat))
        gt_frames[frame] = entries
        if dets:
            det_frames[frame] = dets
    gt = GroundTruth(gt_frames, cfg.num_frames)
    return gt, DetectionSet(det_frames, cfg.num_frames)


def preset(name, seed=0):
    """Named scene configurations used by the experiments.

    ``parallel``   noise-free targets in separate horizontal lanes
    ``crossing``   pairs of similar targets crossing on a shared point
    ``occlusion``  parallel lanes with repeated >= 5-frame occlusions
    """
    if name == "parallel":
        return SceneConfig(num_targets=5, num_frames=60, layout="parallel", speed_min=3.0,
                           speed_max=5.0, seed=seed)
    if name == "crossing":
        return SceneConfig(num_targets=8, num_frames=80, layout="crossing", speed_min=4.0,
                           speed_max=5.0, box_w_min=42.0, box_w_max=42.0,
                           velocity_noise=1.5, velocity_change_every=0,
                           appearance_noise=0.15, miss_rate=0.05, fp_rate=0.5,
                           box_jitter=2.0, seed=seed)
    if name == "occlusion":
        occlusions = ((0, 20, 8), (1, 30, 6), (2, 45, 10), (3, 15, 5), (0, 55, 12))
        return SceneConfig(num_targets=5, num_frames=80, layout="parallel", speed_min=3.0,
                           speed_max=5.0, velocity_noise=0.5, appearance_noise=0.15,
                           miss_rate=0.02, fp_rate=0.3, box_jitter=1.5,
                           occlusions=occlusions, seed=seed)
    raise ConfigError(f"unknown preset {name!r}")
