"""Maximum-likelihood training of trajectory predictors.

The loss of a trajectory is the summed negative log-likelihood of every
appearance and motion observation given the ones before it. Gradients are
accumulated by hand-written backpropagation through time; :func:`grad_check`
compares them against central finite differences.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .baselines import PredictorKind, init_params, kind_of
from .data import iou
from .errors import EmptyDatasetError, InvalidArgumentError, TrainingDivergedError
from .numerics import LOG_2PI
from .ran import SIGMA_MAX, SIGMA_MIN, flatten, unflatten

log = logging.getLogger(__name__)

MOTION_DIM = 4


# --------------------------------------------------------------------------
# model containers and configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ModelPair:
    """Sibling predictors for the appearance and motion modalities."""

    appearance: object
    motion: object

    @property
    def kind(self):
        return kind_of(self.appearance)

    @property
    def span(self):
        return self.appearance.span


@dataclass(frozen=True)
class ModelDims:
    appearance_dim: int = 16
    appearance_hidden: int = 32
    motion_hidden: int = 16
    span: int = 10

    @classmethod
    def full_scale(cls):
        return cls(appearance_dim=256, appearance_hidden=128, motion_hidden=32, span=10)


def init_model(kind, dims=ModelDims(), seed=0):
    rng = np.random.default_rng(seed)
    kind = PredictorKind.parse(kind)
    return ModelPair(
        init_params(kind, dims.appearance_dim, dims.appearance_hidden, dims.span, rng),
        init_params(kind, MOTION_DIM, dims.motion_hidden, dims.span, rng),
    )


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 200
    batch: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    keep_prob: float = 0.75
    dropout: bool = True
    crop_min: int = 8
    crop_max: int = 20
    max_grad_norm: float = None

    def validate(self):
        problems = []
        if self.iterations < 0:
            problems.append("iterations must be >= 0")
        if self.batch < 1:
            problems.append("batch must be >= 1")
        if not self.lr > 0:
            problems.append("lr must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            problems.append("betas must lie in [0, 1)")
        if not 0 < self.keep_prob <= 1:
            problems.append("keep_prob must lie in (0, 1]")
        if not 2 <= self.crop_min <= self.crop_max:
            problems.append("need 2 <= crop_min <= crop_max")
        if self.max_grad_norm is not None and not self.max_grad_norm > 0:
            problems.append("max_grad_norm must be > 0")
        return problems


# --------------------------------------------------------------------------
# trajectory samples
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TrajectoryStep:
    motion: np.ndarray
    appearance: np.ndarray
    visible: bool


@dataclass(frozen=True, eq=False)
class TrajectorySample:
    steps: tuple

    def __post_init__(self):
        if len(self.steps) < 2 or sum(s.visible for s in self.steps) < 2:
            raise InvalidArgumentError("a trajectory sample needs at least 2 visible steps")
        if not (self.steps[0].visible and self.steps[-1].visible):
            raise InvalidArgumentError("a trajectory sample must start and end visible")

    def __len__(self):
        return len(self.steps)

    def appearance_inputs(self):
        return [s.appearance for s in self.steps if s.visible]

    def motion_inputs(self):
        """Motion features with ``None`` at invisible steps (fed back with the prediction)."""
        return [s.motion if s.visible else None for s in self.steps]

    @classmethod
    def from_boxes(cls, boxes, features):
        """Build a sample from per-step boxes/features; ``None`` boxes are invisible steps."""
        from .tracker import motion_feature

        steps = []
        prev = None
        for box, feat in zip(boxes, features):
            if box is None:
                steps.append(TrajectoryStep(np.zeros(MOTION_DIM), None, False))
                continue
            if prev is None:
                m = np.array([0.0, 0.0, box.w, box.h])
            else:
                m = motion_feature(box, prev)
            steps.append(TrajectoryStep(m, np.asarray(feat, dtype=np.float64), True))
            prev = box
        return cls(tuple(steps))


class TrajectoryPool:
    """Per ground-truth trajectory candidate detections, ready for repeated sampling.

    At each ground-truth frame the candidates are the detections with IoU > 0.5
    to the ground-truth box; frames with none (or with an invisible ground
    truth) become invisible steps.
    """

    def __init__(self, scenes, iou_threshold=0.5):
        self.tracks = []
        for gt, dets in scenes:
            for gt_id, entries in gt.trajectories().items():
                steps = []
                for frame, entry in entries:
                    cands = []
                    if entry.visible:
                        cands = [d for d in dets.in_frame(frame)
                                 if d.appearance is not None and iou(d.box, entry.box) > iou_threshold]
                    steps.append(cands)
                if sum(1 for c in steps if c) >= 2:
                    self.tracks.append(steps)
        if not self.tracks:
            raise EmptyDatasetError("no ground-truth trajectory has two usable steps")

    def __len__(self):
        return len(self.tracks)

    def sample(self, batch, rng, crop_min=8, crop_max=20):
        out = []
        attempts = 0
        while len(out) < batch:
            attempts += 1
            if attempts > 100 * batch + 1000:
                raise EmptyDatasetError("crops keep missing two visible steps; widen the crop range")
            steps = self.tracks[int(rng.integers(len(self.tracks)))]
            length = int(rng.integers(crop_min, crop_max + 1))
            length = min(length, len(steps))
            start = int(rng.integers(0, len(steps) - length + 1))
            picks = []
            for cands in steps[start:start + length]:
                picks.append(cands[int(rng.integers(len(cands)))] if cands else None)
            while picks and picks[0] is None:
                picks.pop(0)
            while picks and picks[-1] is None:
                picks.pop()
            if sum(p is not None for p in picks) < 2:
                continue
            out.append(TrajectorySample.from_boxes(
                [p.box if p else None for p in picks],
                [p.appearance if p else None for p in picks]))
        return out


def sample_trajectories(gt, dets, batch, rng_seed, crop_min=8, crop_max=20):
    pool = TrajectoryPool([(gt, dets)])
    return pool.sample(batch, np.random.default_rng(rng_seed), crop_min, crop_max)


# --------------------------------------------------------------------------
# forward / backward for one modality
# --------------------------------------------------------------------------

def _gate_sigma(s):
    """Clamped deviation and the mask where the clamp is inactive."""
    with np.errstate(over="ignore"):
        sigma = np.exp(s)
    free = (sigma >= SIGMA_MIN) & (sigma <= SIGMA_MAX)
    return np.clip(sigma, SIGMA_MIN, SIGMA_MAX), free


def _sig(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def modality_nll(params, xs, keep_mask=None, need_grad=True):
    """NLL of one modality's input sequence and, optionally, its gradient.

    ``xs[0]`` seeds the memory. Later entries are either observed vectors,
    which are scored and then pushed, or ``None``, in which case the model's own
    predicted mean is pushed instead (lost-track convention).
    """
    nll, grads = modality_batch_nll(params, [xs], None if keep_mask is None else [keep_mask],
                                    need_grad)
    return float(nll[0]), grads


def _pack(seqs, n):
    lengths = [len(s) for s in seqs]
    T, B = max(lengths), len(seqs)
    data = np.zeros((T, B, n))
    scored = np.zeros((T, B), dtype=bool)
    for b, seq in enumerate(seqs):
        if seq[0] is None:
            raise InvalidArgumentError("first input must be observed")
        for t, x in enumerate(seq):
            if x is not None:
                data[t, b] = x
                scored[t, b] = True
    scored[0] = False
    return data, scored, T, B


def modality_batch_nll(params, seqs, keep_masks=None, need_grad=True):
    """Per-sequence NLL of a batch of one modality's sequences and the summed gradient.

    Sequences are right-padded; padded steps feed back the prediction and carry
    no loss, so they contribute nothing to either output.
    """
    kind = kind_of(params)
    has_gru = kind in (PredictorKind.RAN, PredictorKind.GRU_DIRECT)
    K = params.span
    n = params.input_dim
    data, scored, T, B = _pack(seqs, n)

    if has_gru:
        g = params.gru
        Wz, Wr, Wc, Uz, Ur, Uc = g.W_z, g.W_r, g.W, g.U_z, g.U_r, g.U
        if kind is PredictorKind.RAN:
            HW, Hb = params.head.weight, params.head.bias
        else:
            HW, Hb = params.head_weight, params.head_bias
        d = g.hidden_dim
        mask = np.ones((B, d)) if keep_masks is None else np.stack(
            [np.ones(d) if m is None else m for m in keep_masks])
    X = np.zeros((T, B, n))
    X[0] = data[0]
    H = np.zeros((T, B, params.hidden_dim))
    nll = np.zeros(B)
    cache = [None]
    for t in range(1, T):
        valid = min(t, K)
        slots = X[t - valid:t][::-1].transpose(1, 0, 2)  # (B, valid, n), newest first
        hd = H[t - 1] * mask if has_gru else None
        if kind is PredictorKind.RAN:
            out = hd @ HW.T + Hb
            a = out[:, :valid]
            alpha = np.exp(a - a.max(axis=1, keepdims=True))
            alpha /= alpha.sum(axis=1, keepdims=True)
            mu = np.einsum("bk,bkn->bn", alpha, slots)
            s = out[:, K:]
        elif kind is PredictorKind.GRU_DIRECT:
            out = hd @ HW.T + Hb
            alpha = None
            mu = out[:, :n]
            s = out[:, n:]
        elif kind is PredictorKind.AVE:
            alpha = np.full((B, valid), 1.0 / valid)
            mu = slots.mean(axis=1)
            s = np.broadcast_to(params.log_sigma, (B, n))
        else:
            a = params.alpha_logits[:valid]
            alpha = np.exp(a - a.max())
            alpha = np.broadcast_to(alpha / alpha.sum(), (B, valid))
            mu = np.einsum("bk,bkn->bn", alpha, slots)
            s = np.broadcast_to(params.log_sigma, (B, n))
        sigma, free = _gate_sigma(s)
        obs = scored[t]
        x = np.where(obs[:, None], data[t], mu)
        X[t] = x
        zz = (x - mu) / sigma
        nll += np.where(obs, np.sum(0.5 * LOG_2PI + np.log(sigma) + 0.5 * zz * zz, axis=1), 0.0)
        if has_gru:
            h = H[t - 1]
            z = _sig(x @ Wz.T + hd @ Uz.T)
            r = _sig(x @ Wr.T + hd @ Ur.T)
            c = np.tanh(x @ Wc.T + (r * hd) @ Uc.T)
            H[t] = (1.0 - z) * h + z * c
            gc = (h, hd, z, r, c)
        else:
            gc = None
        cache.append((valid, slots, alpha, mu, sigma, free, obs, zz, gc))

    if not need_grad:
        return nll, None

    grads = {k: np.zeros_like(v) for k, v in flatten(params).items()}
    gX = np.zeros_like(X)
    gH = np.zeros((B, params.hidden_dim))
    head_w, head_b = (("head.weight", "head.bias") if kind is PredictorKind.RAN
                      else ("head_weight", "head_bias"))
    for t in range(T - 1, 0, -1):
        valid, slots, alpha, mu, sigma, free, obs, zz, gc = cache[t]
        if has_gru:
            h, hd, z, r, c = gc
            x = X[t]
            g_z = gH * (c - h)
            g_h = gH * (1.0 - z)
            g_ac = gH * z * (1.0 - c * c)
            rh = r * hd
            g_rh = g_ac @ Uc
            g_hd = g_rh * r
            g_az = g_z * z * (1.0 - z)
            g_ar = g_rh * hd * r * (1.0 - r)
            grads["gru.W"] += g_ac.T @ x
            grads["gru.U"] += g_ac.T @ rh
            grads["gru.W_z"] += g_az.T @ x
            grads["gru.U_z"] += g_az.T @ hd
            grads["gru.W_r"] += g_ar.T @ x
            grads["gru.U_r"] += g_ar.T @ hd
            gX[t] += g_ac @ Wc + g_az @ Wz + g_ar @ Wr
            g_hd += g_az @ Uz + g_ar @ Ur

        obs_col = obs[:, None]
        g_mu = np.where(obs_col, -zz / sigma, gX[t])
        g_s = np.where(obs_col & free, 1.0 - zz * zz, 0.0)

        if kind is PredictorKind.GRU_DIRECT:
            g_out = np.concatenate([g_mu, g_s], axis=1)
        else:
            if kind is PredictorKind.AVE:
                grads["log_sigma"] += g_s.sum(axis=0)
            else:
                g_alpha = np.einsum("bkn,bn->bk", slots, g_mu)
                g_a = alpha * (g_alpha - np.sum(alpha * g_alpha, axis=1, keepdims=True))
                if kind is PredictorKind.TIV:
                    grads["alpha_logits"][:valid] += g_a.sum(axis=0)
                    grads["log_sigma"] += g_s.sum(axis=0)
                else:
                    g_out = np.zeros((B, HW.shape[0]))
                    g_out[:, :valid] = g_a
                    g_out[:, K:] = g_s
            contrib = alpha[:, :, None] * g_mu[:, None, :]  # (B, valid, n), newest first
            gX[t - valid:t] += contrib[:, ::-1].transpose(1, 0, 2)
        if has_gru:
            grads[head_w] += g_out.T @ hd
            grads[head_b] += g_out.sum(axis=0)
            g_hd += g_out @ HW
            gH = g_h + g_hd * mask
    return nll, unflatten(params, grads)


def _sample_inputs(sample):
    return sample.appearance_inputs(), sample.motion_inputs()


def sequence_nll(kind, model, sample, masks=(None, None)):
    """Summed appearance + motion negative log-likelihood of one sample."""
    _check_kind(kind, model)
    app, mot = _sample_inputs(sample)
    a, _ = modality_nll(model.appearance, app, masks[0], need_grad=False)
    m, _ = modality_nll(model.motion, mot, masks[1], need_grad=False)
    return a + m


def backward(kind, model, sample, masks=(None, None)):
    """``(nll, gradients)``; gradients are a :class:`ModelPair` of parameter-shaped arrays."""
    _check_kind(kind, model)
    app, mot = _sample_inputs(sample)
    a, ga = modality_nll(model.appearance, app, masks[0])
    m, gm = modality_nll(model.motion, mot, masks[1])
    return a + m, ModelPair(ga, gm)


def _check_kind(kind, model):
    kind = PredictorKind.parse(kind)
    if kind_of(model.appearance) is not kind or kind_of(model.motion) is not kind:
        raise InvalidArgumentError(f"model is not a {kind.name} model")


# --------------------------------------------------------------------------
# optimizer
# --------------------------------------------------------------------------

@dataclass
class AdamState:
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)
    step_count: int = 0


def adam_step(params, grads, state, lr=1e-3, beta1=0.9, beta2=0.99, eps=1e-8):
    """One bias-corrected Adam update; returns new params and a new state."""
    p = flatten(params)
    g = flatten(grads)
    for name, arr in g.items():
        if not np.all(np.isfinite(arr)):
            raise TrainingDivergedError(f"non-finite gradient in {name}")
    t = state.step_count + 1
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    m_new, v_new, p_new = {}, {}, {}
    for name, value in p.items():
        m = state.first_moment.get(name, np.zeros_like(value))
        v = state.second_moment.get(name, np.zeros_like(value))
        m = beta1 * m + (1.0 - beta1) * g[name]
        v = beta2 * v + (1.0 - beta2) * g[name] * g[name]
        p_new[name] = value - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        m_new[name] = m
        v_new[name] = v
    return unflatten(params, p_new), AdamState(m_new, v_new, t)


# --------------------------------------------------------------------------
# training loop
# --------------------------------------------------------------------------

def dropout_masks(model, keep_prob, rng):
    """One inverted-dropout mask per recurrent modality, fixed for a whole sequence."""
    out = []
    for params in (model.appearance, model.motion):
        d = params.hidden_dim
        if d == 0 or keep_prob >= 1.0:
            out.append(None)
        else:
            out.append((rng.random(d) < keep_prob) / keep_prob)
    return tuple(out)


def batch_gradient(kind, model, samples, masks=None):
    """Mean NLL and mean gradient over ``samples``."""
    _check_kind(kind, model)
    n = len(samples)
    app = [s.appearance_inputs() for s in samples]
    mot = [s.motion_inputs() for s in samples]
    app_masks = [m[0] for m in masks] if masks else None
    mot_masks = [m[1] for m in masks] if masks else None
    nll_a, ga = modality_batch_nll(model.appearance, app, app_masks)
    nll_m, gm = modality_batch_nll(model.motion, mot, mot_masks)
    grads = ModelPair(ga, gm)
    mean = {k: v / n for k, v in flatten(grads).items()}
    return float(np.sum(nll_a + nll_m)) / n, unflatten(grads, mean)


def _clip(grads, max_norm):
    flat = flatten(grads)
    norm = math.sqrt(sum(float(np.sum(v * v)) for v in flat.values()))
    if norm <= max_norm:
        return grads
    return unflatten(grads, {k: v * (max_norm / norm) for k, v in flat.items()})


def train(kind, dataset, config=TrainConfig(), seed=0, dims=ModelDims(), model=None,
          callback=None):
    """Train a model pair; returns ``(model, loss_curve)``.

    ``dataset`` is a :class:`TrajectoryPool` (resampled every iteration) or a
    fixed list of :class:`TrajectorySample` from which batches are drawn.
    """
    kind = PredictorKind.parse(kind)
    problems = config.validate()
    if problems:
        raise InvalidArgumentError("; ".join(problems))
    if not isinstance(dataset, TrajectoryPool) and len(dataset) == 0:
        raise EmptyDatasetError("training set is empty")
    seeds = np.random.SeedSequence(seed).spawn(2)
    if model is None:
        model = init_model(kind, dims, seeds[0])
    _check_kind(kind, model)
    rng = np.random.default_rng(seeds[1])
    adam = AdamState()
    curve = []
    for it in range(config.iterations):
        if isinstance(dataset, TrajectoryPool):
            batch = dataset.sample(config.batch, rng, config.crop_min, config.crop_max)
        else:
            idx = rng.integers(len(dataset), size=config.batch)
            batch = [dataset[int(i)] for i in idx]
        masks = None
        if config.dropout and config.keep_prob < 1.0:
            masks = [dropout_masks(model, config.keep_prob, rng) for _ in batch]
        loss, grads = batch_gradient(kind, model, batch, masks)
        if not math.isfinite(loss):
            raise TrainingDivergedError(f"loss became {loss} at iteration {it}")
        if config.max_grad_norm is not None:
            grads = _clip(grads, config.max_grad_norm)
        model, adam = adam_step(model, grads, adam, config.lr, config.beta1, config.beta2,
                                config.eps)
        curve.append(loss)
        if callback is not None:
            callback(it, loss)
        if it % 50 == 0:
            log.debug("iteration %d mean nll %.4f", it, loss)
    return model, curve


def smoothed(curve, window=10):
    """Trailing moving average (shorter windows at the start)."""
    c = np.asarray(curve, dtype=np.float64)
    cs = np.concatenate([[0.0], np.cumsum(c)])
    idx = np.arange(1, len(c) + 1)
    lo = np.maximum(0, idx - window)
    return (cs[idx] - cs[lo]) / (idx - lo)


# --------------------------------------------------------------------------
# gradient verification
# --------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_coordinate: str
    checked: int
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance


def grad_check(kind, model, sample, epsilon=1e-5, tolerance=1e-4, max_coords=300, seed=0,
               masks=(None, None), analytic=None):
    """Compare analytic gradients against central finite differences.

    Above ``max_coords`` parameters a seeded random subset of coordinates is
    checked. ``analytic`` overrides the gradients under test (negative controls).
    """
    if not 0 < epsilon <= 1e-2:
        raise InvalidArgumentError("epsilon must lie in (0, 1e-2]")
    if analytic is None:
        _, analytic = backward(kind, model, sample, masks)
    flat = flatten(model)
    g_flat = flatten(analytic)
    coords = [(name, idx) for name, arr in flat.items() for idx in np.ndindex(arr.shape)]
    if len(coords) > max_coords:
        rng = np.random.default_rng(seed)
        pick = sorted(rng.choice(len(coords), size=max_coords, replace=False))
        coords = [coords[i] for i in pick]
    worst = 0.0
    worst_name = ""
    for name, idx in coords:
        def nll_at(delta):
            arr = flat[name].copy()
            arr[idx] += delta
            return sequence_nll(kind, unflatten(model, {**flat, name: arr}), sample, masks)

        numeric = (nll_at(epsilon) - nll_at(-epsilon)) / (2.0 * epsilon)
        ga = float(g_flat[name][idx])
        rel = abs(ga - numeric) / max(1.0, abs(ga), abs(numeric))
        if rel > worst:
            worst = rel
            worst_name = f"{name}{list(idx)}"
    return GradCheckReport(worst, worst_name, len(coords), tolerance)
