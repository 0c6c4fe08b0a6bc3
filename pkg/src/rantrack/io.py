"""Readers and writers for MOTChallenge-style text files, feature sidecars and checkpoints.

Canonical numeric formatting is Python's shortest round-trip ``repr`` for
detections, ground truth and features (so read/write is bit-exact), and two
fixed decimals for tracking results (the submission convention).
"""

import base64
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import PredictorKind, zero_params
from .data import Box, Detection, DetectionSet, GroundTruth, GtEntry
from .errors import CheckpointError, InvalidArgumentError, ParseError
from .ran import flatten, unflatten
from .training import MOTION_DIM, ModelDims, ModelPair

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "rantrack-checkpoint"
CHECKPOINT_VERSION = 1


def _num(x):
    return repr(float(x))


def _lines(path):
    """Yield ``(line_number, fields)`` for data lines; count skipped blank/comment lines."""
    skipped = 0
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                skipped += 1
                continue
            rows.append((lineno, [f.strip() for f in line.split(",")]))
    return rows, skipped


def _int(text, path, lineno, what):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"{what} {text!r} is not a number", path, lineno)
    if not value.is_integer():
        raise ParseError(f"{what} {text!r} is not an integer", path, lineno)
    return int(value)


def _float(text, path, lineno, what):
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"{what} {text!r} is not a number", path, lineno)


def _box(fields_, path, lineno):
    x, y, w, h = (_float(v, path, lineno, n) for v, n in zip(fields_[2:6], "xywh"))
    try:
        return Box(x, y, w, h)
    except InvalidArgumentError as exc:
        raise ParseError(str(exc), path, lineno)


# --------------------------------------------------------------------------
# detections
# --------------------------------------------------------------------------

def read_detections(path):
    """Parse ``frame,id,x,y,w,h,conf[,...]``; the id column is ignored."""
    rows, skipped = _lines(path)
    frames = {}
    for lineno, f in rows:
        if len(f) < 7:
            raise ParseError(f"expected at least 7 fields, got {len(f)}", path, lineno)
        frame = _int(f[0], path, lineno, "frame")
        if frame < 1:
            raise ParseError(f"frame must be >= 1, got {frame}", path, lineno)
        conf = _float(f[6], path, lineno, "confidence")
        frames.setdefault(frame, []).append(Detection(frame, _box(f, path, lineno), conf))
    if skipped:
        log.info("%s: skipped %d blank/comment lines", path, skipped)
    return DetectionSet(frames, skipped=skipped)


def write_detections(path, dets):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for frame in sorted(dets.frames):
            for d in dets.frames[frame]:
                b = d.box
                fh.write(f"{frame},-1,{_num(b.x)},{_num(b.y)},{_num(b.w)},{_num(b.h)},"
                         f"{_num(d.confidence)},-1,-1,-1\n")


# --------------------------------------------------------------------------
# ground truth
# --------------------------------------------------------------------------

def _gt_visible(f, path, lineno):
    mark = _float(f[6], path, lineno, "mark") if len(f) > 6 else 1.0
    if mark == 0:
        return False
    if len(f) > 7:
        cls = _float(f[7], path, lineno, "class")
        if cls not in (-1.0, 1.0):
            return False
    if len(f) > 8:
        vis = _float(f[8], path, lineno, "visibility")
        if vis == 0:
            return False
    return True


def read_ground_truth(path):
    """Parse ``frame,id,x,y,w,h,mark[,class,visibility]``.

    ``mark == 0``, a class other than -1/1 (pedestrian) or a visibility of 0
    marks the box invisible (ignored by evaluation, skipped by training).
    """
    rows, skipped = _lines(path)
    frames = {}
    seen = set()
    for lineno, f in rows:
        if len(f) < 6:
            raise ParseError(f"expected at least 6 fields, got {len(f)}", path, lineno)
        frame = _int(f[0], path, lineno, "frame")
        gid = _int(f[1], path, lineno, "id")
        if (frame, gid) in seen:
            raise ParseError(f"duplicate ground truth (frame {frame}, id {gid})", path, lineno)
        seen.add((frame, gid))
        frames.setdefault(frame, []).append(
            GtEntry(gid, _box(f, path, lineno), _gt_visible(f, path, lineno)))
    return GroundTruth(frames)


def write_ground_truth(path, gt):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for frame in sorted(gt.frames):
            for e in gt.frames[frame]:
                b = e.box
                fh.write(f"{frame},{e.gt_id},{_num(b.x)},{_num(b.y)},{_num(b.w)},{_num(b.h)},"
                         f"{1 if e.visible else 0},-1,-1,-1\n")


# --------------------------------------------------------------------------
# appearance feature sidecar
# --------------------------------------------------------------------------

def read_features(path, dets):
    """Attach ``frame,det_index,v1..vN`` rows to ``dets`` (0-based within-frame index)."""
    rows, _ = _lines(path)
    table = {}
    dim = None
    for lineno, f in rows:
        if len(f) < 3:
            raise ParseError("feature row needs frame, index and at least one value", path, lineno)
        key = (_int(f[0], path, lineno, "frame"), _int(f[1], path, lineno, "det_index"))
        vec = np.array([_float(v, path, lineno, "feature value") for v in f[2:]])
        if dim is None:
            dim = vec.shape[0]
        elif vec.shape[0] != dim:
            raise ParseError(f"feature dimension {vec.shape[0]} differs from {dim}", path, lineno)
        if key in table:
            raise ParseError(f"duplicate feature row for (frame {key[0]}, index {key[1]})",
                             path, lineno)
        table[key] = vec
    frames = {}
    for frame in sorted(dets.frames):
        out = []
        for i, d in enumerate(dets.frames[frame]):
            if (frame, i) not in table:
                raise ParseError(f"no feature row for (frame {frame}, index {i})", path)
            out.append(d.with_appearance(table.pop((frame, i))))
        frames[frame] = out
    if table:
        frame, i = sorted(table)[0]
        raise ParseError(f"feature row (frame {frame}, index {i}) has no detection", path)
    return DetectionSet(frames, dets.num_frames, dets.skipped)


def write_features(path, dets):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for frame in sorted(dets.frames):
            for i, d in enumerate(dets.frames[frame]):
                if d.appearance is None:
                    raise InvalidArgumentError(f"detection (frame {frame}, index {i}) has no feature")
                fh.write(f"{frame},{i}," + ",".join(_num(v) for v in d.appearance) + "\n")


# --------------------------------------------------------------------------
# tracking results
# --------------------------------------------------------------------------

def _fixed(x):
    # +0.0 folds negative zero
    return f"{round(float(x), 2) + 0.0:.2f}"


def write_results(path, rows):
    """Write ``frame,track_id,x,y,w,h,1,-1,-1,-1`` sorted by (frame, track_id)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for frame, tid, b in sorted(rows, key=lambda r: (r[0], r[1])):
            fh.write(f"{frame},{tid},{_fixed(b.x)},{_fixed(b.y)},{_fixed(b.w)},{_fixed(b.h)},"
                     "1,-1,-1,-1\n")


def read_results(path):
    rows, _ = _lines(path)
    out = []
    for lineno, f in rows:
        if len(f) < 6:
            raise ParseError(f"expected at least 6 fields, got {len(f)}", path, lineno)
        out.append((_int(f[0], path, lineno, "frame"), _int(f[1], path, lineno, "id"),
                    _box(f, path, lineno)))
    return out


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

@dataclass(eq=False)
class Checkpoint:
    model: ModelPair
    dims: ModelDims
    metadata: dict = field(default_factory=dict)

    @property
    def kind(self):
        return self.model.kind


def _encode(arr):
    le = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(arr.shape), "data": base64.b64encode(le.tobytes()).decode("ascii")}


def _decode(name, entry):
    try:
        raw = base64.b64decode(entry["data"], validate=True)
        shape = tuple(int(s) for s in entry["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"tensor {name}: unreadable ({exc})")
    expected = int(np.prod(shape)) * 8
    if len(raw) != expected:
        raise CheckpointError(f"tensor {name}: {len(raw)} bytes for shape {shape}")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


def save_checkpoint(path, ckpt):
    flat = flatten(ckpt.model)
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": ckpt.kind.name,
        "dims": {
            "appearance_dim": ckpt.dims.appearance_dim,
            "appearance_hidden": ckpt.dims.appearance_hidden,
            "motion_dim": MOTION_DIM,
            "motion_hidden": ckpt.dims.motion_hidden,
            "span": ckpt.dims.span,
        },
        "metadata": ckpt.metadata,
        "tensors": {name: _encode(arr) for name, arr in sorted(flat.items())},
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: not a checkpoint ({exc})")
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: missing or wrong format header")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {doc.get('version')!r}")
    try:
        kind = PredictorKind.parse(doc["kind"])
        d = doc["dims"]
        dims = ModelDims(int(d["appearance_dim"]), int(d["appearance_hidden"]),
                         int(d["motion_hidden"]), int(d["span"]))
        if int(d.get("motion_dim", MOTION_DIM)) != MOTION_DIM:
            raise CheckpointError(f"{path}: motion_dim must be {MOTION_DIM}")
        tensors = doc["tensors"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed header ({exc})")
    template = ModelPair(
        zero_params(kind, dims.appearance_dim, dims.appearance_hidden, dims.span),
        zero_params(kind, MOTION_DIM, dims.motion_hidden, dims.span),
    )
    names = set(flatten(template))
    if set(tensors) != names:
        missing = sorted(names - set(tensors))
        extra = sorted(set(tensors) - names)
        raise CheckpointError(f"{path}: tensor set mismatch (missing {missing}, unexpected {extra})")
    flat = {name: _decode(name, tensors[name]) for name in names}
    try:
        model = unflatten(template, flat)
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}")
    return Checkpoint(model, dims, doc.get("metadata", {}))


