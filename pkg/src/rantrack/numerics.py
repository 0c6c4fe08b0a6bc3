"""Dense float64 vector/matrix helpers and the scalar nonlinearities.

Vectors are 1-D ``np.ndarray`` of dtype float64, matrices are 2-D row-major
arrays. Everything here is a pure function.
"""

import math

import numpy as np

from .errors import DomainError, InvalidArgumentError, ShapeError

LOG_2PI = math.log(2.0 * math.pi)


def as_vec(v, name="v"):
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {arr.shape}")
    return arr


def as_mat(m, name="M"):
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def softmax(v):
    """Numerically stable softmax (max-subtracted)."""
    v = as_vec(v)
    if v.size == 0:
        raise InvalidArgumentError("softmax of an empty vector")
    e = np.exp(v - v.max())
    return e / e.sum()


def masked_softmax(logits, valid_count):
    """Softmax over the first ``valid_count`` entries; the rest get exactly 0."""
    logits = as_vec(logits, "logits")
    if not 1 <= valid_count <= logits.size:
        raise InvalidArgumentError(
            f"valid_count {valid_count} outside [1, {logits.size}]")
    out = np.zeros_like(logits)
    out[:valid_count] = softmax(logits[:valid_count])
    return out


def sigmoid(v):
    v = np.asarray(v, dtype=np.float64)
    # split by sign so exp never overflows
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def tanh(v):
    return np.tanh(np.asarray(v, dtype=np.float64))


def diag_gaussian_logpdf(x, mu, sigma):
    """Log density of ``x`` under N(mu, diag(sigma**2)), summed over dimensions."""
    x = as_vec(x, "x")
    mu = as_vec(mu, "mu")
    sigma = as_vec(sigma, "sigma")
    if not (x.shape == mu.shape == sigma.shape):
        raise ShapeError(
            f"length mismatch: x {x.shape}, mu {mu.shape}, sigma {sigma.shape}")
    if np.any(sigma <= 0) or np.any(np.isnan(sigma)):
        raise DomainError("sigma entries must be > 0")
    z = (x - mu) / sigma
    return float(np.sum(-0.5 * LOG_2PI - np.log(sigma) - 0.5 * z * z))


def matvec(m, v):
    m = as_mat(m)
    v = as_vec(v)
    if m.shape[1] != v.shape[0]:
        raise ShapeError(f"cannot multiply {m.shape} matrix by {v.shape} vector")
    return m @ v


def _check_same(a, b):
    a = as_vec(a, "a")
    b = as_vec(b, "b")
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.shape} vs {b.shape}")
    return a, b


def add(a, b):
    a, b = _check_same(a, b)
    return a + b


def hadamard(a, b):
    a, b = _check_same(a, b)
    return a * b


def scale(a, s):
    return as_vec(a, "a") * float(s)
