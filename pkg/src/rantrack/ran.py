"""Recurrent autoregressive network for a single feature modality.

A trajectory's history is kept in two places: an external memory holding the
last ``K`` observed vectors (templates) and a GRU hidden state. A linear head
maps the hidden state to AR mixing weights over the memory slots and per-dimension
log standard deviations; together they define a diagonal Gaussian over the
next input.
"""

from dataclasses import dataclass, fields, is_dataclass, replace

import numpy as np

from .errors import InvalidArgumentError, NoHistoryError, ShapeError
from .numerics import as_vec, diag_gaussian_logpdf, masked_softmax, sigmoid

SIGMA_MIN = 1e-4
SIGMA_MAX = 1e4
LOG_SIGMA_MIN = float(np.log(SIGMA_MIN))
LOG_SIGMA_MAX = float(np.log(SIGMA_MAX))


def clamp_sigma(log_sigma):
    return np.clip(np.exp(log_sigma), SIGMA_MIN, SIGMA_MAX)


# --------------------------------------------------------------------------
# parameter containers
# --------------------------------------------------------------------------

def flatten(params, prefix=""):
    """Map every array leaf of a (nested) params dataclass to a dotted name."""
    out = {}
    for f in fields(params):
        value = getattr(params, f.name)
        key = prefix + f.name
        if isinstance(value, np.ndarray):
            out[key] = value
        elif is_dataclass(value):
            out.update(flatten(value, key + "."))
    return out


def unflatten(params, flat, prefix=""):
    """Inverse of :func:`flatten`: return a copy of ``params`` with arrays from ``flat``."""
    updates = {}
    for f in fields(params):
        value = getattr(params, f.name)
        key = prefix + f.name
        if isinstance(value, np.ndarray):
            new = np.asarray(flat[key], dtype=np.float64)
            if new.shape != value.shape:
                raise ShapeError(f"{key}: expected shape {value.shape}, got {new.shape}")
            updates[f.name] = new
        elif is_dataclass(value):
            updates[f.name] = unflatten(value, flat, key + ".")
    return replace(params, **updates)


@dataclass(frozen=True, eq=False)
class GruParams:
    W_z: np.ndarray
    W_r: np.ndarray
    W: np.ndarray
    U_z: np.ndarray
    U_r: np.ndarray
    U: np.ndarray

    def __post_init__(self):
        d, n = self.W.shape
        for name in ("W_z", "W_r", "W"):
            if getattr(self, name).shape != (d, n):
                raise ShapeError(f"{name} must be {d}x{n}")
        for name in ("U_z", "U_r", "U"):
            if getattr(self, name).shape != (d, d):
                raise ShapeError(f"{name} must be {d}x{d}")

    @property
    def hidden_dim(self):
        return self.W.shape[0]

    @property
    def input_dim(self):
        return self.W.shape[1]

    @classmethod
    def zeros(cls, input_dim, hidden_dim):
        z = lambda r, c: np.zeros((r, c))  # noqa: E731
        return cls(z(hidden_dim, input_dim), z(hidden_dim, input_dim), z(hidden_dim, input_dim),
                   z(hidden_dim, hidden_dim), z(hidden_dim, hidden_dim), z(hidden_dim, hidden_dim))

    @classmethod
    def init(cls, input_dim, hidden_dim, rng):
        a_in = 1.0 / np.sqrt(input_dim)
        a_h = 1.0 / np.sqrt(hidden_dim)
        w = lambda: rng.uniform(-a_in, a_in, size=(hidden_dim, input_dim))  # noqa: E731
        u = lambda: rng.uniform(-a_h, a_h, size=(hidden_dim, hidden_dim))  # noqa: E731
        return cls(w(), w(), w(), u(), u(), u())


@dataclass(frozen=True, eq=False)
class HeadParams:
    """Linear map from the hidden state to ``(alpha_logits, log_sigma)``.

    Rows ``[0, K)`` of ``weight`` produce the AR logits, rows ``[K, K+N)`` the
    log standard deviations.
    """

    weight: np.ndarray
    bias: np.ndarray
    span: int

    def __post_init__(self):
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError("head bias length must equal weight rows")
        if not 1 <= self.span < self.weight.shape[0]:
            raise ShapeError(f"span {self.span} incompatible with {self.weight.shape[0]} head rows")

    @property
    def input_dim(self):
        return self.weight.shape[0] - self.span


@dataclass(frozen=True, eq=False)
class RanParams:
    gru: GruParams
    head: HeadParams

    def __post_init__(self):
        if self.head.weight.shape[1] != self.gru.hidden_dim:
            raise ShapeError("head input width must equal GRU hidden dim")
        if self.head.input_dim != self.gru.input_dim:
            raise ShapeError("head sigma rows must equal GRU input dim")

    @property
    def span(self):
        return self.head.span

    @property
    def input_dim(self):
        return self.gru.input_dim

    @property
    def hidden_dim(self):
        return self.gru.hidden_dim

    @classmethod
    def zeros(cls, input_dim, hidden_dim, span):
        head = HeadParams(np.zeros((span + input_dim, hidden_dim)), np.zeros(span + input_dim), span)
        return cls(GruParams.zeros(input_dim, hidden_dim), head)

    @classmethod
    def init(cls, input_dim, hidden_dim, span, rng):
        a = 1.0 / np.sqrt(hidden_dim)
        gru = GruParams.init(input_dim, hidden_dim, rng)
        head = HeadParams(rng.uniform(-a, a, size=(span + input_dim, hidden_dim)),
                          np.zeros(span + input_dim), span)
        return cls(gru, head)


# --------------------------------------------------------------------------
# state
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ExternalMemory:
    """Sliding window of the last ``capacity`` inputs, newest first."""

    capacity: int
    slots: tuple = ()

    def __post_init__(self):
        if self.capacity < 1:
            raise InvalidArgumentError("memory capacity must be positive")
        if len(self.slots) > self.capacity:
            raise InvalidArgumentError("more slots than capacity")

    @property
    def valid_count(self):
        return len(self.slots)

    @property
    def dim(self):
        return self.slots[0].shape[0] if self.slots else None

    def push(self, x):
        x = np.array(x, dtype=np.float64)
        if self.slots and x.shape != self.slots[0].shape:
            raise ShapeError(f"memory holds {self.dim}-vectors, got {x.shape}")
        return ExternalMemory(self.capacity, ((x,) + self.slots)[: self.capacity])

    def stacked(self):
        """Valid slots as a ``valid_count x N`` array."""
        return np.stack(self.slots)


@dataclass(frozen=True, eq=False)
class RanState:
    hidden: np.ndarray
    memory: ExternalMemory


@dataclass(frozen=True, eq=False)
class ArCoefficients:
    alpha: np.ndarray
    sigma: np.ndarray


@dataclass(frozen=True, eq=False)
class ConditionalGaussian:
    mu: np.ndarray
    sigma: np.ndarray

    def logpdf(self, x):
        return diag_gaussian_logpdf(x, self.mu, self.sigma)


# --------------------------------------------------------------------------
# operations
# --------------------------------------------------------------------------

def gru_step(params, x, h_prev):
    x = as_vec(x, "x")
    h_prev = as_vec(h_prev, "h_prev")
    if x.shape[0] != params.input_dim or h_prev.shape[0] != params.hidden_dim:
        raise ShapeError(
            f"gru_step expects x of {params.input_dim} and h of {params.hidden_dim}, "
            f"got {x.shape[0]} and {h_prev.shape[0]}")
    z = sigmoid(params.W_z @ x + params.U_z @ h_prev)
    r = sigmoid(params.W_r @ x + params.U_r @ h_prev)
    h_cand = np.tanh(params.W @ x + params.U @ (r * h_prev))
    return (1.0 - z) * h_prev + z * h_cand


def predict_coefficients(head, h_prev, valid_count):
    h_prev = as_vec(h_prev, "h_prev")
    if valid_count < 1:
        raise NoHistoryError("no valid memory slot to predict from")
    if valid_count > head.span:
        raise InvalidArgumentError(f"valid_count {valid_count} exceeds span {head.span}")
    if h_prev.shape[0] != head.weight.shape[1]:
        raise ShapeError(f"head expects hidden of {head.weight.shape[1]}, got {h_prev.shape[0]}")
    out = head.weight @ h_prev + head.bias
    alpha = masked_softmax(out[: head.span], valid_count)
    return ArCoefficients(alpha, clamp_sigma(out[head.span:]))


def predict_distribution(memory, coeffs):
    if memory.valid_count == 0:
        raise NoHistoryError("external memory is empty")
    if coeffs.alpha.shape[0] < memory.valid_count:
        raise ShapeError("fewer AR weights than valid memory slots")
    slots = memory.stacked()
    if slots.shape[1] != coeffs.sigma.shape[0]:
        raise ShapeError("sigma length differs from memory dimension")
    mu = coeffs.alpha[: memory.valid_count] @ slots
    return ConditionalGaussian(mu, coeffs.sigma.copy())


def predict(params, state):
    coeffs = predict_coefficients(params.head, state.hidden, state.memory.valid_count)
    return predict_distribution(state.memory, coeffs)


def score_candidate(params, state, x):
    """Log-likelihood of ``x`` as the next input of the trajectory in ``state``."""
    return predict(params, state).logpdf(x)


def init_state(params, first_input):
    x = as_vec(first_input, "first_input")
    if x.shape[0] != params.input_dim:
        raise ShapeError(f"expected {params.input_dim}-vector, got {x.shape[0]}")
    memory = ExternalMemory(params.span).push(x)
    return RanState(np.zeros(params.hidden_dim), memory)


def advance(params, state, x):
    x = as_vec(x, "x")
    if x.shape[0] != params.input_dim:
        raise ShapeError(f"expected {params.input_dim}-vector, got {x.shape[0]}")
    return RanState(gru_step(params.gru, x, state.hidden), state.memory.push(x))
