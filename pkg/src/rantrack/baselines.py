"""Ablation predictors and kind-agnostic dispatch.

All four predictors share one state shape (hidden vector + external memory)
so the tracker and the trainer never branch on the predictor kind:

* ``RAN``        recurrent AR weights and deviations (see :mod:`rantrack.ran`)
* ``GRU_DIRECT`` GRU regresses the mean and deviation directly; memory unused
* ``AVE``        mean of the valid memory slots, learned constant deviation
* ``TIV``        learned constant AR weights and deviation
"""

import enum
from dataclasses import dataclass

import numpy as np

from . import ran
from .errors import InvalidArgumentError, NoHistoryError, ShapeError
from .numerics import as_vec, masked_softmax
from .ran import (ConditionalGaussian, ExternalMemory, GruParams, RanParams, RanState,
                  clamp_sigma, gru_step)


class PredictorKind(enum.Enum):
    RAN = "RAN"
    GRU_DIRECT = "GRU"
    AVE = "AVE"
    TIV = "TIV"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).strip().upper()
        for kind in cls:
            if key in (kind.name, kind.value):
                return kind
        raise InvalidArgumentError(f"unknown predictor kind {name!r}")


@dataclass(frozen=True, eq=False)
class AveParams:
    log_sigma: np.ndarray
    span: int

    @property
    def input_dim(self):
        return self.log_sigma.shape[0]

    hidden_dim = 0


@dataclass(frozen=True, eq=False)
class TivParams:
    alpha_logits: np.ndarray
    log_sigma: np.ndarray

    def __post_init__(self):
        if self.alpha_logits.ndim != 1 or self.log_sigma.ndim != 1:
            raise ShapeError("TIV parameters are vectors")

    @property
    def span(self):
        return self.alpha_logits.shape[0]

    @property
    def input_dim(self):
        return self.log_sigma.shape[0]

    hidden_dim = 0


@dataclass(frozen=True, eq=False)
class GruDirectParams:
    """GRU plus a ``2N x d`` head emitting ``(mu, log_sigma)``."""

    gru: GruParams
    head_weight: np.ndarray
    head_bias: np.ndarray
    span: int

    def __post_init__(self):
        n = self.gru.input_dim
        if self.head_weight.shape != (2 * n, self.gru.hidden_dim):
            raise ShapeError(f"GRU head must be {2 * n}x{self.gru.hidden_dim}")
        if self.head_bias.shape != (2 * n,):
            raise ShapeError(f"GRU head bias must have length {2 * n}")

    @property
    def input_dim(self):
        return self.gru.input_dim

    @property
    def hidden_dim(self):
        return self.gru.hidden_dim


_PARAM_TYPES = {
    RanParams: PredictorKind.RAN,
    GruDirectParams: PredictorKind.GRU_DIRECT,
    AveParams: PredictorKind.AVE,
    TivParams: PredictorKind.TIV,
}


def kind_of(params):
    try:
        return _PARAM_TYPES[type(params)]
    except KeyError:
        raise InvalidArgumentError(f"not a predictor parameter set: {type(params).__name__}")


def init_params(kind, input_dim, hidden_dim, span, rng):
    """Fresh trainable parameters: fan-in uniform matrices, zero biases and logits."""
    kind = PredictorKind.parse(kind)
    if kind is PredictorKind.RAN:
        return RanParams.init(input_dim, hidden_dim, span, rng)
    if kind is PredictorKind.GRU_DIRECT:
        a = 1.0 / np.sqrt(hidden_dim)
        return GruDirectParams(GruParams.init(input_dim, hidden_dim, rng),
                               rng.uniform(-a, a, size=(2 * input_dim, hidden_dim)),
                               np.zeros(2 * input_dim), span)
    if kind is PredictorKind.AVE:
        return AveParams(np.zeros(input_dim), span)
    return TivParams(np.zeros(span), np.zeros(input_dim))


def zero_params(kind, input_dim, hidden_dim, span):
    kind = PredictorKind.parse(kind)
    if kind is PredictorKind.RAN:
        return RanParams.zeros(input_dim, hidden_dim, span)
    if kind is PredictorKind.GRU_DIRECT:
        return GruDirectParams(GruParams.zeros(input_dim, hidden_dim),
                               np.zeros((2 * input_dim, hidden_dim)), np.zeros(2 * input_dim), span)
    return init_params(kind, input_dim, hidden_dim, span, None)


# --------------------------------------------------------------------------
# the three baselines
# --------------------------------------------------------------------------

def ave_predict(memory, params):
    if memory.valid_count == 0:
        raise NoHistoryError("external memory is empty")
    return ConditionalGaussian(memory.stacked().mean(axis=0), clamp_sigma(params.log_sigma))


def tiv_predict(memory, params):
    if memory.valid_count == 0:
        raise NoHistoryError("external memory is empty")
    alpha = masked_softmax(params.alpha_logits, memory.valid_count)
    mu = alpha[: memory.valid_count] @ memory.stacked()
    return ConditionalGaussian(mu, clamp_sigma(params.log_sigma))


def gru_direct_predict(params, h_prev):
    h_prev = as_vec(h_prev, "h_prev")
    if h_prev.shape[0] != params.hidden_dim:
        raise ShapeError(f"expected hidden of {params.hidden_dim}, got {h_prev.shape[0]}")
    out = params.head_weight @ h_prev + params.head_bias
    n = params.input_dim
    return ConditionalGaussian(out[:n], clamp_sigma(out[n:]))


# --------------------------------------------------------------------------
# uniform dispatch
# --------------------------------------------------------------------------

def predict(kind, params, state):
    kind = PredictorKind.parse(kind)
    if kind_of(params) is not kind:
        raise InvalidArgumentError(f"{kind.name} predictor given {type(params).__name__}")
    if kind is PredictorKind.RAN:
        return ran.predict(params, state)
    if kind is PredictorKind.AVE:
        return ave_predict(state.memory, params)
    if kind is PredictorKind.TIV:
        return tiv_predict(state.memory, params)
    if state.memory.valid_count == 0:
        raise NoHistoryError("external memory is empty")
    return gru_direct_predict(params, state.hidden)


def predict_any(params, state):
    return predict(kind_of(params), params, state)


def score(params, state, x):
    return predict_any(params, state).logpdf(x)


def init_state(params, first_input):
    x = as_vec(first_input, "first_input")
    if x.shape[0] != params.input_dim:
        raise ShapeError(f"expected {params.input_dim}-vector, got {x.shape[0]}")
    return RanState(np.zeros(params.hidden_dim), ExternalMemory(params.span).push(x))


def advance(params, state, x):
    x = as_vec(x, "x")
    if x.shape[0] != params.input_dim:
        raise ShapeError(f"expected {params.input_dim}-vector, got {x.shape[0]}")
    gru = getattr(params, "gru", None)
    hidden = state.hidden if gru is None else gru_step(gru, x, state.hidden)
    return RanState(hidden, state.memory.push(x))
