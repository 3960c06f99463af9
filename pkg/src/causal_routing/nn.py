"""Attention, MLP, parameter initialization, and the Adam optimizer."""

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DimensionError
from .tape import Parameter, add_bias, matmul, relu, scale, softmax_rows, transpose_last


@dataclass
class AttentionParams:
    """Single-head projection triple. Query input width may differ from the
    key/value input width (queries can come from a refined stream while keys
    and values stay in the raw feature space)."""

    wq: Parameter
    wk: Parameter
    wv: Parameter

    @property
    def width(self):
        return self.wq.value.shape[1]

    def parameters(self):
        return [self.wq, self.wk, self.wv]


@dataclass
class MlpParams:
    """Affine chain with relu between layers, none after the last."""

    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    @property
    def out_width(self):
        return self.weights[-1].value.shape[1]

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


def attention(q_src, k_src, v_src, params):
    """Scaled dot-product attention with learned projections.

    q_src: [n_q x d_q] or [batch x n_q x d_q]; k_src and v_src share leading
    shape [n_k x d_kv] or [batch x n_k x d_kv]. Output has the query leading
    shape with the projection width as last axis.
    """
    tape = q_src.tape
    q = matmul(q_src, tape.param(params.wq))
    k = matmul(k_src, tape.param(params.wk))
    v = matmul(v_src, tape.param(params.wv))
    scores = scale(matmul(q, transpose_last(k)), 1.0 / math.sqrt(params.width))
    return matmul(softmax_rows(scores), v)


def mlp_forward(x, params):
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = add_bias(matmul(h, x.tape.param(w)), x.tape.param(b))
        if i != last:
            h = relu(h)
    return h


# -------------------------------------------------------------- initialization


def glorot_uniform(rng, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_attention(rng, name, d_q_in, d_kv_in, width):
    return AttentionParams(
        wq=Parameter(f"{name}.wq", glorot_uniform(rng, d_q_in, width)),
        wk=Parameter(f"{name}.wk", glorot_uniform(rng, d_kv_in, width)),
        wv=Parameter(f"{name}.wv", glorot_uniform(rng, d_kv_in, width)),
    )


def init_mlp(rng, name, widths):
    """widths = [in, hidden..., out]; biases start at zero."""
    if len(widths) < 2:
        raise DimensionError("init_mlp: need at least input and output widths")
    p = MlpParams()
    for i in range(len(widths) - 1):
        p.weights.append(
            Parameter(f"{name}.w{i}", glorot_uniform(rng, widths[i], widths[i + 1]))
        )
        p.biases.append(Parameter(f"{name}.b{i}", np.zeros(widths[i + 1])))
    return p


def equal_weight_param(name, n):
    """Routing weight vector initialized to equal constants."""
    return Parameter(name, np.full(n, 1.0 / n))


# ------------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    """First/second moment estimates keyed by parameter name."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def slots(self, p):
        if p.name not in self.m:
            self.m[p.name] = np.zeros_like(p.value)
            self.v[p.name] = np.zeros_like(p.value)
        return self.m[p.name], self.v[p.name]


def adam_step(params, state, lr):
    """One Adam update from the gradients stored on params (in place)."""
    state.step += 1
    for p in params:
        if not p.trainable:
            continue
        m, v = state.slots(p)
        kernels.adam_update(
            p.value, p.grad, m, v, lr, state.beta1, state.beta2, state.eps, state.step
        )
