"""Stacked causal routing model.

A layer runs the three deconfounding blocks on their own token streams and
mixes the block summaries with a temperature-sharpened softmax over learned
routing weights. Layer outputs are mixed the same way by a second weight
vector, and a small MLP head turns the combined feature into class logits.

Stream rule between layers: the no-confounder stream advances through that
block's mediator expectation, while the back-door and front-door streams
advance through their refined x expectations. Confounder tokens z and the
global dictionary are fed unchanged to every layer.
"""

import json
import math
import os
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .blocks import BackDoorBlock, FrontDoorBlock, GlobalDictionary, NoConfounderBlock
from .errors import CheckpointError, ConfigError, ContractError, StateError
from .nn import AdamState, equal_weight_param, init_attention, init_mlp, mlp_forward
from .tape import (
    Tape,
    add,
    gather,
    log_clamped,
    pick,
    scale,
    scale_by,
    softmax_rows,
)


BLOCK_NAMES = ("ncf", "bd", "fd")


# ---------------------------------------------------------------------- variant


@dataclass(frozen=True)
class Variant:
    """Which blocks run and whether routing weights are sharpened."""

    kind: str = "full"
    blocks: tuple = (0, 1, 2)

    @property
    def sharpen(self):
        return self.kind != "no_sharpen"

    @staticmethod
    def parse(text):
        if text == "full":
            return Variant("full", (0, 1, 2))
        if text == "no_sharpen":
            return Variant("no_sharpen", (0, 1, 2))
        if text.startswith("one_block:"):
            idx = _parse_block_indices(text.split(":", 1)[1], expect=1)
            return Variant("one_block", idx)
        if text.startswith("two_blocks:"):
            idx = _parse_block_indices(text.split(":", 1)[1], expect=2)
            return Variant("two_blocks", idx)
        raise ConfigError(f"unknown variant {text!r}")

    def __str__(self):
        if self.kind in ("full", "no_sharpen"):
            return self.kind
        return f"{self.kind}:{','.join(str(i) for i in self.blocks)}"


def _parse_block_indices(text, expect):
    try:
        idx = tuple(int(p) for p in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad block list {text!r}") from exc
    if len(idx) != expect or len(set(idx)) != len(idx):
        raise ConfigError(f"variant needs {expect} distinct block index(es), got {text!r}")
    for i in idx:
        if i not in (0, 1, 2):
            raise ConfigError(f"block index {i} out of range")
    return tuple(sorted(idx))


# ----------------------------------------------------------- sharpening softmax


def sharpening_softmax(w, tau):
    """Normalize w to the simplex, then sharpen by temperature.

    Computes softmax(log(clamp(softmax(w), 1e-12)) / tau): tau = 1 leaves the
    plain softmax unchanged, tau -> 0 concentrates mass on the argmax without
    ever moving it.
    """
    if not tau > 0.0:
        raise ContractError(f"temperature must be positive, got {tau}")
    alpha = softmax_rows(w)
    return softmax_rows(scale(log_clamped(alpha, 1e-12), 1.0 / tau))


@dataclass
class TauSchedule:
    """Exponential decay from 1 to tau_min, pinned at the floor from
    ceil(floor_fraction * total_steps) onwards."""

    total_steps: int
    tau_min: float = 0.05
    floor_fraction: float = 0.8

    def __post_init__(self):
        if self.total_steps < 1:
            raise ContractError("schedule needs at least one step")
        if not 0.0 < self.tau_min <= 1.0:
            raise ContractError("tau_min must lie in (0, 1]")
        if not 0.0 < self.floor_fraction <= 1.0:
            raise ContractError("floor_fraction must lie in (0, 1]")

    @property
    def floor_step(self):
        return max(1, math.ceil(self.floor_fraction * self.total_steps))

    def value(self, step):
        """Temperature used at a zero-based global step."""
        if step < 0:
            raise ContractError("step must be non-negative")
        if self.tau_min == 1.0:
            return 1.0
        if step >= self.floor_step:
            return self.tau_min
        rate = -math.log(self.tau_min) / self.floor_step
        return max(self.tau_min, math.exp(-rate * step))


# ------------------------------------------------------------------------ model


@dataclass
class ModelHyper:
    input_width: int
    width: int
    block_width: int
    hidden_width: int
    n_layers: int
    n_classes: int


@dataclass
class CausalLayer:
    ncf: NoConfounderBlock
    bd: BackDoorBlock
    fd: FrontDoorBlock
    block_weights: object

    def parameters(self):
        return (
            self.ncf.parameters()
            + self.bd.parameters()
            + self.fd.parameters()
            + [self.block_weights]
        )


@dataclass
class ForwardResult:
    tape: Tape
    logits: object
    probs: object
    layer_outputs: list
    block_weights: np.ndarray
    layer_weights: np.ndarray

    def predictions(self):
        return np.argmax(self.probs.data, axis=1)


@dataclass
class RoutingTrace:
    """Per-example record of the routing decisions (weights are shared across
    the batch, so traces differ only in example id)."""

    example_id: int
    block_weights: np.ndarray
    layer_weights: np.ndarray


class CausalRoutingModel:
    def __init__(self, hyper, layers, layer_weights, head, variant, temperature=1.0):
        self.hyper = hyper
        self.layers = layers
        self.layer_weights = layer_weights
        self.head = head
        self.variant = variant
        self.temperature = temperature

    def parameters(self):
        out = []
        for layer in self.layers:
            out.extend(layer.parameters())
        out.append(self.layer_weights)
        out.extend(self.head.parameters())
        return out

    def zero_grads(self):
        for p in self.parameters():
            p.zero_grad()

    def forward(self, x, z, dictionary=None, tau=None):
        """Run a batch through the stack.

        x: [n_x x d_in] or [batch x n_x x d_in]; z likewise. dictionary is a
        GlobalDictionary (required whenever the front-door block is active).
        """
        if tau is None:
            tau = self.temperature
        variant = self.variant
        tape = Tape()
        x_t = tape.constant(_promote(x, "x"))
        z_t = tape.constant(_promote(z, "z"))
        dict_t = None
        if dictionary is not None:
            if isinstance(dictionary, GlobalDictionary):
                if dictionary.width != self.hyper.input_width:
                    raise ContractError(
                        "dictionary width disagrees with the model input width"
                    )
                dict_t = tape.constant(dictionary.centroids)
            else:
                raise ContractError("dictionary must be a GlobalDictionary")
        elif 2 in variant.blocks:
            raise StateError("front-door block is active but no dictionary was given")

        streams = (x_t, x_t, x_t)
        layer_cs = []
        alphas = []
        for layer in self.layers:
            c_l, streams, alpha = _layer_forward(
                layer, streams, z_t, dict_t, tau, variant
            )
            layer_cs.append(c_l)
            alphas.append(alpha)

        w_c = tape.param(self.layer_weights)
        if len(self.layers) == 1:
            combined = layer_cs[0]
            beta_np = np.ones(1)
        else:
            beta = (
                sharpening_softmax(w_c, tau)
                if variant.sharpen
                else softmax_rows(w_c)
            )
            combined = None
            for l, c_l in enumerate(layer_cs):
                term = scale_by(c_l, pick(beta, l))
                combined = term if combined is None else add(combined, term)
            beta_np = beta.data.copy()

        logits = mlp_forward(combined, self.head)
        probs = softmax_rows(logits)
        return ForwardResult(
            tape=tape,
            logits=logits,
            probs=probs,
            layer_outputs=[c.data for c in layer_cs],
            block_weights=np.stack(alphas),
            layer_weights=beta_np,
        )


def _promote(arr, name):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None, :, :]
    if arr.ndim != 3:
        raise ContractError(f"{name} must be rank 2 or 3, got shape {arr.shape}")
    return arr


def _layer_forward(layer, streams, z, dictionary, tau, variant):
    tape = streams[0].tape
    active = variant.blocks
    outs = {}
    new_streams = list(streams)
    if 0 in active:
        outs[0], new_streams[0] = layer.ncf.forward(streams[0])
    if 1 in active:
        outs[1], new_streams[1] = layer.bd.forward(streams[1], z)
    if 2 in active:
        outs[2], new_streams[2] = layer.fd.forward(streams[2], dictionary)

    alpha_np = np.zeros(3)
    if len(active) == 1:
        combined = outs[active[0]]
        alpha_np[active[0]] = 1.0
    else:
        w_leaf = tape.param(layer.block_weights)
        w_act = w_leaf if len(active) == 3 else gather(w_leaf, active)
        alpha = (
            sharpening_softmax(w_act, tau) if variant.sharpen else softmax_rows(w_act)
        )
        combined = None
        for j, i in enumerate(active):
            term = scale_by(outs[i], pick(alpha, j))
            combined = term if combined is None else add(combined, term)
        alpha_np[list(active)] = alpha.data
    return combined, tuple(new_streams), alpha_np


def build_model(hyper, seed, variant=Variant()):
    """Deterministic construction: same hyper + seed give identical weights."""
    rng = np.random.default_rng(seed)
    layers = []
    for l in range(hyper.n_layers):
        xw = hyper.input_width if l == 0 else hyper.width
        prefix = f"layers.{l}"
        ncf = NoConfounderBlock(
            attn=init_attention(rng, f"{prefix}.ncf.attn", xw, xw, hyper.width),
            mlp=init_mlp(
                rng,
                f"{prefix}.ncf.mlp",
                [hyper.width, hyper.hidden_width, hyper.block_width],
            ),
        )
        bd = BackDoorBlock(
            attn_x=init_attention(rng, f"{prefix}.bd.attn_x", xw, xw, hyper.width),
            attn_z=init_attention(
                rng, f"{prefix}.bd.attn_z", hyper.input_width, xw, hyper.width
            ),
            mlp=init_mlp(
                rng,
                f"{prefix}.bd.mlp",
                [2 * hyper.width, hyper.hidden_width, hyper.block_width],
            ),
        )
        fd = FrontDoorBlock(
            attn_dict=init_attention(
                rng, f"{prefix}.fd.attn_dict", xw, hyper.input_width, hyper.width
            ),
            attn_self=init_attention(rng, f"{prefix}.fd.attn_self", xw, xw, hyper.width),
            mlp=init_mlp(
                rng,
                f"{prefix}.fd.mlp",
                [2 * hyper.width, hyper.hidden_width, hyper.block_width],
            ),
        )
        layers.append(
            CausalLayer(
                ncf=ncf,
                bd=bd,
                fd=fd,
                block_weights=equal_weight_param(f"{prefix}.block_weights", 3),
            )
        )
    layer_weights = equal_weight_param("layer_weights", hyper.n_layers)
    head = init_mlp(
        rng,
        "head",
        [hyper.block_width, hyper.hidden_width, hyper.n_classes],
    )
    return CausalRoutingModel(hyper, layers, layer_weights, head, variant)


# ------------------------------------------------------------------- checkpoint

MAGIC = b"CGR1"
FORMAT_VERSION = 1


def save_checkpoint(path, model, adam=None, meta=None):
    """Binary checkpoint: magic, version, JSON manifest, float64 LE blob."""
    names = []
    arrays = []
    for p in model.parameters():
        names.append(p.name)
        arrays.append(p.value)
    names.append("state.temperature")
    arrays.append(np.asarray(model.temperature, dtype=np.float64))
    manifest = {
        "hyper": asdict(model.hyper),
        "variant": str(model.variant),
        "meta": meta if meta is not None else {},
        "adam": None,
    }
    if adam is not None:
        manifest["adam"] = {
            "step": adam.step,
            "beta1": adam.beta1,
            "beta2": adam.beta2,
            "eps": adam.eps,
        }
        for p in model.parameters():
            m, v = adam.slots(p)
            names.append(f"adam.m.{p.name}")
            arrays.append(m)
            names.append(f"adam.v.{p.name}")
            arrays.append(v)
    manifest["tensors"] = [
        {"name": n, "shape": list(a.shape)} for n, a in zip(names, arrays)
    ]
    body = json.dumps(manifest, sort_keys=True).encode("utf-8")
    blob = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(body)))
        fh.write(body)
        fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path):
    """Returns (model, adam_state_or_None, meta). Fails loudly on damage."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16:
        raise CheckpointError("checkpoint shorter than its fixed header")
    if raw[:4] != MAGIC:
        raise CheckpointError(
            f"bad magic {raw[:4]!r}, expected {MAGIC!r}"
        )
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (body_len,) = struct.unpack_from("<Q", raw, 8)
    if len(raw) < 16 + body_len:
        raise CheckpointError("checkpoint truncated inside the manifest")
    try:
        manifest = json.loads(raw[16 : 16 + body_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"manifest is not valid JSON: {exc}") from exc
    for key in ("hyper", "variant", "tensors", "meta"):
        if key not in manifest:
            raise CheckpointError(f"manifest missing key {key!r}")
    tensors = manifest["tensors"]
    sizes = [int(np.prod(t["shape"], dtype=np.int64)) for t in tensors]
    blob_len = 8 * int(np.sum(sizes, dtype=np.int64)) if sizes else 0
    if len(raw) != 16 + body_len + blob_len:
        raise CheckpointError(
            f"blob length {len(raw) - 16 - body_len} disagrees with manifest ({blob_len})"
        )
    values = {}
    offset = 16 + body_len
    for t, size in zip(tensors, sizes):
        arr = np.frombuffer(raw, dtype="<f8", count=size, offset=offset).reshape(
            t["shape"]
        )
        # np.array keeps 0-d shapes (ascontiguousarray would promote to 1-d)
        values[t["name"]] = np.array(arr, dtype=np.float64, order="C")
        offset += 8 * size

    hyper = ModelHyper(**manifest["hyper"])
    variant = Variant.parse(manifest["variant"])
    model = build_model(hyper, seed=0, variant=variant)
    for p in model.parameters():
        if p.name not in values:
            raise CheckpointError(f"checkpoint missing tensor {p.name!r}")
        if tuple(values[p.name].shape) != p.value.shape:
            raise CheckpointError(f"tensor {p.name!r} has the wrong shape")
        p.value[...] = values[p.name]
    if "state.temperature" not in values:
        raise CheckpointError("checkpoint missing tensor 'state.temperature'")
    model.temperature = float(values["state.temperature"])

    adam = None
    if manifest.get("adam") is not None:
        spec = manifest["adam"]
        adam = AdamState(
            beta1=spec["beta1"], beta2=spec["beta2"], eps=spec["eps"], step=spec["step"]
        )
        for p in model.parameters():
            mk, vk = f"adam.m.{p.name}", f"adam.v.{p.name}"
            if mk not in values or vk not in values:
                raise CheckpointError(f"checkpoint missing optimizer state for {p.name!r}")
            adam.m[p.name] = values[mk].copy()
            adam.v[p.name] = values[vk].copy()
    return model, adam, manifest["meta"]
