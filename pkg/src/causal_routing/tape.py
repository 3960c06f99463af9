"""Reverse-mode differentiation over dense float64 tensors.

Every operation appends one entry (op name, input ids, output id, backward
closure) to the tape that produced its inputs, so the entry list is already
topologically ordered. backward() seeds the scalar loss with gradient one,
walks the entries once in reverse, and accumulates gradients into Parameter
objects that took part in the forward pass.
"""

import math

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError


class Parameter:
    """Named trainable array with a gradient accumulator."""

    __slots__ = ("name", "value", "grad", "trainable")

    def __init__(self, name, value, trainable=True):
        self.name = name
        # np.array keeps 0-d shapes (ascontiguousarray would promote to 1-d)
        self.value = np.array(value, dtype=np.float64, order="C")
        self.grad = np.zeros_like(self.value)
        self.trainable = trainable

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class Tensor:
    """Dense float64 array tracked on a tape. Created via Tape methods or ops."""

    __slots__ = ("data", "grad", "uid", "tape")

    def __init__(self, data, tape, uid):
        self.data = data
        self.grad = None
        self.tape = tape
        self.uid = uid

    @property
    def shape(self):
        return self.data.shape

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return subtract(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return multiply(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __repr__(self):
        return f"Tensor(uid={self.uid}, shape={self.data.shape})"


class TapeEntry:
    __slots__ = ("op", "input_uids", "output_uid", "backward")

    def __init__(self, op, input_uids, output_uid, backward):
        self.op = op
        self.input_uids = input_uids
        self.output_uid = output_uid
        self.backward = backward


class Tape:
    """Records one forward pass and replays it backward."""

    def __init__(self):
        self.entries = []
        self._nodes = []
        self._param_uses = []
        self._param_leaves = {}

    def _new_tensor(self, data):
        t = Tensor(data, self, len(self._nodes))
        self._nodes.append(t)
        return t

    def tensor(self, data):
        """New leaf from array-like data (copied to float64)."""
        return self._new_tensor(np.array(data, dtype=np.float64))

    def constant(self, data):
        """Leaf sharing the given float64 array (not copied)."""
        arr = np.asarray(data)
        if arr.dtype != np.float64:
            arr = arr.astype(np.float64)
        return self._new_tensor(arr)

    def param(self, p):
        """Leaf for a Parameter; repeated use returns the same leaf."""
        leaf = self._param_leaves.get(id(p))
        if leaf is None:
            leaf = self._new_tensor(p.value)
            self._param_leaves[id(p)] = leaf
            self._param_uses.append((p, leaf))
        return leaf

    def record(self, op, inputs, out_data, backward):
        out = self._new_tensor(out_data)
        self.entries.append(
            TapeEntry(op, tuple(t.uid for t in inputs), out.uid, backward)
        )
        return out

    def backward(self, loss):
        """Accumulate d loss / d p into every participating Parameter.grad."""
        if loss.tape is not self:
            raise ContractError("loss tensor belongs to a different tape")
        if loss.data.shape != ():
            raise ContractError(
                f"backward needs a scalar loss, got shape {loss.data.shape}"
            )
        grads = {loss.uid: np.ones((), dtype=np.float64)}
        for entry in reversed(self.entries):
            g = grads.get(entry.output_uid)
            if g is None:
                continue
            for t, contrib in entry.backward(g):
                have = grads.get(t.uid)
                grads[t.uid] = contrib if have is None else have + contrib
        for t in self._nodes:
            t.grad = grads.get(t.uid)
        for p, leaf in self._param_uses:
            g = grads.get(leaf.uid)
            if g is not None:
                p.grad += g


def _common_tape(*tensors):
    tape = tensors[0].tape
    for t in tensors[1:]:
        if t.tape is not tape:
            raise ContractError("operands come from different tapes")
    return tape


def _require_same_shape(op, a, b):
    if a.data.shape != b.data.shape:
        raise DimensionError(
            f"{op}: shapes {a.data.shape} and {b.data.shape} differ"
        )


# ------------------------------------------------------------------ operations


def matmul(a, b):
    """Matrix product for 2d x 2d, 3d x 2d (shared right factor), and 3d x 3d."""
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2:
        ok = ad.shape[1] == bd.shape[0]
    elif ad.ndim == 3 and bd.ndim == 2:
        ok = ad.shape[2] == bd.shape[0]
    elif ad.ndim == 3 and bd.ndim == 3:
        ok = ad.shape[0] == bd.shape[0] and ad.shape[2] == bd.shape[1]
    else:
        raise DimensionError(
            f"matmul: unsupported ranks {ad.ndim} x {bd.ndim}"
        )
    if not ok:
        raise DimensionError(
            f"matmul: inner dimensions of {ad.shape} and {bd.shape} disagree"
        )
    tape = _common_tape(a, b)

    def bw(g):
        if ad.ndim == 2 and bd.ndim == 2:
            return ((a, g @ bd.T), (b, ad.T @ g))
        if bd.ndim == 2:
            return (
                (a, g @ bd.T),
                (b, np.tensordot(ad, g, axes=([0, 1], [0, 1]))),
            )
        return (
            (a, g @ bd.transpose(0, 2, 1)),
            (b, ad.transpose(0, 2, 1) @ g),
        )

    return tape.record("matmul", (a, b), ad @ bd, bw)


def transpose_last(a):
    """Swap the last two axes."""
    ad = a.data
    if ad.ndim == 2:
        out = ad.T
    elif ad.ndim == 3:
        out = ad.transpose(0, 2, 1)
    else:
        raise DimensionError(f"transpose_last: rank {ad.ndim} unsupported")

    def bw(g):
        return ((a, g.T if ad.ndim == 2 else g.transpose(0, 2, 1)),)

    return a.tape.record("transpose_last", (a,), out, bw)


def reshape(a, shape):
    ad = a.data
    shape = tuple(shape)
    if math.prod(shape) != ad.size:
        raise DimensionError(f"reshape: cannot view {ad.shape} as {shape}")

    def bw(g):
        return ((a, g.reshape(ad.shape)),)

    return a.tape.record("reshape", (a,), ad.reshape(shape), bw)


def softmax_rows(a):
    """Softmax over the last axis (rank 1 to 3)."""
    ad = a.data
    if ad.ndim not in (1, 2, 3):
        raise DimensionError(f"softmax_rows: rank {ad.ndim} unsupported")
    out = kernels.softmax_last(ad)

    def bw(g):
        return ((a, kernels.softmax_last_backward(out, g)),)

    return a.tape.record("softmax_rows", (a,), out, bw)


def add(a, b):
    _require_same_shape("add", a, b)
    tape = _common_tape(a, b)

    def bw(g):
        return ((a, g), (b, g))

    return tape.record("add", (a, b), a.data + b.data, bw)


def subtract(a, b):
    _require_same_shape("subtract", a, b)
    tape = _common_tape(a, b)

    def bw(g):
        return ((a, g), (b, -g))

    return tape.record("subtract", (a, b), a.data - b.data, bw)


def multiply(a, b):
    _require_same_shape("multiply", a, b)
    tape = _common_tape(a, b)

    def bw(g):
        return ((a, g * b.data), (b, g * a.data))

    return tape.record("multiply", (a, b), a.data * b.data, bw)


def scale(a, c):
    c = float(c)

    def bw(g):
        return ((a, g * c),)

    return a.tape.record("scale", (a,), a.data * c, bw)


def scale_by(a, s):
    """Multiply a tensor by a scalar tensor (shape ())."""
    if s.data.shape != ():
        raise DimensionError(f"scale_by: scalar expected, got {s.data.shape}")
    tape = _common_tape(a, s)

    def bw(g):
        return ((a, g * s.data), (s, np.float64(np.sum(g * a.data))))

    return tape.record("scale_by", (a, s), a.data * s.data, bw)


def add_bias(a, b):
    """Add a rank-1 bias along the last axis."""
    ad, bd = a.data, b.data
    if bd.ndim != 1 or ad.shape[-1] != bd.shape[0]:
        raise DimensionError(
            f"add_bias: bias {bd.shape} does not fit {ad.shape}"
        )
    tape = _common_tape(a, b)

    def bw(g):
        return ((a, g), (b, g.reshape(-1, bd.shape[0]).sum(axis=0)))

    return tape.record("add_bias", (a, b), ad + bd, bw)


def concat_rows(parts):
    """Concatenate along the last axis; leading shapes must match."""
    if len(parts) < 1:
        raise ContractError("concat_rows: nothing to concatenate")
    lead = parts[0].data.shape[:-1]
    for p in parts[1:]:
        if p.data.shape[:-1] != lead:
            raise DimensionError(
                f"concat_rows: leading shapes {lead} and {p.data.shape[:-1]} differ"
            )
    tape = _common_tape(*parts)
    widths = [p.data.shape[-1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def bw(g):
        return tuple(
            (p, g[..., offsets[i] : offsets[i + 1]]) for i, p in enumerate(parts)
        )

    out = np.concatenate([p.data for p in parts], axis=-1)
    return tape.record("concat_rows", tuple(parts), out, bw)


def mean(a, axis=None):
    """Mean over one axis, or over all elements when axis is None."""
    ad = a.data
    if axis is None:
        n = ad.size

        def bw(g):
            return ((a, np.full(ad.shape, float(g) / n)),)

        return a.tape.record("mean", (a,), np.float64(ad.mean()), bw)
    if not -ad.ndim <= axis < ad.ndim:
        raise DimensionError(f"mean: axis {axis} out of range for {ad.shape}")
    axis = axis % ad.ndim
    n = ad.shape[axis]

    def bw(g):
        return ((a, np.repeat(np.expand_dims(g / n, axis), n, axis=axis)),)

    return a.tape.record("mean", (a,), ad.mean(axis=axis), bw)


def sum_all(a):
    ad = a.data

    def bw(g):
        return ((a, np.full(ad.shape, float(g))),)

    return a.tape.record("sum_all", (a,), np.float64(ad.sum()), bw)


def relu(a):
    ad = a.data
    mask = ad > 0.0

    def bw(g):
        return ((a, g * mask),)

    return a.tape.record("relu", (a,), np.where(mask, ad, 0.0), bw)


def log_clamped(a, floor=1e-12):
    """Natural log of max(a, floor); gradient is zero in the clamped region."""
    ad = a.data
    clamped = np.maximum(ad, floor)
    live = ad > floor

    def bw(g):
        return ((a, np.where(live, g / clamped, 0.0)),)

    return a.tape.record("log_clamped", (a,), np.log(clamped), bw)


def pick(a, index):
    """Select one element of a rank-1 tensor as a scalar."""
    ad = a.data
    if ad.ndim != 1:
        raise DimensionError(f"pick: rank-1 tensor expected, got {ad.shape}")
    if not 0 <= index < ad.shape[0]:
        raise IndexError(f"pick: index {index} out of range for {ad.shape}")

    def bw(g):
        full = np.zeros_like(ad)
        full[index] = float(g)
        return ((a, full),)

    return a.tape.record("pick", (a,), np.float64(ad[index]), bw)


def gather(a, indices):
    """Select a rank-1 subvector by integer indices."""
    ad = a.data
    if ad.ndim != 1:
        raise DimensionError(f"gather: rank-1 tensor expected, got {ad.shape}")
    idx = tuple(int(i) for i in indices)
    for i in idx:
        if not 0 <= i < ad.shape[0]:
            raise IndexError(f"gather: index {i} out of range for {ad.shape}")

    def bw(g):
        full = np.zeros_like(ad)
        for j, i in enumerate(idx):
            full[i] += g[j]
        return ((a, full),)

    return a.tape.record("gather", (a,), ad[list(idx)], bw)


def cross_entropy(logits, labels):
    """Mean cross-entropy of log-softmax(logits) against integer labels."""
    ld = logits.data
    if ld.ndim != 2:
        raise DimensionError(f"cross_entropy: [batch x classes] expected, got {ld.shape}")
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != ld.shape[0]:
        raise DimensionError(
            f"cross_entropy: labels {labels.shape} do not match batch {ld.shape[0]}"
        )
    if labels.size and (labels.min() < 0 or labels.max() >= ld.shape[1]):
        raise IndexError("cross_entropy: label out of range")
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    loss, probs = kernels.cross_entropy_forward(ld, labels)

    def bw(g):
        return (
            (logits, kernels.cross_entropy_backward(probs, labels, float(g) / ld.shape[0])),
        )

    return logits.tape.record("cross_entropy", (logits,), np.float64(loss), bw)
