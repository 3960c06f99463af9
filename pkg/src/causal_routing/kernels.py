"""Numeric inner-loop kernels: numba-jitted with a pure-numpy fallback.

The backend is chosen once at import time from the CAUSAL_ROUTING_KERNELS
environment variable ("numba" or "numpy"). Unset means numba when it can be
imported, numpy otherwise. Both implementations compute the same quantities;
results agree to rounding but are not bit-identical across backends, so
determinism guarantees hold within one backend only.
"""

import os

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - mirror sandbox always has numba
    NUMBA_AVAILABLE = False

ENV_VAR = "CAUSAL_ROUTING_KERNELS"


def resolve_backend(env_value, numba_available):
    """Pick the kernel backend. Raises on an explicit request that cannot be met."""
    if env_value is None or env_value == "":
        return "numba" if numba_available else "numpy"
    if env_value not in ("numba", "numpy"):
        raise ValueError(f"{ENV_VAR} must be 'numba' or 'numpy', got {env_value!r}")
    if env_value == "numba" and not numba_available:
        raise ValueError(f"{ENV_VAR}=numba but numba is not importable")
    return env_value


BACKEND = resolve_backend(os.environ.get(ENV_VAR), NUMBA_AVAILABLE)


# ---------------------------------------------------------------- numpy twins


def _softmax2d_np(x):
    m = np.max(x, axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=1, keepdims=True)


def _softmax2d_bwd_np(out, g):
    dot = np.sum(out * g, axis=1, keepdims=True)
    return out * (g - dot)


def _ce_fwd_np(logits, labels):
    m = np.max(logits, axis=1, keepdims=True)
    e = np.exp(logits - m)
    z = np.sum(e, axis=1, keepdims=True)
    probs = e / z
    lse = m[:, 0] + np.log(z[:, 0])
    picked = logits[np.arange(logits.shape[0]), labels]
    loss = float(np.mean(lse - picked))
    return loss, probs


def _ce_bwd_np(probs, labels, scale):
    d = probs * scale
    d[np.arange(probs.shape[0]), labels] -= scale
    return d


def _adam_np(p, g, m, v, lr, b1, b2, eps, t):
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * g * g
    mhat = m / (1.0 - b1**t)
    vhat = v / (1.0 - b2**t)
    p -= lr * mhat / (np.sqrt(vhat) + eps)


def _kmeans_assign_np(points, centroids):
    d2 = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
    labels = np.argmin(d2, axis=1)
    inertia = float(np.sum(d2[np.arange(points.shape[0]), labels]))
    return labels.astype(np.int64), inertia


def _kmeans_update_np(points, labels, k):
    d = points.shape[1]
    sums = np.zeros((k, d))
    counts = np.zeros(k, dtype=np.int64)
    np.add.at(sums, labels, points)
    np.add.at(counts, labels, 1)
    return sums, counts


_NUMPY_IMPL = {
    "softmax2d": _softmax2d_np,
    "softmax2d_bwd": _softmax2d_bwd_np,
    "ce_fwd": _ce_fwd_np,
    "ce_bwd": _ce_bwd_np,
    "adam": _adam_np,
    "kmeans_assign": _kmeans_assign_np,
    "kmeans_update": _kmeans_update_np,
}

IMPLEMENTATIONS = {"numpy": _NUMPY_IMPL}


# ---------------------------------------------------------------- numba twins

if NUMBA_AVAILABLE:

    @njit(cache=True)
    def _softmax2d_nb(x):
        n, c = x.shape
        out = np.empty((n, c))
        for i in range(n):
            m = x[i, 0]
            for j in range(1, c):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0.0
            for j in range(c):
                e = np.exp(x[i, j] - m)
                out[i, j] = e
                s += e
            for j in range(c):
                out[i, j] /= s
        return out

    @njit(cache=True)
    def _softmax2d_bwd_nb(out, g):
        n, c = out.shape
        gin = np.empty((n, c))
        for i in range(n):
            dot = 0.0
            for j in range(c):
                dot += out[i, j] * g[i, j]
            for j in range(c):
                gin[i, j] = out[i, j] * (g[i, j] - dot)
        return gin

    @njit(cache=True)
    def _ce_fwd_nb(logits, labels):
        n, c = logits.shape
        probs = np.empty((n, c))
        loss = 0.0
        for i in range(n):
            m = logits[i, 0]
            for j in range(1, c):
                if logits[i, j] > m:
                    m = logits[i, j]
            z = 0.0
            for j in range(c):
                e = np.exp(logits[i, j] - m)
                probs[i, j] = e
                z += e
            for j in range(c):
                probs[i, j] /= z
            loss += m + np.log(z) - logits[i, labels[i]]
        return loss / n, probs

    @njit(cache=True)
    def _ce_bwd_nb(probs, labels, scale):
        n, c = probs.shape
        d = np.empty((n, c))
        for i in range(n):
            for j in range(c):
                d[i, j] = probs[i, j] * scale
            d[i, labels[i]] -= scale
        return d

    @njit(cache=True)
    def _adam_nb(p, g, m, v, lr, b1, b2, eps, t):
        c1 = 1.0 - b1**t
        c2 = 1.0 - b2**t
        for i in range(p.size):
            m[i] = b1 * m[i] + (1.0 - b1) * g[i]
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i]
            p[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)

    @njit(cache=True)
    def _kmeans_assign_nb(points, centroids):
        n, d = points.shape
        k = centroids.shape[0]
        labels = np.empty(n, dtype=np.int64)
        inertia = 0.0
        for i in range(n):
            best = 0
            bestd = np.inf
            for c in range(k):
                acc = 0.0
                for j in range(d):
                    diff = points[i, j] - centroids[c, j]
                    acc += diff * diff
                if acc < bestd:
                    bestd = acc
                    best = c
            labels[i] = best
            inertia += bestd
        return labels, inertia

    @njit(cache=True)
    def _kmeans_update_nb(points, labels, k):
        n, d = points.shape
        sums = np.zeros((k, d))
        counts = np.zeros(k, dtype=np.int64)
        for i in range(n):
            c = labels[i]
            counts[c] += 1
            for j in range(d):
                sums[c, j] += points[i, j]
        return sums, counts

    IMPLEMENTATIONS["numba"] = {
        "softmax2d": _softmax2d_nb,
        "softmax2d_bwd": _softmax2d_bwd_nb,
        "ce_fwd": _ce_fwd_nb,
        "ce_bwd": _ce_bwd_nb,
        "adam": _adam_nb,
        "kmeans_assign": _kmeans_assign_nb,
        "kmeans_update": _kmeans_update_nb,
    }

_IMPL = IMPLEMENTATIONS[BACKEND]


# ------------------------------------------------------------- public surface


def _as2d(x):
    return np.ascontiguousarray(x.reshape(-1, x.shape[-1]))


def softmax_last(x):
    """Softmax over the last axis of a rank 1..3 float64 array."""
    flat = _softmax2d(_as2d(x))
    return flat.reshape(x.shape)


def softmax_last_backward(out, g):
    flat = _softmax2d_bwd(_as2d(out), _as2d(g))
    return flat.reshape(out.shape)


def cross_entropy_forward(logits, labels):
    """Mean negative log-likelihood plus the softmax probabilities."""
    return _ce_fwd(np.ascontiguousarray(logits), labels)


def cross_entropy_backward(probs, labels, scale):
    return _ce_bwd(np.ascontiguousarray(probs), labels, scale)


def adam_update(p, g, m, v, lr, b1, b2, eps, t):
    """In-place Adam step with bias correction; t counts from 1.

    p, m, v must be C-contiguous so the raveled views alias their storage.
    """
    for arr in (p, m, v):
        if not arr.flags.c_contiguous:
            raise ValueError("adam_update needs C-contiguous state arrays")
    g = np.ascontiguousarray(g)
    _IMPL["adam"](p.ravel(), g.ravel(), m.ravel(), v.ravel(), lr, b1, b2, eps, t)


def kmeans_assign(points, centroids):
    return _IMPL["kmeans_assign"](
        np.ascontiguousarray(points), np.ascontiguousarray(centroids)
    )


def kmeans_update(points, labels, k):
    return _IMPL["kmeans_update"](np.ascontiguousarray(points), labels, k)


_softmax2d = _IMPL["softmax2d"]
_softmax2d_bwd = _IMPL["softmax2d_bwd"]
_ce_fwd = _IMPL["ce_fwd"]
_ce_bwd = _IMPL["ce_bwd"]
