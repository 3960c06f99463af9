"""The three deconfounding blocks and the global feature dictionary.

Each block turns token streams into a fixed-width summary vector plus the
expectation it forwards to the next layer:

  no-confounder : self-attention over x, pooled, through an MLP
  back-door     : self-attention over x concatenated with confounder-guided
                  attention (z queries over x keys/values)
  front-door    : attention of x over a frozen global dictionary of centroids
                  concatenated with self-attention over x

All three produce the same output width, so a routing layer can mix them.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError, StateError
from .nn import AttentionParams, MlpParams, attention, mlp_forward
from .tape import Tensor, concat_rows, mean, reshape


def _as_batched(x):
    if x.data.ndim == 2:
        return reshape(x, (1,) + x.data.shape)
    if x.data.ndim == 3:
        return x
    raise DimensionError(f"token tensor must be rank 2 or 3, got {x.data.shape}")


def _pool(tokens):
    # [batch x n x d] -> [batch x d]
    return mean(tokens, axis=1)


@dataclass
class NoConfounderBlock:
    """Plain attention path for inputs whose confounders are already closed."""

    attn: AttentionParams
    mlp: MlpParams

    def forward(self, x):
        """Returns (summary [batch x out], mediator expectation [batch x n x d])."""
        x = _as_batched(x)
        mix = attention(x, x, x, self.attn)
        return mlp_forward(_pool(mix), self.mlp), mix

    def parameters(self):
        return self.attn.parameters() + self.mlp.parameters()


@dataclass
class BackDoorBlock:
    """Adjusts for an observed confounder by letting its tokens re-weight x."""

    attn_x: AttentionParams
    attn_z: AttentionParams
    mlp: MlpParams

    def forward(self, x, z):
        """Returns (summary [batch x out], refined x expectation)."""
        x = _as_batched(x)
        if z.data.ndim not in (2, 3) or z.data.shape[-2] < 1:
            raise ContractError("back-door block needs at least one confounder token")
        z = _as_batched(z)
        x_mix = attention(x, x, x, self.attn_x)
        z_mix = attention(z, x, x, self.attn_z)
        joined = concat_rows([_pool(x_mix), _pool(z_mix)])
        return mlp_forward(joined, self.mlp), x_mix

    def parameters(self):
        return self.attn_x.parameters() + self.attn_z.parameters() + self.mlp.parameters()


@dataclass
class FrontDoorBlock:
    """Approximates front-door adjustment by snapping x onto global prototypes."""

    attn_dict: AttentionParams
    attn_self: AttentionParams
    mlp: MlpParams

    def forward(self, x, dictionary):
        """dictionary: rank-2 centroid Tensor [k x d_in] shared by the batch.

        Returns (summary [batch x out], prototype expectation of x).
        """
        if dictionary is None:
            raise StateError("front-door block called before the dictionary was built")
        x = _as_batched(x)
        if not isinstance(dictionary, Tensor) or dictionary.data.ndim != 2:
            raise ContractError("dictionary must be a rank-2 tensor of centroids")
        x_mix = attention(x, dictionary, dictionary, self.attn_dict)
        m_mix = attention(x, x, x, self.attn_self)
        joined = concat_rows([_pool(x_mix), _pool(m_mix)])
        return mlp_forward(joined, self.mlp), x_mix

    def parameters(self):
        return (
            self.attn_dict.parameters()
            + self.attn_self.parameters()
            + self.mlp.parameters()
        )


# ------------------------------------------------------------ global dictionary


@dataclass
class GlobalDictionary:
    """Frozen k-means centroids over training token features."""

    centroids: np.ndarray

    @property
    def k(self):
        return self.centroids.shape[0]

    @property
    def width(self):
        return self.centroids.shape[1]


def _farthest_point_init(points, k, rng):
    n = points.shape[0]
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = rng.integers(n)
    d2 = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    for i in range(1, k):
        chosen[i] = int(np.argmax(d2))
        d2 = np.minimum(d2, np.sum((points - points[chosen[i]]) ** 2, axis=1))
    return points[chosen].copy()


def lloyd_kmeans(points, k, seed, max_iters=100):
    """Seeded farthest-point init + Lloyd iterations.

    Returns (centroids [k x d], labels [n], inertia_history). The history is
    the within-cluster sum of squares after each assignment step and never
    increases. Empty clusters keep their previous centroid.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise DimensionError(f"kmeans: [n x d] points expected, got {points.shape}")
    n = points.shape[0]
    if k < 1:
        raise ContractError("kmeans: k must be at least 1")
    if n < k:
        raise ContractError(f"kmeans: {n} points cannot fill {k} clusters")
    rng = np.random.default_rng(seed)
    centroids = _farthest_point_init(points, k, rng)
    labels, inertia = kernels.kmeans_assign(points, centroids)
    history = [inertia]
    for _ in range(max_iters):
        sums, counts = kernels.kmeans_update(points, labels, k)
        occupied = counts > 0
        centroids[occupied] = sums[occupied] / counts[occupied, None]
        new_labels, inertia = kernels.kmeans_assign(points, centroids)
        history.append(inertia)
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return centroids, labels, history


def build_dictionary(features, k, seed, max_iters=100):
    """Cluster token feature rows into the frozen global dictionary."""
    centroids, _, _ = lloyd_kmeans(features, k, seed, max_iters)
    return GlobalDictionary(centroids=centroids)


def save_dictionary(dictionary, path):
    payload = {
        "version": 1,
        "k": dictionary.k,
        "width": dictionary.width,
        "centroids": dictionary.centroids.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_dictionary(path):
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    for key in ("version", "k", "width", "centroids"):
        if key not in payload:
            raise ContractError(f"dictionary file missing key {key!r}")
    cents = np.asarray(payload["centroids"], dtype=np.float64)
    if cents.ndim != 2 or cents.shape != (payload["k"], payload["width"]):
        raise ContractError("dictionary file centroid shape disagrees with header")
    return GlobalDictionary(centroids=cents)
