"""Synthetic confounded classification tasks plus small retrieval helpers.

Three regimes, all producing token-set inputs x (content) and z (observed
context) with an integer label:

  no_confounder              x carries clean class signal, z is noise
  observed_confounder        a latent state s correlates with the label and
                             leaks into both x and z; with test_shift the
                             correlation is reversed at test time, so leaning
                             on s is a trap
  hidden_confounder_mediator the confounder stays latent (z is withheld
                             noise) and part of the class evidence reaches x
                             only through mediator-style tokens

The retrieval helpers (TF-IDF top-M and weighted-cosine triplet ranking)
mirror how real front ends would pick confounder words and knowledge triples;
here they feed tests and the data tooling.
"""

import json
import math
from collections import Counter
from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError, ContractError

REGIMES = ("no_confounder", "observed_confounder", "hidden_confounder_mediator")


@dataclass(frozen=True)
class SyntheticTaskSpec:
    regime: str
    d_in: int = 16
    classes: int = 4
    n_x: int = 6
    n_z: int = 4
    train_size: int = 2000
    test_size: int = 1000
    rho: float = 0.9
    test_shift: bool = True
    seed: int = 0
    separation: float = 3.0
    noise: float = 1.0

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ContractError(f"unknown regime {self.regime!r}")
        if self.classes < 2:
            raise ContractError("need at least two classes")
        if min(self.d_in, self.n_x, self.n_z, self.train_size, self.test_size) < 1:
            raise ContractError("sizes and widths must be positive")
        if not 0.0 <= self.rho <= 1.0:
            raise ContractError("rho must lie in [0, 1]")
        if self.noise < 0.0 or self.separation <= 0.0:
            raise ContractError("separation must be positive, noise non-negative")


@dataclass
class DatasetRecord:
    x: np.ndarray
    z: np.ndarray
    label: int


@dataclass
class GeneratedData:
    train: list
    test: list
    train_confounders: np.ndarray
    test_confounders: np.ndarray


def task_spec_from_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    known = {f.name for f in fields(SyntheticTaskSpec)}
    unknown = sorted(set(payload) - known)
    if unknown:
        raise ConfigError(f"unknown task spec keys: {', '.join(unknown)}")
    if "regime" not in payload:
        raise ConfigError("task spec must name a regime")
    try:
        return SyntheticTaskSpec(**payload)
    except TypeError as exc:
        raise ConfigError(f"bad task spec: {exc}") from exc


def _unit_rows(rng, n, d):
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _confounder_states(rng, labels, classes, rho, reversed_at_test):
    base = (labels + 1) % classes if reversed_at_test else labels
    agree = rng.random(labels.shape[0]) < rho
    uniform = rng.integers(0, classes, size=labels.shape[0])
    return np.where(agree, base, uniform)


def _token_split(spec):
    """How many x tokens carry signal, confounder leak, and pure noise.

    The leak gets the larger share so that an x-only model faces a real
    spurious-correlation trap; at least one token always carries signal."""
    n_leak = spec.n_x // 2
    n_noise = 1 if spec.n_x >= 4 else 0
    n_sig = spec.n_x - n_leak - n_noise
    if n_sig < 1:
        n_sig, n_leak = 1, spec.n_x - 1 - n_noise
    return n_sig, n_leak, n_noise


def generate_dataset(spec):
    """Deterministic generation: the same spec always gives the same records."""
    rng = np.random.default_rng(spec.seed)
    mu = spec.separation * _unit_rows(rng, spec.classes, spec.d_in)
    nu_x = spec.separation * _unit_rows(rng, spec.classes, spec.d_in)
    nu_z = spec.separation * _unit_rows(rng, spec.classes, spec.d_in)

    def one_split(n, shifted):
        labels = rng.integers(0, spec.classes, size=n)
        states = _confounder_states(rng, labels, spec.classes, spec.rho, shifted)
        x_dirs = np.zeros((n, spec.n_x, spec.d_in))
        z_dirs = np.zeros((n, spec.n_z, spec.d_in))
        if spec.regime == "no_confounder":
            states = rng.integers(0, spec.classes, size=n)
            x_dirs[:] = mu[labels][:, None, :]
        elif spec.regime == "observed_confounder":
            n_sig, n_leak, _ = _token_split(spec)
            x_dirs[:, :n_sig] = mu[labels][:, None, :]
            x_dirs[:, n_sig : n_sig + n_leak] = nu_x[states][:, None, :]
            z_dirs[:] = nu_z[states][:, None, :]
        else:
            n_med, n_ctx, _ = _token_split(spec)
            x_dirs[:, :n_med] = mu[labels][:, None, :]
            x_dirs[:, n_med : n_med + n_ctx] = nu_x[states][:, None, :]
        x = x_dirs + spec.noise * rng.standard_normal(x_dirs.shape)
        z = z_dirs + spec.noise * rng.standard_normal(z_dirs.shape)
        records = [
            DatasetRecord(x=x[i], z=z[i], label=int(labels[i])) for i in range(n)
        ]
        return records, states

    train, train_states = one_split(spec.train_size, False)
    test, test_states = one_split(spec.test_size, spec.test_shift)
    return GeneratedData(
        train=train,
        test=test,
        train_confounders=train_states,
        test_confounders=test_states,
    )


# ------------------------------------------------------------------ record I/O


def save_records(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(
                json.dumps(
                    {"x": r.x.tolist(), "z": r.z.tolist(), "label": r.label}
                )
            )
            fh.write("\n")


def load_records(path):
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                records.append(
                    DatasetRecord(
                        x=np.asarray(obj["x"], dtype=np.float64),
                        z=np.asarray(obj["z"], dtype=np.float64),
                        label=int(obj["label"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ContractError(f"{path}:{lineno}: bad record: {exc}") from exc
    if not records:
        raise ContractError(f"{path}: no records")
    first = records[0]
    for i, r in enumerate(records):
        if r.x.shape != first.x.shape or r.z.shape != first.z.shape:
            raise ContractError(f"{path}: record {i} has mismatched token shapes")
    return records


def stack_records(records):
    """Batch arrays (x, z, labels) from a record list."""
    x = np.stack([r.x for r in records])
    z = np.stack([r.z for r in records])
    labels = np.asarray([r.label for r in records], dtype=np.int64)
    return x, z, labels


# --------------------------------------------------------------------- TF-IDF


def load_corpus(path):
    """Plain text, one whitespace-tokenized document per line."""
    docs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            words = line.split()
            if words:
                docs.append(words)
    return docs


def tfidf_topm(corpus, m):
    """Top-m words per document by tf * ln(N / df); ties break lexicographically.

    tf is the raw in-document count, df the number of documents containing
    the word. Returns one ranked [(word, score), ...] list per document.
    """
    if m < 1:
        raise ContractError("m must be at least 1")
    if not corpus:
        return []
    n = len(corpus)
    df = Counter()
    for doc in corpus:
        df.update(set(doc))
    out = []
    for doc in corpus:
        tf = Counter(doc)
        scored = [(w, c * math.log(n / df[w])) for w, c in tf.items()]
        scored.sort(key=lambda pair: (-pair[1], pair[0]))
        out.append(scored[:m])
    return out


# -------------------------------------------------------------------- triplets


@dataclass
class TripletRecord:
    subject: str
    relation: str
    object: str
    weight: float
    embedding: np.ndarray


def load_triplets(path):
    triplets = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                triplets.append(
                    TripletRecord(
                        subject=obj["subject"],
                        relation=obj["relation"],
                        object=obj["object"],
                        weight=float(obj["weight"]),
                        embedding=np.asarray(obj["embedding"], dtype=np.float64),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ContractError(f"{path}:{lineno}: bad triplet: {exc}") from exc
    return triplets


def save_triplets(triplets, path):
    with open(path, "w", encoding="utf-8") as fh:
        for t in triplets:
            fh.write(
                json.dumps(
                    {
                        "subject": t.subject,
                        "relation": t.relation,
                        "object": t.object,
                        "weight": t.weight,
                        "embedding": t.embedding.tolist(),
                    }
                )
            )
            fh.write("\n")


def score_triplets(query_embedding, triplets, top_k):
    """Rank triplets by cosine(query, embedding) * weight, descending.

    Ties keep the input order. A zero-norm triplet embedding scores zero; a
    zero-norm query is an error.
    """
    if top_k < 1:
        raise ContractError("top_k must be at least 1")
    q = np.asarray(query_embedding, dtype=np.float64)
    qn = np.linalg.norm(q)
    if qn == 0.0:
        raise ContractError("query embedding has zero norm")
    scored = []
    for t in triplets:
        en = np.linalg.norm(t.embedding)
        if t.embedding.shape != q.shape:
            raise ContractError("triplet embedding width differs from the query")
        cos = 0.0 if en == 0.0 else float(np.dot(q, t.embedding) / (qn * en))
        scored.append((t, cos * t.weight))
    scored.sort(key=lambda pair: -pair[1])
    return scored[:top_k]
