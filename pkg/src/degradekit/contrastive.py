"""Contrastive objectives over precomputed embeddings.

Four losses (MoCo, its multi-positive extension, SupMoCo, WeakCon) plus
the negative-sample queue and the momentum update for the key encoder.
All losses cosine-compare L2-normalized vectors; callers may pass raw
vectors and normalization happens internally. Analytic gradients are
taken with respect to the raw (pre-normalization) query vectors, with
positives and queue entries held constant.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

EMBEDDING_DIM = 256
TEMPERATURE = 0.07
MOMENTUM = 0.999
QUEUE_CAPACITY = 8192

_UNIT_TOL = 1e-8


def normalize(v: np.ndarray) -> np.ndarray:
    """v / |v|_2, raising on (near-)zero vectors."""
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm < 1e-12:
        raise ValueError("cannot normalize a zero vector")
    return v / norm


def _as_unit_rows(vectors) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    return np.stack([normalize(row) for row in arr])


@dataclass(frozen=True)
class QueueEntry:
    """One negative sample: a unit embedding plus optional annotations."""

    embedding: np.ndarray
    label: int | None = None
    degvec: np.ndarray | None = None

    def __post_init__(self):
        emb = np.asarray(self.embedding, dtype=np.float64)
        if emb.ndim != 1:
            raise ValueError(f"embedding must be 1-D, got shape {emb.shape}")
        if abs(float(np.linalg.norm(emb)) - 1.0) > _UNIT_TOL:
            raise ValueError("entry embedding not unit-norm")
        object.__setattr__(self, "embedding", emb)
        if self.degvec is not None:
            object.__setattr__(self, "degvec",
                               np.asarray(self.degvec, dtype=np.float64))


@dataclass
class NegativeQueue:
    """FIFO queue of negatives; pushing past capacity evicts the oldest."""

    capacity: int = QUEUE_CAPACITY
    entries: deque = field(default_factory=deque)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError(f"capacity {self.capacity} must be >= 1")
        self.entries = deque(self.entries)

    def __len__(self):
        return len(self.entries)

    def push(self, entries):
        for entry in entries:
            if not isinstance(entry, QueueEntry):
                entry = QueueEntry(embedding=np.asarray(entry, dtype=np.float64))
            self.entries.append(entry)
            if len(self.entries) > self.capacity:
                self.entries.popleft()
        return self

    def embeddings(self) -> np.ndarray:
        if not self.entries:
            return np.zeros((0, 0))
        return np.stack([e.embedding for e in self.entries])

    def labels(self) -> list:
        return [e.label for e in self.entries]


def queue_push(queue: NegativeQueue, entries) -> NegativeQueue:
    return queue.push(entries)


@dataclass(frozen=True)
class LossConfig:
    temperature: float = TEMPERATURE
    momentum: float = MOMENTUM

    def __post_init__(self):
        _check_tau(self.temperature)
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError(f"momentum {self.momentum} outside [0, 1)")


def _check_tau(tau: float):
    if tau <= 0:
        raise ValueError(f"temperature {tau} must be > 0")


def momentum_update(query_params: np.ndarray, key_params: np.ndarray,
                    m: float = MOMENTUM) -> np.ndarray:
    """key <- m * key + (1 - m) * query, elementwise."""
    query_params = np.asarray(query_params, dtype=np.float64)
    key_params = np.asarray(key_params, dtype=np.float64)
    if query_params.shape != key_params.shape:
        raise ValueError(
            f"shape mismatch {query_params.shape} vs {key_params.shape}")
    if not (0.0 <= m < 1.0):
        raise ValueError(f"momentum {m} outside [0, 1)")
    return m * key_params + (1.0 - m) * query_params


# --- shared loss core -----------------------------------------------------------

def _instance_terms(query_unit, num_vecs, num_coeffs, den_vecs, den_coeffs, tau):
    """Per-query -log(num/den) with max-subtraction, plus d/dq hooks.

    Returns (loss_term, p_num, p_den) where p_* are each term's share of
    its sum (coeff * exp / sum), reused by the gradient.
    """
    a_num = num_vecs @ query_unit / tau
    a_den = den_vecs @ query_unit / tau
    shift = max(a_num.max(), a_den.max())
    e_num = num_coeffs * np.exp(a_num - shift)
    e_den = den_coeffs * np.exp(a_den - shift)
    s_num = e_num.sum()
    s_den = e_den.sum()
    loss = float(np.log(s_den) - np.log(s_num))
    return loss, e_num / s_num, e_den / s_den


def _loss_core(queries, term_builder, tau, want_grad):
    """Average per-query terms; term_builder(i, q_unit) yields the term sets
    and the per-query divisor."""
    raw = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    batch = raw.shape[0]
    total = 0.0
    grads = np.zeros_like(raw) if want_grad else None
    for i in range(batch):
        v = raw[i]
        nv = float(np.linalg.norm(v))
        q = normalize(v)
        num_vecs, num_coeffs, den_vecs, den_coeffs, divisor = term_builder(i, q)
        loss, p_num, p_den = _instance_terms(
            q, num_vecs, num_coeffs, den_vecs, den_coeffs, tau)
        total += loss / divisor
        if want_grad:
            g_q = (den_vecs.T @ p_den - num_vecs.T @ p_num) / tau
            g_v = (g_q - q * float(q @ g_q)) / nv
            grads[i] = g_v / (batch * divisor)
    if want_grad:
        return total / batch, grads
    return total / batch


def _queue_matrix(queue: NegativeQueue, dim: int) -> np.ndarray:
    emb = queue.embeddings()
    if emb.shape[0] == 0:
        return np.zeros((0, dim))
    if emb.shape[1] != dim:
        raise ValueError(f"queue dim {emb.shape[1]} != query dim {dim}")
    return emb


def _check_batch(n_queries: int, n_other: int, what: str):
    if n_queries < 1:
        raise ValueError("need at least one query")
    if n_queries != n_other:
        raise ValueError(f"{n_queries} queries but {n_other} {what}")


# --- MoCo (single positive) ------------------------------------------------------

def _moco_builder(queries, positives, queue, tau):
    raw = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    pos = _as_unit_rows(positives)
    _check_batch(raw.shape[0], pos.shape[0], "positives")
    _check_tau(tau)
    negs = _queue_matrix(queue, raw.shape[1])

    def build(i, q_unit):
        num_vecs = pos[i:i + 1]
        den_vecs = np.vstack([num_vecs, negs])
        return num_vecs, np.ones(1), den_vecs, np.ones(den_vecs.shape[0]), 1.0

    return raw, build


def moco_loss(queries, positives, queue: NegativeQueue,
              tau: float = TEMPERATURE) -> float:
    raw, build = _moco_builder(queries, positives, queue, tau)
    return _loss_core(raw, build, tau, want_grad=False)


def moco_loss_gradient(queries, positives, queue: NegativeQueue,
                       tau: float = TEMPERATURE):
    raw, build = _moco_builder(queries, positives, queue, tau)
    return _loss_core(raw, build, tau, want_grad=True)


# --- multi-positive extension ----------------------------------------------------

def _multi_builder(queries, positive_sets, queue, tau):
    raw = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    _check_batch(raw.shape[0], len(positive_sets), "positive sets")
    _check_tau(tau)
    pos_sets = []
    for kset in positive_sets:
        if len(kset) == 0:
            raise ValueError("empty positive set")
        pos_sets.append(_as_unit_rows(kset))
    negs = _queue_matrix(queue, raw.shape[1])

    def build(i, q_unit):
        num_vecs = pos_sets[i]
        den_vecs = np.vstack([num_vecs, negs])
        return (num_vecs, np.ones(num_vecs.shape[0]),
                den_vecs, np.ones(den_vecs.shape[0]), float(num_vecs.shape[0]))

    return raw, build


def moco_multi_loss(queries, positive_sets, queue: NegativeQueue,
                    tau: float = TEMPERATURE) -> float:
    raw, build = _multi_builder(queries, positive_sets, queue, tau)
    return _loss_core(raw, build, tau, want_grad=False)


def moco_multi_loss_gradient(queries, positive_sets, queue: NegativeQueue,
                             tau: float = TEMPERATURE):
    raw, build = _multi_builder(queries, positive_sets, queue, tau)
    return _loss_core(raw, build, tau, want_grad=True)


# --- SupMoCo ---------------------------------------------------------------------

def _supmoco_builder(queries, positive_sets, labels, queue, tau):
    raw = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    _check_batch(raw.shape[0], len(positive_sets), "positive sets")
    if len(labels) != raw.shape[0]:
        raise ValueError(f"{raw.shape[0]} queries but {len(labels)} labels")
    _check_tau(tau)
    pos_sets = []
    for kset in positive_sets:
        if len(kset) == 0:
            raise ValueError("empty positive set")
        pos_sets.append(_as_unit_rows(kset))
    negs = _queue_matrix(queue, raw.shape[1])
    neg_labels = queue.labels()
    if any(lab is None for lab in neg_labels):
        raise ValueError("unlabeled queue entry")
    neg_labels = np.asarray(neg_labels)

    def build(i, q_unit):
        num_base = pos_sets[i]
        same = negs[neg_labels == labels[i]] if negs.shape[0] else negs
        num_vecs = np.vstack([num_base, same]) if same.shape[0] else num_base
        den_vecs = np.vstack([num_base, negs])
        f_i = float(num_base.shape[0] + same.shape[0])
        return (num_vecs, np.ones(num_vecs.shape[0]),
                den_vecs, np.ones(den_vecs.shape[0]), f_i)

    return raw, build


def supmoco_loss(queries, positive_sets, labels, queue: NegativeQueue,
                 tau: float = TEMPERATURE) -> float:
    raw, build = _supmoco_builder(queries, positive_sets, labels, queue, tau)
    return _loss_core(raw, build, tau, want_grad=False)


def supmoco_loss_gradient(queries, positive_sets, labels, queue: NegativeQueue,
                          tau: float = TEMPERATURE):
    raw, build = _supmoco_builder(queries, positive_sets, labels, queue, tau)
    return _loss_core(raw, build, tau, want_grad=True)


# --- WeakCon ---------------------------------------------------------------------

def _weakcon_builder(queries, positive_sets, weights, queue, tau):
    raw = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    _check_batch(raw.shape[0], len(positive_sets), "positive sets")
    _check_tau(tau)
    pos_sets = []
    for kset in positive_sets:
        if len(kset) == 0:
            raise ValueError("empty positive set")
        pos_sets.append(_as_unit_rows(kset))
    negs = _queue_matrix(queue, raw.shape[1])
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (raw.shape[0], negs.shape[0]):
        raise ValueError(
            f"weights shape {w.shape} != (batch, queue) = "
            f"({raw.shape[0]}, {negs.shape[0]})")
    if w.size and (w.min() < 0.0 or w.max() > 1.0):
        raise ValueError("weights outside [0, 1]")

    def build(i, q_unit):
        num_vecs = pos_sets[i]
        den_vecs = np.vstack([num_vecs, negs])
        den_coeffs = np.concatenate([np.ones(num_vecs.shape[0]), w[i]])
        return (num_vecs, np.ones(num_vecs.shape[0]),
                den_vecs, den_coeffs, float(num_vecs.shape[0]))

    return raw, build


def weakcon_loss(queries, positive_sets, weights, queue: NegativeQueue,
                 tau: float = TEMPERATURE) -> float:
    raw, build = _weakcon_builder(queries, positive_sets, weights, queue, tau)
    return _loss_core(raw, build, tau, want_grad=False)


def weakcon_loss_gradient(queries, positive_sets, weights, queue: NegativeQueue,
                          tau: float = TEMPERATURE):
    raw, build = _weakcon_builder(queries, positive_sets, weights, queue, tau)
    return _loss_core(raw, build, tau, want_grad=True)


# --- embedding provider stub -----------------------------------------------------

def random_projection_encoder(dim: int = EMBEDDING_DIM, seed: int = 0):
    """A fixed random-projection stand-in for the encoder CNNs.

    The returned callable maps any array patch to a unit embedding; the
    projection matrix is derived from (seed, input size) so equal patches
    always produce equal embeddings.
    """

    def encode(patch) -> np.ndarray:
        flat = np.asarray(patch, dtype=np.float64).ravel()
        if flat.size == 0:
            raise ValueError("empty patch")
        # homogeneous coordinate keeps all-zero patches representable
        flat = np.concatenate([flat, [1.0]])
        rng = np.random.default_rng([seed, flat.size])
        proj = rng.standard_normal((dim, flat.size)) / np.sqrt(flat.size)
        return normalize(proj @ flat)

    return encode
