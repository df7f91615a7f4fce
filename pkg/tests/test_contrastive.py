import math

import numpy as np
import pytest

import degradekit.contrastive as C
from oracles import (
    fd_gradient,
    moco_multi_naive,
    moco_naive,
    supmoco_naive,
    unit,
    weakcon_naive,
)


def make_queue(vectors, labels=None, capacity=C.QUEUE_CAPACITY):
    queue = C.NegativeQueue(capacity=capacity)
    vectors = [unit(v) for v in vectors]
    if labels is None:
        queue.push(vectors)
    else:
        queue.push([C.QueueEntry(embedding=v, label=lab)
                    for v, lab in zip(vectors, labels)])
    return queue


def random_instance(rng, batch=2, dim=6, queue_len=5, max_pos=3, labelled=False):
    queries = rng.normal(size=(batch, dim))
    positive_sets = [rng.normal(size=(int(rng.integers(1, max_pos + 1)), dim))
                     for _ in range(batch)]
    negatives = rng.normal(size=(queue_len, dim))
    labels = rng.integers(0, 3, size=queue_len).tolist() if labelled else None
    return queries, positive_sets, negatives, make_queue(negatives, labels)


# --- closed-form examples -------------------------------------------------------

def test_moco_perfect_match_empty_queue():
    q = np.array([0.3, -0.4, 0.5])
    queue = C.NegativeQueue()
    assert C.moco_loss([q], [q], queue, tau=0.07) == pytest.approx(0.0, abs=1e-15)


def test_moco_closed_form():
    queue = make_queue([np.array([0.0, 1.0])])
    loss = C.moco_loss([np.array([1.0, 0.0])], [np.array([1.0, 0.0])],
                       queue, tau=1.0)
    assert loss == pytest.approx(math.log(1.0 + math.exp(-1.0)), abs=1e-12)
    assert loss == pytest.approx(0.31326, abs=5e-6)


def test_supmoco_closed_form():
    queue = make_queue([np.array([0.0, 1.0]), np.array([1.0, 0.0])],
                       labels=[1, 0])
    loss = C.supmoco_loss([np.array([1.0, 0.0])], [[np.array([1.0, 0.0])]],
                          [0], queue, tau=1.0)
    term = -math.log(2 * math.e / (2 * math.e + 1))  # per-query, unnormalized
    assert term == pytest.approx(0.16885, abs=5e-6)
    # one positive + one same-label queue entry: F = 2
    assert loss == pytest.approx(term / 2.0, abs=1e-12)


def test_weakcon_closed_form():
    queue = make_queue([np.array([0.0, 1.0])])
    loss = C.weakcon_loss([np.array([1.0, 0.0])], [[np.array([1.0, 0.0])]],
                          [[0.5]], queue, tau=1.0)
    assert loss == pytest.approx(math.log(1.0 + 0.5 * math.exp(-1.0)), abs=1e-12)
    assert loss == pytest.approx(0.16885, abs=5e-6)


# --- reduction identities -------------------------------------------------------

def test_multi_reduces_to_moco_with_single_positives():
    rng = np.random.default_rng(0)
    queries = rng.normal(size=(3, 8))
    positives = rng.normal(size=(3, 8))
    queue = make_queue(rng.normal(size=(6, 8)))
    a = C.moco_loss(queries, positives, queue)
    b = C.moco_multi_loss(queries, [[p] for p in positives], queue)
    assert a == pytest.approx(b, abs=1e-14)


def test_multi_duplicate_positive_empty_queue_is_zero():
    q = np.array([1.0, 2.0, -1.0])
    queue = C.NegativeQueue()
    loss = C.moco_multi_loss([q], [[q, q]], queue)
    assert loss == pytest.approx(0.0, abs=1e-15)


def test_supmoco_all_same_label_is_zero():
    rng = np.random.default_rng(1)
    queries = rng.normal(size=(2, 5))
    positives = [[rng.normal(size=5)] for _ in range(2)]
    queue = make_queue(rng.normal(size=(4, 5)), labels=[7, 7, 7, 7])
    loss = C.supmoco_loss(queries, positives, [7, 7], queue)
    assert loss == pytest.approx(0.0, abs=1e-14)


def test_supmoco_no_shared_label_reduces_to_moco():
    rng = np.random.default_rng(2)
    queries = rng.normal(size=(2, 5))
    positives = rng.normal(size=(2, 5))
    queue = make_queue(rng.normal(size=(4, 5)), labels=[1, 2, 1, 2])
    a = C.supmoco_loss(queries, [[p] for p in positives], [0, 0], queue)
    b = C.moco_loss(queries, positives, queue)
    assert a == pytest.approx(b, abs=1e-14)


def test_weakcon_unit_weights_reduce_to_multi():
    rng = np.random.default_rng(3)
    queries, positive_sets, _, queue = random_instance(rng, batch=3)
    w = np.ones((3, len(queue)))
    a = C.weakcon_loss(queries, positive_sets, w, queue)
    b = C.moco_multi_loss(queries, positive_sets, queue)
    assert a == pytest.approx(b, abs=1e-14)


def test_weakcon_zero_weights_zero_loss():
    rng = np.random.default_rng(4)
    queries, positive_sets, _, queue = random_instance(rng, batch=2)
    w = np.zeros((2, len(queue)))
    loss = C.weakcon_loss(queries, positive_sets, w, queue)
    # with a multi-element positive set the ratio is still 1
    assert loss == pytest.approx(0.0, abs=1e-14)


# --- oracle equivalence ---------------------------------------------------------

@pytest.mark.parametrize("tau", [1.0, 0.07])
def test_moco_matches_oracle(tau):
    rng = np.random.default_rng(10)
    for _ in range(20):
        batch = int(rng.integers(1, 5))
        dim = int(rng.integers(2, 9))
        qlen = int(rng.integers(0, 17))
        queries = rng.normal(size=(batch, dim))
        positives = rng.normal(size=(batch, dim))
        negatives = rng.normal(size=(qlen, dim))
        queue = make_queue(negatives)
        ours = C.moco_loss(queries, positives, queue, tau=tau)
        ref = moco_naive(queries, positives, negatives, tau)
        assert ours == pytest.approx(ref, abs=1e-12)


@pytest.mark.parametrize("tau", [1.0, 0.07])
def test_multi_matches_oracle(tau):
    rng = np.random.default_rng(11)
    for _ in range(20):
        batch = int(rng.integers(1, 5))
        queries, positive_sets, negatives, queue = random_instance(
            rng, batch=batch, dim=int(rng.integers(2, 9)),
            queue_len=int(rng.integers(0, 17)), max_pos=4)
        ours = C.moco_multi_loss(queries, positive_sets, queue, tau=tau)
        ref = moco_multi_naive(queries, positive_sets, negatives, tau)
        assert ours == pytest.approx(ref, abs=1e-12)


@pytest.mark.parametrize("tau", [1.0, 0.07])
def test_supmoco_matches_oracle(tau):
    rng = np.random.default_rng(12)
    for _ in range(20):
        batch = int(rng.integers(1, 5))
        qlen = int(rng.integers(0, 17))
        queries, positive_sets, negatives, _ = random_instance(
            rng, batch=batch, dim=5, queue_len=qlen, max_pos=4)
        neg_labels = rng.integers(0, 3, size=qlen).tolist()
        labels = rng.integers(0, 3, size=batch).tolist()
        queue = make_queue(negatives, labels=neg_labels)
        ours = C.supmoco_loss(queries, positive_sets, labels, queue, tau=tau)
        ref = supmoco_naive(queries, positive_sets, labels,
                            negatives, neg_labels, tau)
        assert ours == pytest.approx(ref, abs=1e-12)


@pytest.mark.parametrize("tau", [1.0, 0.07])
def test_weakcon_matches_oracle(tau):
    rng = np.random.default_rng(13)
    for _ in range(20):
        batch = int(rng.integers(1, 5))
        qlen = int(rng.integers(0, 17))
        queries, positive_sets, negatives, queue = random_instance(
            rng, batch=batch, dim=6, queue_len=qlen, max_pos=4)
        w = rng.uniform(size=(batch, qlen))
        ours = C.weakcon_loss(queries, positive_sets, w, queue, tau=tau)
        ref = weakcon_naive(queries, positive_sets, w, negatives, tau)
        assert ours == pytest.approx(ref, abs=1e-12)


# --- structural properties ------------------------------------------------------

def test_losses_non_negative():
    rng = np.random.default_rng(20)
    for _ in range(10):
        queries, positive_sets, negatives, queue = random_instance(
            rng, batch=3, queue_len=8, labelled=True)
        w = rng.uniform(size=(3, 8))
        labels = rng.integers(0, 3, size=3).tolist()
        singles = [ps[0] for ps in positive_sets]
        assert C.moco_loss(queries, singles, queue) >= -1e-15
        assert C.moco_multi_loss(queries, positive_sets, queue) >= -1e-15
        assert C.supmoco_loss(queries, positive_sets, labels, queue) >= -1e-15
        assert C.weakcon_loss(queries, positive_sets, w, queue) >= -1e-15


def test_extra_negative_never_decreases_moco():
    rng = np.random.default_rng(21)
    queries = rng.normal(size=(2, 6))
    positives = rng.normal(size=(2, 6))
    negatives = list(rng.normal(size=(5, 6)))
    base = C.moco_loss(queries, positives, make_queue(negatives))
    for _ in range(20):
        extra = negatives + [rng.normal(size=6)]
        grown = C.moco_loss(queries, positives, make_queue(extra))
        assert grown >= base - 1e-15


def test_temperature_equivariance():
    # scaling all similarities by c == evaluating at tau / c
    rng = np.random.default_rng(22)
    queries = rng.normal(size=(2, 6))
    positives = rng.normal(size=(2, 6))
    negatives = rng.normal(size=(5, 6))
    tau, c = 0.5, 3.0

    def scaled_naive():
        total = 0.0
        for q, k in zip(queries, positives):
            qn, kn = unit(q), unit(k)
            num = math.exp(c * float(qn @ kn) / tau)
            den = num
            for n in negatives:
                den += math.exp(c * float(qn @ unit(n)) / tau)
            total += -math.log(num / den)
        return total / len(queries)

    ours = C.moco_loss(queries, positives, make_queue(negatives), tau=tau / c)
    assert ours == pytest.approx(scaled_naive(), abs=1e-12)


def test_queue_permutation_invariance():
    rng = np.random.default_rng(23)
    queries, positive_sets, negatives, _ = random_instance(
        rng, batch=2, queue_len=9)
    labels = [0, 1]
    neg_labels = rng.integers(0, 2, size=9).tolist()
    w = rng.uniform(size=(2, 9))
    perm = rng.permutation(9)

    q1 = make_queue(negatives, labels=neg_labels)
    q2 = make_queue(negatives[perm], labels=[neg_labels[i] for i in perm])
    singles = [ps[0] for ps in positive_sets]

    assert C.moco_loss(queries, singles, q1) == pytest.approx(
        C.moco_loss(queries, singles, q2), abs=1e-14)
    assert C.supmoco_loss(queries, positive_sets, labels, q1) == pytest.approx(
        C.supmoco_loss(queries, positive_sets, labels, q2), abs=1e-14)
    assert C.weakcon_loss(queries, positive_sets, w, q1) == pytest.approx(
        C.weakcon_loss(queries, positive_sets, w[:, perm], q2), abs=1e-14)


def test_loss_handles_extreme_logits_without_overflow():
    # tau small enough that unshifted exponentials would overflow
    q = np.array([1.0, 0.0])
    queue = make_queue([np.array([1.0, 0.0]), np.array([-1.0, 0.0])])
    loss = C.moco_loss([q], [q], queue, tau=1e-3)
    assert np.isfinite(loss)
    assert loss == pytest.approx(math.log(2.0), abs=1e-9)


# --- queue behaviour ------------------------------------------------------------

def test_queue_fifo_eviction():
    queue = C.NegativeQueue(capacity=4)
    vecs = [unit(np.array([1.0, float(i)])) for i in range(5)]
    C.queue_push(queue, vecs)
    assert len(queue) == 4
    stored = queue.embeddings()
    assert np.allclose(stored, np.stack(vecs[1:]))


def test_queue_preserves_order():
    queue = C.NegativeQueue(capacity=10)
    vecs = [unit(np.array([float(i + 1), 1.0])) for i in range(6)]
    queue.push(vecs[:3]).push(vecs[3:])
    assert np.allclose(queue.embeddings(), np.stack(vecs))


def test_queue_matches_list_oracle():
    rng = np.random.default_rng(30)
    cap = 7
    queue = C.NegativeQueue(capacity=cap)
    reference = []
    for _ in range(40):
        burst = [unit(rng.normal(size=3)) for _ in range(int(rng.integers(1, 4)))]
        queue.push(burst)
        for v in burst:
            reference.append(v)
            if len(reference) > cap:
                reference.pop(0)
        assert np.allclose(queue.embeddings(), np.stack(reference))


def test_queue_rejects_non_unit_entries():
    queue = C.NegativeQueue(capacity=4)
    with pytest.raises(ValueError, match="unit-norm"):
        queue.push([np.array([1.0, 1.0])])
    with pytest.raises(ValueError, match="unit-norm"):
        C.QueueEntry(embedding=np.array([2.0, 0.0]))
    with pytest.raises(ValueError, match="1-D"):
        C.QueueEntry(embedding=np.eye(2))


def test_queue_entry_annotations():
    entry = C.QueueEntry(embedding=np.array([0.0, 1.0]), label=3,
                         degvec=np.array([0.1] * 6))
    queue = C.NegativeQueue(capacity=2)
    queue.push([entry])
    assert queue.labels() == [3]
    assert queue.entries[0].degvec.shape == (6,)


def test_empty_queue_embeddings_shape():
    assert C.NegativeQueue().embeddings().shape == (0, 0)


# --- momentum update ------------------------------------------------------------

def test_momentum_zero_copies_query():
    q = np.array([1.0, -2.0, 3.0])
    k = np.array([0.0, 0.0, 0.0])
    assert np.array_equal(C.momentum_update(q, k, m=0.0), q)


def test_momentum_fixed_point():
    q = np.array([0.5, 0.5])
    assert np.array_equal(C.momentum_update(q, q.copy(), m=0.999), q)


def test_momentum_geometric_contraction():
    rng = np.random.default_rng(40)
    q = rng.normal(size=16)
    k = rng.normal(size=16)
    initial = np.linalg.norm(k - q)
    for n in (1, 10, 50):
        cur = k.copy()
        for _ in range(n):
            cur = C.momentum_update(q, cur, m=0.999)
        assert np.linalg.norm(cur - q) == pytest.approx(
            initial * 0.999 ** n, abs=1e-10)


def test_momentum_validation():
    with pytest.raises(ValueError, match="mismatch"):
        C.momentum_update(np.zeros(3), np.zeros(4), m=0.5)
    with pytest.raises(ValueError, match="momentum"):
        C.momentum_update(np.zeros(3), np.zeros(3), m=1.0)


def test_loss_config_validation():
    cfg = C.LossConfig()
    assert cfg.temperature == 0.07 and cfg.momentum == 0.999
    with pytest.raises(ValueError, match="temperature"):
        C.LossConfig(temperature=0.0)
    with pytest.raises(ValueError, match="momentum"):
        C.LossConfig(momentum=1.0)


# --- gradients -------------------------------------------------------------------

def _rel_err(analytic, numeric):
    scale = max(float(np.max(np.abs(numeric))), 1e-10)
    return float(np.max(np.abs(analytic - numeric))) / scale


def test_moco_gradient_finite_differences():
    rng = np.random.default_rng(50)
    for _ in range(5):
        queries = rng.normal(size=(2, 6))
        positives = rng.normal(size=(2, 6))
        queue = make_queue(rng.normal(size=(5, 6)))
        loss, grad = C.moco_loss_gradient(queries, positives, queue, tau=0.07)
        assert loss == pytest.approx(C.moco_loss(queries, positives, queue))
        fd = fd_gradient(lambda x: C.moco_loss(x, positives, queue, tau=0.07),
                         queries)
        assert _rel_err(grad, fd) < 1e-4


def test_multi_gradient_finite_differences():
    rng = np.random.default_rng(51)
    queries, positive_sets, _, queue = random_instance(rng, batch=2, dim=6)
    loss, grad = C.moco_multi_loss_gradient(queries, positive_sets, queue,
                                            tau=0.07)
    fd = fd_gradient(
        lambda x: C.moco_multi_loss(x, positive_sets, queue, tau=0.07), queries)
    assert _rel_err(grad, fd) < 1e-4


def test_supmoco_gradient_finite_differences():
    rng = np.random.default_rng(52)
    queries, positive_sets, negatives, _ = random_instance(
        rng, batch=2, dim=6, queue_len=6)
    neg_labels = rng.integers(0, 2, size=6).tolist()
    queue = make_queue(negatives, labels=neg_labels)
    labels = [0, 1]
    loss, grad = C.supmoco_loss_gradient(queries, positive_sets, labels,
                                         queue, tau=0.07)
    fd = fd_gradient(
        lambda x: C.supmoco_loss(x, positive_sets, labels, queue, tau=0.07),
        queries)
    assert _rel_err(grad, fd) < 1e-4


def test_weakcon_gradient_finite_differences():
    rng = np.random.default_rng(53)
    queries, positive_sets, _, queue = random_instance(
        rng, batch=2, dim=6, queue_len=7)
    w = rng.uniform(size=(2, 7))
    loss, grad = C.weakcon_loss_gradient(queries, positive_sets, w, queue,
                                         tau=0.07)
    fd = fd_gradient(
        lambda x: C.weakcon_loss(x, positive_sets, w, queue, tau=0.07), queries)
    assert _rel_err(grad, fd) < 1e-4


def test_moco_gradient_vanishes_at_minimum():
    q = np.array([0.6, -0.8, 0.0])
    queue = C.NegativeQueue()
    loss, grad = C.moco_loss_gradient([q], [q], queue)
    assert loss == pytest.approx(0.0, abs=1e-15)
    assert np.linalg.norm(grad) < 1e-8


def test_weakcon_gradient_zero_weights():
    rng = np.random.default_rng(54)
    queries, positive_sets, _, queue = random_instance(rng, batch=2, queue_len=5)
    w = np.zeros((2, 5))
    _, grad = C.weakcon_loss_gradient(queries, positive_sets, w, queue)
    assert np.linalg.norm(grad) < 1e-14


# --- validation ------------------------------------------------------------------

def test_loss_input_validation():
    queue = C.NegativeQueue()
    q = [np.array([1.0, 0.0])]
    with pytest.raises(ValueError, match="queries but"):
        C.moco_loss(np.ones((2, 2)), np.ones((3, 2)), queue)
    with pytest.raises(ValueError, match="temperature"):
        C.moco_loss(q, q, queue, tau=0.0)
    with pytest.raises(ValueError, match="empty positive set"):
        C.moco_multi_loss(q, [[]], queue)
    with pytest.raises(ValueError, match="labels"):
        C.supmoco_loss(q, [q], [0, 1], queue)
    with pytest.raises(ValueError, match="weights shape"):
        C.weakcon_loss(q, [q], np.ones((1, 3)), queue)


def test_supmoco_rejects_unlabeled_queue():
    queue = make_queue([np.array([0.0, 1.0])])  # labels default to None
    with pytest.raises(ValueError, match="unlabeled"):
        C.supmoco_loss([np.array([1.0, 0.0])], [[np.array([1.0, 0.0])]],
                       [0], queue)


def test_weakcon_rejects_out_of_range_weights():
    queue = make_queue([np.array([0.0, 1.0])])
    q = [np.array([1.0, 0.0])]
    with pytest.raises(ValueError, match=r"outside \[0, 1\]"):
        C.weakcon_loss(q, [q], [[1.5]], queue)


def test_queue_dim_mismatch():
    queue = make_queue([np.array([0.0, 1.0, 0.0])])
    with pytest.raises(ValueError, match="dim"):
        C.moco_loss([np.array([1.0, 0.0])], [np.array([1.0, 0.0])], queue)


def test_normalize_rejects_zero():
    with pytest.raises(ValueError, match="zero vector"):
        C.normalize(np.zeros(4))


# --- encoder stub ----------------------------------------------------------------

def test_random_projection_encoder():
    enc = C.random_projection_encoder(dim=32, seed=5)
    patch = np.random.default_rng(0).uniform(size=(8, 8, 3))
    a = enc(patch)
    b = enc(patch)
    assert a.shape == (32,)
    assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-12)
    assert np.array_equal(a, b)
    other = enc(patch + 0.01)
    assert not np.allclose(a, other)
    black = enc(np.zeros((8, 8, 3)))
    assert np.linalg.norm(black) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError, match="empty"):
        enc(np.zeros((0, 3)))
