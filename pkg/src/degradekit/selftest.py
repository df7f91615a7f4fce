"""Built-in consistency checks runnable from an installed copy.

Every check recomputes its expected value from scratch (naive loops, finite
differences, closed-form statistics) so the suite does not depend on the test
tree shipping with the package.  ``run_selftest`` returns a JSON-friendly
report; the CLI ``selftest`` subcommand prints it.
"""

from __future__ import annotations

import math

import numpy as np

from . import contrastive as C
from . import insertion as I
from . import metadata as M
from .degrade import add_gaussian_noise, add_poisson_noise
from .kernels import (
    ANISO_SHAPES,
    KernelShape,
    sample_kernel_spec,
    synthesize_kernel,
)

_LOSS_TOL = 1e-12
_GRAD_TOL = 1e-4


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _naive_moco(queries, keys, negatives, tau):
    total = 0.0
    for q, k in zip(queries, keys):
        logits = [float(q @ k) / tau] + [float(q @ n) / tau for n in negatives]
        total += -logits[0] + math.log(sum(math.exp(l) for l in logits))
    return total / len(queries)


def _naive_multi(queries, positive_sets, negatives, tau):
    total = 0.0
    for q, pos in zip(queries, positive_sets):
        num = sum(math.exp(float(q @ p) / tau) for p in pos)
        den = num + sum(math.exp(float(q @ n) / tau) for n in negatives)
        total += -math.log(num / den) / len(pos)
    return total / len(queries)


def _naive_supmoco(queries, positive_sets, labels, negatives, neg_labels, tau):
    total = 0.0
    for q, pos, lab in zip(queries, positive_sets, labels):
        num = sum(math.exp(float(q @ p) / tau) for p in pos)
        den = num
        matched = 0
        for n, nl in zip(negatives, neg_labels):
            e = math.exp(float(q @ n) / tau)
            den += e
            if nl == lab:
                num += e
                matched += 1
        total += -math.log(num / den) / (len(pos) + matched)
    return total / len(queries)


def _naive_weakcon(queries, positive_sets, negatives, weights, tau):
    total = 0.0
    for i, (q, pos) in enumerate(zip(queries, positive_sets)):
        num = sum(math.exp(float(q @ p) / tau) for p in pos)
        den = num + sum(float(w) * math.exp(float(q @ n) / tau)
                        for n, w in zip(negatives, weights[i]))
        total += -math.log(num / den) / len(pos)
    return total / len(queries)


def _fd_gradient(func, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        hi = x.copy()
        lo = x.copy()
        hi[idx] += h
        lo[idx] -= h
        grad[idx] = (func(hi) - func(lo)) / (2.0 * h)
        it.iternext()
    return grad


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-30)
    return float(np.linalg.norm(a - b) / denom)


def _loss_instance(rng: np.random.Generator, dim: int = 8, batch: int = 3,
                   pos: int = 2, queue_len: int = 5):
    queries = rng.normal(size=(batch, dim))
    positives = [np.stack([_unit(rng.normal(size=dim)) for _ in range(pos)])
                 for _ in range(batch)]
    negatives = np.stack([_unit(rng.normal(size=dim)) for _ in range(queue_len)])
    labels = rng.integers(0, 3, size=batch)
    neg_labels = rng.integers(0, 3, size=queue_len)
    weights = rng.uniform(size=(batch, queue_len))
    queue = C.NegativeQueue(capacity=queue_len).push(
        [C.QueueEntry(embedding=n, label=int(nl))
         for n, nl in zip(negatives, neg_labels)])
    return queries, positives, negatives, labels, neg_labels, weights, queue


def _check_losses(rng: np.random.Generator) -> list[dict]:
    checks = []
    worst = {"moco": 0.0, "moco_multi": 0.0, "supmoco": 0.0, "weakcon": 0.0}
    for _ in range(8):
        q, pos, neg, lab, nlab, w, queue = _loss_instance(rng)
        qn = np.stack([_unit(v) for v in q])
        keys = np.stack([p[0] for p in pos])
        tau = C.TEMPERATURE

        got = C.moco_loss(q, keys, queue, tau=tau)
        worst["moco"] = max(worst["moco"], abs(got - _naive_moco(qn, keys, neg, tau)))

        got = C.moco_multi_loss(q, pos, queue, tau=tau)
        worst["moco_multi"] = max(
            worst["moco_multi"], abs(got - _naive_multi(qn, pos, neg, tau)))

        got = C.supmoco_loss(q, pos, lab, queue, tau=tau)
        worst["supmoco"] = max(
            worst["supmoco"], abs(got - _naive_supmoco(qn, pos, lab, neg, nlab, tau)))

        got = C.weakcon_loss(q, pos, w, queue, tau=tau)
        worst["weakcon"] = max(
            worst["weakcon"], abs(got - _naive_weakcon(qn, pos, neg, w, tau)))
    for name, err in worst.items():
        checks.append({
            "name": f"loss_oracle_{name}",
            "passed": bool(err < _LOSS_TOL),
            "detail": f"max |loss - naive| = {err:.3e} (tol {_LOSS_TOL:g})",
        })
    return checks


def _check_loss_gradients(rng: np.random.Generator) -> list[dict]:
    q, pos, neg, lab, nlab, w, queue = _loss_instance(rng)
    keys = np.stack([p[0] for p in pos])
    cases = {
        "moco": (
            lambda x: C.moco_loss(x, keys, queue),
            C.moco_loss_gradient(q, keys, queue)[1],
        ),
        "moco_multi": (
            lambda x: C.moco_multi_loss(x, pos, queue),
            C.moco_multi_loss_gradient(q, pos, queue)[1],
        ),
        "supmoco": (
            lambda x: C.supmoco_loss(x, pos, lab, queue),
            C.supmoco_loss_gradient(q, pos, lab, queue)[1],
        ),
        "weakcon": (
            lambda x: C.weakcon_loss(x, pos, w, queue),
            C.weakcon_loss_gradient(q, pos, w, queue)[1],
        ),
    }
    checks = []
    for name, (func, analytic) in cases.items():
        err = _rel_err(analytic, _fd_gradient(func, q))
        checks.append({
            "name": f"gradient_{name}",
            "passed": bool(err < _GRAD_TOL),
            "detail": f"finite-difference rel err = {err:.3e} (tol {_GRAD_TOL:g})",
        })
    return checks


def _check_block_gradients(rng: np.random.Generator) -> list[dict]:
    checks = []
    f = rng.normal(size=(4, 5, 5))
    v = rng.normal(size=3)
    cot = rng.normal(size=(4, 5, 5))

    w = I.ma_init(meta_dim=3, channels=4, seed=5)
    grad_f, grad_v = I.ma_backward(f, v, w, cot)
    err_f = _rel_err(grad_f, _fd_gradient(
        lambda x: float(np.sum(I.ma_forward(x, v, w) * cot)), f))
    err_v = _rel_err(grad_v, _fd_gradient(
        lambda x: float(np.sum(I.ma_forward(f, x, w) * cot)), v))
    checks.append({
        "name": "gradient_ma_block",
        "passed": bool(err_f < _GRAD_TOL and err_v < _GRAD_TOL),
        "detail": f"rel err features {err_f:.3e}, meta {err_v:.3e} (tol {_GRAD_TOL:g})",
    })

    w = I.dgfmb_init(meta_dim=3, channels=4, seed=6)
    grad_f, grad_v = I.dgfmb_backward(f, v, w, cot)
    err_f = _rel_err(grad_f, _fd_gradient(
        lambda x: float(np.sum(I.dgfmb_forward(x, v, w) * cot)), f))
    err_v = _rel_err(grad_v, _fd_gradient(
        lambda x: float(np.sum(I.dgfmb_forward(f, x, w) * cot)), v))
    checks.append({
        "name": "gradient_dgfmb_block",
        "passed": bool(err_f < _GRAD_TOL and err_v < _GRAD_TOL),
        "detail": f"rel err features {err_f:.3e}, meta {err_v:.3e} (tol {_GRAD_TOL:g})",
    })
    return checks


def _check_kernels(rng: np.random.Generator) -> list[dict]:
    seen: set[KernelShape] = set()
    worst_sum = 0.0
    worst_sym = 0.0
    min_weight = np.inf
    for _ in range(80):
        spec = sample_kernel_spec(rng, "complex")
        seen.add(spec.shape)
        k = synthesize_kernel(spec).weights
        worst_sum = max(worst_sum, abs(float(k.sum()) - 1.0))
        min_weight = min(min_weight, float(k.min()))
        if spec.shape not in ANISO_SHAPES:
            worst_sym = max(worst_sym, float(np.abs(k - k[::-1, ::-1]).max()))
    for _ in range(20):
        spec = sample_kernel_spec(rng, "simple")
        k = synthesize_kernel(spec).weights
        worst_sum = max(worst_sum, abs(float(k.sum()) - 1.0))
        min_weight = min(min_weight, float(k.min()))
    return [
        {
            "name": "kernel_mass",
            "passed": bool(worst_sum < 1e-6),
            "detail": f"max |sum - 1| over 100 draws = {worst_sum:.3e} (tol 1e-06)",
        },
        {
            "name": "kernel_nonnegative",
            "passed": bool(min_weight >= 0.0),
            "detail": f"min weight over 100 draws = {min_weight:.3e}",
        },
        {
            "name": "kernel_point_symmetry",
            "passed": bool(worst_sym < 1e-10),
            "detail": f"max |k - flip(k)| for non-anisotropic draws = {worst_sym:.3e}",
        },
        {
            "name": "kernel_family_coverage",
            "passed": bool(len(seen) == 7),
            "detail": f"complex sampler hit {len(seen)}/7 families in 80 draws",
        },
    ]


def _check_noise(rng: np.random.Generator) -> list[dict]:
    checks = []
    base = np.full((64, 64, 3), 0.5, dtype=np.float64)
    sigma = 20.0
    noisy = add_gaussian_noise(base, sigma, grey=False, rng=rng)
    got = float((noisy - base).std())
    want = sigma / 255.0
    err = abs(got - want) / want
    checks.append({
        "name": "noise_gaussian_std",
        "passed": bool(err < 0.03),
        "detail": f"sample std {got:.5f} vs {want:.5f} (rel err {err:.3f}, tol 0.03)",
    })

    grey = add_gaussian_noise(base, sigma, grey=True, rng=rng)
    delta = grey - base
    plane_err = float(max(np.abs(delta[..., 0] - delta[..., 1]).max(),
                          np.abs(delta[..., 0] - delta[..., 2]).max()))
    checks.append({
        "name": "noise_gaussian_grey_shared_plane",
        "passed": bool(plane_err < 1e-12),
        "detail": f"max channel disagreement {plane_err:.3e}",
    })

    black = np.zeros((16, 16, 3), dtype=np.float64)
    out = add_poisson_noise(black, 1.0, grey=False, rng=rng)
    checks.append({
        "name": "noise_poisson_black_fixed_point",
        "passed": bool(np.array_equal(out, black)),
        "detail": f"max |output| on black input = {float(np.abs(out).max()):.3e}",
    })

    mid = M.SimpleSigmaMeta(0.5)
    draws = np.array([M.corrupt_sigma(mid, rng).value for _ in range(10000)])
    got = float(draws.std())
    err = abs(got - 0.1) / 0.1
    checks.append({
        "name": "noise_sigma_corruption_std",
        "passed": bool(err < 0.03),
        "detail": f"sample std {got:.5f} vs 0.10000 (rel err {err:.3f}, tol 0.03)",
    })
    return checks


def run_selftest(seed: int = 0) -> dict:
    """Run every built-in check; returns {"passed", "seed", "checks"}."""
    rng = np.random.default_rng([int(seed), 0xDE6])
    checks: list[dict] = []
    checks.extend(_check_kernels(rng))
    checks.extend(_check_losses(rng))
    checks.extend(_check_loss_gradients(rng))
    checks.extend(_check_block_gradients(rng))
    checks.extend(_check_noise(rng))
    return {
        "passed": bool(all(c["passed"] for c in checks)),
        "seed": int(seed),
        "checks": checks,
    }
