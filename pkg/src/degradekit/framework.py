"""Predictor/restorer composition: the prediction-feeds-insertion contract.

A Predictor is any callable (lr, sr_feedback=None) -> 1-D metadata vector
whose length stays fixed; a restorer is any callable (lr, vector) -> image.
This module ships ground-truth (oracle) predictors in the three vector
formats, a noise-corrupted variant, restorer stubs, and the fixed-count
iterative loop that alternates the two while recording the prediction
trace.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import degrade, kernels, metadata

ORACLE_FORMATS = ("sigma", "pca", "complex15")


def _oracle_vector(record, fmt: str, basis) -> np.ndarray:
    if fmt == "sigma":
        return np.array([metadata.encode_simple(record).value])
    if fmt == "complex15":
        return metadata.encode_complex(record)
    if fmt == "pca":
        if basis is None:
            raise ValueError("pca format needs a fitted basis")
        if record.kernel_spec is None:
            raise ValueError("record has no blur kernel to project")
        kernel = kernels.synthesize_kernel(record.kernel_spec)
        return kernels.project_kernel(basis, kernel)
    raise ValueError(f"unknown format {fmt!r}; expected one of {ORACLE_FORMATS}")


def oracle_predictor(record: degrade.DegradationRecord, fmt: str,
                     basis: kernels.PcaBasis | None = None):
    """A predictor that ignores its inputs and returns the ground truth."""
    truth = _oracle_vector(record, fmt, basis)

    def predict(lr, sr_feedback=None) -> np.ndarray:
        return truth.copy()

    return predict


def noisy_oracle_predictor(record: degrade.DegradationRecord, fmt: str,
                           std: float = 0.1,
                           rng: np.random.Generator | None = None,
                           basis: kernels.PcaBasis | None = None):
    """Oracle output plus elementwise N(0, std^2), clamped to [0, 1].

    The corruption is drawn once at construction so repeated calls (and
    loop iterations) see one consistent noisy estimate.
    """
    if rng is None:
        rng = np.random.default_rng()
    truth = _oracle_vector(record, fmt, basis)
    noisy = truth + rng.normal(0.0, std, size=truth.shape) if std else truth
    noisy = np.clip(noisy, 0.0, 1.0)

    def predict(lr, sr_feedback=None) -> np.ndarray:
        return noisy.copy()

    return predict


def identity_restorer(lr: np.ndarray, vector: np.ndarray) -> np.ndarray:
    return np.asarray(lr, dtype=np.float64).copy()


def bicubic_restorer(scale: int = degrade.SCALE):
    """An upsample-only restorer stub that ignores the metadata vector."""

    def restore(lr: np.ndarray, vector: np.ndarray) -> np.ndarray:
        return degrade.upsample_bicubic(lr, scale)

    return restore


@dataclass(frozen=True)
class IterativeLoopConfig:
    iterations: int = 4

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations {self.iterations} must be >= 1")


def run_iterative(lr: np.ndarray, predictor, restorer,
                  config: IterativeLoopConfig = IterativeLoopConfig()):
    """Alternate predictor -> restorer, feeding each output back.

    Returns (final SR image, list of per-iteration prediction vectors).
    The restorer must keep its output shape stable across iterations.
    """
    lr = np.asarray(lr, dtype=np.float64)
    sr = None
    trace = []
    for _ in range(config.iterations):
        vector = np.asarray(predictor(lr, sr), dtype=np.float64)
        if vector.ndim != 1:
            raise ValueError(f"predictor returned shape {vector.shape}, not 1-D")
        if trace and vector.shape != trace[0].shape:
            raise ValueError(
                f"predictor output length changed: {trace[0].shape} -> "
                f"{vector.shape}")
        out = np.asarray(restorer(lr, vector), dtype=np.float64)
        if sr is not None and out.shape != sr.shape:
            raise ValueError(
                f"restorer output shape changed: {sr.shape} -> {out.shape}")
        sr = out
        trace.append(vector)
    return sr, trace
