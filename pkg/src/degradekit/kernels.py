"""Blur kernel synthesis, sampling and PCA encoding.

Seven kernel families are supported: isotropic/anisotropic Gaussian,
isotropic/anisotropic generalized Gaussian, isotropic/anisotropic plateau,
and circular sinc. All kernels are evaluated on a centered integer grid,
clamped non-negative and normalized to unit sum.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

SIGMA_RANGE = (0.2, 3.0)
THETA_RANGE = (-math.pi, math.pi)
BETA_RANGE = (0.5, 8.0)
CUTOFF_RANGE = (math.pi / 5.0, math.pi)

PCA_COMPONENTS = 10
PCA_FIT_COUNT = 10000
PCA_FIT_SEED = 0


class KernelShape(str, Enum):
    ISO_GAUSSIAN = "iso_gaussian"
    ANISO_GAUSSIAN = "aniso_gaussian"
    ISO_GEN_GAUSSIAN = "iso_gen_gaussian"
    ANISO_GEN_GAUSSIAN = "aniso_gen_gaussian"
    ISO_PLATEAU = "iso_plateau"
    ANISO_PLATEAU = "aniso_plateau"
    SINC = "sinc"


ISO_SHAPES = frozenset(
    {KernelShape.ISO_GAUSSIAN, KernelShape.ISO_GEN_GAUSSIAN, KernelShape.ISO_PLATEAU}
)
ANISO_SHAPES = frozenset(
    {
        KernelShape.ANISO_GAUSSIAN,
        KernelShape.ANISO_GEN_GAUSSIAN,
        KernelShape.ANISO_PLATEAU,
    }
)
# Shapes whose density uses the beta exponent.
BETA_SHAPES = frozenset(
    {
        KernelShape.ISO_GEN_GAUSSIAN,
        KernelShape.ANISO_GEN_GAUSSIAN,
        KernelShape.ISO_PLATEAU,
        KernelShape.ANISO_PLATEAU,
    }
)


def _check_range(name: str, value: float, lo: float, hi: float) -> None:
    if not (lo <= value <= hi):
        raise ValueError(f"{name}={value!r} outside [{lo:.6g}, {hi:.6g}]")


@dataclass(frozen=True)
class BlurKernelSpec:
    """Parameters of one blur kernel.

    For isotropic shapes sigma_y mirrors sigma_x and theta is inert; beta is
    only meaningful for the generalized Gaussian and plateau families, cutoff
    only for sinc. Inert fields keep their defaults.
    """

    shape: KernelShape
    sigma_x: float = 1.0
    sigma_y: float | None = None
    theta: float = 0.0
    beta: float = 1.0
    cutoff: float | None = None
    size: int = 21

    def __post_init__(self):
        shape = KernelShape(self.shape)
        object.__setattr__(self, "shape", shape)
        if self.sigma_y is None:
            object.__setattr__(self, "sigma_y", self.sigma_x)
        if shape in ISO_SHAPES and self.sigma_y != self.sigma_x:
            raise ValueError(
                f"sigma_y={self.sigma_y!r} must equal sigma_x for isotropic shapes"
            )
        if shape is KernelShape.SINC:
            if self.cutoff is None:
                raise ValueError("cutoff required for sinc kernels")
        self.validate()

    def validate(self) -> None:
        if self.size < 3 or self.size % 2 == 0:
            raise ValueError(f"size={self.size!r} must be odd and >= 3")
        if self.shape is not KernelShape.SINC:
            _check_range("sigma_x", self.sigma_x, *SIGMA_RANGE)
            _check_range("sigma_y", self.sigma_y, *SIGMA_RANGE)
            _check_range("theta", self.theta, *THETA_RANGE)
        if self.shape in BETA_SHAPES:
            _check_range("beta", self.beta, *BETA_RANGE)
        if self.shape is KernelShape.SINC:
            _check_range("cutoff", self.cutoff, *CUTOFF_RANGE)

    def to_dict(self) -> dict:
        d = {
            "shape": self.shape.value,
            "sigma_x": self.sigma_x,
            "sigma_y": self.sigma_y,
            "theta": self.theta,
            "size": self.size,
        }
        if self.shape in BETA_SHAPES:
            d["beta"] = self.beta
        if self.shape is KernelShape.SINC:
            d["cutoff"] = self.cutoff
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BlurKernelSpec":
        return cls(
            shape=KernelShape(d["shape"]),
            sigma_x=d.get("sigma_x", 1.0),
            sigma_y=d.get("sigma_y"),
            theta=d.get("theta", 0.0),
            beta=d.get("beta", 1.0),
            cutoff=d.get("cutoff"),
            size=d.get("size", 21),
        )


@dataclass(frozen=True)
class Kernel2D:
    """A size x size non-negative blur kernel with unit sum."""

    size: int
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        if w.shape != (self.size, self.size):
            raise ValueError(f"weights shape {w.shape} != ({self.size}, {self.size})")
        if np.any(w < 0):
            raise ValueError("kernel weights must be non-negative")
        s = float(w.sum())
        if abs(s - 1.0) > 1e-6:
            raise ValueError(f"kernel sum {s!r} not within 1e-6 of 1")

    def to_json(self) -> str:
        return json.dumps({"size": self.size, "weights": self.weights.ravel().tolist()})

    @classmethod
    def from_json(cls, text: str) -> "Kernel2D":
        d = json.loads(text)
        size = int(d["size"])
        w = np.asarray(d["weights"], dtype=np.float64).reshape(size, size)
        return cls(size=size, weights=w)


def _j1(x: np.ndarray) -> np.ndarray:
    """Bessel function of the first kind, order 1.

    Rational approximation below |x| = 8 and asymptotic expansion above,
    accurate to ~5e-9 in absolute terms over the arguments a sinc kernel of
    practical size can produce.
    """
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    out = np.empty_like(ax)

    small = ax < 8.0
    xs = x[small]
    y = xs * xs
    num = xs * (
        72362614232.0
        + y
        * (
            -7895059235.0
            + y
            * (
                242396853.1
                + y * (-2972611.439 + y * (15704.48260 + y * (-30.16036606)))
            )
        )
    )
    den = 144725228442.0 + y * (
        2300535178.0
        + y * (18583304.74 + y * (99447.43394 + y * (376.9991397 + y)))
    )
    out[small] = num / den

    ab = ax[~small]
    z = 8.0 / ab
    y = z * z
    xx = ab - 2.356194491
    p1 = 1.0 + y * (
        0.183105e-2
        + y * (-0.3516396496e-4 + y * (0.2457520174e-5 + y * (-0.240337019e-6)))
    )
    p2 = 0.04687499995 + y * (
        -0.2002690873e-3
        + y * (0.8449199096e-5 + y * (-0.88228987e-6 + y * 0.105787412e-6))
    )
    out[~small] = (
        np.sqrt(0.636619772 / ab)
        * (np.cos(xx) * p1 - z * np.sin(xx) * p2)
        * np.sign(x[~small])
    )
    return out


def _offset_grid(size: int):
    ax = np.arange(size, dtype=np.float64) - size // 2
    return np.meshgrid(ax, ax)  # xx horizontal, yy vertical


def _quad_form(spec: BlurKernelSpec, xx: np.ndarray, yy: np.ndarray) -> np.ndarray:
    # Sigma = U diag(sx^2, sy^2) U^T, q = x^T Sigma^-1 x on the offset grid.
    c, s = math.cos(spec.theta), math.sin(spec.theta)
    rot = np.array([[c, -s], [s, c]])
    cov = rot @ np.diag([spec.sigma_x**2, spec.sigma_y**2]) @ rot.T
    inv = np.linalg.inv(cov)
    return inv[0, 0] * xx * xx + 2.0 * inv[0, 1] * xx * yy + inv[1, 1] * yy * yy


def synthesize_kernel(spec: BlurKernelSpec) -> Kernel2D:
    """Evaluate the kernel density for `spec` on its integer grid.

    Returns a sum-normalized Kernel2D. Sinc lobes that go negative are
    clamped to zero before normalization so all kernels share one contract.
    """
    spec.validate()
    xx, yy = _offset_grid(spec.size)

    if spec.shape is KernelShape.SINC:
        r = np.sqrt(xx * xx + yy * yy)
        wc = spec.cutoff
        with np.errstate(divide="ignore", invalid="ignore"):
            w = wc * _j1(wc * r) / (2.0 * math.pi * r)
        w[spec.size // 2, spec.size // 2] = wc * wc / (4.0 * math.pi)
        w = np.maximum(w, 0.0)
    else:
        q = _quad_form(spec, xx, yy)
        if spec.shape in (KernelShape.ISO_GAUSSIAN, KernelShape.ANISO_GAUSSIAN):
            w = np.exp(-0.5 * q)
        elif spec.shape in (KernelShape.ISO_GEN_GAUSSIAN, KernelShape.ANISO_GEN_GAUSSIAN):
            w = np.exp(-np.power(0.5 * q, spec.beta))
        else:
            w = 1.0 / (1.0 + np.power(0.5 * q, spec.beta))

    return Kernel2D(size=spec.size, weights=w / w.sum())


def sample_kernel_spec(rng: np.random.Generator, pipeline: str, size: int = 21) -> BlurKernelSpec:
    """Draw a random kernel spec for the given pipeline.

    "simple" draws an isotropic Gaussian with sigma ~ U[0.2, 3]. "complex"
    picks one of the seven shapes with equal probability; all six parameter
    draws are consumed regardless of shape so the stream position does not
    depend on the branch taken.
    """
    if pipeline == "simple":
        sigma = float(rng.uniform(*SIGMA_RANGE))
        return BlurKernelSpec(shape=KernelShape.ISO_GAUSSIAN, sigma_x=sigma, size=size)
    if pipeline != "complex":
        raise ValueError(f"unknown pipeline {pipeline!r}")

    shapes = list(KernelShape)
    shape = shapes[int(rng.integers(len(shapes)))]
    sigma_x = float(rng.uniform(*SIGMA_RANGE))
    sigma_y = float(rng.uniform(*SIGMA_RANGE))
    theta = float(rng.uniform(*THETA_RANGE))
    beta = float(rng.uniform(*BETA_RANGE))
    cutoff = float(rng.uniform(*CUTOFF_RANGE))

    if shape is KernelShape.SINC:
        return BlurKernelSpec(shape=shape, cutoff=cutoff, size=size)
    if shape in ISO_SHAPES:
        sigma_y = sigma_x
        theta = 0.0
    if shape not in BETA_SHAPES:
        beta = 1.0
    return BlurKernelSpec(
        shape=shape, sigma_x=sigma_x, sigma_y=sigma_y, theta=theta, beta=beta, size=size
    )


@dataclass(frozen=True)
class PcaBasis:
    """Top-k principal components of a flattened kernel population."""

    dim: int
    components: np.ndarray  # (k, dim), orthonormal rows
    mean: np.ndarray  # (dim,)
    fit_seed: int
    fit_count: int
    explained_variance: np.ndarray | None = None  # (k,), descending

    def __post_init__(self):
        comps = np.asarray(self.components, dtype=np.float64)
        mean = np.asarray(self.mean, dtype=np.float64)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "mean", mean)
        if comps.ndim != 2 or comps.shape[1] != self.dim:
            raise ValueError(f"components shape {comps.shape} incompatible with dim {self.dim}")
        if mean.shape != (self.dim,):
            raise ValueError(f"mean shape {mean.shape} != ({self.dim},)")
        gram = comps @ comps.T
        if not np.allclose(gram, np.eye(comps.shape[0]), atol=1e-8):
            raise ValueError("components not orthonormal within 1e-8")

    def to_json(self) -> str:
        return json.dumps(
            {
                "dim": self.dim,
                "mean": self.mean.tolist(),
                "components": self.components.tolist(),
                "fit_seed": self.fit_seed,
                "fit_count": self.fit_count,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "PcaBasis":
        d = json.loads(text)
        return cls(
            dim=int(d["dim"]),
            components=np.asarray(d["components"], dtype=np.float64),
            mean=np.asarray(d["mean"], dtype=np.float64),
            fit_seed=int(d["fit_seed"]),
            fit_count=int(d["fit_count"]),
        )


def fit_pca(kernels: list, k: int = PCA_COMPONENTS, fit_seed: int = PCA_FIT_SEED) -> PcaBasis:
    """Fit a mean-centered PCA basis on flattened kernels.

    Args:
        kernels: Kernel2D list, all the same size, at least k+1 of them.
        k: number of components to keep.
        fit_seed: provenance tag recording the seed that produced `kernels`.

    Returns:
        PcaBasis with the top-k components in descending variance order.
    """
    if len(kernels) < k + 1:
        raise ValueError(f"need at least {k + 1} kernels, got {len(kernels)}")
    sizes = {kern.size for kern in kernels}
    if len(sizes) != 1:
        raise ValueError(f"mixed kernel sizes {sorted(sizes)}")

    x = np.stack([kern.weights.ravel() for kern in kernels])
    mean = x.mean(axis=0)
    centered = x - mean
    # SVD of the centered sample matrix; right singular vectors are the
    # eigenvectors of the sample covariance.
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    variance = svals[:k] ** 2 / (len(kernels) - 1)
    return PcaBasis(
        dim=x.shape[1],
        components=vt[:k].copy(),
        mean=mean,
        fit_seed=fit_seed,
        fit_count=len(kernels),
        explained_variance=variance,
    )


def sample_fit_population(pipeline: str, count: int = PCA_FIT_COUNT,
                          seed: int = PCA_FIT_SEED, size: int = 21) -> list:
    """The reproducible kernel population used for the stock PCA bases."""
    rng = np.random.default_rng(seed)
    return [
        synthesize_kernel(sample_kernel_spec(rng, pipeline, size=size))
        for _ in range(count)
    ]


def project_kernel(basis: PcaBasis, kernel: Kernel2D) -> np.ndarray:
    """Coefficients of (kernel - mean) on the basis components."""
    flat = kernel.weights.ravel()
    if flat.shape[0] != basis.dim:
        raise ValueError(f"kernel dim {flat.shape[0]} != basis dim {basis.dim}")
    return basis.components @ (flat - basis.mean)


def reconstruct_kernel(basis: PcaBasis, coeffs: np.ndarray) -> Kernel2D:
    """Inverse of project_kernel up to the clamp/renormalize repair."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape != (basis.components.shape[0],):
        raise ValueError(f"expected {basis.components.shape[0]} coefficients, got {coeffs.shape}")
    flat = basis.mean + coeffs @ basis.components
    flat = np.maximum(flat, 0.0)
    size = int(round(math.sqrt(basis.dim)))
    return Kernel2D(size=size, weights=(flat / flat.sum()).reshape(size, size))
