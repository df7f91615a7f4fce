"""Degradation metadata encodings: vectors, labels, weights, error reports.

Every encoder consumes a DegradationRecord and normalizes parameters into
[0, 1] by their sampling ranges. Elements that do not apply to a record
(wrong kernel family, disabled stage) are exactly 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .degrade import (
    DegradationRecord,
    GAUSS_SIGMA_RANGE,
    JPEG_QUALITY_RANGE,
    POISSON_SCALE_RANGE,
    QPI_RANGE,
)
from .kernels import (
    ANISO_SHAPES,
    BETA_RANGE,
    CUTOFF_RANGE,
    KernelShape,
    SIGMA_RANGE,
    THETA_RANGE,
)

# Order of the 15-element complex metadata vector.
COMPLEX_META_FIELDS = (
    "sigma_v",
    "sigma_h",
    "theta",
    "beta_gen_gaussian",
    "beta_plateau",
    "sinc_cutoff",
    "is_aniso",
    "is_generalised",
    "is_plateau",
    "is_sinc",
    "gauss_sigma",
    "poisson_scale",
    "is_grey",
    "h264_qpi",
    "jpeg_quality",
)

_GEN_SHAPES = (KernelShape.ISO_GEN_GAUSSIAN, KernelShape.ANISO_GEN_GAUSSIAN)
_PLATEAU_SHAPES = (KernelShape.ISO_PLATEAU, KernelShape.ANISO_PLATEAU)


def _norm(value: float, lo: float, hi: float) -> float:
    return (value - lo) / (hi - lo)


@dataclass(frozen=True)
class SimpleSigmaMeta:
    """Normalized blur width of a simple-pipeline record."""

    value: float

    def __post_init__(self):
        if not (0.0 <= self.value <= 1.0):
            raise ValueError(f"value {self.value!r} outside [0, 1]")


def encode_simple(record: DegradationRecord) -> SimpleSigmaMeta:
    """sigma mapped onto [0, 1]; requires an isotropic Gaussian kernel."""
    spec = record.kernel_spec
    if spec is None or spec.shape is not KernelShape.ISO_GAUSSIAN:
        raise ValueError("record lacks an isotropic Gaussian kernel")
    value = _norm(spec.sigma_x, *SIGMA_RANGE)
    return SimpleSigmaMeta(value=float(np.clip(value, 0.0, 1.0)))


def encode_complex(record: DegradationRecord) -> np.ndarray:
    """The 15-element degradation vector (see COMPLEX_META_FIELDS)."""
    v = np.zeros(15)
    spec = record.kernel_spec
    if spec is not None:
        if spec.shape is KernelShape.SINC:
            v[5] = _norm(spec.cutoff, *CUTOFF_RANGE)
            v[9] = 1.0
        else:
            v[0] = _norm(spec.sigma_y, *SIGMA_RANGE)  # vertical
            v[1] = _norm(spec.sigma_x, *SIGMA_RANGE)  # horizontal
            if spec.shape in ANISO_SHAPES:
                v[2] = _norm(spec.theta, *THETA_RANGE)
                v[6] = 1.0
            if spec.shape in _GEN_SHAPES:
                v[3] = _norm(spec.beta, *BETA_RANGE)
                v[7] = 1.0
            elif spec.shape in _PLATEAU_SHAPES:
                v[4] = _norm(spec.beta, *BETA_RANGE)
                v[8] = 1.0

    if record.noise.kind == "gaussian":
        v[10] = _norm(record.noise.magnitude, *GAUSS_SIGMA_RANGE)
        v[12] = float(record.noise.grey)
    elif record.noise.kind == "poisson":
        v[11] = _norm(record.noise.magnitude, *POISSON_SCALE_RANGE)
        v[12] = float(record.noise.grey)

    if record.compression.kind == "h264":
        v[13] = _norm(record.compression.level, *QPI_RANGE)
    elif record.compression.kind == "jpeg":
        v[14] = _norm(record.compression.level, *JPEG_QUALITY_RANGE)
    return v


# --- SupMoCo labels -----------------------------------------------------------

_FAMILY_ORDER = (
    None,
    KernelShape.ISO_GAUSSIAN,
    KernelShape.ANISO_GAUSSIAN,
    KernelShape.ISO_GEN_GAUSSIAN,
    KernelShape.ANISO_GEN_GAUSSIAN,
    KernelShape.ISO_PLATEAU,
    KernelShape.ANISO_PLATEAU,
    KernelShape.SINC,
)


@dataclass(frozen=True)
class SupMoCoLabelConfig:
    """Binning precision for the labeling tree: 2 (double) or 3 (triple)."""

    precision: str = "double"

    def __post_init__(self):
        if self.precision not in ("double", "triple"):
            raise ValueError(f"precision {self.precision!r} not double/triple")

    @property
    def bins(self) -> int:
        return 2 if self.precision == "double" else 3

    def magnitude_bin(self, value: float, lo: float, hi: float) -> int:
        frac = (value - lo) / (hi - lo)
        return min(self.bins - 1, int(frac * self.bins))


def label_components(record: DegradationRecord, config: SupMoCoLabelConfig) -> tuple:
    """The tree path as a tuple; see label_radices for each slot's size.

    Slots: (family, sigma_v bin, sigma_h bin, noise kind, noise magnitude
    bin, grey, compression kind, compression magnitude bin). Inert slots
    are 0.
    """
    spec = record.kernel_spec
    family = _FAMILY_ORDER.index(spec.shape if spec else None)
    sig_v = sig_h = 0
    if spec is not None and spec.shape is not KernelShape.SINC:
        sig_v = config.magnitude_bin(spec.sigma_y, *SIGMA_RANGE)
        sig_h = config.magnitude_bin(spec.sigma_x, *SIGMA_RANGE)

    noise_kind = {"none": 0, "gaussian": 1, "poisson": 2}[record.noise.kind]
    noise_bin = 0
    grey = 0
    if record.noise.kind == "gaussian":
        noise_bin = config.magnitude_bin(record.noise.magnitude, *GAUSS_SIGMA_RANGE)
        grey = int(record.noise.grey)
    elif record.noise.kind == "poisson":
        noise_bin = config.magnitude_bin(record.noise.magnitude, *POISSON_SCALE_RANGE)
        grey = int(record.noise.grey)

    comp_kind = {"none": 0, "jpeg": 1, "h264": 2}[record.compression.kind]
    comp_bin = 0
    if record.compression.kind == "jpeg":
        comp_bin = config.magnitude_bin(record.compression.level, *JPEG_QUALITY_RANGE)
    elif record.compression.kind == "h264":
        comp_bin = config.magnitude_bin(record.compression.level, *QPI_RANGE)

    return (family, sig_v, sig_h, noise_kind, noise_bin, grey, comp_kind, comp_bin)


def label_radices(config: SupMoCoLabelConfig) -> tuple:
    p = config.bins
    return (len(_FAMILY_ORDER), p, p, 3, p, 2, 3, p)


def supmoco_label(record: DegradationRecord, config: SupMoCoLabelConfig) -> int:
    """Mixed-radix class id of the record's tree path (leftmost slot most
    significant)."""
    label = 0
    for comp, radix in zip(label_components(record, config), label_radices(config)):
        label = label * radix + comp
    return label


def label_count(config: SupMoCoLabelConfig) -> int:
    return int(np.prod(label_radices(config)))


# --- WeakCon weights ----------------------------------------------------------

WEAKCON_FIELDS = (
    "sigma_v",
    "sigma_h",
    "gauss_sigma",
    "poisson_scale",
    "h264_qpi",
    "jpeg_quality",
)


def weakcon_degvec(record: DegradationRecord) -> np.ndarray:
    """Degradation magnitudes for distance weighting.

    Simple-pipeline records reduce to the 1-element normalized sigma;
    everything else uses the 6-element [sigma_v, sigma_h, gauss_sigma,
    poisson_scale, h264_qpi, jpeg_quality] layout with inert elements 0.
    """
    if record.pipeline == "simple":
        return np.array([encode_simple(record).value])
    full = encode_complex(record)
    return np.array([full[0], full[1], full[10], full[11], full[13], full[14]])


def degvec_distance(vq: np.ndarray, vn: np.ndarray) -> float:
    """|vq - vn|_2 / sqrt(D); in [0, 1] when both vectors are."""
    vq = np.asarray(vq, dtype=np.float64)
    vn = np.asarray(vn, dtype=np.float64)
    if vq.shape != vn.shape:
        raise ValueError(
            "records come from different pipelines; their degradation vectors "
            f"have lengths {vq.size} and {vn.size}"
        )
    return float(np.linalg.norm(vq - vn) / math.sqrt(vq.size))


def weakcon_weight(query: DegradationRecord, negative: DegradationRecord) -> float:
    return degvec_distance(weakcon_degvec(query), weakcon_degvec(negative))


# --- oracle corruption and error reports ---------------------------------------

def corrupt_sigma(meta: SimpleSigmaMeta, rng: np.random.Generator,
                  std: float = 0.1) -> SimpleSigmaMeta:
    """Additive N(0, std^2) on the normalized sigma, clamped to [0, 1]."""
    value = meta.value + rng.normal(0.0, std)
    return SimpleSigmaMeta(value=float(np.clip(value, 0.0, 1.0)))


def prediction_error(predicted: np.ndarray, truth: np.ndarray) -> dict:
    """Mean absolute error overall and per parameter group.

    15-element vectors split into blur (first 10), noise (3), compression
    (2); 10-element kernel codes report blur == overall.
    """
    predicted = np.asarray(predicted, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if predicted.shape != truth.shape:
        raise ValueError(f"shape mismatch {predicted.shape} vs {truth.shape}")
    if predicted.shape not in ((15,), (10,)):
        raise ValueError(f"expected a 15- or 10-element vector, got {predicted.shape}")

    err = np.abs(predicted - truth)
    report = {"overall": float(err.mean()), "blur": float(err[:10].mean())}
    if predicted.shape == (15,):
        report["noise"] = float(err[10:13].mean())
        report["compression"] = float(err[13:15].mean())
    return report
