"""Metadata-insertion block forward passes.

Five ways of feeding a degradation vector into a convolutional feature
map, each sized for desk-scale conformance testing rather than training:

- MA: two fully-connected layers producing a sigmoid channel gate.
- SRMD: tile the vector into constant planes and concatenate.
- SFT: dual convolutional pathways emitting a spatial affine (gamma, beta).
- DA: the MA gate plus a depthwise 3x3 kernel generated from the vector.
- DGFMB: gate computed from pooled features concatenated with the vector.

Feature maps are (C, H, W) arrays; vectors are 1-D. Weight containers
are frozen dataclasses with seeded-uniform constructors and JSON
round-tripping. Backward passes exist for the two gated blocks (MA and
DGFMB) and differentiate sum(output * cotangent) with respect to both
the feature map and the vector.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields

import numpy as np

INIT_SCALE = 0.1


def check_feature(f: np.ndarray) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 3 or min(f.shape) < 1:
        raise ValueError(f"feature map must be (C, H, W), got {f.shape}")
    return f


def check_vector(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise ValueError(f"meta vector must be 1-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("meta vector contains non-finite values")
    return v


def hidden_width(m: int, c: int) -> int:
    return max(m, math.ceil(c / 8))


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _uniform(rng, *shape):
    return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)


# --- weight containers ----------------------------------------------------------

def _weights_to_json(obj, block: str) -> str:
    arrays = {}
    for fld in fields(obj):
        value = getattr(obj, fld.name)
        if isinstance(value, np.ndarray):
            arrays[fld.name] = {"shape": list(value.shape),
                                "data": value.ravel().tolist()}
        else:
            arrays[fld.name] = value
    return json.dumps({"block": block, "arrays": arrays})


def _weights_from_json(cls, block: str, text: str):
    payload = json.loads(text)
    if payload.get("block") != block:
        raise ValueError(f"expected block {block!r}, got {payload.get('block')!r}")
    kwargs = {}
    for name, value in payload["arrays"].items():
        if isinstance(value, dict):
            kwargs[name] = np.array(value["data"]).reshape(value["shape"])
        else:
            kwargs[name] = value
    return cls(**kwargs)


@dataclass(frozen=True)
class MaWeights:
    """Two dense layers: gate = sigmoid(w2 @ relu(w1 @ v + b1) + b2)."""

    w1: np.ndarray  # (hidden, M)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (C, hidden)
    b2: np.ndarray  # (C,)

    def __post_init__(self):
        hidden, m = self.w1.shape
        c = self.w2.shape[0]
        if self.b1.shape != (hidden,) or self.w2.shape != (c, hidden) \
                or self.b2.shape != (c,):
            raise ValueError("inconsistent MA weight shapes")

    @property
    def meta_dim(self):
        return self.w1.shape[1]

    @property
    def channels(self):
        return self.w2.shape[0]

    def to_json(self):
        return _weights_to_json(self, "ma")

    @classmethod
    def from_json(cls, text):
        return _weights_from_json(cls, "ma", text)


def ma_init(meta_dim: int, channels: int, seed: int = 0) -> MaWeights:
    rng = np.random.default_rng(seed)
    hidden = hidden_width(meta_dim, channels)
    return MaWeights(w1=_uniform(rng, hidden, meta_dim),
                     b1=_uniform(rng, hidden),
                     w2=_uniform(rng, channels, hidden),
                     b2=_uniform(rng, channels))


@dataclass(frozen=True)
class SftWeights:
    """Two 3x3 conv layers per pathway; gamma and beta read the stacked
    (feature, tiled-vector) tensor."""

    gamma1_w: np.ndarray  # (C, C+M, 3, 3)
    gamma1_b: np.ndarray  # (C,)
    gamma2_w: np.ndarray  # (C, C, 3, 3)
    gamma2_b: np.ndarray  # (C,)
    beta1_w: np.ndarray
    beta1_b: np.ndarray
    beta2_w: np.ndarray
    beta2_b: np.ndarray

    def __post_init__(self):
        c = self.gamma1_w.shape[0]
        stacked = self.gamma1_w.shape[1]
        for name in ("gamma", "beta"):
            w1 = getattr(self, f"{name}1_w")
            w2 = getattr(self, f"{name}2_w")
            if w1.shape != (c, stacked, 3, 3) or w2.shape != (c, c, 3, 3):
                raise ValueError("inconsistent SFT conv shapes")
            if getattr(self, f"{name}1_b").shape != (c,) \
                    or getattr(self, f"{name}2_b").shape != (c,):
                raise ValueError("inconsistent SFT bias shapes")

    @property
    def channels(self):
        return self.gamma1_w.shape[0]

    @property
    def meta_dim(self):
        return self.gamma1_w.shape[1] - self.channels

    def to_json(self):
        return _weights_to_json(self, "sft")

    @classmethod
    def from_json(cls, text):
        return _weights_from_json(cls, "sft", text)


def sft_init(meta_dim: int, channels: int, seed: int = 0) -> SftWeights:
    rng = np.random.default_rng(seed)
    stacked = channels + meta_dim
    return SftWeights(
        gamma1_w=_uniform(rng, channels, stacked, 3, 3),
        gamma1_b=_uniform(rng, channels),
        gamma2_w=_uniform(rng, channels, channels, 3, 3),
        gamma2_b=_uniform(rng, channels),
        beta1_w=_uniform(rng, channels, stacked, 3, 3),
        beta1_b=_uniform(rng, channels),
        beta2_w=_uniform(rng, channels, channels, 3, 3),
        beta2_b=_uniform(rng, channels),
    )


@dataclass(frozen=True)
class DaWeights:
    """MA-style gate plus a per-channel 3x3 kernel generated from the
    vector by one dense layer."""

    gate: MaWeights
    kernel_w: np.ndarray  # (C*9, M)
    kernel_b: np.ndarray  # (C*9,)

    def __post_init__(self):
        c = self.gate.channels
        m = self.gate.meta_dim
        if self.kernel_w.shape != (c * 9, m) or self.kernel_b.shape != (c * 9,):
            raise ValueError("inconsistent DA kernel-generator shapes")

    def to_json(self):
        payload = {
            "block": "da",
            "gate": json.loads(self.gate.to_json()),
            "arrays": {
                "kernel_w": {"shape": list(self.kernel_w.shape),
                             "data": self.kernel_w.ravel().tolist()},
                "kernel_b": {"shape": list(self.kernel_b.shape),
                             "data": self.kernel_b.ravel().tolist()},
            },
        }
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text):
        payload = json.loads(text)
        if payload.get("block") != "da":
            raise ValueError(f"expected block 'da', got {payload.get('block')!r}")
        gate = _weights_from_json(MaWeights, "ma", json.dumps(payload["gate"]))
        arrays = payload["arrays"]
        return cls(
            gate=gate,
            kernel_w=np.array(arrays["kernel_w"]["data"]).reshape(
                arrays["kernel_w"]["shape"]),
            kernel_b=np.array(arrays["kernel_b"]["data"]).reshape(
                arrays["kernel_b"]["shape"]),
        )


def da_init(meta_dim: int, channels: int, seed: int = 0) -> DaWeights:
    rng = np.random.default_rng(seed)
    hidden = hidden_width(meta_dim, channels)
    gate = MaWeights(w1=_uniform(rng, hidden, meta_dim),
                     b1=_uniform(rng, hidden),
                     w2=_uniform(rng, channels, hidden),
                     b2=_uniform(rng, channels))
    return DaWeights(gate=gate,
                     kernel_w=_uniform(rng, channels * 9, meta_dim),
                     kernel_b=_uniform(rng, channels * 9))


@dataclass(frozen=True)
class DgfmbWeights:
    """Gate from pooled features stacked with the (optionally projected)
    vector."""

    meta_w: np.ndarray  # (M, M)
    meta_b: np.ndarray  # (M,)
    w1: np.ndarray      # (hidden, C+M)
    b1: np.ndarray      # (hidden,)
    w2: np.ndarray      # (C, hidden)
    b2: np.ndarray      # (C,)

    def __post_init__(self):
        m = self.meta_w.shape[0]
        hidden = self.w1.shape[0]
        c = self.w2.shape[0]
        if self.meta_w.shape != (m, m) or self.meta_b.shape != (m,):
            raise ValueError("inconsistent DGFMB meta projection shapes")
        if self.w1.shape != (hidden, c + m) or self.b1.shape != (hidden,) \
                or self.w2.shape != (c, hidden) or self.b2.shape != (c,):
            raise ValueError("inconsistent DGFMB dense shapes")

    @property
    def meta_dim(self):
        return self.meta_w.shape[0]

    @property
    def channels(self):
        return self.w2.shape[0]

    def to_json(self):
        return _weights_to_json(self, "dgfmb")

    @classmethod
    def from_json(cls, text):
        return _weights_from_json(cls, "dgfmb", text)


def dgfmb_init(meta_dim: int, channels: int, seed: int = 0) -> DgfmbWeights:
    rng = np.random.default_rng(seed)
    hidden = hidden_width(meta_dim, channels)
    return DgfmbWeights(
        meta_w=_uniform(rng, meta_dim, meta_dim),
        meta_b=_uniform(rng, meta_dim),
        w1=_uniform(rng, hidden, channels + meta_dim),
        b1=_uniform(rng, hidden),
        w2=_uniform(rng, channels, hidden),
        b2=_uniform(rng, channels),
    )


# --- convolution helpers --------------------------------------------------------

def _conv3x3(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """(C_out, C_in, 3, 3) cross-correlation with reflect-101 padding."""
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="reflect")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3),
                                                       axis=(1, 2))
    return np.einsum("ihwkl,oikl->ohw", windows, weights) + bias[:, None, None]


def _depthwise3x3(x: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """Per-channel 3x3 cross-correlation with reflect-101 padding."""
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="reflect")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3),
                                                       axis=(1, 2))
    return np.einsum("chwkl,ckl->chw", windows, kernels)


# --- MA -------------------------------------------------------------------------

def _ma_gate(v: np.ndarray, w: MaWeights) -> np.ndarray:
    return _sigmoid(w.w2 @ np.maximum(w.w1 @ v + w.b1, 0.0) + w.b2)


def ma_forward(f: np.ndarray, v: np.ndarray, w: MaWeights) -> np.ndarray:
    f = check_feature(f)
    v = check_vector(v)
    if v.size != w.meta_dim or f.shape[0] != w.channels:
        raise ValueError(
            f"weights expect (M={w.meta_dim}, C={w.channels}), got "
            f"(M={v.size}, C={f.shape[0]})")
    return f * _ma_gate(v, w)[:, None, None]


def ma_backward(f: np.ndarray, v: np.ndarray, w: MaWeights,
                grad_out: np.ndarray):
    """Gradients of sum(forward * grad_out) w.r.t. f and v."""
    f = check_feature(f)
    v = check_vector(v)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != f.shape:
        raise ValueError(f"cotangent shape {grad_out.shape} != {f.shape}")
    z1 = w.w1 @ v + w.b1
    r = np.maximum(z1, 0.0)
    a = _sigmoid(w.w2 @ r + w.b2)

    grad_f = grad_out * a[:, None, None]
    d_a = np.einsum("chw,chw->c", grad_out, f)
    d_z2 = d_a * a * (1.0 - a)
    d_z1 = (w.w2.T @ d_z2) * (z1 > 0.0)
    grad_v = w.w1.T @ d_z1
    return grad_f, grad_v


# --- SRMD -----------------------------------------------------------------------

def srmd_channels(v: np.ndarray, height: int, width: int) -> np.ndarray:
    v = check_vector(v)
    if height < 1 or width < 1:
        raise ValueError(f"bad plane size {height}x{width}")
    return np.broadcast_to(v[:, None, None], (v.size, height, width)).copy()


def srmd_concat(image: np.ndarray, v: np.ndarray) -> np.ndarray:
    image = check_feature(image)
    planes = srmd_channels(v, image.shape[1], image.shape[2])
    return np.concatenate([image, planes], axis=0)


# --- SFT ------------------------------------------------------------------------

def sft_forward(f: np.ndarray, v: np.ndarray, w: SftWeights) -> np.ndarray:
    f = check_feature(f)
    v = check_vector(v)
    if v.size != w.meta_dim or f.shape[0] != w.channels:
        raise ValueError(
            f"weights expect (M={w.meta_dim}, C={w.channels}), got "
            f"(M={v.size}, C={f.shape[0]})")
    stacked = srmd_concat(f, v)
    gamma = _conv3x3(np.maximum(_conv3x3(stacked, w.gamma1_w, w.gamma1_b), 0.0),
                     w.gamma2_w, w.gamma2_b)
    beta = _conv3x3(np.maximum(_conv3x3(stacked, w.beta1_w, w.beta1_b), 0.0),
                    w.beta2_w, w.beta2_b)
    return f * gamma + beta


# --- DA -------------------------------------------------------------------------

def da_kernels(v: np.ndarray, w: DaWeights) -> np.ndarray:
    """The generated per-channel 3x3 kernels, shaped (C, 3, 3)."""
    return (w.kernel_w @ v + w.kernel_b).reshape(w.gate.channels, 3, 3)


def da_forward(f: np.ndarray, v: np.ndarray, w: DaWeights) -> np.ndarray:
    f = check_feature(f)
    v = check_vector(v)
    if v.size != w.gate.meta_dim or f.shape[0] != w.gate.channels:
        raise ValueError(
            f"weights expect (M={w.gate.meta_dim}, C={w.gate.channels}), got "
            f"(M={v.size}, C={f.shape[0]})")
    gated = f * _ma_gate(v, w.gate)[:, None, None]
    return gated + _depthwise3x3(f, da_kernels(v, w))


# --- DGFMB ----------------------------------------------------------------------

def _dgfmb_gate(f: np.ndarray, v: np.ndarray, w: DgfmbWeights,
                use_meta_fc: bool):
    pooled = f.mean(axis=(1, 2))
    mv = w.meta_w @ v + w.meta_b if use_meta_fc else v
    u = np.concatenate([pooled, mv])
    z1 = w.w1 @ u + w.b1
    r = np.maximum(z1, 0.0)
    a = _sigmoid(w.w2 @ r + w.b2)
    return a, z1, u


def dgfmb_forward(f: np.ndarray, v: np.ndarray, w: DgfmbWeights,
                  use_meta_fc: bool = True) -> np.ndarray:
    f = check_feature(f)
    v = check_vector(v)
    if v.size != w.meta_dim or f.shape[0] != w.channels:
        raise ValueError(
            f"weights expect (M={w.meta_dim}, C={w.channels}), got "
            f"(M={v.size}, C={f.shape[0]})")
    a, _, _ = _dgfmb_gate(f, v, w, use_meta_fc)
    return f * a[:, None, None]


def dgfmb_backward(f: np.ndarray, v: np.ndarray, w: DgfmbWeights,
                   grad_out: np.ndarray, use_meta_fc: bool = True):
    """Gradients of sum(forward * grad_out) w.r.t. f and v."""
    f = check_feature(f)
    v = check_vector(v)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != f.shape:
        raise ValueError(f"cotangent shape {grad_out.shape} != {f.shape}")
    c, height, width = f.shape
    a, z1, _ = _dgfmb_gate(f, v, w, use_meta_fc)

    d_a = np.einsum("chw,chw->c", grad_out, f)
    d_z2 = d_a * a * (1.0 - a)
    d_z1 = (w.w2.T @ d_z2) * (z1 > 0.0)
    d_u = w.w1.T @ d_z1
    d_pooled = d_u[:c]
    d_mv = d_u[c:]

    grad_f = grad_out * a[:, None, None] \
        + d_pooled[:, None, None] / (height * width)
    grad_v = w.meta_w.T @ d_mv if use_meta_fc else d_mv
    return grad_f, grad_v


# --- composition helper -----------------------------------------------------------

def broadcast_insert(features, v: np.ndarray, forward, *args, **kwargs):
    """Apply one insertion block at several points with shared weights."""
    return [forward(f, v, *args, **kwargs) for f in features]
