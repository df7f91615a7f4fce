"""Degradation pipelines: blur, x4 downsample, noise, compression.

The simple pipeline is isotropic Gaussian blur followed by bicubic
downsampling. The complex pipeline draws a kernel from all seven families,
downsamples, adds Gaussian or Poisson noise (optionally greyscale) and
finishes with JPEG or single-frame H.264 compression. Every run returns the
LR image together with a DegradationRecord that replays it bit-exactly.

Images are H x W x 3 float64 arrays in [0, 1]; every stage clamps its
output back into range.
"""

from __future__ import annotations

import hashlib
import io
import math
import os
import shlex
import subprocess
import tempfile
from dataclasses import dataclass

import numpy as np
import scipy.ndimage
from PIL import Image

from . import resample
from .kernels import BlurKernelSpec, Kernel2D, KernelShape, sample_kernel_spec, synthesize_kernel

SCALE = 4
GAUSS_SIGMA_RANGE = (1.0, 30.0)
POISSON_SCALE_RANGE = (0.05, 3.0)
JPEG_QUALITY_RANGE = (30, 95)
QPI_RANGE = (20, 40)
GREY_PROB = 0.4
POISSON_PHOTONS = 255.0
H264_CMD_ENV = "DEGRADEKIT_H264_CMD"

# Stream tags for the two child RNGs derived from a record seed.
_PARAM_STREAM = 0
_NOISE_STREAM = 1


class DegradeKitError(Exception):
    """Base for all toolkit errors."""


class StageError(DegradeKitError):
    """A degradation stage failed (codec/backend trouble)."""


class H264UnavailableError(StageError):
    """No external H.264 encoder is configured."""


def check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 image, got shape {image.shape}")
    if image.shape[0] < 1 or image.shape[1] < 1:
        raise ValueError("empty image")
    if image.min() < 0.0 or image.max() > 1.0:
        raise ValueError("image values outside [0, 1]")
    return image


def _clip(image: np.ndarray) -> np.ndarray:
    return np.clip(image, 0.0, 1.0)


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "none"  # "gaussian" | "poisson" | "none"
    magnitude: float = 0.0
    grey: bool = False

    def __post_init__(self):
        if self.kind == "gaussian":
            lo, hi = GAUSS_SIGMA_RANGE
        elif self.kind == "poisson":
            lo, hi = POISSON_SCALE_RANGE
        elif self.kind == "none":
            return
        else:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if not (lo <= self.magnitude <= hi):
            raise ValueError(f"{self.kind} magnitude {self.magnitude!r} outside [{lo}, {hi}]")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "magnitude": self.magnitude, "grey": self.grey}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        return cls(kind=d["kind"], magnitude=d.get("magnitude", 0.0), grey=d.get("grey", False))


@dataclass(frozen=True)
class CompressionSpec:
    kind: str = "none"  # "jpeg" | "h264" | "none"
    level: int = 0

    def __post_init__(self):
        if self.kind == "jpeg":
            lo, hi = JPEG_QUALITY_RANGE
        elif self.kind == "h264":
            lo, hi = QPI_RANGE
        elif self.kind == "none":
            return
        else:
            raise ValueError(f"unknown compression kind {self.kind!r}")
        if int(self.level) != self.level or not (lo <= self.level <= hi):
            raise ValueError(f"{self.kind} level {self.level!r} not an integer in [{lo}, {hi}]")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "level": self.level}

    @classmethod
    def from_dict(cls, d: dict) -> "CompressionSpec":
        return cls(kind=d["kind"], level=d.get("level", 0))


@dataclass(frozen=True)
class DegradationRecord:
    """Everything applied to one LR image; replays the output bit-exactly."""

    kernel_spec: BlurKernelSpec | None
    noise: NoiseSpec
    compression: CompressionSpec
    seed: int
    source_id: str = ""
    pipeline: str = "complex"
    scale: int = SCALE
    substituted_compression: bool = False

    def to_dict(self) -> dict:
        return {
            "source_id": self.source_id,
            "pipeline": self.pipeline,
            "kernel": self.kernel_spec.to_dict() if self.kernel_spec else None,
            "noise": self.noise.to_dict(),
            "compression": self.compression.to_dict(),
            "seed": self.seed,
            "scale": self.scale,
            "substituted_compression": self.substituted_compression,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationRecord":
        kern = d.get("kernel")
        return cls(
            kernel_spec=BlurKernelSpec.from_dict(kern) if kern else None,
            noise=NoiseSpec.from_dict(d["noise"]),
            compression=CompressionSpec.from_dict(d["compression"]),
            seed=int(d["seed"]),
            source_id=d.get("source_id", ""),
            pipeline=d.get("pipeline", "complex"),
            scale=int(d.get("scale", SCALE)),
            substituted_compression=bool(d.get("substituted_compression", False)),
        )


def derive_seed(master_seed: int, source_id: str, replica: int) -> int:
    """Stable 63-bit per-image seed from (master seed, source id, replica)."""
    digest = hashlib.blake2b(
        f"{master_seed}:{source_id}:{replica}".encode(), digest_size=8
    ).digest()
    return int.from_bytes(digest, "big") >> 1


def _stream(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng([seed, tag])


# --- stages ---------------------------------------------------------------

def blur(image: np.ndarray, kernel: Kernel2D) -> np.ndarray:
    """Per-channel 2-D correlation with reflect-101 boundary padding."""
    image = check_image(image)
    out = np.empty_like(image)
    for ch in range(3):
        out[:, :, ch] = scipy.ndimage.correlate(image[:, :, ch], kernel.weights, mode="mirror")
    return _clip(out)


def downsample_bicubic(image: np.ndarray, scale: int = SCALE) -> np.ndarray:
    """Antialiased bicubic downsample by an integer factor."""
    image = check_image(image)
    if image.shape[0] % scale or image.shape[1] % scale:
        raise ValueError(
            f"dimensions {image.shape[:2]} not divisible by scale {scale}"
        )
    return _clip(resample.imresize(image, 1.0 / scale, kernel="cubic", antialias=True))


def upsample_bicubic(image: np.ndarray, scale: int = SCALE) -> np.ndarray:
    image = check_image(image)
    return _clip(resample.imresize(image, float(scale), kernel="cubic"))


def upsample_lanczos(image: np.ndarray, scale: int = SCALE) -> np.ndarray:
    image = check_image(image)
    return _clip(resample.imresize(image, float(scale), kernel="lanczos3"))


def add_gaussian_noise(image: np.ndarray, sigma_8bit: float, grey: bool,
                       rng: np.random.Generator) -> np.ndarray:
    """Additive N(0, (sigma/255)^2) noise; grey shares one plane across RGB."""
    image = check_image(image)
    std = sigma_8bit / 255.0
    if grey:
        plane = rng.normal(0.0, std, size=image.shape[:2])
        noise = plane[:, :, None]
    else:
        noise = rng.normal(0.0, std, size=image.shape)
    return _clip(image + noise)


def add_poisson_noise(image: np.ndarray, scale: float, grey: bool,
                      rng: np.random.Generator) -> np.ndarray:
    """Signal-dependent shot noise at a fixed photon budget of 255.

    out = clamp(x + scale * (Poisson(x * 255)/255 - x)). The grey variant
    derives a single noise plane from the Rec.601 luminance and adds it to
    every channel.
    """
    image = check_image(image)
    if grey:
        base = image @ np.array([0.299, 0.587, 0.114])
        noise = (rng.poisson(base * POISSON_PHOTONS) / POISSON_PHOTONS - base)[:, :, None]
    else:
        noise = rng.poisson(image * POISSON_PHOTONS) / POISSON_PHOTONS - image
    return _clip(image + scale * noise)


def compress_jpeg(image: np.ndarray, quality: int) -> np.ndarray:
    """Baseline JPEG round trip (libjpeg quantization, 4:2:0 subsampling)."""
    image = check_image(image)
    if not (1 <= quality <= 100):
        raise ValueError(f"quality {quality!r} outside [1, 100]")
    buf = io.BytesIO()
    try:
        Image.fromarray(to_uint8(image)).save(
            buf, format="JPEG", quality=int(quality), subsampling=2
        )
        buf.seek(0)
        decoded = np.asarray(Image.open(buf).convert("RGB"))
    except OSError as exc:  # pragma: no cover - codec trouble
        raise StageError(f"jpeg round trip failed: {exc}") from exc
    return from_uint8(decoded)


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def from_uint8(raw: np.ndarray) -> np.ndarray:
    return np.asarray(raw, dtype=np.float64) / 255.0


# --- external H.264 backend ------------------------------------------------

def _rgb_to_yuv420(image_u8: np.ndarray):
    """Studio-swing BT.601 planar conversion with 2x2 box chroma averaging."""
    rgb = image_u8.astype(np.float64) / 255.0
    r, g, b = rgb[:, :, 0], rgb[:, :, 1], rgb[:, :, 2]
    y = 16.0 + 65.481 * r + 128.553 * g + 24.966 * b
    cb = 128.0 - 37.797 * r - 74.203 * g + 112.0 * b
    cr = 128.0 + 112.0 * r - 93.786 * g - 18.214 * b
    h, w = r.shape
    cb = cb.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
    cr = cr.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
    clip8 = lambda p: np.clip(np.rint(p), 0, 255).astype(np.uint8)
    return clip8(y), clip8(cb), clip8(cr)


def _yuv420_to_rgb(y: np.ndarray, cb: np.ndarray, cr: np.ndarray) -> np.ndarray:
    # Inverse of the studio-swing matrix above; chroma upsampled by 2x2
    # replication to mirror the box averaging on the way in.
    ey = (y.astype(np.float64) - 16.0) / 219.0
    epb = (np.repeat(np.repeat(cb, 2, axis=0), 2, axis=1).astype(np.float64) - 128.0) / 224.0
    epr = (np.repeat(np.repeat(cr, 2, axis=0), 2, axis=1).astype(np.float64) - 128.0) / 224.0
    kr, kg, kb = 0.299, 0.587, 0.114
    r = ey + 2.0 * (1.0 - kr) * epr
    b = ey + 2.0 * (1.0 - kb) * epb
    g = (ey - kr * r - kb * b) / kg
    return to_uint8(np.stack([r, g, b], axis=2))


class ExternalEncoder:
    """Single-frame H.264 round trip through a user-supplied command.

    The command template (env var DEGRADEKIT_H264_CMD) is formatted with
    {input}, {output}, {qpi}, {width} and {height}, receives a planar
    YUV 4:2:0 (BT.601, studio swing) frame at {input} and must leave the
    decoded frame, same format and size, at {output}. Odd image dimensions
    are reflect-padded to even before conversion and cropped afterwards.
    """

    def __init__(self, command_template: str):
        if not command_template.strip():
            raise ValueError("empty encoder command template")
        self.command_template = command_template

    @classmethod
    def from_env(cls) -> "ExternalEncoder | None":
        cmd = os.environ.get(H264_CMD_ENV, "").strip()
        return cls(cmd) if cmd else None

    def roundtrip(self, image: np.ndarray, qpi: int) -> np.ndarray:
        image = check_image(image)
        h, w = image.shape[:2]
        pad_h, pad_w = h % 2, w % 2
        work = np.pad(image, ((0, pad_h), (0, pad_w), (0, 0)), mode="reflect")
        y, cb, cr = _rgb_to_yuv420(to_uint8(work))

        with tempfile.TemporaryDirectory(prefix="degradekit-h264-") as tmp:
            src = os.path.join(tmp, "in.yuv")
            dst = os.path.join(tmp, "out.yuv")
            with open(src, "wb") as fh:
                fh.write(y.tobytes() + cb.tobytes() + cr.tobytes())
            cmd = self.command_template.format(
                input=src, output=dst, qpi=int(qpi),
                width=work.shape[1], height=work.shape[0],
            )
            proc = subprocess.run(
                shlex.split(cmd), capture_output=True, text=True
            )
            if proc.returncode != 0:
                raise StageError(
                    f"h264 backend exited {proc.returncode}: {proc.stderr.strip()[:500]}"
                )
            if not os.path.exists(dst):
                raise StageError(f"h264 backend produced no output file {dst}")
            raw = np.fromfile(dst, dtype=np.uint8)

        hh, ww = work.shape[0], work.shape[1]
        need = hh * ww + 2 * (hh // 2) * (ww // 2)
        if raw.size != need:
            raise StageError(
                f"h264 backend returned {raw.size} bytes, expected {need}"
            )
        y2 = raw[: hh * ww].reshape(hh, ww)
        half = (hh // 2) * (ww // 2)
        cb2 = raw[hh * ww : hh * ww + half].reshape(hh // 2, ww // 2)
        cr2 = raw[hh * ww + half :].reshape(hh // 2, ww // 2)
        rgb = from_uint8(_yuv420_to_rgb(y2, cb2, cr2))
        return _clip(rgb[:h, :w])


def compress_h264(image: np.ndarray, qpi: int, backend: ExternalEncoder | None = None) -> np.ndarray:
    """Round-trip through the configured external encoder at the given QPI."""
    lo, hi = QPI_RANGE
    if not (lo <= qpi <= hi):
        raise ValueError(f"qpi {qpi!r} outside [{lo}, {hi}]")
    backend = backend or ExternalEncoder.from_env()
    if backend is None:
        raise H264UnavailableError(
            f"no H.264 backend configured; set {H264_CMD_ENV} to a command template"
        )
    return backend.roundtrip(image, qpi)


# --- pipelines --------------------------------------------------------------

def apply_record(hr: np.ndarray, record: DegradationRecord,
                 backend: ExternalEncoder | None = None) -> np.ndarray:
    """Replay a record: blur -> downsample -> noise -> compression."""
    img = check_image(hr)
    if record.kernel_spec is not None:
        img = blur(img, synthesize_kernel(record.kernel_spec))
    img = downsample_bicubic(img, record.scale)

    if record.noise.kind != "none":
        rng = _stream(record.seed, _NOISE_STREAM)
        if record.noise.kind == "gaussian":
            img = add_gaussian_noise(img, record.noise.magnitude, record.noise.grey, rng)
        else:
            img = add_poisson_noise(img, record.noise.magnitude, record.noise.grey, rng)

    if record.compression.kind == "jpeg":
        img = compress_jpeg(img, record.compression.level)
    elif record.compression.kind == "h264":
        img = compress_h264(img, record.compression.level, backend)
    return img


def _fresh_seed(rng: np.random.Generator | None, seed: int | None) -> int:
    if seed is not None:
        return int(seed)
    if rng is not None:
        return int(rng.integers(0, 2**63))
    return 0


def degrade_simple(hr: np.ndarray, sigma: float, rng: np.random.Generator | None = None,
                   *, seed: int | None = None, source_id: str = ""):
    """Isotropic Gaussian blur + x4 bicubic downsample; no noise/compression."""
    record = DegradationRecord(
        kernel_spec=BlurKernelSpec(shape=KernelShape.ISO_GAUSSIAN, sigma_x=float(sigma)),
        noise=NoiseSpec(),
        compression=CompressionSpec(),
        seed=_fresh_seed(rng, seed),
        source_id=source_id,
        pipeline="simple",
    )
    return apply_record(hr, record), record


def sample_simple_record(seed: int, source_id: str = "",
                         sigma: float | None = None) -> DegradationRecord:
    """Simple-pipeline record; sigma is drawn from the parameter stream unless fixed."""
    if sigma is None:
        spec = sample_kernel_spec(_stream(seed, _PARAM_STREAM), "simple")
    else:
        spec = BlurKernelSpec(shape=KernelShape.ISO_GAUSSIAN, sigma_x=float(sigma))
    return DegradationRecord(
        kernel_spec=spec,
        noise=NoiseSpec(),
        compression=CompressionSpec(),
        seed=int(seed),
        source_id=source_id,
        pipeline="simple",
    )


def sample_complex_record(seed: int, source_id: str = "",
                          backend: ExternalEncoder | None = None,
                          h264_policy: str = "substitute") -> DegradationRecord:
    """Draw all complex-pipeline parameters from the seed's parameter stream.

    Draw order is fixed: kernel spec (six draws regardless of shape), noise
    kind, magnitude, grey flag, compression kind, level. When H.264 is drawn
    with no backend configured, the "substitute" policy redraws a JPEG
    quality and flags the record; "abort" raises instead.
    """
    rng = _stream(seed, _PARAM_STREAM)
    kernel_spec = sample_kernel_spec(rng, "complex")

    kind = ("gaussian", "poisson")[int(rng.integers(2))]
    lo, hi = GAUSS_SIGMA_RANGE if kind == "gaussian" else POISSON_SCALE_RANGE
    magnitude = float(rng.uniform(lo, hi))
    grey = bool(rng.uniform() < GREY_PROB)
    noise = NoiseSpec(kind=kind, magnitude=magnitude, grey=grey)

    ckind = ("jpeg", "h264")[int(rng.integers(2))]
    if ckind == "jpeg":
        level = int(rng.integers(JPEG_QUALITY_RANGE[0], JPEG_QUALITY_RANGE[1] + 1))
    else:
        level = int(rng.integers(QPI_RANGE[0], QPI_RANGE[1] + 1))
    substituted = False
    if ckind == "h264" and backend is None:
        if h264_policy == "abort":
            raise H264UnavailableError(
                f"record drew h264 and policy is abort; set {H264_CMD_ENV}"
            )
        if h264_policy != "substitute":
            raise ValueError(f"unknown h264 policy {h264_policy!r}")
        ckind = "jpeg"
        level = int(rng.integers(JPEG_QUALITY_RANGE[0], JPEG_QUALITY_RANGE[1] + 1))
        substituted = True

    return DegradationRecord(
        kernel_spec=kernel_spec,
        noise=noise,
        compression=CompressionSpec(kind=ckind, level=level),
        seed=seed,
        source_id=source_id,
        pipeline="complex",
        substituted_compression=substituted,
    )


def degrade_complex(hr: np.ndarray, rng: np.random.Generator | None = None,
                    *, seed: int | None = None, source_id: str = "",
                    backend: ExternalEncoder | None = None,
                    h264_policy: str = "substitute"):
    """Full pipeline: 7-family blur, x4 bicubic, noise, JPEG/H.264."""
    record = sample_complex_record(
        _fresh_seed(rng, seed), source_id=source_id, backend=backend,
        h264_policy=h264_policy,
    )
    return apply_record(hr, record, backend=backend), record


# --- fixed-parameter testing scenarios --------------------------------------

@dataclass(frozen=True)
class ScenarioVariant:
    """One concrete run of a named scenario (noise variants expanded)."""

    scenario: str
    blur: str = "none"         # "none" | "iso" | "aniso"
    noise_kind: str = "none"   # "none" | "gaussian" | "poisson"
    grey: bool = False
    compression_kind: str = "none"  # "none" | "jpeg" | "h264"

    @property
    def pipeline_tag(self) -> str:
        return f"scenario:{self.scenario}"


_SCENARIO_AXES = {
    # name -> (blur options, noise options, compression options)
    "Iso": (("iso",), ("none",), ("none",)),
    "Aniso": (("aniso",), ("none",), ("none",)),
    "Gaussian": (("none",), ("gaussian",), ("none",)),
    "Poisson": (("none",), ("poisson",), ("none",)),
    "JPEG": (("none",), ("none",), ("jpeg",)),
    "JM": (("none",), ("none",), ("h264",)),
    "Iso + Gaussian": (("iso",), ("gaussian",), ("none",)),
    "Gaussian + JPEG": (("none",), ("gaussian",), ("jpeg",)),
    "Iso + Gaussian + JPEG": (("iso",), ("gaussian",), ("jpeg",)),
    "Aniso + Poisson + JM": (("aniso",), ("poisson",), ("h264",)),
    "Iso/Aniso + Gaussian/Poisson + JPEG/JM": (
        ("iso", "aniso"), ("gaussian", "poisson"), ("jpeg", "h264")
    ),
}

# Fixed magnitudes shared by every scenario.
SCENARIO_ISO_SIGMA = 2.0
SCENARIO_ANISO_SIGMA_X = 2.0
SCENARIO_ANISO_SIGMA_Y = 1.0
SCENARIO_GAUSS_SIGMA = 20.0
SCENARIO_POISSON_SCALE = 2.0
SCENARIO_JPEG_QUALITY = 60
SCENARIO_QPI = 30


def scenario_names() -> list:
    return list(_SCENARIO_AXES)


def scenario_variants(name: str) -> list:
    """Expand a scenario row into its concrete variants.

    Noise-bearing scenarios run twice (colour then grey); the combination
    row expands over blur x noise x compression x colour/grey in
    itertools.product order.
    """
    if name not in _SCENARIO_AXES:
        raise ValueError(
            f"unknown scenario {name!r}; expected one of {scenario_names()}"
        )
    blurs, noises, comps = _SCENARIO_AXES[name]
    out = []
    for b in blurs:
        for nk in noises:
            for ck in comps:
                greys = (False, True) if nk != "none" else (False,)
                for grey in greys:
                    out.append(
                        ScenarioVariant(
                            scenario=name, blur=b, noise_kind=nk,
                            grey=grey, compression_kind=ck,
                        )
                    )
    return out


def scenario_record(variant: ScenarioVariant, seed: int, source_id: str = "",
                    backend: ExternalEncoder | None = None,
                    h264_policy: str = "substitute") -> DegradationRecord:
    """Build the record for one scenario variant (theta drawn for aniso)."""
    rng = _stream(seed, _PARAM_STREAM)
    if variant.blur == "iso":
        kernel_spec = BlurKernelSpec(
            shape=KernelShape.ISO_GAUSSIAN, sigma_x=SCENARIO_ISO_SIGMA
        )
    elif variant.blur == "aniso":
        theta = float(rng.uniform(-math.pi, math.pi))
        kernel_spec = BlurKernelSpec(
            shape=KernelShape.ANISO_GAUSSIAN,
            sigma_x=SCENARIO_ANISO_SIGMA_X,
            sigma_y=SCENARIO_ANISO_SIGMA_Y,
            theta=theta,
        )
    else:
        kernel_spec = None

    if variant.noise_kind == "gaussian":
        noise = NoiseSpec(kind="gaussian", magnitude=SCENARIO_GAUSS_SIGMA, grey=variant.grey)
    elif variant.noise_kind == "poisson":
        noise = NoiseSpec(kind="poisson", magnitude=SCENARIO_POISSON_SCALE, grey=variant.grey)
    else:
        noise = NoiseSpec()

    substituted = False
    ckind = variant.compression_kind
    level = {"jpeg": SCENARIO_JPEG_QUALITY, "h264": SCENARIO_QPI, "none": 0}[ckind]
    if ckind == "h264" and backend is None:
        if h264_policy == "abort":
            raise H264UnavailableError(
                f"scenario requires h264 and policy is abort; set {H264_CMD_ENV}"
            )
        ckind, level, substituted = "jpeg", SCENARIO_JPEG_QUALITY, True

    return DegradationRecord(
        kernel_spec=kernel_spec,
        noise=noise,
        compression=CompressionSpec(kind=ckind, level=level),
        seed=seed,
        source_id=source_id,
        pipeline=variant.pipeline_tag,
        substituted_compression=substituted,
    )


def apply_scenario(hr: np.ndarray, scenario, rng: np.random.Generator | None = None,
                   *, seed: int | None = None, source_id: str = "",
                   backend: ExternalEncoder | None = None,
                   h264_policy: str = "substitute"):
    """Apply a scenario preset (a name's first variant, or a ScenarioVariant)."""
    if isinstance(scenario, str):
        scenario = scenario_variants(scenario)[0]
    record = scenario_record(
        scenario, _fresh_seed(rng, seed), source_id=source_id,
        backend=backend, h264_policy=h264_policy,
    )
    return apply_record(hr, record, backend=backend), record


def modcrop(image: np.ndarray, scale: int = SCALE) -> np.ndarray:
    """Crop bottom/right so both dimensions divide the scale."""
    image = check_image(image)
    h = image.shape[0] - image.shape[0] % scale
    w = image.shape[1] - image.shape[1] % scale
    return image[:h, :w]
