"""Y-channel evaluation: BT.601 luma, PSNR, SSIM, directory reports.

PSNR is 10*log10(1/MSE) on the Y plane with a 100 dB cap so identical
images aggregate cleanly. SSIM uses the standard 11x11 Gaussian window
(sigma 1.5, K1=0.01, K2=0.03) at dynamic range 1. Luma defaults to the
studio-swing convention; pass swing="full" for the 0..1 variant.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.signal import fftconvolve

from . import imgio
from .degrade import check_image

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def rgb_to_y(image: np.ndarray, swing: str = "studio") -> np.ndarray:
    """BT.601 luma plane from an RGB image in [0, 1]."""
    image = check_image(image)
    r, g, b = image[:, :, 0], image[:, :, 1], image[:, :, 2]
    if swing == "studio":
        return (16.0 + 65.481 * r + 128.553 * g + 24.966 * b) / 255.0
    if swing == "full":
        return 0.299 * r + 0.587 * g + 0.114 * b
    raise ValueError(f"unknown swing {swing!r}; expected 'studio' or 'full'")


def _paired_y(ref, test, swing):
    ref = check_image(ref)
    test = check_image(test)
    if ref.shape != test.shape:
        raise ValueError(f"shape mismatch {ref.shape} vs {test.shape}")
    return rgb_to_y(ref, swing), rgb_to_y(test, swing)


def psnr_y(ref: np.ndarray, test: np.ndarray, swing: str = "studio") -> float:
    ref_y, test_y = _paired_y(ref, test, swing)
    mse = float(np.mean((ref_y - test_y) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP_DB)


def _ssim_window() -> np.ndarray:
    offsets = np.arange(SSIM_WINDOW) - SSIM_WINDOW // 2
    g = np.exp(-(offsets ** 2) / (2.0 * SSIM_SIGMA ** 2))
    window = np.outer(g, g)
    return window / window.sum()


def ssim_y(ref: np.ndarray, test: np.ndarray, swing: str = "studio") -> float:
    ref_y, test_y = _paired_y(ref, test, swing)
    if min(ref_y.shape) < SSIM_WINDOW:
        raise ValueError(
            f"image {ref_y.shape} smaller than the {SSIM_WINDOW}x"
            f"{SSIM_WINDOW} window")
    window = _ssim_window()
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2

    def filt(x):
        return fftconvolve(x, window, mode="valid")

    mu1 = filt(ref_y)
    mu2 = filt(test_y)
    sigma1 = filt(ref_y * ref_y) - mu1 * mu1
    sigma2 = filt(test_y * test_y) - mu2 * mu2
    sigma12 = filt(ref_y * test_y) - mu1 * mu2
    ssim_map = ((2.0 * mu1 * mu2 + c1) * (2.0 * sigma12 + c2)) / (
        (mu1 * mu1 + mu2 * mu2 + c1) * (sigma1 + sigma2 + c2))
    return float(ssim_map.mean())


def _crop(image: np.ndarray, border: int) -> np.ndarray:
    if border == 0:
        return image
    if 2 * border >= min(image.shape[:2]):
        raise ValueError(
            f"crop border {border} consumes the whole image {image.shape[:2]}")
    return image[border:-border, border:-border]


def _evaluate_pair(ref_path, test_path, crop_border, swing):
    ref = _crop(imgio.read_image(ref_path), crop_border)
    test = _crop(imgio.read_image(test_path), crop_border)
    return {"psnr_db": psnr_y(ref, test, swing),
            "ssim": ssim_y(ref, test, swing)}


def evaluate_dirs(ref_dir: str, test_dir: str, crop_border: int = 4,
                  swing: str = "studio", workers: int | None = None) -> dict:
    """Pair images across two trees by relative id and aggregate metrics.

    Ids present in only one tree are listed under "unmatched"; pairs that
    fail (size mismatch, unreadable file) carry an "error" entry instead
    of metric values and are excluded from the means.
    """
    if crop_border < 0:
        raise ValueError(f"crop_border {crop_border} must be >= 0")
    ref_ids = dict(imgio.list_images(ref_dir))
    test_ids = dict(imgio.list_images(test_dir))
    shared = sorted(set(ref_ids) & set(test_ids))
    unmatched = sorted(set(ref_ids) ^ set(test_ids))

    def job(image_id):
        try:
            entry = _evaluate_pair(ref_ids[image_id], test_ids[image_id],
                                   crop_border, swing)
        except (ValueError, OSError) as exc:
            entry = {"error": str(exc)}
        return {"id": image_id, **entry}

    if workers == 1 or len(shared) <= 1:
        pairs = [job(image_id) for image_id in shared]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            pairs = list(pool.map(job, shared))
    pairs.sort(key=lambda entry: entry["id"])

    scored = [p for p in pairs if "error" not in p]
    return {
        "pairs": pairs,
        "unmatched": unmatched,
        "count": len(scored),
        "crop_border": crop_border,
        "swing": swing,
        "mean_psnr": (float(np.mean([p["psnr_db"] for p in scored]))
                      if scored else None),
        "mean_ssim": (float(np.mean([p["ssim"] for p in scored]))
                      if scored else None),
    }
