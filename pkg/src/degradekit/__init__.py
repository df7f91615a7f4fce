"""Degradation synthesis toolkit for blind super-resolution research.

Submodules:
    kernels      blur kernel families, sampling, and the PCA basis
    resample     bicubic / Lanczos resampling with antialiasing
    degrade      noise, compression, and the simple/complex pipelines
    metadata     degradation encodings, SupMoCo labels, WeakCon weights
    contrastive  queue-based contrastive losses and their gradients
    insertion    metadata insertion blocks (MA, SRMD concat, SFT, DA, DGFMB)
    framework    predictor/restorer plumbing and the iterative loop
    metrics      luma PSNR / SSIM and directory evaluation
    cli          the `degradekit` command-line entry point
"""

from .degrade import (
    CompressionSpec,
    DegradationRecord,
    ExternalEncoder,
    H264UnavailableError,
    NoiseSpec,
    StageError,
    apply_record,
    apply_scenario,
    degrade_complex,
    degrade_simple,
    derive_seed,
    downsample_bicubic,
    modcrop,
    sample_complex_record,
    sample_simple_record,
    scenario_names,
    scenario_record,
    scenario_variants,
    upsample_bicubic,
)
from .kernels import (
    BlurKernelSpec,
    Kernel2D,
    KernelShape,
    PcaBasis,
    fit_pca,
    project_kernel,
    reconstruct_kernel,
    sample_fit_population,
    sample_kernel_spec,
    synthesize_kernel,
)
from .metadata import (
    SimpleSigmaMeta,
    SupMoCoLabelConfig,
    encode_complex,
    encode_simple,
    prediction_error,
    supmoco_label,
    weakcon_weight,
)
from .metrics import evaluate_dirs, psnr_y, rgb_to_y, ssim_y
from .resample import imresize
from .selftest import run_selftest

__version__ = "0.1.0"

__all__ = [
    "BlurKernelSpec",
    "CompressionSpec",
    "DegradationRecord",
    "ExternalEncoder",
    "H264UnavailableError",
    "Kernel2D",
    "KernelShape",
    "NoiseSpec",
    "PcaBasis",
    "SimpleSigmaMeta",
    "StageError",
    "SupMoCoLabelConfig",
    "apply_record",
    "apply_scenario",
    "degrade_complex",
    "degrade_simple",
    "derive_seed",
    "downsample_bicubic",
    "encode_complex",
    "encode_simple",
    "evaluate_dirs",
    "fit_pca",
    "imresize",
    "modcrop",
    "prediction_error",
    "project_kernel",
    "psnr_y",
    "reconstruct_kernel",
    "rgb_to_y",
    "run_selftest",
    "sample_complex_record",
    "sample_fit_population",
    "sample_kernel_spec",
    "sample_simple_record",
    "scenario_names",
    "scenario_record",
    "scenario_variants",
    "ssim_y",
    "supmoco_label",
    "synthesize_kernel",
    "upsample_bicubic",
    "weakcon_weight",
]
