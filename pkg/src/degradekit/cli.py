"""Command-line front end.

Subcommands: synth (dataset synthesis), kernels (sample kernels to JSON),
pca fit|project, label (SupMoCo labels for a manifest), metrics (directory
PSNR/SSIM report), selftest.

Exit codes: 0 success, 1 usage error, 2 data error, 3 backend error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import imgio
from .degrade import (
    SCALE,
    ExternalEncoder,
    H264UnavailableError,
    StageError,
    apply_record,
    derive_seed,
    modcrop,
    sample_complex_record,
    sample_simple_record,
    scenario_names,
    scenario_record,
    scenario_variants,
)
from .kernels import (
    PCA_COMPONENTS,
    PCA_FIT_COUNT,
    PCA_FIT_SEED,
    PcaBasis,
    fit_pca,
    project_kernel,
    sample_fit_population,
    sample_kernel_spec,
    synthesize_kernel,
)
from .metadata import SupMoCoLabelConfig, supmoco_label
from .metrics import evaluate_dirs
from .selftest import run_selftest

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_BACKEND = 3

_PIPELINES = ("simple", "complex")
_POLICIES = ("substitute", "abort")


class UsageError(Exception):
    """Bad flag/config combination detected after parsing."""


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; the contract reserves 2
    # for data errors, so usage problems exit 1 instead.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class RunConfig:
    """Effective synthesis configuration (config file merged with flags)."""

    input_dir: str
    output_dir: str
    pipeline: str = "simple"
    master_seed: int = 0
    per_hr: int | None = None  # None: 1 for simple, 5 for complex
    scenario: str | None = None
    h264_policy: str = "substitute"
    sigma: float | None = None
    crop_border: int = 4
    workers: int | None = None

    def resolved_per_hr(self) -> int:
        if self.per_hr is not None:
            return int(self.per_hr)
        return 1 if self.pipeline == "simple" else 5

    def generative_dict(self) -> dict:
        """The fields that determine output content (not placement)."""
        return {
            "pipeline": self.pipeline,
            "master_seed": int(self.master_seed),
            "per_hr": None if self.scenario else self.resolved_per_hr(),
            "scenario": self.scenario,
            "h264_policy": self.h264_policy,
            "sigma": self.sigma,
            "scale": SCALE,
        }


_CONFIG_KEYS = (
    "input_dir", "output_dir", "pipeline", "master_seed", "per_hr",
    "scenario", "h264_policy", "sigma", "crop_border", "workers",
)


def _load_run_config(args) -> RunConfig:
    merged: dict = {}
    if args.config is not None:
        with open(args.config) as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ValueError(f"config {args.config!r} must hold a JSON object")
        unknown = sorted(set(raw) - set(_CONFIG_KEYS))
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        merged.update(raw)
    for key in _CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is not None:  # flags win over the config file
            merged[key] = value

    if "input_dir" not in merged or "output_dir" not in merged:
        raise UsageError("synth needs --input and --output (flags or config file)")
    cfg = RunConfig(**merged)

    if cfg.pipeline not in _PIPELINES:
        raise UsageError(f"pipeline {cfg.pipeline!r} not one of {_PIPELINES}")
    if cfg.h264_policy not in _POLICIES:
        raise UsageError(f"h264_policy {cfg.h264_policy!r} not one of {_POLICIES}")
    if cfg.per_hr is not None and cfg.per_hr < 1:
        raise UsageError(f"per_hr {cfg.per_hr} must be >= 1")
    if cfg.scenario is not None and cfg.scenario not in scenario_names():
        known = ", ".join(sorted(scenario_names()))
        raise UsageError(f"unknown scenario {cfg.scenario!r}; choose from: {known}")
    if cfg.sigma is not None and (cfg.pipeline != "simple" or cfg.scenario):
        raise UsageError("--sigma only applies to the simple pipeline")
    if cfg.workers is not None and cfg.workers < 1:
        raise UsageError(f"workers {cfg.workers} must be >= 1")
    return cfg


def _synth_jobs(cfg: RunConfig, sources: list) -> list:
    """(source_id, hr_path, replica, variant-or-None) work items."""
    jobs = []
    if cfg.scenario is not None:
        variants = scenario_variants(cfg.scenario)
        for sid, path in sources:
            for replica, variant in enumerate(variants):
                jobs.append((sid, path, replica, variant))
    else:
        for sid, path in sources:
            for replica in range(cfg.resolved_per_hr()):
                jobs.append((sid, path, replica, None))
    return jobs


def _run_synth_job(cfg: RunConfig, backend, job):
    sid, path, replica, variant = job
    hr = modcrop(imgio.read_image(path))
    seed = derive_seed(cfg.master_seed, sid, replica)
    if variant is not None:
        record = scenario_record(variant, seed, source_id=sid,
                                 backend=backend, h264_policy=cfg.h264_policy)
    elif cfg.pipeline == "simple":
        record = sample_simple_record(seed, source_id=sid, sigma=cfg.sigma)
    else:
        record = sample_complex_record(seed, source_id=sid, backend=backend,
                                       h264_policy=cfg.h264_policy)
    lr = apply_record(hr, record, backend=backend)
    rel = f"{sid}_r{replica}.png"
    imgio.write_image(os.path.join(cfg.output_dir, *rel.split("/")), lr)
    return record, rel, replica


def cmd_synth(args) -> int:
    cfg = _load_run_config(args)
    sources = imgio.list_images(cfg.input_dir)
    if not sources:
        raise ValueError(f"no images found under {cfg.input_dir!r}")
    os.makedirs(cfg.output_dir, exist_ok=True)

    backend = ExternalEncoder.from_env()
    jobs = _synth_jobs(cfg, sources)
    if cfg.workers == 1 or len(jobs) <= 1:
        entries = [_run_synth_job(cfg, backend, job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            entries = list(pool.map(lambda j: _run_synth_job(cfg, backend, j), jobs))

    generative = cfg.generative_dict()
    header = {
        "config_hash": imgio.config_hash(generative),
        **generative,
        "source_count": len(sources),
        "lr_count": len(entries),
    }
    manifest_path = os.path.join(cfg.output_dir, "manifest.jsonl")
    imgio.write_manifest(manifest_path, header, entries)
    print(f"wrote {len(entries)} LR images and {manifest_path}")
    return EXIT_OK


def _emit(args, text: str) -> None:
    if getattr(args, "out", None):
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        with open(args.out, "w") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    else:
        print(text)


def cmd_kernels(args) -> int:
    rng = np.random.default_rng(args.seed)
    kernels = []
    for _ in range(args.count):
        spec = sample_kernel_spec(rng, args.pipeline, size=args.size)
        kern = synthesize_kernel(spec)
        kernels.append({"spec": spec.to_dict(),
                        "weights": kern.weights.ravel().tolist()})
    _emit(args, json.dumps({
        "pipeline": args.pipeline,
        "seed": args.seed,
        "size": args.size,
        "count": args.count,
        "kernels": kernels,
    }))
    return EXIT_OK


def cmd_pca_fit(args) -> int:
    population = sample_fit_population(args.pipeline, count=args.count,
                                       seed=args.seed, size=args.size)
    basis = fit_pca(population, k=args.components, fit_seed=args.seed)
    _emit(args, basis.to_json())
    return EXIT_OK


def cmd_pca_project(args) -> int:
    with open(args.basis) as fh:
        basis = PcaBasis.from_json(fh.read())
    _, entries = imgio.read_manifest(args.manifest)
    lines = []
    for record, _, replica in entries:
        if record.kernel_spec is None:
            coeffs = None
        else:
            coeffs = project_kernel(basis, synthesize_kernel(record.kernel_spec)).tolist()
        lines.append(json.dumps({
            "source_id": record.source_id,
            "replica": replica,
            "coefficients": coeffs,
        }))
    _emit(args, "\n".join(lines))
    return EXIT_OK


def cmd_label(args) -> int:
    config = SupMoCoLabelConfig(precision=args.precision)
    _, entries = imgio.read_manifest(args.manifest)
    lines = [
        json.dumps({
            "source_id": record.source_id,
            "label": supmoco_label(record, config),
            "precision": args.precision,
        })
        for record, _, _ in entries
    ]
    _emit(args, "\n".join(lines))
    return EXIT_OK


def cmd_metrics(args) -> int:
    report = evaluate_dirs(args.ref, args.test, crop_border=args.crop_border,
                           swing=args.swing, workers=args.workers)
    _emit(args, json.dumps(report, indent=2))
    return EXIT_OK


def cmd_selftest(args) -> int:
    report = run_selftest(seed=args.seed)
    print(json.dumps(report, indent=2))
    return EXIT_OK if report["passed"] else EXIT_DATA


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="degradekit",
                     description="Blind-SR degradation synthesis toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="degrade a directory of HR images")
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--input", dest="input_dir", help="HR image directory")
    p.add_argument("--output", dest="output_dir", help="LR output directory")
    p.add_argument("--pipeline", choices=_PIPELINES)
    p.add_argument("--master-seed", dest="master_seed", type=int)
    p.add_argument("--per-hr", dest="per_hr", type=int,
                   help="LR replicas per HR image (default 1 simple, 5 complex)")
    p.add_argument("--scenario", help="named test scenario; replaces random sampling")
    p.add_argument("--sigma", type=float,
                   help="fixed blur sigma (simple pipeline only)")
    p.add_argument("--h264-policy", dest="h264_policy", choices=_POLICIES)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("kernels", help="sample blur kernels to JSON")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--pipeline", choices=_PIPELINES, default="complex")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=21)
    p.add_argument("--out")
    p.set_defaults(func=cmd_kernels)

    p = sub.add_parser("pca", help="kernel PCA basis tools")
    pca_sub = p.add_subparsers(dest="pca_command", required=True)

    q = pca_sub.add_parser("fit", help="fit a PCA basis on sampled kernels")
    q.add_argument("--pipeline", choices=_PIPELINES, default="complex")
    q.add_argument("--count", type=int, default=PCA_FIT_COUNT)
    q.add_argument("--seed", type=int, default=PCA_FIT_SEED)
    q.add_argument("--components", type=int, default=PCA_COMPONENTS)
    q.add_argument("--size", type=int, default=21)
    q.add_argument("--out")
    q.set_defaults(func=cmd_pca_fit)

    q = pca_sub.add_parser("project", help="project manifest kernels onto a basis")
    q.add_argument("--basis", required=True, help="basis JSON from `pca fit`")
    q.add_argument("--manifest", required=True)
    q.add_argument("--out")
    q.set_defaults(func=cmd_pca_project)

    p = sub.add_parser("label", help="SupMoCo labels for manifest records")
    p.add_argument("--manifest", required=True)
    p.add_argument("--precision", choices=("double", "triple"), default="double")
    p.add_argument("--out")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("metrics", help="PSNR/SSIM report over two directories")
    p.add_argument("--ref", required=True, help="reference image directory")
    p.add_argument("--test", required=True, help="directory under evaluation")
    p.add_argument("--crop-border", dest="crop_border", type=int, default=4)
    p.add_argument("--swing", choices=("studio", "full"), default="studio")
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("selftest", help="run the built-in consistency checks")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse --help (0) or usage error (1)
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (H264UnavailableError, StageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (ValueError, KeyError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
