# Copyright 2026 CPNet Contributors
# SPDX-License-Identifier: AGPL-3.0-or-later
"""
Frame-quality metrics and corpus evaluation.

Generated frame t of a clip is compared with ground-truth frame t for every
t in 3..T-4, the frames that own a full landmark window.
"""

import csv
import math
from typing import Callable, Iterable, List, Optional, Sequence

import numpy as np
from skimage.metrics import structural_similarity

from baseModels import ClipMetrics, MetricReport
from data_pipeline import FrameClip, WINDOW_RADIUS
from template_cache import get_template_cache
from utils import ConfigError, ShapeMismatch, require_shape

PSNR_CAP_DB = 100.0
SSIM_MIN_SIDE = 11
SUPPORTED_METRICS = ('ssim', 'psnr')
DECLARED_METRICS = ('fvd', 'lse_c', 'lse_d')


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    require_shape("image", a.shape, b.shape)
    return a, b


def psnr(a: np.ndarray, b: np.ndarray, max_value: float = 1.0) -> float:
    """10 log10(MAX^2 / MSE), capped at 100 dB when MSE < MAX^2 * 1e-10."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse < max_value ** 2 * 1e-10:
        return PSNR_CAP_DB
    return 10.0 * math.log10(max_value ** 2 / mse)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """
    Gaussian-window SSIM (sigma 1.5, 11x11, K1 0.01, K2 0.03, data range 1),
    averaged over channels for colour images.
    """
    a, b = _pair(a, b)
    if a.ndim not in (2, 3) or min(a.shape[:2]) < SSIM_MIN_SIDE:
        raise ShapeMismatch(f"SSIM needs images of at least {SSIM_MIN_SIDE}x{SSIM_MIN_SIDE}, got {a.shape}")
    return float(structural_similarity(
        a, b,
        gaussian_weights=True,
        sigma=1.5,
        use_sample_covariance=False,
        data_range=1.0,
        K1=0.01,
        K2=0.03,
        channel_axis=-1 if a.ndim == 3 else None,
    ))


def parse_metric_names(names: Iterable[str]) -> List[str]:
    """Accepts 'ssim,psnr' style names; declared-only metrics are allowed and stay empty."""
    parsed = []
    for name in names:
        key = name.strip().lower().replace('-', '_')
        if key not in SUPPORTED_METRICS + DECLARED_METRICS:
            raise ConfigError(f"unknown metric '{name}'")
        parsed.append(key)
    return parsed


def clip_metrics(clip: FrameClip, generated: np.ndarray) -> ClipMetrics:
    truth = clip.frames[WINDOW_RADIUS:len(clip) - WINDOW_RADIUS]
    require_shape(f"generated frames of clip '{clip.name}'", generated.shape, truth.shape)
    ssim_values = [ssim(fake, real) for fake, real in zip(generated, truth)]
    psnr_values = [psnr(fake, real) for fake, real in zip(generated, truth)]
    return ClipMetrics(name=clip.name, frames=len(truth),
                       ssim=float(np.mean(ssim_values)), psnr=float(np.mean(psnr_values)))


def evaluate_corpus(generate_fn: Callable[[FrameClip], np.ndarray], clips: Sequence[FrameClip],
                    logTool=None) -> MetricReport:
    """
    Runs generate_fn on every clip (sorted by name) and aggregates SSIM and
    PSNR as unweighted means of the per-clip means.
    """
    results = []
    for clip in sorted(clips, key=lambda c: c.name):
        result = clip_metrics(clip, np.asarray(generate_fn(clip)))
        if logTool:
            logTool.log(service='Evaluate', level='info',
                        message=f"{result.name}: SSIM {result.ssim:.4f} PSNR {result.psnr:.2f} dB over {result.frames} frames")
        results.append(result)
    if not results:
        return MetricReport()
    return MetricReport(clips=results,
                        ssim=float(np.mean([r.ssim for r in results])),
                        psnr=float(np.mean([r.psnr for r in results])))


def write_report_csv(report: MetricReport, path: str):
    with open(path, "w", newline="") as stream:
        writer = csv.writer(stream)
        writer.writerow(['clip', 'frames', 'ssim', 'psnr'])
        for clip in report.clips:
            writer.writerow([clip.name, clip.frames, repr(clip.ssim), repr(clip.psnr)])
        writer.writerow(['corpus', sum(c.frames for c in report.clips),
                         '' if report.ssim is None else repr(report.ssim),
                         '' if report.psnr is None else repr(report.psnr)])


def render_report(report: MetricReport, method: str = 'CPNet', logTool: Optional[object] = None) -> str:
    return get_template_cache(logTool).render('metric_report.md.j2', report=report, method=method)
