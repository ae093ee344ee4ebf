"""Classical dual-view fusion baselines: voxel-wise averaging and joint Richardson-Lucy."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DivergenceError, ParameterError
from .forward import PSF, ViewPair, _convolve_array
from .volume import Volume3D


@dataclass(frozen=True)
class RLConfig:
    iterations: int = 40
    epsilon: float = 1e-8
    clamp_nonnegative: bool = True

    def __post_init__(self):
        if self.iterations < 1:
            raise ParameterError("iterations must be >= 1")
        if not self.epsilon > 0:
            raise ParameterError("epsilon must be > 0")


def fuse_average(views: ViewPair) -> Volume3D:
    a, b = views.view_a, views.view_b
    if a.shape != b.shape:
        raise ParameterError(f"view shapes differ: {a.shape} vs {b.shape}")
    out = 0.5 * (a.data.astype(np.float64) + b.data.astype(np.float64))
    return a.with_data(out.astype(a.dtype))


def _check_psf(psf: PSF, name: str):
    total = float(psf.kernel.sum())
    if abs(total - 1.0) > 1e-6 or np.any(psf.kernel < 0):
        raise ParameterError(f"{name} is not a normalized PSF (sum {total:.8g})")


def joint_richardson_lucy(
    views: ViewPair,
    psf_a: Optional[PSF] = None,
    psf_b: Optional[PSF] = None,
    cfg: RLConfig = RLConfig(),
    callback=None,
) -> Volume3D:
    """Alternating two-view Richardson-Lucy deconvolution.

    Starts at the voxel-wise mean of the views and applies, per full
    iteration, ``u <- u * H_k^T(g_k / (H_k u + eps))`` first for View A and
    then for View B.  The views must already be registered to the frame of
    the unknown volume.  ``callback(iteration, u)`` is called after every
    full iteration when given.
    """
    psf_a = views.psf_a if psf_a is None else psf_a
    psf_b = views.psf_b if psf_b is None else psf_b
    _check_psf(psf_a, "psf_a")
    _check_psf(psf_b, "psf_b")
    g = [views.view_a.data.astype(np.float64), views.view_b.data.astype(np.float64)]
    if cfg.clamp_nonnegative:
        g = [np.maximum(x, 0.0) for x in g]
    kernels = [psf_a.kernel, psf_b.kernel]
    adjoints = [k[::-1, ::-1, ::-1] for k in kernels]
    limit = 1e3 * max(float(x.max()) for x in g)

    u = 0.5 * (g[0] + g[1])
    if cfg.clamp_nonnegative:
        u = np.maximum(u, 0.0)
    for it in range(1, cfg.iterations + 1):
        for gk, hk, hk_t in zip(g, kernels, adjoints):
            blurred = _convolve_array(u, hk)
            u = u * _convolve_array(gk / (blurred + cfg.epsilon), hk_t)
            if cfg.clamp_nonnegative:
                u = np.maximum(u, 0.0)
        peak = float(u.max())
        if not np.isfinite(peak) or peak > limit:
            raise DivergenceError(it, peak)
        if callback is not None:
            callback(it, u)
    return views.view_a.with_data(u.astype(views.view_a.dtype))
