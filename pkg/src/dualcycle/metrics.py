"""PSNR and fully 3D SSIM, plus JSON rows and a plain-text summary table."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, List, Sequence

import numpy as np
from scipy import ndimage

from .errors import ParameterError
from .volume import Volume3D

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


@dataclass(frozen=True)
class MetricReport:
    psnr_db: float
    ssim: float
    data_range: float = 1.0


def _pair(ref, test):
    a = ref.data if isinstance(ref, Volume3D) else np.asarray(ref)
    b = test.data if isinstance(test, Volume3D) else np.asarray(test)
    if a.shape != b.shape:
        raise ParameterError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a.astype(np.float64), b.astype(np.float64)


def psnr(ref, test, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when the inputs are identical."""
    a, b = _pair(ref, test)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(data_range**2 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 1D Gaussian taps; the 3D window is their outer product."""
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-(x**2) / (2.0 * sigma**2))
    return w / w.sum()


def _filter_valid(arr, w):
    # separable correlation, then keep only positions whose window lies inside
    out = arr
    for axis in range(arr.ndim):
        out = ndimage.correlate1d(out, w, axis=axis, mode="constant", cval=0.0)
    r = len(w) // 2
    return out[tuple(slice(r, n - r) for n in arr.shape)]


def ssim_map(ref, test, window: int = SSIM_WINDOW, k1: float = 0.01, k2: float = 0.03,
             data_range: float = 1.0, sigma: float = SSIM_SIGMA) -> np.ndarray:
    a, b = _pair(ref, test)
    if window % 2 == 0:
        raise ParameterError("window size must be odd")
    if min(a.shape) < window:
        raise ParameterError(f"volume shape {a.shape} smaller than SSIM window {window}")
    w = gaussian_window(window, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_a = _filter_valid(a, w)
    mu_b = _filter_valid(b, w)
    var_a = _filter_valid(a * a, w) - mu_a**2
    var_b = _filter_valid(b * b, w) - mu_b**2
    cov = _filter_valid(a * b, w) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim(ref, test, window: int = SSIM_WINDOW, k1: float = 0.01, k2: float = 0.03,
         data_range: float = 1.0) -> float:
    """Mean local SSIM over all positions where the 3D Gaussian window fits."""
    return float(ssim_map(ref, test, window, k1, k2, data_range).mean())


def evaluate(ref, test, data_range: float = 1.0) -> MetricReport:
    return MetricReport(psnr(ref, test, data_range), ssim(ref, test, data_range=data_range), data_range)


# -- reporting -------------------------------------------------------------

REPORT_HEADER = {
    "ssim": f"fully 3D, Gaussian window {SSIM_WINDOW}^3 sigma {SSIM_SIGMA}, K1=0.01 K2=0.03",
    "data_range": 1.0,
}


def metric_row(method: str, volume_id, report: MetricReport) -> dict:
    return {"method": method, "volume_id": volume_id, "psnr_db": report.psnr_db, "ssim": report.ssim}


def rows_to_json(rows: Sequence[dict], header: dict = None) -> str:
    doc = {"header": dict(REPORT_HEADER, **(header or {})), "rows": list(rows)}
    return json.dumps(doc, indent=2, sort_keys=True)


def average_by_method(rows: Iterable[dict]) -> List[dict]:
    """Per-method mean PSNR/SSIM in first-seen method order."""
    groups = {}
    for row in rows:
        groups.setdefault(row["method"], []).append(row)
    out = []
    for method, rs in groups.items():
        out.append({
            "method": method,
            "psnr_db": float(np.mean([r["psnr_db"] for r in rs])),
            "ssim": float(np.mean([r["ssim"] for r in rs])),
            "n": len(rs),
        })
    return out


def format_table(rows: Iterable[dict]) -> str:
    """Render averaged rows as a Method / PSNR [dB] / SSIM table."""
    avg = average_by_method(rows)
    width = max([len("Method")] + [len(r["method"]) for r in avg])
    lines = [f"{'Method':<{width}}  {'PSNR [dB]':>9}  {'SSIM':>6}", "-" * (width + 19)]
    for r in avg:
        lines.append(f"{r['method']:<{width}}  {r['psnr_db']:>9.2f}  {r['ssim']:>6.3f}")
    return "\n".join(lines) + "\n"

