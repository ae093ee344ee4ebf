"""Synthetic filament phantoms: random line segments plus an elastic grid deformation."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.interpolate import make_interp_spline

from .errors import ParameterError, PhantomGenerationError
from .volume import Volume3D

# profile is cut to exactly zero beyond this many sigmas from the centre line
PROFILE_CUTOFF = 3.0


@dataclass(frozen=True)
class PhantomSpec:
    dims: Tuple[int, int, int] = (120, 120, 120)
    line_count_range: Tuple[int, int] = (30, 50)
    line_thickness_sigma: float = 1.0
    elastic_grid: int = 4
    elastic_sigma: float = 6.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        object.__setattr__(self, "line_count_range", tuple(int(n) for n in self.line_count_range))
        lo, hi = self.line_count_range
        if not (1 <= lo <= hi <= 10_000):
            raise ParameterError(f"line_count_range must lie within [1, 10000], got {self.line_count_range}")
        if len(self.dims) != 3 or min(self.dims) < 16:
            raise ParameterError(f"phantom dims must each be >= 16, got {self.dims}")
        if self.line_thickness_sigma <= 0:
            raise ParameterError("line_thickness_sigma must be > 0")
        if self.elastic_grid < 2:
            raise ParameterError("elastic_grid must be >= 2")
        if self.elastic_sigma < 0:
            raise ParameterError("elastic_sigma must be >= 0")

    def to_dict(self):
        d = asdict(self)
        d["dims"] = list(self.dims)
        d["line_count_range"] = list(self.line_count_range)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def sample_segments(spec: PhantomSpec) -> np.ndarray:
    """Endpoints of the random segments, shape ``(n, 2, 3)`` in voxel coordinates."""
    rng = np.random.default_rng([spec.seed, 0])
    lo, hi = spec.line_count_range
    n = int(rng.integers(lo, hi + 1))
    upper = np.asarray(spec.dims, dtype=np.float64) - 1.0
    return rng.uniform(0.0, 1.0, size=(n, 2, 3)) * upper


def rasterize_segments(dims, segments: np.ndarray, sigma: float) -> np.ndarray:
    """Render segments with a Gaussian transverse profile, combined by voxel-wise maximum."""
    out = np.zeros(dims, dtype=np.float64)
    reach = PROFILE_CUTOFF * sigma
    dims_arr = np.asarray(dims)
    for p0, p1 in segments:
        lo = np.maximum(np.floor(np.minimum(p0, p1) - reach).astype(int), 0)
        hi = np.minimum(np.ceil(np.maximum(p0, p1) + reach).astype(int) + 1, dims_arr)
        grid = np.stack(
            np.meshgrid(*[np.arange(a, b, dtype=np.float64) for a, b in zip(lo, hi)], indexing="ij"),
            axis=-1,
        )
        d = p1 - p0
        length2 = float(d @ d)
        rel = grid - p0
        if length2 > 0:
            s = np.clip(rel @ d / length2, 0.0, 1.0)
            rel = rel - s[..., None] * d
        dist2 = np.einsum("...i,...i->...", rel, rel)
        profile = np.exp(-dist2 / (2.0 * sigma**2))
        profile[dist2 > reach**2] = 0.0
        region = out[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]]
        np.maximum(region, profile, out=region)
    return out


def draw_random_lines(spec: PhantomSpec, segments: Optional[np.ndarray] = None) -> Volume3D:
    """Rasterize ``N ~ U{line_count_range}`` random segments.

    ``segments`` overrides the random endpoints (used for degenerate cases).
    """
    if segments is None:
        segments = sample_segments(spec)
    arr = rasterize_segments(spec.dims, np.asarray(segments, dtype=np.float64), spec.line_thickness_sigma)
    return Volume3D(arr.astype(np.float32))


def _interp_matrix(n_knots: int, n_out: int) -> np.ndarray:
    """Rows evaluate the interpolating cubic spline through ``n_knots`` evenly spaced knots."""
    knots = np.linspace(0.0, n_out - 1, n_knots)
    x = np.arange(n_out, dtype=np.float64)
    k = min(3, n_knots - 1)
    eye = np.eye(n_knots)
    return np.stack([make_interp_spline(knots, eye[j], k=k)(x) for j in range(n_knots)], axis=1)


def control_displacements(grid: int, sigma: float, seed: int) -> np.ndarray:
    """Control-point displacement vectors, shape ``(3, grid, grid, grid)``."""
    rng = np.random.default_rng([seed, 1])
    return rng.normal(0.0, 1.0, size=(3, grid, grid, grid)) * sigma


def displacement_field(shape, control: np.ndarray) -> np.ndarray:
    """Tricubic interpolation of control vectors onto the dense grid, shape ``(3, *shape)``."""
    g = control.shape[1:]
    wz, wy, wx = (_interp_matrix(gi, n) for gi, n in zip(g, shape))
    return np.einsum("cijk,zi,yj,xk->czyx", control, wz, wy, wx, optimize=True)


def elastic_deform(v: Volume3D, grid: int = 4, sigma: float = 6.0, seed: int = 0) -> Volume3D:
    """Backward-warp ``v`` by a smooth random displacement field.

    Displacements ``~ N(0, sigma^2)`` live on a ``grid**3`` lattice of control
    points spanning the volume; sampling is trilinear with clamp-to-edge, so
    the output range never leaves the input range.
    """
    if grid < 2:
        raise ParameterError("grid must be >= 2")
    if sigma == 0:
        return v.with_data(v.data.copy())
    control = control_displacements(grid, sigma, seed)
    disp = displacement_field(v.shape, control)
    coords = np.indices(v.shape, dtype=np.float64) + disp
    out = ndimage.map_coordinates(v.data.astype(np.float64), coords, order=1, mode="nearest")
    return v.with_data(out.astype(v.dtype))


def minmax_scale(arr: np.ndarray) -> np.ndarray:
    lo, hi = float(arr.min()), float(arr.max())
    if hi <= lo:
        raise PhantomGenerationError("volume is constant; cannot scale to [0, 1]")
    return (np.asarray(arr, dtype=np.float64) - lo) / (hi - lo)


def generate_phantom(spec: PhantomSpec) -> Volume3D:
    lines = draw_random_lines(spec)
    if not np.any(lines.data > 0):
        raise PhantomGenerationError(f"no lines rasterized for seed {spec.seed}")
    deformed = elastic_deform(lines, spec.elastic_grid, spec.elastic_sigma, spec.seed)
    return Volume3D(minmax_scale(deformed.data).astype(np.float32))


def generate_dataset(specs: Sequence[PhantomSpec], max_attempts: int = 10) -> List[Volume3D]:
    """One scaled phantom per spec; an empty draw is retried with the next seed."""
    if len(specs) == 0:
        raise ParameterError("need at least one PhantomSpec")
    out = []
    for spec in specs:
        for attempt in range(max_attempts):
            try:
                out.append(generate_phantom(_reseed(spec, spec.seed + attempt)))
                break
            except PhantomGenerationError:
                continue
        else:
            raise PhantomGenerationError(f"spec with seed {spec.seed} failed {max_attempts} times")
    return out


def _reseed(spec: PhantomSpec, seed: int) -> PhantomSpec:
    if seed == spec.seed:
        return spec
    d = spec.to_dict()
    d["seed"] = seed
    return PhantomSpec.from_dict(d)
