"""Dual-view image formation: anisotropic blur, affine mismatch, 90 degree rotation, noise.

View A is ``A_A H_A u + n`` and View B is ``R A_B H_B u + n``; operators are
applied right to left (blur, then affine, then rotation).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .errors import ParameterError
from .volume import AXIS_INDEX, Volume3D, read_rv1, write_rv1


@dataclass(frozen=True, eq=False)
class PSF:
    """A normalized, centred, nonnegative 3D blur kernel."""

    kernel: np.ndarray
    blur_axis: str = "z"
    sigma: Optional[float] = None

    def __post_init__(self):
        k = np.array(self.kernel, dtype=np.float64, copy=True)
        if k.ndim != 3:
            raise ParameterError(f"PSF kernel must be 3D, got shape {k.shape}")
        if any(n % 2 == 0 for n in k.shape):
            raise ParameterError(f"PSF kernel dims must be odd, got {k.shape}")
        if np.any(k < 0) or not np.all(np.isfinite(k)):
            raise ParameterError("PSF kernel entries must be finite and >= 0")
        if abs(k.sum() - 1.0) > 1e-6:
            raise ParameterError(f"PSF kernel must sum to 1 (got {k.sum():.8g})")
        if self.blur_axis not in ("z", "x"):
            raise ParameterError(f"blur_axis must be 'z' or 'x', got {self.blur_axis!r}")
        k.setflags(write=False)
        object.__setattr__(self, "kernel", k)

    @property
    def shape(self):
        return self.kernel.shape

    def flipped(self) -> "PSF":
        """Kernel of the adjoint operator."""
        return PSF(self.kernel[::-1, ::-1, ::-1].copy(), self.blur_axis, self.sigma)


def gaussian_psf(sigma: float, blur_axis: str = "z", truncation_radius: Optional[int] = None) -> PSF:
    """1D Gaussian along ``blur_axis`` embedded in a 3D kernel.

    The kernel has ``2 * radius + 1`` taps along the blur axis and size 1
    elsewhere; ``radius`` defaults to ``ceil(4 * sigma)``.
    """
    if not sigma > 0:
        raise ParameterError(f"sigma must be > 0, got {sigma}")
    radius = int(math.ceil(4 * sigma)) if truncation_radius is None else int(truncation_radius)
    if radius < 0:
        raise ParameterError("truncation_radius must be >= 0")
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    profile = np.exp(-(offsets**2) / (2.0 * sigma**2))
    profile /= profile.sum()
    shape = [1, 1, 1]
    shape[AXIS_INDEX[blur_axis]] = profile.size
    return PSF(profile.reshape(shape), blur_axis, float(sigma))


def delta_psf(blur_axis: str = "z") -> PSF:
    return PSF(np.ones((1, 1, 1)), blur_axis, None)


def _convolve_array(arr: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    for n, k in zip(arr.shape, kernel.shape):
        if k > 2 * n:
            raise ParameterError(f"kernel shape {kernel.shape} too large for volume shape {arr.shape}")
    return ndimage.convolve(np.asarray(arr, dtype=np.float64), kernel, mode="constant", cval=0.0)


def convolve3d(v: Volume3D, psf: PSF) -> Volume3D:
    """Same-size linear convolution with zero padding."""
    out = _convolve_array(v.data, psf.kernel)
    return v.with_data(out.astype(v.dtype))


def save_psf(psf: PSF, path) -> None:
    write_rv1(path, psf.kernel, (1.0, 1.0, 1.0), {"blur_axis": psf.blur_axis, "sigma": psf.sigma})


def load_psf(path) -> PSF:
    data, header = read_rv1(path)
    kernel = data.astype(np.float64)
    # float32 storage perturbs the sum at the 1e-7 level
    kernel /= kernel.sum()
    return PSF(kernel, header.get("blur_axis", "z"), header.get("sigma"))


# -- affine geometry -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AffineTransform:
    """``p' = matrix @ p + translation`` on (z, y, x) coordinates normalized to [-1, 1]."""

    matrix: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64, copy=True).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64, copy=True).reshape(3)
        if abs(np.linalg.det(m)) <= 1e-9:
            raise ParameterError("affine matrix is singular")
        m.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "translation", t)

    def inverse(self) -> "AffineTransform":
        inv = np.linalg.inv(self.matrix)
        return AffineTransform(inv, -inv @ self.translation)

    def compose(self, other: "AffineTransform") -> "AffineTransform":
        """``self`` after ``other``."""
        return AffineTransform(self.matrix @ other.matrix, self.matrix @ other.translation + self.translation)

    def to_dict(self):
        return {"matrix": self.matrix.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["matrix"]), np.asarray(d["translation"]))

    @classmethod
    def identity(cls):
        return cls()


def rotation_perp() -> AffineTransform:
    """90 degree rotation about the y axis: (z, y, x) -> (x, y, -z)."""
    m = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])
    return AffineTransform(m, np.zeros(3))


def _index_affine(t: AffineTransform, shape):
    """Express the backward map of ``t`` as ``in_idx = A @ out_idx + b`` in voxel indices."""
    n = np.asarray(shape, dtype=np.float64)
    centre = (n - 1) / 2.0
    half = np.where(n > 1, (n - 1) / 2.0, 1.0)
    inv = t.inverse()
    a = np.diag(half) @ inv.matrix @ np.diag(1.0 / half)
    b = centre + half * inv.translation - a @ centre
    return a, b


def _affine_array(arr: np.ndarray, t: AffineTransform) -> np.ndarray:
    a, b = _index_affine(t, arr.shape)
    return ndimage.affine_transform(
        np.asarray(arr, dtype=np.float64), a, offset=b, order=1, mode="nearest"
    )


def apply_affine(v: Volume3D, t: AffineTransform) -> Volume3D:
    """Backward-warp ``v`` by ``t`` with trilinear, clamp-to-edge sampling."""
    return v.with_data(_affine_array(v.data, t).astype(v.dtype))


@dataclass(frozen=True)
class AffineMismatchSpec:
    matrix_perturbation_bound: float = 0.0025
    translation_bound: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.matrix_perturbation_bound < 0 or self.translation_bound < 0:
            raise ParameterError("mismatch bounds must be >= 0")


def sample_mismatch(spec: AffineMismatchSpec, stream: int = 0) -> AffineTransform:
    """Draw ``(I + N, t)`` with i.i.d. uniform entries inside the configured bounds.

    ``stream`` selects an independent draw for the same seed (View A uses 0,
    View B uses 1).
    """
    rng = np.random.default_rng([spec.seed, stream])
    n = rng.uniform(-1.0, 1.0, size=(3, 3)) * spec.matrix_perturbation_bound
    t = rng.uniform(-1.0, 1.0, size=3) * spec.translation_bound
    return AffineTransform(np.eye(3) + n, t)


@dataclass(frozen=True)
class NoiseSpec:
    model: str = "none"
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.model not in ("none", "gaussian"):
            raise ParameterError(f"noise model must be 'none' or 'gaussian', got {self.model!r}")
        if self.sigma < 0:
            raise ParameterError("noise sigma must be >= 0")
        if (self.sigma == 0) != (self.model == "none"):
            raise ParameterError("noise sigma must be 0 exactly when model is 'none'")


def add_noise(arr: np.ndarray, noise: NoiseSpec, stream: int) -> np.ndarray:
    if noise.model == "none":
        return arr
    rng = np.random.default_rng([noise.seed, stream])
    return arr + rng.normal(0.0, noise.sigma, size=arr.shape)


@dataclass(frozen=True, eq=False)
class ViewPair:
    view_a: Volume3D
    view_b: Volume3D
    psf_a: PSF
    psf_b: PSF
    mismatch_a: AffineTransform = field(default_factory=AffineTransform)
    mismatch_b: AffineTransform = field(default_factory=AffineTransform)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    rotated: bool = False

    def __post_init__(self):
        if self.view_a.shape != self.view_b.shape:
            raise ParameterError(f"view shapes differ: {self.view_a.shape} vs {self.view_b.shape}")
        if self.view_a.spacing != self.view_b.spacing:
            raise ParameterError("view spacings differ")

    @property
    def shape(self):
        return self.view_a.shape


def simulate_views(
    u: Volume3D,
    psf_a: PSF,
    psf_b: PSF,
    mismatch: AffineMismatchSpec = AffineMismatchSpec(),
    noise: NoiseSpec = NoiseSpec(),
    apply_rotation: bool = False,
) -> ViewPair:
    """Degrade a ground-truth volume into a View A / View B pair."""
    if u.data.min() < -1e-6 or u.data.max() > 1 + 1e-6:
        raise ParameterError("ground truth must lie in [0, 1]")
    if apply_rotation and not (u.shape[0] == u.shape[2]):
        raise ParameterError("rotation about y requires equal z and x extents")
    t_a = sample_mismatch(mismatch, stream=0)
    t_b = sample_mismatch(mismatch, stream=1)

    a = _affine_array(_convolve_array(u.data, psf_a.kernel), t_a)
    b = _affine_array(_convolve_array(u.data, psf_b.kernel), t_b)
    if apply_rotation:
        b = _affine_array(b, rotation_perp())
    a = add_noise(a, noise, stream=0)
    b = add_noise(b, noise, stream=1)
    return ViewPair(
        view_a=u.with_data(a.astype(u.dtype)),
        view_b=u.with_data(b.astype(u.dtype)),
        psf_a=psf_a,
        psf_b=psf_b,
        mismatch_a=t_a,
        mismatch_b=t_b,
        noise=noise,
        rotated=apply_rotation,
    )


def register_views(views: ViewPair, undo_mismatch: bool = True) -> ViewPair:
    """Map both views back into the frame of ``u`` using the known simulation transforms.

    The rotation is always undone; ``undo_mismatch`` additionally inverts the
    per-view affine mismatch.  The returned pair carries identity transforms
    for whatever was removed.
    """
    a = views.view_a.data
    b = views.view_b.data
    if views.rotated:
        b = _affine_array(b, rotation_perp().inverse())
    ma, mb = views.mismatch_a, views.mismatch_b
    if undo_mismatch:
        a = _affine_array(a, ma.inverse())
        b = _affine_array(b, mb.inverse())
        ma = mb = AffineTransform.identity()
    dtype = views.view_a.dtype
    return ViewPair(
        view_a=views.view_a.with_data(np.asarray(a, dtype=dtype)),
        view_b=views.view_b.with_data(np.asarray(b, dtype=dtype)),
        psf_a=views.psf_a,
        psf_b=views.psf_b,
        mismatch_a=ma,
        mismatch_b=mb,
        noise=views.noise,
        rotated=False,
    )
