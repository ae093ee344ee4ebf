"""Joint deconvolution and fusion of dual-view fluorescence volumes."""
from .volume import (
    SliceSpec,
    Volume3D,
    extract_slice,
    load_volume,
    max_intensity_projection,
    resample_isotropic,
    save_volume,
)
from .forward import (
    PSF,
    AffineMismatchSpec,
    AffineTransform,
    NoiseSpec,
    ViewPair,
    apply_affine,
    convolve3d,
    delta_psf,
    gaussian_psf,
    register_views,
    rotation_perp,
    sample_mismatch,
    simulate_views,
)
from .phantom import PhantomSpec, draw_random_lines, elastic_deform, generate_dataset
from .metrics import MetricReport, psnr, ssim
from .classical import RLConfig, fuse_average, joint_richardson_lucy

__version__ = "0.1.0"
