"""Building blocks of the Dual-Cycle network.

Tensors follow the PyTorch layout ``(N, C, Z, Y, X)`` for volumes and
``(N, C, H, W)`` for slices.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ParameterError
from ..forward import PSF
from ..volume import PLANE_AXIS

# (source, plane) pairs seen by each discriminator set
ROUTING = {
    "A1": {"real": (("view_a", "xy"),), "fake": (("recon", "xy"), ("recon", "xz"))},
    "B1": {"real": (("view_b", "yz"),), "fake": (("recon", "yz"), ("recon", "xz"))},
    "A2": {"real": (("view_a", "xy"),), "fake": (("regen_a", "xy"),)},
    "B2": {"real": (("view_b", "yz"),), "fake": (("regen_b", "yz"),)},
}

_PLANE_DIM = {"xy": 2, "xz": 3, "yz": 4}  # tensor dim held fixed, (N, C, Z, Y, X)


class ConvBlock(nn.Sequential):
    def __init__(self, in_channels, out_channels, norm="none"):
        layers = []
        for c_in in (in_channels, out_channels):
            layers.append(nn.Conv3d(c_in, out_channels, 3, padding=1))
            if norm == "instance":
                layers.append(nn.InstanceNorm3d(out_channels, affine=True))
            layers.append(nn.LeakyReLU(0.2))
        super().__init__(*layers)


class UNet3D(nn.Module):
    """Dual-view 3D U-Net: two input channels (View A, View B), one output volume.

    With ``residual=True`` the network predicts a correction to the mean of
    its input channels; the output head starts at zero so an untrained
    generator returns that mean.
    """

    def __init__(self, in_channels=2, depth=3, base_channels=16, norm="none",
                 residual=True, zero_head=True):
        super().__init__()
        if depth < 1:
            raise ParameterError("depth must be >= 1")
        if norm not in ("none", "instance"):
            raise ParameterError(f"norm must be 'none' or 'instance', got {norm!r}")
        self.depth = depth
        self.norm = norm
        self.residual = residual
        widths = [base_channels * 2**i for i in range(depth + 1)]
        self.encoders = nn.ModuleList()
        c = in_channels
        for w in widths[:-1]:
            self.encoders.append(ConvBlock(c, w, norm))
            c = w
        self.bottleneck = ConvBlock(widths[-2], widths[-1], norm)
        self.ups = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for lvl in reversed(range(depth)):
            self.ups.append(nn.ConvTranspose3d(widths[lvl + 1], widths[lvl], 2, stride=2))
            self.decoders.append(ConvBlock(2 * widths[lvl], widths[lvl], norm))
        self.head = nn.Conv3d(widths[0], 1, 1)
        if zero_head:
            nn.init.zeros_(self.head.weight)
            nn.init.zeros_(self.head.bias)

    @property
    def multiple(self):
        return 2**self.depth

    @property
    def receptive_radius(self):
        """Voxels an output value can see in each direction (conservative bound)."""
        return 6 * (2**self.depth - 1) + 2 ** (self.depth + 1)

    def pad_amounts(self, shape):
        m = self.multiple
        out = []
        for n in shape:
            extra = (-n) % m
            out.append((extra // 2, extra - extra // 2))
        return out

    def forward(self, x):
        pads = self.pad_amounts(x.shape[2:])
        padded = any(p != (0, 0) for p in pads)
        if padded:
            flat = [p for pair in reversed(pads) for p in pair]
            x = F.pad(x, flat, mode="replicate")
        skips = []
        h = x
        for enc in self.encoders:
            h = enc(h)
            skips.append(h)
            h = F.max_pool3d(h, 2)
        h = self.bottleneck(h)
        for up, dec, skip in zip(self.ups, self.decoders, reversed(skips)):
            h = dec(torch.cat([up(h), skip], dim=1))
        out = self.head(h)
        if self.residual:
            out = out + x.mean(dim=1, keepdim=True)
        if padded:
            z, y, xx = (slice(lo, out.shape[2 + i] - hi) for i, (lo, hi) in enumerate(pads))
            out = out[:, :, z, y, xx]
        return out


class DeepLinearGenerator(nn.Module):
    """A cascade of single-channel 3D convolutions with no bias and no activation.

    Layers start as a centred delta plus ``init_noise`` Gaussian jitter, so the
    composition begins close to the identity operator.
    """

    def __init__(self, layers=3, kernel_size=3, init_noise=1e-3, generator: Optional[torch.Generator] = None):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ParameterError("kernel_size must be odd")
        self.kernel_size = kernel_size
        self.layers = nn.ModuleList(
            nn.Conv3d(1, 1, kernel_size, padding=kernel_size // 2, bias=False) for _ in range(layers)
        )
        self.reset_to_delta(init_noise, generator)

    @torch.no_grad()
    def reset_to_delta(self, noise=0.0, generator=None):
        c = self.kernel_size // 2
        for conv in self.layers:
            w = torch.zeros_like(conv.weight)
            w[0, 0, c, c, c] = 1.0
            if noise:
                w += noise * torch.randn(w.shape, generator=generator, dtype=w.dtype)
            conv.weight.copy_(w)

    @property
    def reach(self):
        return len(self.layers) * (self.kernel_size // 2)

    def forward(self, x):
        for conv in self.layers:
            x = conv(x)
        return x

    def effective_kernel(self) -> torch.Tensor:
        """Single correlation kernel equivalent to the cascade (away from borders)."""
        k = self.layers[0].weight.new_ones((1, 1, 1, 1, 1))
        for conv in self.layers:
            w = conv.weight
            p = w.shape[-1] - 1
            k = F.conv3d(F.pad(k, [p] * 6), w.flip(2, 3, 4))
        return k[0, 0]


class DegradationPath(nn.Module):
    """Fixed PSF blur followed by a deep linear generator; the blind variant has no PSF."""

    def __init__(self, psf: Optional[PSF], dlg: DeepLinearGenerator, blind: bool = False):
        super().__init__()
        if blind and psf is not None:
            raise ParameterError("blind degradation paths carry no PSF")
        if not blind and psf is None:
            raise ParameterError("non-blind degradation paths need a PSF")
        self.blind = blind
        self.dlg = dlg
        self.blur_axis = None if psf is None else psf.blur_axis
        if psf is not None:
            # conv3d correlates, so store the flipped kernel
            k = torch.from_numpy(psf.kernel[::-1, ::-1, ::-1].copy())
            self.register_buffer("psf_kernel", k[None, None].to(torch.get_default_dtype()))
        else:
            self.psf_kernel = None

    def blur(self, x):
        if self.psf_kernel is None:
            return x
        pad = [n // 2 for n in self.psf_kernel.shape[2:]]
        return F.conv3d(x, self.psf_kernel.to(x.dtype), padding=pad)

    @property
    def margin(self):
        """Per-axis border width affected by zero padding, in voxels ``(z, y, x)``."""
        r = self.dlg.reach
        if self.psf_kernel is None:
            return (r, r, r)
        return tuple(n // 2 + r for n in self.psf_kernel.shape[2:])

    def forward(self, x):
        return self.dlg(self.blur(x))


class SliceDiscriminator(nn.Module):
    """PatchGAN-style 2D discriminator producing a map of patch scores."""

    def __init__(self, n_layers=4, base_channels=16, norm=True, real_planes=(), fake_planes=()):
        super().__init__()
        layers = []
        c = 1
        for i in range(n_layers):
            out = base_channels * 2 ** min(i, 3)
            layers.append(nn.Conv2d(c, out, 4, stride=2, padding=1, padding_mode="replicate"))
            if norm and 0 < i < n_layers - 1:
                layers.append(nn.InstanceNorm2d(out))
            layers.append(nn.LeakyReLU(0.2))
            c = out
        layers.append(nn.Conv2d(c, 1, 3, padding=1, padding_mode="replicate"))
        self.net = nn.Sequential(*layers)
        self.n_layers = n_layers
        self.real_planes = tuple(real_planes)
        self.fake_planes = tuple(fake_planes)

    def score_shape(self, h, w):
        for _ in range(self.n_layers):
            h, w = (h + 2 - 4) // 2 + 1, (w + 2 - 4) // 2 + 1
        return h, w

    def forward(self, x):
        return self.net(x)


def take_slices(v: torch.Tensor, plane: str, indices) -> torch.Tensor:
    """Stack 2D slices of a ``(1, 1, Z, Y, X)`` volume into ``(n, 1, H, W)``."""
    if plane not in PLANE_AXIS:
        raise ParameterError(f"unknown plane {plane!r}")
    dim = _PLANE_DIM[plane]
    idx = torch.as_tensor(indices, dtype=torch.long, device=v.device)
    s = v.index_select(dim, idx)  # (1, 1, ...) with n along dim
    s = s.movedim(dim, 0)  # (n, 1, 1, H, W)
    return s.squeeze(2) if s.dim() == 5 else s


def sample_indices(v: torch.Tensor, plane: str, n: int, generator: torch.Generator):
    size = v.shape[_PLANE_DIM[plane]]
    return torch.randint(0, size, (n,), generator=generator).tolist()


def discriminate(d: SliceDiscriminator, v: torch.Tensor, plane: str, n_slices: int, seed=None,
                 generator: Optional[torch.Generator] = None, indices: Optional[Sequence[int]] = None):
    """Score ``n_slices`` random ``plane`` slices of ``v``; returns ``(scores, indices)``.

    ``scores`` has shape ``(n_slices, 1, h, w)``.  Slice positions come from
    ``indices`` if given, else from ``generator`` or a fresh one seeded with ``seed``.
    """
    if n_slices < 1:
        raise ParameterError("n_slices must be >= 1")
    if indices is None:
        if generator is None:
            generator = torch.Generator().manual_seed(0 if seed is None else int(seed))
        indices = sample_indices(v, plane, n_slices, generator)
    return d(take_slices(v, plane, indices)), list(indices)


class DualCycleNet(nn.Module):
    """Generator, two degradation paths and four slice discriminators."""

    def __init__(self, generator: UNet3D, path_a: DegradationPath, path_b: DegradationPath,
                 discriminators: dict, single_view: bool = False):
        super().__init__()
        self.generator = generator
        self.path_a = path_a
        self.path_b = path_b
        self.discriminators = nn.ModuleDict(discriminators)
        self.single_view = single_view

    @property
    def active_discriminators(self):
        names = ("A1", "A2") if self.single_view else ("A1", "B1", "A2", "B2")
        return [n for n in names if n in self.discriminators]

    def generator_parameters(self):
        yield from self.generator.parameters()
        yield from self.path_a.parameters()
        if not self.single_view:
            yield from self.path_b.parameters()

    def discriminator_parameters(self):
        for name in self.active_discriminators:
            yield from self.discriminators[name].parameters()

    def generate(self, a, b):
        if self.single_view:
            b = a
        return self.generator(torch.cat([a, b], dim=1))

    def forward(self, a, b):
        recon = self.generate(a, b)
        out = {"recon": recon, "regen_a": self.path_a(recon)}
        if not self.single_view:
            out["regen_b"] = self.path_b(recon)
        return out


def build_dual_cycle(psf_a: Optional[PSF], psf_b: Optional[PSF], depth=3, base_channels=16, norm="none",
                     dlg_layers=3, dlg_kernel=3, dlg_init_noise=1e-3, disc_layers=4, disc_channels=16,
                     disc_norm=True, blind=False, single_view=False, seed=0, zero_head=True) -> DualCycleNet:
    torch.manual_seed(seed)
    gen = UNet3D(2, depth, base_channels, norm, residual=True, zero_head=zero_head)
    g = torch.Generator().manual_seed(seed + 1)
    paths = []
    for psf in (psf_a, psf_b):
        dlg = DeepLinearGenerator(dlg_layers, dlg_kernel, dlg_init_noise, generator=g)
        paths.append(DegradationPath(None if blind else psf, dlg, blind))
    discs = {}
    for name, route in ROUTING.items():
        discs[name] = SliceDiscriminator(
            disc_layers, disc_channels, disc_norm,
            real_planes=route["real"], fake_planes=route["fake"],
        )
    return DualCycleNet(gen, paths[0], paths[1], discs, single_view)
