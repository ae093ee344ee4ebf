"""Self-supervised training on a single view pair, checkpoints and full-volume inference."""
from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import torch

from ..errors import CheckpointMismatchError, ParameterError, TrainingFault
from ..forward import ViewPair
from ..volume import Volume3D
from .losses import LossHyper, compute_losses, discriminator_losses
from .models import DualCycleNet, UNet3D, build_dual_cycle

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "dualcycle-checkpoint"
CHECKPOINT_VERSION = 1

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class TrainConfig:
    steps: int = 2000
    learning_rate: float = 1e-4
    betas: Tuple[float, float] = (0.5, 0.999)
    lambda_cycle: float = 10.0
    seed: int = 0
    depth: int = 3
    base_channels: int = 16
    norm: str = "none"
    dlg_layers: int = 3
    dlg_kernel: int = 3
    dlg_init_noise: float = 1e-3
    dlg_trainable: bool = True
    disc_layers: int = 4
    disc_channels: int = 16
    disc_norm: bool = True
    n_slices: int = 4
    patch_size: Optional[int] = None
    blind: bool = False
    single_view: bool = False
    checkpoint_every: int = 0
    checkpoint_dir: Optional[str] = None
    warm_start: Optional[str] = None
    dtype: str = "float32"
    log_every: int = 0

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        if self.steps < 0:
            raise ParameterError("steps must be >= 0")
        if not self.learning_rate > 0:
            raise ParameterError("learning_rate must be > 0")
        if self.dtype not in _DTYPES:
            raise ParameterError(f"dtype must be one of {sorted(_DTYPES)}")
        if self.patch_size is not None and self.patch_size < 2**self.depth:
            raise ParameterError("patch_size must be at least 2**depth")

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class TrainResult:
    model: DualCycleNet
    history: List[dict] = field(default_factory=list)
    step: int = 0
    opt_g: Optional[torch.optim.Optimizer] = None
    opt_d: Optional[torch.optim.Optimizer] = None


def build_model(cfg: TrainConfig, views: ViewPair) -> DualCycleNet:
    model = build_dual_cycle(
        views.psf_a, views.psf_b, depth=cfg.depth, base_channels=cfg.base_channels, norm=cfg.norm,
        dlg_layers=cfg.dlg_layers, dlg_kernel=cfg.dlg_kernel, dlg_init_noise=cfg.dlg_init_noise,
        disc_layers=cfg.disc_layers, disc_channels=cfg.disc_channels, disc_norm=cfg.disc_norm,
        blind=cfg.blind, single_view=cfg.single_view, seed=cfg.seed,
    )
    if not cfg.dlg_trainable:
        for path in (model.path_a, model.path_b):
            path.dlg.requires_grad_(False)
    return model.to(_DTYPES[cfg.dtype])


def to_tensor(v: Volume3D, dtype=torch.float32) -> torch.Tensor:
    return torch.from_numpy(np.array(v.data, copy=True)).to(dtype)[None, None]


def make_optimizers(model: DualCycleNet, cfg: TrainConfig):
    params = [p for p in model.generator_parameters() if p.requires_grad]
    opt_g = torch.optim.Adam(params, lr=cfg.learning_rate, betas=cfg.betas)
    opt_d = torch.optim.Adam(model.discriminator_parameters(), lr=cfg.learning_rate, betas=cfg.betas)
    return opt_g, opt_d


# -- checkpoints -----------------------------------------------------------

def _is_psf_buffer(key):
    return key.endswith("psf_kernel")


def check_state_shapes(model: torch.nn.Module, state: dict, skip_psf=False):
    own = model.state_dict()
    diffs = []
    for k, v in own.items():
        if skip_psf and _is_psf_buffer(k):
            continue
        if k not in state:
            diffs.append(f"missing {k} (expected {tuple(v.shape)})")
        elif tuple(state[k].shape) != tuple(v.shape):
            diffs.append(f"{k}: checkpoint {tuple(state[k].shape)} vs model {tuple(v.shape)}")
    for k in state:
        if k not in own and not (skip_psf and _is_psf_buffer(k)):
            diffs.append(f"unexpected {k} {tuple(state[k].shape)}")
    if diffs:
        raise CheckpointMismatchError(diffs)


def checkpoint_dict(result: TrainResult, cfg: TrainConfig) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "step": result.step,
        "model": copy.deepcopy(result.model.state_dict()),
        "opt_g": copy.deepcopy(result.opt_g.state_dict()) if result.opt_g else None,
        "opt_d": copy.deepcopy(result.opt_d.state_dict()) if result.opt_d else None,
        "history": list(result.history),
    }


def save_checkpoint(path, result: TrainResult, cfg: TrainConfig) -> None:
    torch.save(checkpoint_dict(result, cfg), path)


def load_checkpoint(path) -> dict:
    ckpt = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(ckpt, dict) or ckpt.get("format") != CHECKPOINT_FORMAT:
        raise ParameterError(f"{path} is not a Dual-Cycle checkpoint")
    if ckpt.get("version") != CHECKPOINT_VERSION:
        raise ParameterError(f"unsupported checkpoint version {ckpt.get('version')!r}")
    return ckpt


def load_weights(model: DualCycleNet, ckpt: dict, keep_psf=True) -> None:
    """Load checkpoint parameters into ``model``.

    With ``keep_psf`` the model's own PSF buffers are retained, which is what
    warm-starting on a new volume needs.
    """
    state = ckpt["model"]
    check_state_shapes(model, state, skip_psf=keep_psf)
    if keep_psf:
        state = {k: v for k, v in state.items() if not _is_psf_buffer(k)}
    model.load_state_dict(state, strict=not keep_psf)


def model_from_checkpoint(ckpt: dict, views: ViewPair) -> DualCycleNet:
    cfg = TrainConfig.from_dict(ckpt["config"])
    model = build_model(cfg, views)
    load_weights(model, ckpt, keep_psf=True)
    return model


# -- training --------------------------------------------------------------

def _random_patch(a, b, size, generator):
    starts = []
    for n in a.shape[2:]:
        hi = max(n - size, 0)
        starts.append(int(torch.randint(0, hi + 1, (1,), generator=generator)) if hi else 0)
    sl = (slice(None), slice(None)) + tuple(slice(s, s + size) for s in starts)
    return a[sl], b[sl]


def train(views: ViewPair, cfg: TrainConfig, model: Optional[DualCycleNet] = None, callback=None) -> TrainResult:
    """Alternate one generator step and one discriminator step per iteration.

    Returns the trained model and a per-step history of loss values.  A
    non-finite loss raises :class:`TrainingFault` whose ``last_good`` holds
    the most recent checkpoint (a path when ``checkpoint_dir`` is set).
    ``callback(step, model, row)`` runs after every step when given.
    """
    dtype = _DTYPES[cfg.dtype]
    if model is None:
        model = build_model(cfg, views)
    if cfg.warm_start:
        load_weights(model, load_checkpoint(cfg.warm_start), keep_psf=True)
    opt_g, opt_d = make_optimizers(model, cfg)
    result = TrainResult(model, [], 0, opt_g, opt_d)
    hyper = LossHyper(cfg.lambda_cycle, cfg.n_slices, crop_margin=cfg.patch_size is not None)
    a_full = to_tensor(views.view_a, dtype)
    b_full = to_tensor(views.view_b, dtype)
    rng = torch.Generator().manual_seed(cfg.seed + 2)
    ckpt_dir = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    last_good = checkpoint_dict(result, cfg) if cfg.steps else None

    model.train()
    for step in range(1, cfg.steps + 1):
        if cfg.patch_size is not None:
            a, b = _random_patch(a_full, b_full, cfg.patch_size, rng)
        else:
            a, b = a_full, b_full
        try:
            terms = compute_losses(model, a, b, hyper, rng, step=step)
            opt_g.zero_grad(set_to_none=True)
            terms.total.backward()
            opt_g.step()

            d_losses = discriminator_losses(model, a, b, terms.outputs, hyper, rng, step=step)
            opt_d.zero_grad(set_to_none=True)
            if d_losses:
                sum(d_losses.values()).backward()
                opt_d.step()
        except TrainingFault as fault:
            fault.last_good = last_good
            if ckpt_dir is not None and isinstance(last_good, dict):
                path = ckpt_dir / "last_good.pt"
                torch.save(last_good, path)
                fault.last_good = str(path)
            raise

        row = {"step": step, **terms.as_floats()}
        row.update({f"d_{k}": float(v.detach()) for k, v in d_losses.items()})
        result.history.append(row)
        result.step = step
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("step %d total %.5f cycle %.5f", step, row["total"], row["cycle_l1_a"] + row["cycle_l1_b"])
        if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            last_good = checkpoint_dict(result, cfg)
            if ckpt_dir is not None:
                torch.save(last_good, ckpt_dir / f"step_{step:06d}.pt")
        if callback is not None:
            callback(step, model, row)
            model.train()
    model.eval()
    return result


# -- inference -------------------------------------------------------------

def generate(model: DualCycleNet, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Differentiable forward pass of the generator on ``(1, 1, Z, Y, X)`` tensors."""
    return model.generate(a, b)


@dataclass(frozen=True)
class TileSpec:
    size: int = 64


def _tile_starts(n, size, core):
    if size >= n:
        return [0]
    starts = list(range(0, n - size, core))
    starts.append(n - size)
    return sorted(set(starts))


@torch.no_grad()
def _tiled_forward(gen: UNet3D, x: torch.Tensor, size: int) -> torch.Tensor:
    m = gen.multiple
    halo = -(-gen.receptive_radius // m) * m
    if size % m or size <= 2 * halo:
        raise ParameterError(
            f"tile size {size} must be a multiple of {m} and exceed twice the receptive radius ({2 * halo})"
        )
    core = size - 2 * halo
    shape = x.shape[2:]
    out = x.new_zeros((1, 1) + tuple(shape))
    starts = [_tile_starts(n, size, core) for n in shape]
    for sz in starts[0]:
        for sy in starts[1]:
            for sx in starts[2]:
                origin = (sz, sy, sx)
                tile_sl = tuple(slice(s, min(s + size, n)) for s, n in zip(origin, shape))
                pred = gen(x[(slice(None), slice(None)) + tile_sl])
                # each tile owns [s + halo, s + size - halo), widened at the volume border
                dst, src = [], []
                for s, n, sl in zip(origin, shape, tile_sl):
                    lo = 0 if s == 0 else s + halo
                    hi = n if sl.stop == n else sl.stop - halo
                    dst.append(slice(lo, hi))
                    src.append(slice(lo - s, hi - s))
                out[(slice(None), slice(None)) + tuple(dst)] = pred[(slice(None), slice(None)) + tuple(src)]
    return out


@torch.no_grad()
def reconstruct(model: DualCycleNet, views: ViewPair, tile: Optional[TileSpec] = None) -> Volume3D:
    """Run the generator over the whole registered view pair.

    With ``tile`` the volume is processed in overlapping tiles whose borders
    (one receptive radius wide) are discarded, so results agree with the
    untiled pass.  Tiling needs a generator without instance normalization.
    """
    model.eval()
    dtype = next(model.generator.parameters()).dtype
    a = to_tensor(views.view_a, dtype)
    b = a if model.single_view else to_tensor(views.view_b, dtype)
    x = torch.cat([a, b], dim=1)
    gen = model.generator
    if tile is None:
        out = gen(x)
    else:
        if gen.norm != "none":
            raise ParameterError("tiled inference requires a generator without instance normalization")
        pads = gen.pad_amounts(x.shape[2:])
        flat = [p for pair in reversed(pads) for p in pair]
        xp = torch.nn.functional.pad(x, flat, mode="replicate") if any(flat) else x
        out = _tiled_forward(gen, xp, tile.size)
        sl = tuple(slice(lo, out.shape[2 + i] - hi) for i, (lo, hi) in enumerate(pads))
        out = out[(slice(None), slice(None)) + sl]
    data = out[0, 0].cpu().numpy().astype(views.view_a.dtype)
    return views.view_a.with_data(data)
