"""Least-squares adversarial and L1 cycle-consistency objectives."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import torch
import torch.nn.functional as F

from ..errors import TrainingFault
from .models import ROUTING, DualCycleNet, discriminate

CYCLE_TERMS = ("cycle_l1_a", "cycle_l1_b")
ADV_TERMS = ("adv_iso_a1", "adv_iso_b1", "adv_view_a2", "adv_view_b2")
_ADV_FOR = {"A1": "adv_iso_a1", "B1": "adv_iso_b1", "A2": "adv_view_a2", "B2": "adv_view_b2"}


@dataclass
class DualCycleLossTerms:
    adv_iso_a1: torch.Tensor
    adv_iso_b1: torch.Tensor
    adv_view_a2: torch.Tensor
    adv_view_b2: torch.Tensor
    cycle_l1_a: torch.Tensor
    cycle_l1_b: torch.Tensor
    lambda_cycle: float = 10.0
    outputs: Optional[Dict[str, torch.Tensor]] = field(default=None, repr=False)

    @property
    def adversarial(self):
        return self.adv_iso_a1 + self.adv_iso_b1 + self.adv_view_a2 + self.adv_view_b2

    @property
    def cycle(self):
        return self.cycle_l1_a + self.cycle_l1_b

    @property
    def total(self):
        return self.adversarial + self.lambda_cycle * self.cycle

    def as_floats(self) -> Dict[str, float]:
        d = {name: float(getattr(self, name).detach()) for name in ADV_TERMS + CYCLE_TERMS}
        d["total"] = float(self.total.detach())
        return d


@dataclass
class LossHyper:
    lambda_cycle: float = 10.0
    n_slices: int = 4
    # crop regenerated views by the path margin before the L1 term (for patch training)
    crop_margin: bool = False


def _crop(x, margin):
    sl = [slice(None), slice(None)]
    for m, n in zip(margin, x.shape[2:]):
        m = min(m, (n - 1) // 2)
        sl.append(slice(m, n - m))
    return x[tuple(sl)]


def cycle_l1(regen, view, margin=None):
    if margin is not None:
        regen, view = _crop(regen, margin), _crop(view, margin)
    return (regen - view).abs().mean()


def lsgan(scores, target: float):
    return F.mse_loss(scores, torch.full_like(scores, target))


def _check(name, value, step):
    if not torch.isfinite(value).all():
        raise TrainingFault(name, step)


def _sources(view_a, view_b, outputs):
    return {"view_a": view_a, "view_b": view_b, **outputs}


def compute_losses(model: DualCycleNet, view_a, view_b, hyper: LossHyper = LossHyper(),
                   generator: Optional[torch.Generator] = None, trace: Optional[List] = None,
                   step: int = 0) -> DualCycleLossTerms:
    """Generator-side objective for one step.

    ``view_a`` and ``view_b`` are ``(1, 1, Z, Y, X)`` tensors.  Inactive
    terms (the B side in single-view mode) are zero.  ``trace`` collects
    ``(discriminator, role, source, plane)`` tuples for every slice batch.
    """
    if generator is None:
        generator = torch.Generator().manual_seed(0)
    outputs = model(view_a, view_b)
    for name, value in outputs.items():
        _check(name, value, step)
    zero = view_a.new_zeros(())
    terms = {name: zero for name in ADV_TERMS}
    sources = _sources(view_a, view_b, outputs)
    for dname in model.active_discriminators:
        d = model.discriminators[dname]
        losses = []
        for source, plane in ROUTING[dname]["fake"]:
            scores, _ = discriminate(d, sources[source], plane, hyper.n_slices, generator=generator)
            if trace is not None:
                trace.append((dname, "fake", source, plane))
            losses.append(lsgan(scores, 1.0))
        terms[_ADV_FOR[dname]] = torch.stack(losses).mean()

    margin_a = model.path_a.margin if hyper.crop_margin else None
    terms["cycle_l1_a"] = cycle_l1(outputs["regen_a"], view_a, margin_a)
    if model.single_view:
        terms["cycle_l1_b"] = zero
    else:
        margin_b = model.path_b.margin if hyper.crop_margin else None
        terms["cycle_l1_b"] = cycle_l1(outputs["regen_b"], view_b, margin_b)
    for name, value in terms.items():
        _check(name, value, step)
    return DualCycleLossTerms(**terms, lambda_cycle=hyper.lambda_cycle, outputs=outputs)


def discriminator_losses(model: DualCycleNet, view_a, view_b, outputs, hyper: LossHyper = LossHyper(),
                         generator: Optional[torch.Generator] = None, trace: Optional[List] = None,
                         step: int = 0) -> Dict[str, torch.Tensor]:
    """Least-squares discriminator losses; generated volumes are detached."""
    if generator is None:
        generator = torch.Generator().manual_seed(0)
    sources = _sources(view_a, view_b, {k: v.detach() for k, v in outputs.items()})
    out = {}
    for dname in model.active_discriminators:
        d = model.discriminators[dname]
        (source, plane), = ROUTING[dname]["real"]
        real, _ = discriminate(d, sources[source], plane, hyper.n_slices, generator=generator)
        if trace is not None:
            trace.append((dname, "real", source, plane))
        fake_losses = []
        for source, plane in ROUTING[dname]["fake"]:
            scores, _ = discriminate(d, sources[source], plane, hyper.n_slices, generator=generator)
            if trace is not None:
                trace.append((dname, "fake", source, plane))
            fake_losses.append(lsgan(scores, 0.0))
        loss = 0.5 * (lsgan(real, 1.0) + torch.stack(fake_losses).mean())
        _check(f"discriminator {dname}", loss, step)
        out[dname] = loss
    return out
