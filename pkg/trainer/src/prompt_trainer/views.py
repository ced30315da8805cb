"""View generation: augmented clean pairs and their adversarial counterparts."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .losses import default_pairs, nt_xent_loss


@dataclass(frozen=True)
class PgdConfig:
    budget: float = 8.0 / 255.0
    steps: int = 5

    @property
    def step_size(self) -> float:
        if self.steps == 0:
            return 0.0
        return self.budget / self.steps * 2.5


def augment_pair(images: torch.Tensor, generator: torch.Generator):
    """Two augmented views per image: brightness/contrast jitter plus noise.

    All transformations are pixel-aligned: the toy corpus carries its
    identity in pixel-level detail, which spatial crops would destroy.
    """
    views = []
    for _ in range(2):
        b = images.shape[0]
        contrast = 1.0 + 0.15 * (torch.rand((b, 1, 1, 1), generator=generator) - 0.5)
        shift = 0.08 * (torch.rand((b, 1, 1, 1), generator=generator) - 0.5)
        noise = 0.01 * torch.randn(images.shape, generator=generator)
        v = ((images - 0.5) * contrast + 0.5 + shift + noise).clamp(0.0, 1.0)
        views.append(v)
    return views[0], views[1]


def interleave_views(view_i: torch.Tensor, view_j: torch.Tensor) -> torch.Tensor:
    """Stack per-image view pairs as rows (2k, 2k+1) of one batch."""
    b = view_i.shape[0]
    out = torch.empty((2 * b,) + view_i.shape[1:], dtype=view_i.dtype)
    out[0::2] = view_i
    out[1::2] = view_j
    return out


def pgd_views(encoder, views: torch.Tensor, cfg: PgdConfig,
              temperature: float = 0.2, return_trace: bool = False):
    """Sign-ascent on the contrastive loss, projected to the budget ball.

    views holds the interleaved 2N clean views; the attack perturbs all of
    them jointly to maximize the clean-stream contrastive loss, which pushes
    positive pairs apart in embedding space.  With return_trace the per-step
    objective values come back alongside the adversarial views.
    """
    if cfg.budget == 0.0 or cfg.steps == 0:
        return (views.clone(), []) if return_trace else views.clone()
    pairs = default_pairs(views.shape[0] // 2)
    adv = views.clone()
    trace = []
    for _ in range(cfg.steps):
        adv = adv.detach().requires_grad_(True)
        loss = nt_xent_loss(encoder(adv), pairs, temperature)
        if not torch.isfinite(loss):
            raise FloatingPointError("non-finite contrastive loss during PGD")
        (grad,) = torch.autograd.grad(loss, adv)
        if not torch.isfinite(grad).all():
            raise FloatingPointError("non-finite gradients during PGD")
        trace.append(float(loss.detach()))
        with torch.no_grad():
            adv = adv + cfg.step_size * grad.sign()
            adv = torch.clamp(adv, views - cfg.budget, views + cfg.budget)
            adv = torch.clamp(adv, 0.0, 1.0)
    adv = adv.detach()
    if return_trace:
        with torch.no_grad():
            final = nt_xent_loss(encoder(adv), pairs, temperature)
        trace.append(float(final))
        return adv, trace
    return adv
