"""Wasserstein objectives with a two-sided Lipschitz penalty.

Critic loss per set space (parameters or rendered maps):

    L_D = -E[D(real, x) - D(fake, x)]          (separate real from fake)
          -E[D(real, x) - D(real, x_bar)]      (flag mismatched captions)
          + lambda * E[(||grad D(interp, x)||_2 - 1)^2]

The penalty gradient is taken jointly with respect to the interpolated set
and the caption embedding; only the set is interpolated, the caption stays
the matched one.  Generator loss is the sum of the negated critic scores
of the generated set through both critics; totals are plain sums so
L_D = L_D1 + L_D2 and L_G = L_G1 + L_G2 hold to machine precision.

Critic arguments are callables ``(set_tensor, x_tensor) -> (B,) scores`` so
analytic critics can be checked against closed-form values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import torch

from .config import LossConfig
from .errors import CardinalityMismatch, NonFiniteResult

CriticFn = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


@dataclass
class CriticLossTerms:
    total: torch.Tensor
    wasserstein: torch.Tensor     # -E[D(real,x) - D(fake,x)]
    mismatch: torch.Tensor        # -E[D(real,x) - D(real,x_bar)]
    penalty: torch.Tensor         # E[(||grad|| - 1)^2], before the lambda weight


@dataclass
class GeneratorLossTerms:
    total: torch.Tensor
    param_term: torch.Tensor                 # -E[D1(fake, x)]
    render_term: Optional[torch.Tensor]      # -E[D2(maps, x)], None when disabled


def interpolate_sets(real: torch.Tensor, fake: torch.Tensor,
                     eps: torch.Tensor | float) -> torch.Tensor:
    """Elementwise eps * real + (1 - eps) * fake with one eps per sample."""
    if real.shape != fake.shape:
        raise CardinalityMismatch(
            f"real and fake sets must have equal shapes, got {tuple(real.shape)} "
            f"vs {tuple(fake.shape)}")
    if not isinstance(eps, torch.Tensor):
        eps = torch.as_tensor(eps, dtype=real.dtype, device=real.device)
    if eps.ndim == 0:
        eps = eps.expand(real.shape[0])
    eps = eps.reshape(real.shape[0], *([1] * (real.ndim - 1)))
    return eps * real + (1.0 - eps) * fake


def gradient_norms(critic: CriticFn, s_hat: torch.Tensor, x: torch.Tensor,
                   create_graph: bool = False) -> torch.Tensor:
    """Per-sample joint gradient norm of the critic at (s_hat, x)."""
    s_in = s_hat.detach().requires_grad_(True)
    x_in = x.detach().requires_grad_(True)
    scores = critic(s_in, x_in)
    grads = torch.autograd.grad(scores.sum(), [s_in, x_in], create_graph=create_graph)
    flat = torch.cat([g.reshape(g.shape[0], -1) for g in grads], dim=1)
    return flat.norm(dim=1)


def lipschitz_penalty(critic: CriticFn, s_hat: torch.Tensor, x: torch.Tensor,
                      create_graph: bool = False) -> torch.Tensor:
    """Mean squared deviation of the joint gradient norm from 1."""
    norms = gradient_norms(critic, s_hat, x, create_graph=create_graph)
    if not torch.isfinite(norms).all():
        raise NonFiniteResult("critic gradient norm is non-finite at the interpolation point")
    return ((norms - 1.0) ** 2).mean()


def critic_loss(critic: CriticFn, real: torch.Tensor, fake: torch.Tensor,
                x: torch.Tensor, x_bar: torch.Tensor, cfg: LossConfig,
                eps: torch.Tensor | float, create_graph: bool = False) -> CriticLossTerms:
    """One critic's loss over a batch; works for parameter and map sets alike."""
    d_real = critic(real, x)
    d_fake = critic(fake, x)
    d_mismatch = critic(real, x_bar)
    wasserstein = -(d_real - d_fake).mean()
    mismatch = -(d_real - d_mismatch).mean()
    if cfg.lipschitz_weight != 0.0:
        s_hat = interpolate_sets(real, fake, eps)
        penalty = lipschitz_penalty(critic, s_hat, x, create_graph=create_graph)
    else:
        penalty = torch.zeros((), dtype=d_real.dtype, device=d_real.device)
    total = wasserstein + mismatch + cfg.lipschitz_weight * penalty
    return CriticLossTerms(total=total, wasserstein=wasserstein,
                           mismatch=mismatch, penalty=penalty)


# The two set spaces share one implementation; these names make call sites
# and logs explicit about which critic they refer to.
critic_loss_params = critic_loss
critic_loss_renders = critic_loss


def generator_loss(d1: CriticFn, fake: torch.Tensor, x: torch.Tensor,
                   d2: Optional[CriticFn] = None,
                   fake_maps: Optional[torch.Tensor] = None) -> GeneratorLossTerms:
    """-E[D1(fake, x)] - E[D2(render(fake), x)]; the render term is optional."""
    param_term = -d1(fake, x).mean()
    if d2 is None:
        return GeneratorLossTerms(total=param_term, param_term=param_term, render_term=None)
    if fake_maps is None:
        raise CardinalityMismatch("render critic supplied without rendered fake maps")
    render_term = -d2(fake_maps, x).mean()
    return GeneratorLossTerms(total=param_term + render_term,
                              param_term=param_term, render_term=render_term)
