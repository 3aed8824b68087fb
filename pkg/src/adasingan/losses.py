"""WGAN-GP adversarial loss and the fixed-noise reconstruction loss."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .errors import InvalidInputError, NumericError


@dataclass
class LossWeights:
    alpha_rec: float = 10.0
    lambda_gp: float = 0.1

    def __post_init__(self):
        for name in ("alpha_rec", "lambda_gp"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise InvalidInputError(f"{name} must be finite and non-negative, got {v}")


def gradient_penalty(D, real, fake, u=None, generator=None, create_graph=True):
    """Mean of ``(||grad D(x_hat)||_2 - 1)^2`` over the interpolates.

    ``x_hat = u * real + (1 - u) * fake`` with one uniform ``u`` per sample.
    For patch critics the gradient is that of the summed score map.
    """
    if real.shape != fake.shape:
        raise InvalidInputError(f"real {tuple(real.shape)} and fake {tuple(fake.shape)} differ")
    if u is None:
        u = torch.rand(real.shape[0], *([1] * (real.dim() - 1)),
                       generator=generator, dtype=real.dtype, device=real.device)
    x_hat = (u * real + (1 - u) * fake).detach().requires_grad_(True)
    out = D(x_hat)
    (grad,) = torch.autograd.grad(out.sum(), x_hat, create_graph=create_graph)
    norms = grad.reshape(grad.shape[0], -1).norm(dim=1)
    return ((norms - 1) ** 2).mean()


def wgan_gp_loss(D, real, fake, lambda_gp, u=None, generator=None, real_scores=None,
                 fake_scores=None):
    """Critic loss, generator adversarial term and the gradient penalty.

    ``real_scores``/``fake_scores`` may be passed in when the caller already
    evaluated the critic (e.g. on attacked inputs); the penalty is always
    computed on clean interpolates.

    Returns:
        ``(d_loss, g_loss_term, gp)`` with
        ``d_loss = mean D(fake) - mean D(real) + lambda_gp * gp`` and
        ``g_loss_term = -mean D(fake)``.
    """
    if real.shape != fake.shape:
        raise InvalidInputError(f"real {tuple(real.shape)} and fake {tuple(fake.shape)} differ")
    s_real = D(real) if real_scores is None else real_scores
    s_fake = D(fake) if fake_scores is None else fake_scores
    gp = gradient_penalty(D, real, fake, u=u, generator=generator)
    d_loss = s_fake.mean() - s_real.mean() + lambda_gp * gp
    return d_loss, -s_fake.mean(), gp


def reconstruction_loss(output, target):
    """Squared L2 distance summed over every pixel and channel."""
    if output.shape != target.shape:
        raise InvalidInputError(f"output {tuple(output.shape)} and target {tuple(target.shape)} differ")
    return ((output - target) ** 2).sum()


def _finite(v) -> bool:
    if isinstance(v, torch.Tensor):
        return bool(torch.isfinite(v).all())
    return math.isfinite(v)


def total_objective(d_loss, g_loss_term, rec, weights: LossWeights):
    """``(d_objective, g_objective)``; the reconstruction term only reaches the generator."""
    for name, v in (("d_loss", d_loss), ("g_loss_term", g_loss_term), ("rec", rec)):
        if not _finite(v):
            raise NumericError(f"{name} is not finite: {v}")
    return d_loss, g_loss_term + weights.alpha_rec * rec
