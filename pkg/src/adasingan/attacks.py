"""L2-ball FGM / PGD perturbations and the running lower bound on gradient norms."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import torch

from .errors import InvalidInputError, NumericError

MODES = ("none", "fgm", "pgd", "adaptive")
SITES = ("input", "embedding")
ZERO_GRAD = 1e-12


@dataclass
class AttackConfig:
    mode: str = "none"
    radius: float = 1.0
    alpha: float = 0.4
    steps: int = 3
    norm: str = "l2"
    site: str = "input"
    kappa_window: int = 50
    refresh_every: int = 10

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidInputError(f"attack.mode must be one of {MODES}, got {self.mode!r}")
        if self.site not in SITES:
            raise InvalidInputError(f"attack.site must be one of {SITES}, got {self.site!r}")
        if self.norm != "l2":
            raise InvalidInputError("only the L2 ball is supported")
        if not (self.radius > 0 and self.alpha > 0):
            raise InvalidInputError("attack.radius and attack.alpha must be positive")
        if self.steps < 1 or self.kappa_window < 1 or self.refresh_every < 1:
            raise InvalidInputError("attack.steps, kappa_window and refresh_every must be >= 1")


def _check_finite(t: torch.Tensor, what: str):
    if not torch.isfinite(t).all():
        raise NumericError(f"{what} contains non-finite values")


def fgm_perturb(grad: torch.Tensor, r_adv: float) -> torch.Tensor:
    """Maximiser of ``<eps, grad>`` over the L2 ball of radius ``r_adv``."""
    _check_finite(grad, "gradient")
    n = grad.norm()
    if n < ZERO_GRAD:
        return torch.zeros_like(grad)
    return grad * (r_adv / n)


def project_ball(eps: torch.Tensor, r_adv: float) -> torch.Tensor:
    n = eps.norm()
    if n <= r_adv:
        return eps
    return eps * (r_adv / n)


def input_gradient(loss_fn, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Loss value and ``d loss / d x`` without touching any parameter ``.grad``."""
    x = x.detach().requires_grad_(True)
    loss = loss_fn(x)
    (g,) = torch.autograd.grad(loss, x)
    return loss.detach(), g


def pgd_attack(loss_fn, x: torch.Tensor, config: AttackConfig, callback=None,
               first_grad: torch.Tensor | None = None) -> torch.Tensor:
    """Projected normalised-gradient ascent, starting from zero.

    ``eps_{t+1} = P(eps_t + alpha * g_t / ||g_t||)`` with ``g_t`` the input
    gradient at ``x + eps_t``; a vanished gradient leaves ``eps_t`` as is.
    ``callback(t, eps)`` sees every iterate. ``first_grad`` lets the caller
    reuse a gradient already computed at ``x`` for the first step.
    """
    eps = torch.zeros_like(x)
    for t in range(config.steps):
        if t == 0 and first_grad is not None:
            g = first_grad
        else:
            _, g = input_gradient(loss_fn, x.detach() + eps)
        _check_finite(g, "gradient")
        gn = g.norm()
        if gn >= ZERO_GRAD:
            eps = project_ball(eps + config.alpha * g / gn, config.radius)
        if callback is not None:
            callback(t + 1, eps)
    return eps.detach()


@dataclass
class KappaEstimator:
    """Windowed running minimum of observed input-gradient norms, floored."""

    window: int = 50
    floor: float = 1e-8
    history: deque = field(default_factory=deque)

    def update(self, grad_norm: float) -> "KappaEstimator":
        if grad_norm < 0:
            raise InvalidInputError("gradient norm cannot be negative")
        self.history.append(float(grad_norm))
        while len(self.history) > self.window:
            self.history.popleft()
        return self

    @property
    def estimate(self) -> float:
        if not self.history:
            return self.floor
        return max(self.floor, min(self.history))

    @property
    def running_min(self) -> float:
        return self.estimate


def kappa_update(est: KappaEstimator, grad_norm: float) -> KappaEstimator:
    return est.update(grad_norm)
