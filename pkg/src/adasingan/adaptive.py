"""Per-step choice between FGM and PGD on the critic.

PGD is used while the spectral norm of the critic's last layer stays below
``kappa / (2 * alpha)``, FGM otherwise (ties go to FGM, the cheaper attack).
"""
from __future__ import annotations

import json
import math
import threading
from dataclasses import asdict, dataclass

import torch

from .attacks import AttackConfig, KappaEstimator, fgm_perturb, input_gradient, pgd_attack
from .bounds import ConvOperator, power_iteration
from .errors import ConfigError


@dataclass(frozen=True)
class AttackDecision:
    chosen: str
    w_sigma: float
    kappa: float
    alpha: float
    threshold: float
    step_index: int
    scale: int = -1

    def to_dict(self) -> dict:
        return asdict(self)


def compute_w_sigma(params, site: str = "embedding", iters: int = 1000, tol: float = 1e-7) -> float:
    """Spectral norm of the last (embedding) layer; ``site`` does not change the layer."""
    return params.spectral_norm(params.depth - 1, iters=iters, tol=tol)


class WSigmaMonitor:
    """Cached ``W_sigma`` of a critic's last conv layer, refreshed every few steps.

    Refreshes warm-start the power iteration from the previous singular
    vector since the weights drift slowly between optimizer steps.
    """

    def __init__(self, layer: torch.nn.Conv2d, input_hw, refresh_every=10, iters=5,
                 cold_iters=100, tol=1e-6):
        self.layer = layer
        self.input_hw = tuple(input_hw)
        self.refresh_every = refresh_every
        self.iters = iters
        self.cold_iters = cold_iters
        self.tol = tol
        self._v = None
        self._value = None

    def refresh(self) -> float:
        w = self.layer.weight.detach().to(torch.float64).cpu().numpy()
        op = ConvOperator(w, self.input_hw, int(self.layer.padding[0]))
        iters = self.iters if self._v is not None else self.cold_iters
        self._value, self._v = power_iteration(op, iters=iters, tol=self.tol, v0=self._v)
        return self._value

    def value(self, step: int) -> float:
        if self._value is None or step % self.refresh_every == 0:
            self.refresh()
        return self._value


def decide(w_sigma: float, kappa: float, alpha: float, step: int, scale: int = -1) -> AttackDecision:
    if not (kappa > 0 and alpha > 0):
        raise ConfigError(f"kappa and alpha must be positive, got kappa={kappa}, alpha={alpha}")
    threshold = kappa / (2.0 * alpha)
    if not math.isfinite(threshold):
        raise ConfigError(f"threshold kappa/(2 alpha) is not finite: {threshold}")
    chosen = "pgd" if w_sigma < threshold else "fgm"
    return AttackDecision(chosen, float(w_sigma), float(kappa), float(alpha), threshold, step, scale)


def _resolve_w_sigma(source, step):
    if isinstance(source, WSigmaMonitor):
        return source.value(step)
    if callable(source):
        return float(source(step))
    if hasattr(source, "spectral_norm"):
        return compute_w_sigma(source)
    return float(source)


def adaptive_step(loss_fn, x, params, config: AttackConfig, kappa_est: KappaEstimator,
                  step: int = 0, scale: int = -1):
    """One adaptive attack on ``x`` for the critic loss ``loss_fn``.

    Computes the input gradient (parameters' ``.grad`` and optimizer state are
    left untouched), feeds its norm to ``kappa_est``, reads ``W_sigma`` from
    ``params`` (a float, a ``step -> float`` callable, a
    :class:`WSigmaMonitor` or a ``NetParams``) and runs the chosen attack.

    Returns:
        ``(perturbation, decision)``.
    """
    if config.mode != "adaptive":
        raise ConfigError(f"adaptive_step needs attack.mode='adaptive', got {config.mode!r}")
    _, g = input_gradient(loss_fn, x)
    kappa_est.update(float(g.norm()))
    decision = decide(_resolve_w_sigma(params, step), kappa_est.estimate, config.alpha, step, scale)
    if decision.chosen == "pgd":
        eps = pgd_attack(loss_fn, x, config, first_grad=g)
    else:
        eps = fgm_perturb(g, config.radius)
    return eps, decision


class DecisionLog:
    """Append-only, thread-safe sink of attack decisions (JSON lines)."""

    def __init__(self, path=None):
        self.path = path
        self.records: list[AttackDecision] = []
        self._lock = threading.Lock()

    def append(self, decision: AttackDecision) -> None:
        with self._lock:
            self.records.append(decision)
            if self.path is not None:
                with open(self.path, "a") as f:
                    f.write(json.dumps(decision.to_dict()) + "\n")

    def __len__(self):
        return len(self.records)

    @staticmethod
    def read(path) -> list[AttackDecision]:
        with open(path) as f:
            return [AttackDecision(**json.loads(line)) for line in f if line.strip()]
