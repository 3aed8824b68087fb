"""Scripted toy runs shared by the unit and acceptance tests."""
from __future__ import annotations

import torch
import torch.nn as nn

from adasingan.adaptive import DecisionLog, WSigmaMonitor, adaptive_step
from adasingan.attacks import AttackConfig, KappaEstimator


class ToyCritic(nn.Module):
    """conv -> ReLU -> conv; positively homogeneous, so (W1/c, b1/c, c W2) is the same function."""

    def __init__(self, seed=0):
        super().__init__()
        torch.manual_seed(seed)
        self.first = nn.Conv2d(3, 8, 3, padding=1)
        self.tail = nn.Conv2d(8, 1, 3, padding=1)

    def forward(self, x):
        return self.tail(torch.relu(self.first(x)))

    @torch.no_grad()
    def rebalance(self, c):
        self.first.weight /= c
        self.first.bias /= c
        self.tail.weight *= c


def _inputs(steps, seed):
    g = torch.Generator().manual_seed(seed)
    return [torch.randn(1, 3, 8, 8, generator=g) for _ in range(steps)]


def _kappas(net, xs, window):
    est, out = KappaEstimator(window=window), []
    for x in xs:
        x = x.clone().requires_grad_(True)
        (g,) = torch.autograd.grad(net(x).sum(), x)
        est.update(float(g.norm()))
        out.append(est.estimate)
    return out


def scripted_switch_run(steps=200, flip_step=100, seed=0, log_path=None):
    """Adaptive attacks on a toy critic whose last layer is scaled up at ``flip_step``.

    The first layer is scaled down by the same factor, so the critic function
    and every gradient norm (hence kappa) are unchanged while ``W_sigma`` of the
    last layer crosses the threshold. ``alpha`` and the factor are picked from a
    dry run so the threshold sits strictly between the two ``W_sigma`` levels.

    Returns:
        ``(decisions, meta)`` with the list of :class:`AttackDecision` and the
        chosen constants.
    """
    net = ToyCritic(seed)
    xs = _inputs(steps, seed + 1)
    window = 50
    kappas = _kappas(net, xs, window)
    monitor = WSigmaMonitor(net.tail, (8, 8), refresh_every=10)
    w0 = monitor.refresh()
    alpha = min(kappas) / (2 * 1.5 * w0)
    c = 1.5 * (max(kappas) / (2 * alpha)) / w0
    cfg = AttackConfig(mode="adaptive", radius=0.5, alpha=alpha, steps=3, kappa_window=window)
    est = KappaEstimator(window=window)
    log = DecisionLog(log_path)
    monitor = WSigmaMonitor(net.tail, (8, 8), refresh_every=10)
    for t, x in enumerate(xs):
        if t == flip_step:
            net.rebalance(c)
        loss = lambda v: net(v).sum()  # noqa: E731
        eps, decision = adaptive_step(loss, x, monitor, cfg, est, step=t)
        assert float(eps.norm()) <= cfg.radius + 1e-6
        log.append(decision)
    return log.records, {"alpha": alpha, "c": c, "w0": w0, "kappas": kappas}
