"""Inference with a trained ladder: sampling, paint-to-image, style transfer, SR."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import torch

from . import checkpoint as ckpt
from .errors import ConfigMismatchError, InvalidInputError
from .pyramid import ScaleSchedule, build_pyramid, resize, upsample
from .trainer import ScaleState, TrainConfig, load_scale, reconstruct

log = logging.getLogger(__name__)


@dataclass
class Ladder:
    """A trained checkpoint loaded for inference."""

    path: Path
    schedule: ScaleSchedule
    config: TrainConfig
    states: dict[int, ScaleState]
    real: torch.Tensor

    @property
    def N(self) -> int:
        return self.schedule.N

    def pyramid(self):
        return build_pyramid(self.real, self.schedule)


def load_ladder(ckpt_dir) -> Ladder:
    ckpt_dir = Path(ckpt_dir)
    manifest = ckpt.read_manifest(ckpt_dir)
    schedule = ScaleSchedule.from_dict(manifest["schedule"])
    config = TrainConfig.from_flat(manifest["config"])
    states = {e["index"]: load_scale(ckpt_dir, e, config, schedule.N) for e in manifest["scales"]}
    missing = [n for n in range(schedule.N + 1) if n not in states]
    if missing:
        raise ckpt.CheckpointError(f"checkpoint {ckpt_dir} is incomplete, scales {missing} missing")
    real = ckpt.load_tensors(ckpt_dir / manifest["real_path"])["x0"]
    return Ladder(ckpt_dir, schedule, config, states, real)


def _ladder(obj) -> Ladder:
    return obj if isinstance(obj, Ladder) else load_ladder(obj)


def _fresh_noise(state: ScaleState, gen, amplitude):
    return amplitude * state.sigma * torch.randn(1, *state.noise_map.shape[1:], generator=gen)


@torch.no_grad()
def run_from(ladder: Ladder, image, scale: int, gen, amplitude: float = 1.0):
    """Treat ``image`` as the output at ``scale`` and refine it down to scale 0."""
    x = image if image.dim() == 4 else image.unsqueeze(0)
    for k in range(scale - 1, -1, -1):
        s = ladder.states[k]
        prev = upsample(x, s.size)
        x = s.G(_fresh_noise(s, gen, amplitude), prev)
    return x[0]


@torch.no_grad()
def reconstruction(ckpt_or_ladder) -> torch.Tensor:
    ladder = _ladder(ckpt_or_ladder)
    return reconstruct(ladder.states, ladder.N, 0)[0]


@torch.no_grad()
def sample(ckpt_or_ladder, start_scale: int, count: int = 1, seed: int = 0,
           amplitude: float = 1.0) -> torch.Tensor:
    """Draw ``count`` images of full resolution.

    Scales coarser than ``start_scale`` replay the fixed reconstruction
    noise; scales at or below it get fresh noise of amplitude
    ``amplitude * sigma_n``. Returns a ``(count, C, H, W)`` tensor.
    """
    ladder = _ladder(ckpt_or_ladder)
    if not 0 <= start_scale <= ladder.N:
        raise InvalidInputError(f"start_scale must be in [0, {ladder.N}], got {start_scale}")
    gen = torch.Generator().manual_seed(int(seed))
    out = []
    for _ in range(count):
        x = None
        for k in range(ladder.N, -1, -1):
            s = ladder.states[k]
            z = s.noise_map if k > start_scale else _fresh_noise(s, gen, amplitude)
            x = s.G(z, None if x is None else upsample(x, s.size))
        out.append(x[0])
    return torch.stack(out)


def paint_to_image(ckpt_or_ladder, painting: torch.Tensor, inject_scale: int, seed: int = 0,
                   amplitude: float = 1.0) -> torch.Tensor:
    """Render a coarse painting with the ladder's learned texture.

    The painting is resized to scale ``inject_scale``, stands in for that
    scale's output, and is refined by scales ``inject_scale - 1 .. 0``.
    """
    ladder = _ladder(ckpt_or_ladder)
    if not 1 <= inject_scale <= ladder.N:
        raise InvalidInputError(f"inject_scale must be in [1, {ladder.N}], got {inject_scale}")
    x = resize(painting, ladder.schedule.sizes[inject_scale]).clamp(-1, 1)
    gen = torch.Generator().manual_seed(int(seed))
    return run_from(ladder, x, inject_scale, gen, amplitude)


def paint_sweep(ckpt_or_ladder, painting, seed: int = 0, amplitude: float = 1.0):
    """One output per injection scale ``1 .. N``, keyed by scale."""
    ladder = _ladder(ckpt_or_ladder)
    return {n: paint_to_image(ladder, painting, n, seed, amplitude) for n in range(1, ladder.N + 1)}


def style_transfer(ckpt_of_style_image, content_image, inject_scale: int, seed: int = 0,
                   amplitude: float = 1.0):
    """Coarse-scale injection of ``content_image`` into a ladder trained on the style image."""
    return paint_to_image(ckpt_of_style_image, content_image, inject_scale, seed, amplitude)


def sr_factor(s: float, k: int) -> float:
    return float(s) ** (1.0 / int(k))


@torch.no_grad()
def super_resolve(ckpt_or_ladder, image: torch.Tensor, s: float, k: int, seed: int = 0,
                  rtol: float = 1e-3) -> torch.Tensor:
    """Upscale ``image`` by ``s`` in ``k`` passes through the finest generator.

    Each pass upsamples by ``r = s ** (1/k)``, adds noise at the finest
    trained amplitude and refines with ``G_0``. The ladder must have been
    trained with that same ``r``.
    """
    if s < 1 or k < 1:
        raise InvalidInputError(f"need s >= 1 and k >= 1, got s={s}, k={k}")
    ladder = _ladder(ckpt_or_ladder)
    r = sr_factor(s, k)
    if s > 1 and not math.isclose(ladder.schedule.r, r, rel_tol=rtol):
        raise ConfigMismatchError(
            f"checkpoint trained with r={ladder.schedule.r:.6f}, SR with s={s}, k={k} needs r={r:.6f}")
    if ladder.config.weights.alpha_rec != 100:
        log.warning("super-resolution expects a ladder trained with alpha_rec=100, got %s",
                    ladder.config.weights.alpha_rec)
    x = image if image.dim() == 4 else image.unsqueeze(0)
    h, w = x.shape[-2:]
    g0 = ladder.states[0]
    gen = torch.Generator().manual_seed(int(seed))
    for i in range(1, k + 1):
        f = s if i == k else r**i
        size = (round(h * f), round(w * f))
        prev = upsample(x, size)
        z = g0.sigma * torch.randn(prev.shape, generator=gen)
        x = g0.G(z, prev)
    return x[0]


@torch.no_grad()
def _rec_input(ladder: Ladder, n: int):
    if n == ladder.N:
        return None
    return upsample(reconstruct(ladder.states, ladder.N, n + 1), ladder.schedule.sizes[n])


def recompute_bound_reports(ckpt_or_ladder) -> list:
    """Final bound report of every scale, rebuilt from the saved weights alone."""
    from .trainer import make_bound_report

    ladder = _ladder(ckpt_or_ladder)
    pyr = ladder.pyramid()
    out = []
    for n in range(ladder.N, -1, -1):
        s = ladder.states[n]
        with torch.no_grad():
            fake_rec = s.G(s.noise_map, _rec_input(ladder, n))
        out.append(make_bound_report(s.D, pyr[n].unsqueeze(0), fake_rec, s.kappa, ladder.config,
                                     n, ladder.config.iters_per_scale))
    return out


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        elif isinstance(v, (list, tuple)):
            out.update({f"{key}.{i}": x for i, x in enumerate(v)})
        else:
            out[key] = v
    return out


def compare_reports(a, b, rtol: float = 1e-9) -> list[str]:
    """Names of the numeric fields where two reports differ beyond ``rtol``."""
    fa, fb = _flatten(a.to_dict()), _flatten(b.to_dict())
    bad = sorted(set(fa) ^ set(fb))
    for k in set(fa) & set(fb):
        x, y = fa[k], fb[k]
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            if x != y:
                bad.append(k)
        elif not (x == y or (math.isnan(x) and math.isnan(y))
                  or abs(x - y) <= rtol * max(abs(x), abs(y))):
            bad.append(k)
    return sorted(bad)
