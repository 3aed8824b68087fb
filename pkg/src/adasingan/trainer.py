"""Coarse-to-fine training of the generator/critic ladder.

Scales are trained from the coarsest (``N``) to the finest (``0``). Once a
scale is done its networks are frozen. Each iteration runs ``d_steps``
critic updates (optionally on attacked inputs) followed by ``g_steps``
generator updates on clean inputs, with a two-time-scale learning rate.
"""
from __future__ import annotations

import dataclasses
import json
import math
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import torch

from . import checkpoint as ckpt
from .adaptive import AttackDecision, DecisionLog, WSigmaMonitor, adaptive_step
from .attacks import AttackConfig, KappaEstimator, fgm_perturb, input_gradient, pgd_attack
from .bounds import BoundReport, BoundTerms, assemble_report, margin_loss, power_iteration
from .errors import ConfigError, InvalidInputError, NumericError
from .losses import LossWeights, reconstruction_loss, total_objective, wgan_gp_loss
from .model import (Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, NetParams,
                    init_weights, patch_norms, receptive_field)
from .pyramid import ImagePyramid, build_pyramid, build_schedule, resize, upsample

NOISE_FLOOR = 1e-4


@dataclass
class TrainConfig:
    lr_g: float = 1e-4
    lr_d: float = 4e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    iters_per_scale: int = 2000
    d_steps: int = 3
    g_steps: int = 3
    weights: LossWeights = field(default_factory=LossWeights)
    attack: AttackConfig = field(default_factory=AttackConfig)
    seed: int = 0
    log_every: int = 100
    bound_every: int = 500
    ttur: bool = True
    # ladder layout
    min_size_px: int = 25
    max_size_px: int = 250
    r_target: float = 4 / 3
    exact_r: bool = False
    n_blocks: int = 5
    base_channels: int = 32
    noise_amp_scale: float = 0.1
    init_from_coarser: bool = True
    # bound diagnostics
    bound_gamma: float = 1.0
    bound_beta: float = 0.05
    bound_power_iters: int = 100
    verbose: bool = False

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if isinstance(self.attack, dict):
            self.attack = AttackConfig(**self.attack)
        for name in ("lr_g", "lr_d", "adam_beta1", "adam_beta2"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"train.{name} must be positive")
        if self.ttur and self.lr_g == self.lr_d:
            raise ConfigError("TTUR needs different generator and critic learning rates")
        if self.iters_per_scale < 0 or self.d_steps < 1 or self.g_steps < 1:
            raise ConfigError("iters_per_scale must be >= 0 and d_steps, g_steps >= 1")

    # Flat dotted keys, e.g. {"train.lr_g": 1e-4, "attack.mode": "adaptive"}.
    def to_flat(self) -> dict:
        flat = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "weights":
                flat.update({f"loss.{k}": x for k, x in dataclasses.asdict(v).items()})
            elif f.name == "attack":
                flat.update({f"attack.{k}": x for k, x in dataclasses.asdict(v).items()})
            else:
                flat[f"train.{f.name}"] = v
        return flat

    @classmethod
    def from_flat(cls, flat: dict) -> "TrainConfig":
        base = cls().to_flat()
        unknown = set(flat) - set(base)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged = {**base, **flat}
        kwargs, weights, attack = {}, {}, {}
        for key, v in merged.items():
            section, name = key.split(".", 1)
            target = {"loss": weights, "attack": attack, "train": kwargs}[section]
            default = base[key]
            if isinstance(default, bool):
                v = v if isinstance(v, bool) else str(v).lower() in ("1", "true", "yes")
            elif isinstance(default, int):
                v = int(v)
            elif isinstance(default, float):
                v = float(v)
            target[name] = v
        try:
            return cls(weights=LossWeights(**weights), attack=AttackConfig(**attack), **kwargs)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e


@dataclass
class ScaleState:
    """Trained (frozen) networks and fixed quantities of one scale."""

    index: int
    size: tuple[int, int]
    G: Generator
    D: Discriminator
    noise_map: torch.Tensor
    sigma: float
    kappa: float = 1e-8


def _scale_seed(seed: int, n: int) -> int:
    return int(seed) * 7919 + 1000 + int(n)


def random_chain(states: dict[int, ScaleState], N: int, stop: int, gen=None, amplitude=1.0):
    """Run scales ``N .. stop`` with fresh noise; returns the image at scale ``stop``."""
    x = None
    for k in range(N, stop - 1, -1):
        s = states[k]
        z = amplitude * s.sigma * torch.randn(1, *s.noise_map.shape[1:], generator=gen)
        prev = None if x is None else upsample(x, s.size)
        x = s.G(z, prev)
    return x


def reconstruct(states: dict[int, ScaleState], N: int, stop: int):
    """Fixed-noise reconstruction chain from scale ``N`` down to ``stop``."""
    x = None
    for k in range(N, stop - 1, -1):
        s = states[k]
        prev = None if x is None else upsample(x, s.size)
        x = s.G(s.noise_map, prev)
    return x


def _rmse(a, b) -> float:
    return float(torch.sqrt(torch.mean((a.double() - b.double()) ** 2)))


def noise_amplitude(n: int, pyramid: ImagePyramid, models_so_far: dict[int, ScaleState],
                    scale: float = 0.1) -> float:
    """Noise level for scale ``n``: ``scale`` times the RMSE of the upsampled
    coarser reconstruction against ``x_n``, floored; 1 at the coarsest scale."""
    N = pyramid.schedule.N
    if n == N:
        return 1.0
    with torch.no_grad():
        prev = upsample(reconstruct(models_so_far, N, n + 1), pyramid.schedule.sizes[n])
    return max(scale * _rmse(prev, pyramid[n].unsqueeze(0)), NOISE_FLOOR)


def _critic_attack_problem(D: Discriminator, real, fake, site: str):
    """Joint (real, fake) example and the summed critic loss on it."""
    if site == "input":
        base = torch.cat([real, fake]).detach()

        def loss(x):
            return D(x[1:2]).sum() - D(x[0:1]).sum()
    else:
        with torch.no_grad():
            base = torch.cat([D.embed(real), D.embed(fake)])

        def loss(h):
            return D.tail(h[1:2]).sum() - D.tail(h[0:1]).sum()
    return base, loss


def attack_critic(D, real, fake, attack: AttackConfig, kappa_est: KappaEstimator,
                  w_sigma, step: int, scale: int):
    """Perturbation of the (real, fake) pair for one critic step.

    Returns ``(eps, decision)`` where ``eps`` has a leading dimension of 2
    (real, fake) and ``decision`` is ``None`` unless the mode is adaptive.
    """
    base, loss = _critic_attack_problem(D, real, fake, attack.site)
    if attack.mode == "adaptive":
        return adaptive_step(loss, base, w_sigma, attack, kappa_est, step, scale)
    _, g = input_gradient(loss, base)
    kappa_est.update(float(g.norm()))
    if attack.mode == "pgd":
        return pgd_attack(loss, base, attack, first_grad=g), None
    return fgm_perturb(g, attack.radius), None


def _scores(D, real, fake, eps, site):
    if eps is None:
        return D(real), D(fake)
    if site == "input":
        return D(real + eps[0:1]), D(fake + eps[1:2])
    return D(real, inject=eps[0:1]), D(fake, inject=eps[1:2])


def make_bound_report(D: Discriminator, real, fake, kappa: float, config: TrainConfig,
                      scale: int, step: int) -> BoundReport:
    """Bound terms of the critic at ``(real, fake)``; deterministic given its inputs."""
    size = tuple(real.shape[-2:])
    params = NetParams.from_module(D, size)
    spectral, frob = [], []
    for i in range(params.depth):
        s, _ = power_iteration(params.layers[i].operator(), iters=config.bound_power_iters,
                               tol=1e-9, seed=0)
        spectral.append(s)
        frob.append(params.frobenius_norm(i))
    B = float(patch_norms(real, receptive_field(D.spec)).max())
    terms = BoundTerms.from_norms(spectral, frob, h=params.embedding_units, B=B,
                                  kappa=kappa, gamma=config.bound_gamma,
                                  beta=config.bound_beta, m=size[0] * size[1])
    atk = config.attack
    with torch.no_grad():
        s_real, s_fake = D(real), D(fake)
    clean = torch.cat([s_real.flatten(), s_fake.flatten()])
    labels = torch.cat([torch.ones(s_real.numel()), -torch.ones(s_fake.numel())])
    base, loss = _critic_attack_problem(D, real, fake, atk.site)
    _, g = input_gradient(loss, base)
    if spectral[-1] < kappa / (2.0 * atk.alpha):
        eps = pgd_attack(loss, base, atk, first_grad=g)
    else:
        eps = fgm_perturb(g, atk.radius)
    with torch.no_grad():
        a_real, a_fake = _scores(D, real, fake, eps, atk.site)
    adv = torch.cat([a_real.flatten(), a_fake.flatten()])
    return assemble_report(scale, step, terms, atk.radius, atk.steps, atk.alpha,
                           margin_loss(clean.numpy(), labels.numpy(), config.bound_gamma),
                           margin_loss(adv.numpy(), labels.numpy(), config.bound_gamma))


def _check_finite(out_dir, scale, step, G, D, **values):
    values = {k: float(v.detach()) if torch.is_tensor(v) else float(v) for k, v in values.items()}
    for name, v in values.items():
        if not math.isfinite(float(v)):
            if out_dir is not None:
                diag = Path(out_dir) / "diagnostic"
                diag.mkdir(parents=True, exist_ok=True)
                ckpt.save_tensors(diag / f"G_scale{scale}", G.state_dict())
                ckpt.save_tensors(diag / f"D_scale{scale}", D.state_dict())
                (diag / "error.json").write_text(json.dumps(
                    {"scale": scale, "step": step, **{k: float(x) for k, x in values.items()}}))
            raise NumericError(f"non-finite {name} at scale {scale}, iteration {step}")


def _build_nets(n: int, N: int, config: TrainConfig, coarser: ScaleState | None):
    torch.manual_seed(_scale_seed(config.seed, n))
    spec = GeneratorSpec(scale_index=n, scale_gap=N - n, n_blocks=config.n_blocks,
                         base_channels=config.base_channels)
    G, D = Generator(spec), Discriminator(DiscriminatorSpec(**dataclasses.asdict(spec)))
    init_weights(G)
    init_weights(D)
    if config.init_from_coarser and coarser is not None and coarser.G.spec.channels == spec.channels:
        G.load_state_dict(coarser.G.state_dict())
        D.load_state_dict(coarser.D.state_dict())
    return G, D


def train_scale(n: int, pyramid: ImagePyramid, frozen: dict[int, ScaleState], config: TrainConfig,
                out_dir=None, decision_log: DecisionLog | None = None):
    """Train generator/critic of scale ``n`` against frozen coarser scales.

    Returns:
        ``(state, trace, reports)``: the trained :class:`ScaleState`, a list of
        per-``log_every`` metric dicts and the list of bound reports.
    """
    schedule = pyramid.schedule
    N = schedule.N
    missing = [k for k in range(n + 1, N + 1) if k not in frozen]
    if missing:
        raise InvalidInputError(f"scales {missing} must be trained before scale {n}")
    size = schedule.sizes[n]
    G, D = _build_nets(n, N, config, frozen.get(n + 1))
    gen = torch.Generator().manual_seed(_scale_seed(config.seed, n))
    x_n = pyramid[n].unsqueeze(0)

    if n == N:
        Z = torch.randn(x_n.shape, generator=gen)
        prev_rec = None
    else:
        Z = torch.zeros_like(x_n)
        with torch.no_grad():
            prev_rec = upsample(reconstruct(frozen, N, n + 1), size)
    sigma = noise_amplitude(n, pyramid, frozen, config.noise_amp_scale)

    opt_d = torch.optim.Adam(D.parameters(), lr=config.lr_d, betas=(config.adam_beta1, config.adam_beta2))
    opt_g = torch.optim.Adam(G.parameters(), lr=config.lr_g, betas=(config.adam_beta1, config.adam_beta2))
    atk = config.attack
    kappa_est = KappaEstimator(window=atk.kappa_window)
    monitor = WSigmaMonitor(D.tail, size, refresh_every=atk.refresh_every)
    w = config.weights
    trace, reports = [], []
    d_step = 0

    def report(step):
        with torch.no_grad():
            fake_rec = G(Z, prev_rec)
        kappa = kappa_est.estimate if kappa_est.history else _clean_kappa(D, x_n, fake_rec, atk.site)
        rep = make_bound_report(D, x_n, fake_rec, kappa, config, n, step)
        reports.append(rep)
        return rep

    for it in range(config.iters_per_scale):
        for _ in range(config.d_steps):
            with torch.no_grad():
                prev = None if n == N else upsample(random_chain(frozen, N, n + 1, gen), size)
                z = sigma * torch.randn(x_n.shape, generator=gen)
                fake = G(z, prev)
            eps = None
            if atk.mode != "none":
                eps, decision = attack_critic(D, x_n, fake, atk, kappa_est, monitor, d_step, n)
                if decision is not None and decision_log is not None:
                    decision_log.append(decision)
            s_real, s_fake = _scores(D, x_n, fake, eps, atk.site)
            d_loss, _, gp = wgan_gp_loss(D, x_n, fake, w.lambda_gp, generator=gen,
                                         real_scores=s_real, fake_scores=s_fake)
            opt_d.zero_grad(set_to_none=True)
            d_loss.backward()
            opt_d.step()
            d_step += 1

        D.requires_grad_(False)
        for _ in range(config.g_steps):
            fake = G(z, prev)
            g_adv = -D(fake).mean()
            rec = reconstruction_loss(G(Z, prev_rec), x_n)
            _check_finite(out_dir, n, it, G, D, d_loss=d_loss, g_adv=g_adv, rec=rec)
            _, g_obj = total_objective(d_loss.detach(), g_adv, rec, w)
            opt_g.zero_grad(set_to_none=True)
            g_obj.backward()
            opt_g.step()
        D.requires_grad_(True)

        if config.log_every and (it % config.log_every == 0 or it == config.iters_per_scale - 1):
            entry = {"iter": it, "d_loss": d_loss.item(), "g_adv": g_adv.item(),
                     "rec": rec.item(), "gp": gp.item(), "kappa": kappa_est.estimate}
            trace.append(entry)
            if config.verbose:
                print(f"scale {n} iter {it}: d_loss={entry['d_loss']:.4f} g_adv={entry['g_adv']:.4f} "
                      f"rec={entry['rec']:.4f} gp={entry['gp']:.4f}", flush=True)
        if config.bound_every and it > 0 and it % config.bound_every == 0:
            report(it)

    for p in list(G.parameters()) + list(D.parameters()):
        p.requires_grad_(False)
    final = report(config.iters_per_scale)
    state = ScaleState(n, tuple(size), G, D, Z, sigma, final.terms.kappa)
    return state, trace, reports


def _clean_kappa(D, real, fake, site) -> float:
    base, loss = _critic_attack_problem(D, real, fake, site)
    _, g = input_gradient(loss, base)
    return max(float(g.norm()), 1e-8)


# ---------------------------------------------------------------------------
# full ladder + persistence

def load_image_tensor(image, config: TrainConfig):
    """Resize a ``(C,H,W)`` [-1,1] tensor to the finest schedule level."""
    if image.dim() != 3:
        raise InvalidInputError(f"expected a (C,H,W) image, got shape {tuple(image.shape)}")
    schedule = build_schedule(image.shape[-2:], config.min_size_px, config.max_size_px,
                              config.r_target, config.exact_r)
    x0 = resize(image, schedule.sizes[0]).clamp(-1, 1)
    return x0, schedule


def _scale_dir(n: int) -> str:
    return f"scale_{n:02d}"


def save_scale(out_dir, state: ScaleState) -> dict:
    d = _scale_dir(state.index)
    ckpt.save_tensors(Path(out_dir) / d / "G", state.G.state_dict())
    ckpt.save_tensors(Path(out_dir) / d / "D", state.D.state_dict())
    ckpt.save_tensors(Path(out_dir) / d / "noise", {"Z": state.noise_map})
    return {
        "index": state.index,
        "size": list(state.size),
        "channels": state.G.spec.channels,
        "generator_params_path": f"{d}/G",
        "discriminator_params_path": f"{d}/D",
        "noise_map_path": f"{d}/noise",
        "sigma_n": state.sigma,
        "kappa": state.kappa,
    }


def load_scale(ckpt_dir, entry: dict, config: TrainConfig, N: int) -> ScaleState:
    n = int(entry["index"])
    spec = GeneratorSpec(scale_index=n, scale_gap=N - n, n_blocks=config.n_blocks,
                         base_channels=config.base_channels)
    G, D = Generator(spec), Discriminator(DiscriminatorSpec(**dataclasses.asdict(spec)))
    G.load_state_dict(ckpt.load_tensors(Path(ckpt_dir) / entry["generator_params_path"]))
    D.load_state_dict(ckpt.load_tensors(Path(ckpt_dir) / entry["discriminator_params_path"]))
    for p in list(G.parameters()) + list(D.parameters()):
        p.requires_grad_(False)
    Z = ckpt.load_tensors(Path(ckpt_dir) / entry["noise_map_path"])["Z"]
    return ScaleState(n, tuple(entry["size"]), G, D, Z, float(entry["sigma_n"]),
                      float(entry.get("kappa", 1e-8)))


def _concat_logs(out_dir, entries, name):
    out_dir = Path(out_dir)
    with open(out_dir / name, "w") as f:
        for e in sorted(entries, key=lambda e: -e["index"]):
            p = out_dir / _scale_dir(e["index"]) / name
            if p.exists():
                f.write(p.read_text())


def train_all(image, config: TrainConfig, out_dir, resume: bool = False, stop_after=None):
    """Train every scale from coarsest to finest and persist a checkpoint.

    ``image`` is a ``(C,H,W)`` tensor in [-1, 1]. With ``resume=True`` any
    scales already recorded in ``out_dir``'s manifest for the same image and
    configuration are loaded instead of retrained. ``stop_after`` (a scale
    index) ends the run once that scale is saved.

    Returns:
        The checkpoint directory as a :class:`pathlib.Path`.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    x0, schedule = load_image_tensor(image, config)
    pyramid = build_pyramid(x0, schedule)
    fingerprint = ckpt.tensor_fingerprint(x0)
    N = schedule.N

    states: dict[int, ScaleState] = {}
    entries: list[dict] = []
    if resume and (out_dir / ckpt.MANIFEST).exists():
        old = ckpt.read_manifest(out_dir)
        if old["image_fingerprint"] != fingerprint or old["config"] != config.to_flat():
            raise ConfigError("cannot resume: image or configuration differs from the checkpoint")
        for e in old["scales"]:
            states[e["index"]] = load_scale(out_dir, e, config, N)
            entries.append(e)
    else:
        for p in out_dir.glob("scale_*"):
            shutil.rmtree(p)

    ckpt.save_tensors(out_dir / "real", {"x0": x0})
    manifest = {
        "format_version": ckpt.FORMAT_VERSION,
        "image_fingerprint": fingerprint,
        "schedule": schedule.to_dict(),
        "config": config.to_flat(),
        "real_path": "real",
        "decision_log_path": "decisions.jsonl",
        "bound_report_path": "bounds.jsonl",
        "scales": entries,
    }
    for name in ("decisions.jsonl", "bounds.jsonl"):
        _concat_logs(out_dir, entries, name)
    ckpt.write_manifest(out_dir, manifest)

    for n in range(N, -1, -1):
        if n in states:
            continue
        sdir = out_dir / _scale_dir(n)
        sdir.mkdir(parents=True, exist_ok=True)
        for name in ("decisions.jsonl", "bounds.jsonl", "trace.jsonl"):
            (sdir / name).unlink(missing_ok=True)
        log = DecisionLog(sdir / "decisions.jsonl")
        state, trace, reports = train_scale(n, pyramid, states, config, out_dir, log)
        with open(sdir / "trace.jsonl", "w") as f:
            f.writelines(json.dumps(t) + "\n" for t in trace)
        with open(sdir / "bounds.jsonl", "w") as f:
            f.writelines(json.dumps(r.to_dict()) + "\n" for r in reports)
        (sdir / "decisions.jsonl").touch()
        states[n] = state
        entries.append(save_scale(out_dir, state))
        for name in ("decisions.jsonl", "bounds.jsonl"):
            _concat_logs(out_dir, entries, name)
        ckpt.write_manifest(out_dir, manifest)
        if stop_after is not None and n == stop_after:
            break
    return out_dir


def read_decisions(path) -> list[AttackDecision]:
    return DecisionLog.read(path)


def read_bound_reports(path) -> list[BoundReport]:
    with open(path) as f:
        return [BoundReport.from_dict(json.loads(line)) for line in f if line.strip()]
