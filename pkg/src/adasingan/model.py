"""Per-scale generator and patch discriminator.

Both networks share the same ladder of 3x3 conv blocks: an un-normalized
head, ``n_blocks - 2`` Conv-BatchNorm-ReLU body blocks and a tail. The
generator tail maps back to image channels through ``tanh``; the
discriminator tail is a linear 1-channel patch critic and doubles as the
embedding layer that attacks and ``W_sigma`` refer to.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .bounds import ConvOperator, DenseOperator, power_iteration
from .errors import InvalidInputError


def channels_for_scale(scale_gap: int, base_channels: int = 32) -> int:
    """Kernel count doubles every four downsamplings away from the coarsest scale."""
    return base_channels * 2 ** (int(scale_gap) // 4)


@dataclass(frozen=True)
class GeneratorSpec:
    scale_index: int
    scale_gap: int
    n_blocks: int = 5
    base_channels: int = 32
    image_channels: int = 3
    kernel: int = 3

    def __post_init__(self):
        if self.n_blocks < 3:
            raise InvalidInputError(f"n_blocks must be >= 3, got {self.n_blocks}")

    @property
    def channels(self) -> int:
        return channels_for_scale(self.scale_gap, self.base_channels)


@dataclass(frozen=True)
class DiscriminatorSpec(GeneratorSpec):
    pass


class ConvBlock(nn.Sequential):
    def __init__(self, in_ch, out_ch, kernel=3, norm=True):
        layers = [nn.Conv2d(in_ch, out_ch, kernel, stride=1, padding=kernel // 2)]
        if norm:
            # Always normalise with the statistics of the current batch so that
            # training and inference follow the same code path.
            layers.append(nn.BatchNorm2d(out_ch, track_running_stats=False))
        layers.append(nn.ReLU())
        super().__init__(*layers)


def _body(spec: GeneratorSpec) -> tuple[nn.Module, nn.Module]:
    c = spec.channels
    head = ConvBlock(spec.image_channels, c, spec.kernel, norm=False)
    body = nn.Sequential(*[ConvBlock(c, c, spec.kernel) for _ in range(spec.n_blocks - 2)])
    return head, body


def init_weights(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.normal_(m.weight, 0.0, 0.02)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.normal_(m.weight, 1.0, 0.02)
            nn.init.zeros_(m.bias)


class Generator(nn.Module):
    """Residual refiner ``x_n = up + psi(z_n + up)``; at the coarsest scale ``psi(z_N)``."""

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        self.head, self.body = _body(spec)
        self.tail = nn.Sequential(
            nn.Conv2d(spec.channels, spec.image_channels, spec.kernel, padding=spec.kernel // 2),
            nn.Tanh(),
        )

    def psi(self, x: torch.Tensor) -> torch.Tensor:
        return self.tail(self.body(self.head(x)))

    def forward(self, z: torch.Tensor, prev: torch.Tensor | None = None) -> torch.Tensor:
        if prev is None:
            return self.psi(z)
        if z.shape != prev.shape:
            raise InvalidInputError(
                f"noise {tuple(z.shape)} and upsampled input {tuple(prev.shape)} differ"
            )
        return prev + self.psi(z + prev)


class Discriminator(nn.Module):
    """Fully convolutional patch critic producing one score per pixel position."""

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.spec = spec
        self.head, self.body = _body(spec)
        self.tail = nn.Conv2d(spec.channels, 1, spec.kernel, padding=spec.kernel // 2)

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        """Input of the final (embedding) layer."""
        return self.body(self.head(x))

    def forward(self, x: torch.Tensor, inject: torch.Tensor | None = None) -> torch.Tensor:
        h = self.embed(x)
        if inject is not None:
            if inject.shape != h.shape:
                raise InvalidInputError(
                    f"perturbation {tuple(inject.shape)} does not match embedding {tuple(h.shape)}"
                )
            h = h + inject
        return self.tail(h)


def generator_forward(G: Generator, z, prev=None):
    return G(z, prev)


def discriminator_forward(D: Discriminator, image, inject_at_embedding=None):
    return D(image, inject_at_embedding)


@dataclass
class LayerWeight:
    name: str
    weight: np.ndarray
    kind: str  # "conv" or "dense"
    input_hw: tuple[int, int] | None = None
    padding: int = 0

    def operator(self):
        if self.kind == "conv":
            return ConvOperator(self.weight, self.input_hw, self.padding)
        return DenseOperator(self.weight)

    @property
    def frobenius(self) -> float:
        return float(np.linalg.norm(self.weight.ravel()))


class NetParams:
    """Ordered weight list ``W_1 .. W_d`` of a network, with norm accessors.

    Convolutions are measured as the unrolled linear operator acting on an
    ``input_hw`` feature map (zero padding included); Frobenius norms are
    taken over the kernel tensor itself.
    """

    def __init__(self, layers: list[LayerWeight]):
        if not layers:
            raise InvalidInputError("NetParams needs at least one layer")
        self.layers = list(layers)

    @classmethod
    def from_module(cls, module: nn.Module, input_hw) -> "NetParams":
        layers = []
        for name, m in module.named_modules():
            if isinstance(m, nn.Conv2d):
                w = m.weight.detach().to(torch.float64).cpu().numpy().copy()
                layers.append(LayerWeight(name, w, "conv", tuple(input_hw), int(m.padding[0])))
            elif isinstance(m, nn.Linear):
                w = m.weight.detach().to(torch.float64).cpu().numpy().copy()
                layers.append(LayerWeight(name, w, "dense"))
        return cls(layers)

    @classmethod
    def from_matrices(cls, mats) -> "NetParams":
        return cls([LayerWeight(f"layer{i}", np.asarray(w, dtype=np.float64), "dense")
                    for i, w in enumerate(mats)])

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def embedding_units(self) -> int:
        """Units feeding the last layer (its input channels / columns)."""
        return int(self.layers[-1].weight.shape[1])

    @property
    def last(self) -> LayerWeight:
        return self.layers[-1]

    def spectral_norm(self, i: int, iters: int = 1000, tol: float = 1e-7, seed: int = 0) -> float:
        sigma, _ = power_iteration(self.layers[i].operator(), iters=iters, tol=tol, seed=seed)
        return sigma

    def frobenius_norm(self, i: int) -> float:
        return self.layers[i].frobenius


def layer_norms(params: NetParams, iters: int = 1000, tol: float = 1e-7) -> list[tuple[float, float]]:
    """(spectral, Frobenius) norm of every layer, in order."""
    return [(params.spectral_norm(i, iters, tol), params.frobenius_norm(i))
            for i in range(params.depth)]


def zero_psi_output(G: Generator) -> None:
    """Zero the generator tail so that ``psi`` outputs exactly zero."""
    with torch.no_grad():
        conv = G.tail[0]
        conv.weight.zero_()
        conv.bias.zero_()


def receptive_field(spec: GeneratorSpec) -> int:
    return spec.n_blocks * (spec.kernel - 1) + 1


def patch_norms(image: torch.Tensor, size: int) -> torch.Tensor:
    """L2 norm of every ``size x size`` zero-padded patch centred on each pixel."""
    x = image if image.dim() == 4 else image.unsqueeze(0)
    cols = F.unfold(x.to(torch.float64), size, padding=size // 2)
    return cols.norm(dim=1).flatten()
