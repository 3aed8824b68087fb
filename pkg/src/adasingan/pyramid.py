"""Scale schedule and image pyramid construction.

Images are channel-first float tensors with values in [-1, 1], either
``(C, H, W)`` or batched ``(B, C, H, W)``. Level 0 is the finest scale and
level ``N`` the coarsest.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .errors import InvalidInputError


@dataclass(frozen=True)
class ScaleSchedule:
    sizes: tuple[tuple[int, int], ...]
    r: float
    N: int
    min_size_px: int
    max_size_px: int
    exact_r: bool = field(default=False)

    @property
    def num_levels(self) -> int:
        return self.N + 1

    def to_dict(self) -> dict:
        return {
            "sizes": [list(s) for s in self.sizes],
            "r": self.r,
            "N": self.N,
            "min_size_px": self.min_size_px,
            "max_size_px": self.max_size_px,
            "exact_r": self.exact_r,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScaleSchedule":
        return cls(
            sizes=tuple(tuple(int(v) for v in s) for s in d["sizes"]),
            r=float(d["r"]),
            N=int(d["N"]),
            min_size_px=int(d["min_size_px"]),
            max_size_px=int(d["max_size_px"]),
            exact_r=bool(d.get("exact_r", False)),
        )


def _ladder_depth(d: float, min_size_px: int, r: float) -> int:
    # Number of divisions by r until the rounded size drops to min_size_px.
    n = 0
    size = float(d)
    while round(size) > min_size_px:
        size /= r
        n += 1
    return n


def build_schedule(input_hw, min_size_px=25, max_size_px=250, r_target=4 / 3, exact_r=False):
    """Compute the per-level image sizes for an input image.

    The input is first rescaled so that its short side is at most
    ``max_size_px``. The depth ``N`` is the number of divisions by
    ``r_target`` needed before the rounded short side reaches
    ``min_size_px``; the effective factor is then re-fitted so that level
    ``N`` lands on ``min_size_px`` exactly.

    With ``exact_r=True`` the factor is kept at ``r_target`` (needed when the
    factor is dictated by a super-resolution ratio) and ``N`` is the deepest
    level whose short side is still at least ``min_size_px``.
    """
    h, w = (int(v) for v in input_hw)
    if h <= 0 or w <= 0:
        raise InvalidInputError(f"image dimensions must be positive, got {input_hw}")
    if min_size_px < 8 or max_size_px < min_size_px:
        raise InvalidInputError(
            f"need 8 <= min_size_px <= max_size_px, got {min_size_px}, {max_size_px}"
        )
    if not r_target > 1:
        raise InvalidInputError(f"r_target must exceed 1, got {r_target}")

    scale0 = min(1.0, max_size_px / min(h, w))
    h0, w0 = max(1, round(h * scale0)), max(1, round(w * scale0))
    d = min(h0, w0)

    if exact_r:
        n_levels = 0
        while d / r_target ** (n_levels + 1) >= min_size_px:
            n_levels += 1
        r = float(r_target)
    else:
        n_levels = _ladder_depth(d, min_size_px, r_target)
        r = (d / min_size_px) ** (1.0 / n_levels) if n_levels > 0 else float(r_target)

    sizes = [(h0, w0)]
    for n in range(1, n_levels + 1):
        ph, pw = sizes[-1]
        nh = min(round(h0 / r**n), ph - 1)
        nw = min(round(w0 / r**n), pw - 1)
        sizes.append((nh, nw))
    return ScaleSchedule(tuple(sizes), r, n_levels, min_size_px, max_size_px, exact_r)


def _as_batch(image: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if image.dim() == 3:
        return image.unsqueeze(0), True
    if image.dim() == 4:
        return image, False
    raise InvalidInputError(f"expected (C,H,W) or (B,C,H,W) image, got shape {tuple(image.shape)}")


def resize(image: torch.Tensor, target_hw) -> torch.Tensor:
    """Antialiased bilinear resize to ``target_hw`` (any direction)."""
    x, squeeze = _as_batch(image)
    target_hw = (int(target_hw[0]), int(target_hw[1]))
    if tuple(x.shape[-2:]) == target_hw:
        out = x.clone()
    else:
        out = F.interpolate(x, size=target_hw, mode="bilinear", align_corners=False, antialias=True)
    return out[0] if squeeze else out


@dataclass
class ImagePyramid:
    levels: list[torch.Tensor]
    schedule: ScaleSchedule

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, n: int) -> torch.Tensor:
        return self.levels[n]


def build_pyramid(image: torch.Tensor, schedule: ScaleSchedule) -> ImagePyramid:
    """Resample ``image`` to every level of ``schedule``.

    Every level is resampled directly from the original, never from the
    previous level, so interpolation blur does not compound.
    """
    if tuple(image.shape[-2:]) != tuple(schedule.sizes[0]):
        raise InvalidInputError(
            f"image is {tuple(image.shape[-2:])}, schedule expects {schedule.sizes[0]}"
        )
    levels = [resize(image, hw).clamp(-1, 1) for hw in schedule.sizes]
    return ImagePyramid(levels, schedule)


def upsample(image: torch.Tensor, target_hw) -> torch.Tensor:
    """Plain bilinear upsampling (half-pixel centres) to exactly ``target_hw``."""
    x, squeeze = _as_batch(image)
    th, tw = int(target_hw[0]), int(target_hw[1])
    sh, sw = x.shape[-2:]
    if th < sh or tw < sw:
        raise InvalidInputError(f"cannot upsample {(sh, sw)} to smaller {(th, tw)}")
    if (th, tw) == (sh, sw):
        out = x.clone()
    else:
        out = F.interpolate(x, size=(th, tw), mode="bilinear", align_corners=False)
    return out[0] if squeeze else out

