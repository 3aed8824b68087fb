"""8-bit image files <-> channel-first tensors in [-1, 1]."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import InvalidInputError


def to_tensor(array: np.ndarray) -> torch.Tensor:
    """``(H, W[, C])`` uint8 array to a ``(C, H, W)`` float tensor in [-1, 1]."""
    a = np.asarray(array)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.shape[2] == 1:
        a = np.repeat(a, 3, axis=2)
    a = a[:, :, :3].astype(np.float32) / 127.5 - 1.0
    return torch.from_numpy(np.ascontiguousarray(a.transpose(2, 0, 1)))


def to_uint8(image: torch.Tensor) -> np.ndarray:
    """``(C, H, W)`` tensor in [-1, 1] to an ``(H, W, C)`` uint8 array."""
    x = image.detach().cpu()
    if x.dim() == 4:
        if x.shape[0] != 1:
            raise InvalidInputError("to_uint8 expects a single image")
        x = x[0]
    a = ((x.clamp(-1, 1) + 1.0) * 127.5).round().to(torch.uint8).numpy()
    return a.transpose(1, 2, 0)


def load_image(path) -> torch.Tensor:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"image not found: {path}")
    with Image.open(path) as im:
        return to_tensor(np.asarray(im.convert("RGB")))


def load_array(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def save_image(image: torch.Tensor, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(image)).save(path)
