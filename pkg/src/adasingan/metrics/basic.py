from __future__ import annotations

import numpy as np
import torch

from ..errors import InvalidInputError


def rmse(a, b) -> float:
    """Root mean squared per-pixel difference, on whatever scale the inputs use."""
    a = a.detach().cpu().numpy() if torch.is_tensor(a) else np.asarray(a)
    b = b.detach().cpu().numpy() if torch.is_tensor(b) else np.asarray(b)
    if a.shape != b.shape:
        raise InvalidInputError(f"image dims differ: {a.shape} vs {b.shape}")
    d = a.astype(np.float64) - b.astype(np.float64)
    return float(np.sqrt(np.mean(d * d)))
