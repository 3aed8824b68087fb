"""Single-image Frechet distance between internal feature statistics."""
from __future__ import annotations

import numpy as np
import torch

from ..errors import InvalidInputError


def feature_stats(features) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of a ``(..., D)`` set of feature vectors."""
    f = features.detach().cpu().numpy() if torch.is_tensor(features) else np.asarray(features)
    f = f.reshape(-1, f.shape[-1]).astype(np.float64)
    if f.shape[0] < 2:
        raise InvalidInputError(f"need at least 2 feature vectors, got {f.shape[0]}")
    return f.mean(axis=0), np.cov(f, rowvar=False).reshape(f.shape[1], f.shape[1])


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((m + m.T) / 2)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def frechet_distance(mu1, cov1, mu2, cov2) -> float:
    """``|mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2))``.

    ``tr (S1 S2)^(1/2)`` is computed as ``tr (s1 S2 s1)^(1/2)`` with
    ``s1 = S1^(1/2)``, a symmetric PSD product, so the square root comes from
    one eigendecomposition with negative eigenvalues clipped to 0.
    """
    mu1, mu2 = np.asarray(mu1, np.float64), np.asarray(mu2, np.float64)
    cov1, cov2 = np.atleast_2d(cov1).astype(np.float64), np.atleast_2d(cov2).astype(np.float64)
    s1 = _psd_sqrt(cov1)
    inner = s1 @ cov2 @ s1
    w = np.linalg.eigvalsh((inner + inner.T) / 2)
    tr_sqrt = np.sqrt(np.clip(w, 0, None)).sum()
    diff = mu1 - mu2
    d = float(diff @ diff + np.trace(cov1) + np.trace(cov2) - 2 * tr_sqrt)
    return max(d, 0.0)


def sifid_from_features(f_real, f_fake) -> float:
    return frechet_distance(*feature_stats(f_real), *feature_stats(f_fake))


def sifid(real_img: torch.Tensor, fake_img: torch.Tensor, extractor=None) -> float:
    if extractor is None:
        from .extractors import default_extractor
        extractor = default_extractor()
    return sifid_from_features(extractor.extract(real_img), extractor.extract(fake_img))
