"""No-reference NIQE score against a natural-scene-statistics model.

The image (luma, 8-bit scale) is split into 96x96 blocks at full and half
resolution. Each block's MSCN coefficients and their four neighbour products
are fitted with asymmetric generalized Gaussians, giving 18 features per
scale. The score is the Mahalanobis-type distance between the multivariate
Gaussian of these features and the pristine model.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate
from scipy.special import gamma as G

from ..errors import InvalidInputError

_SHIFTS = ((0, 1), (1, 0), (1, 1), (1, -1))
_GAM = np.arange(0.2, 10.001, 0.001)
_R_GAM = G(2.0 / _GAM) ** 2 / (G(1.0 / _GAM) * G(3.0 / _GAM))


@dataclass(frozen=True)
class NSSModel:
    mu: np.ndarray
    cov: np.ndarray
    patch_size: int = 96

    @classmethod
    def load(cls, path=None) -> "NSSModel":
        """Read a JSON bundle ``{"mu", "cov", "patch_size"}``; default is the shipped model."""
        if path is None:
            text = resources.files("adasingan.data").joinpath("niqe_pristine.json").read_text()
        else:
            text = Path(path).read_text()
        d = json.loads(text)
        mu = np.asarray(d["mu"], dtype=np.float64).reshape(-1)
        cov = np.asarray(d["cov"], dtype=np.float64)
        if cov.shape != (mu.size, mu.size):
            raise InvalidInputError(f"NSS model covariance {cov.shape} does not match mean {mu.shape}")
        return cls(mu, cov, int(d.get("patch_size", 96)))


@lru_cache(maxsize=1)
def default_model() -> NSSModel:
    return NSSModel.load()


def gaussian_window(size: int = 7, sigma: float = 7 / 6) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def rgb_to_luma(img: np.ndarray) -> np.ndarray:
    """ITU-R BT.601 luma on the [16, 235] studio range, from RGB in [0, 255]."""
    img = img.astype(np.float64) / 255.0
    return 16.0 + 65.481 * img[..., 0] + 128.553 * img[..., 1] + 24.966 * img[..., 2]


def mscn(img: np.ndarray, window: np.ndarray | None = None) -> np.ndarray:
    w = gaussian_window() if window is None else window
    mu = correlate(img, w, mode="nearest")
    sigma = np.sqrt(np.abs(correlate(img * img, w, mode="nearest") - mu * mu))
    return (img - mu) / (sigma + 1.0)


def aggd_fit(x: np.ndarray) -> tuple[float, float, float]:
    """Moment-matching fit of an asymmetric generalized Gaussian.

    Returns:
        ``(shape, left_scale, right_scale)``.
    """
    x = x.reshape(-1)
    left = x[x < 0]
    right = x[x > 0]
    lstd = math.sqrt(np.mean(left * left)) if left.size else 0.0
    rstd = math.sqrt(np.mean(right * right)) if right.size else 0.0
    ghat = lstd / rstd if rstd > 0 else np.inf
    rhat = np.mean(np.abs(x)) ** 2 / np.mean(x * x)
    rnorm = rhat * (ghat**3 + 1) * (ghat + 1) / (ghat**2 + 1) ** 2
    alpha = float(_GAM[np.argmin((_R_GAM - rnorm) ** 2)])
    c = math.sqrt(G(1 / alpha) / G(3 / alpha))
    return alpha, lstd * c, rstd * c


def block_features(block: np.ndarray) -> list[float]:
    a, bl, br = aggd_fit(block)
    feats = [a, (bl + br) / 2]
    for shift in _SHIFTS:
        pair = block * np.roll(block, shift, axis=(0, 1))
        a, bl, br = aggd_fit(pair)
        mean = (br - bl) * G(2 / a) / G(1 / a)
        feats += [a, mean, bl, br]
    return feats


def _cubic(x):
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    return ((1.5 * ax3 - 2.5 * ax2 + 1) * (ax <= 1)
            + (-0.5 * ax3 + 2.5 * ax2 - 4 * ax + 2) * ((ax > 1) & (ax <= 2)))


def _resize_matrix(n_in: int, n_out: int, scale: float) -> np.ndarray:
    """Dense bicubic interpolation matrix with antialiasing and symmetric borders."""
    width = 4.0 / scale if scale < 1 else 4.0
    x = np.arange(1, n_out + 1, dtype=np.float64)
    u = x / scale + 0.5 * (1 - 1 / scale)
    left = np.floor(u - width / 2)
    taps = int(math.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    d = u[:, None] - idx
    wts = scale * _cubic(scale * d) if scale < 1 else _cubic(d)
    wts /= wts.sum(axis=1, keepdims=True)
    mirror = np.concatenate([np.arange(n_in), np.arange(n_in - 1, -1, -1)])
    cols = mirror[np.mod(idx.astype(np.int64) - 1, 2 * n_in)]
    m = np.zeros((n_out, n_in))
    np.add.at(m, (np.repeat(np.arange(n_out), taps), cols.reshape(-1)), wts.reshape(-1))
    return m


def imresize_half(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    rows = _resize_matrix(h, int(math.ceil(h * 0.5)), 0.5)
    cols = _resize_matrix(w, int(math.ceil(w * 0.5)), 0.5)
    return rows @ img @ cols.T


def niqe_features(luma: np.ndarray, patch: int = 96) -> np.ndarray:
    """Per-block 36-dim features, one row per block."""
    h, w = luma.shape
    nh, nw = h // patch, w // patch
    img = luma[: nh * patch, : nw * patch].astype(np.float64)
    per_scale = []
    for scale in (1, 2):
        ps = patch // scale
        m = mscn(img)
        per_scale.append([block_features(m[i * ps:(i + 1) * ps, j * ps:(j + 1) * ps])
                          for i in range(nh) for j in range(nw)])
        if scale == 1:
            img = imresize_half(img / 255.0) * 255.0
    return np.concatenate([np.asarray(f) for f in per_scale], axis=1)


def niqe(image: np.ndarray, model: NSSModel | None = None, crop_border: int = 0) -> float:
    """NIQE score of ``image``; lower means more natural.

    Args:
        image: ``(H, W)`` luma or ``(H, W, 3)`` RGB on the 8-bit scale.
        model: pristine statistics, defaults to the shipped model.
        crop_border: pixels removed from every side first.
    """
    model = default_model() if model is None else model
    img = np.asarray(image)
    if img.ndim == 3:
        img = rgb_to_luma(img[..., :3])
    elif img.ndim != 2:
        raise InvalidInputError(f"expected (H, W) or (H, W, 3) image, got shape {img.shape}")
    img = img.astype(np.float64)
    if crop_border:
        img = img[crop_border:-crop_border, crop_border:-crop_border]
    if min(img.shape) < model.patch_size:
        raise InvalidInputError(
            f"NIQE needs both dims >= {model.patch_size}, got {img.shape[0]}x{img.shape[1]}")
    feats = niqe_features(img, model.patch_size)
    mu = np.nanmean(feats, axis=0)
    clean = feats[~np.isnan(feats).any(axis=1)]
    cov = np.cov(clean, rowvar=False) if clean.shape[0] > 1 else np.zeros_like(model.cov)
    diff = model.mu - mu
    inv = np.linalg.pinv((model.cov + cov) / 2)
    return float(math.sqrt(max(diff @ inv @ diff, 0.0)))
