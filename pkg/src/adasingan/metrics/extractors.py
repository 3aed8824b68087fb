"""Deep feature extractors for SIFID."""
from __future__ import annotations

import os
import warnings

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ConfigError, InvalidInputError

WEIGHTS_ENV = "ADASINGAN_INCEPTION_WEIGHTS"


class FeatureExtractor:
    """Maps a ``(C, H, W)`` image in [-1, 1] to an ``(H', W', feature_dim)`` grid."""

    name: str = "base"
    feature_dim: int = 0
    comparable: bool = False

    def _forward(self, x: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    @torch.no_grad()
    def extract(self, image: torch.Tensor) -> torch.Tensor:
        x = image if image.dim() == 4 else image.unsqueeze(0)
        if x.shape[0] != 1 or x.shape[1] != 3:
            raise InvalidInputError(f"expected a single 3-channel image, got {tuple(x.shape)}")
        f = self._forward(x.to(torch.float32))
        return f[0].permute(1, 2, 0).to(torch.float64)


class RandomConvExtractor(FeatureExtractor):
    """Fixed random two-layer conv net, for offline runs.

    Weights come from a seeded NumPy generator, so the features are
    identical across machines. Scores are not comparable with the
    Inception ones.
    """

    name = "random-conv"
    comparable = False

    def __init__(self, feature_dim: int = 64, hidden: int = 32, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.feature_dim = feature_dim
        w1 = rng.standard_normal((hidden, 3, 3, 3)) * np.sqrt(2.0 / 27)
        w2 = rng.standard_normal((feature_dim, hidden, 3, 3)) * np.sqrt(2.0 / (hidden * 9))
        self.w1 = torch.tensor(w1, dtype=torch.float32)
        self.w2 = torch.tensor(w2, dtype=torch.float32)

    def _forward(self, x):
        x = F.relu(F.conv2d(x, self.w1, stride=2))
        return F.relu(F.conv2d(x, self.w2, stride=1))


class InceptionPoolExtractor(FeatureExtractor):
    """Inception-v3 stem up to the first max-pool (64 channels)."""

    name = "inception-v3-pool1"
    feature_dim = 64
    comparable = True

    def __init__(self, weights_path):
        from torchvision.models import inception_v3

        net = inception_v3(weights=None, aux_logits=True, init_weights=False)
        if not os.path.exists(weights_path):
            raise FileNotFoundError(f"Inception weights not found: {weights_path}")
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        missing, _ = net.load_state_dict(state, strict=False)
        stem = [k for k in missing if k.startswith(("Conv2d_1a", "Conv2d_2a", "Conv2d_2b"))]
        if stem:
            raise ConfigError(f"weights file lacks stem parameters: {stem[:3]}")
        self.net = nn.Sequential(net.Conv2d_1a_3x3, net.Conv2d_2a_3x3, net.Conv2d_2b_3x3,
                                 nn.MaxPool2d(3, stride=2)).eval()

    def _forward(self, x):
        return self.net(x)


def default_extractor(weights_path=None) -> FeatureExtractor:
    """Inception if a weights path is given or set in the environment, else the fallback."""
    path = weights_path or os.environ.get(WEIGHTS_ENV)
    if path:
        return InceptionPoolExtractor(path)
    warnings.warn(f"{WEIGHTS_ENV} not set, using the random-conv extractor; "
                  "SIFID values are not comparable with Inception-based ones", stacklevel=2)
    return RandomConvExtractor()
