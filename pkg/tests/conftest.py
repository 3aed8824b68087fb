import sys
from pathlib import Path

import numpy as np
import pytest
import torch
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from adasingan.attacks import AttackConfig  # noqa: E402
from adasingan.images import save_image  # noqa: E402
from adasingan.losses import LossWeights  # noqa: E402
from adasingan.trainer import TrainConfig, train_all  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

torch.set_num_threads(1)


def astronaut(size: int, step: int = 8) -> torch.Tensor:
    from skimage import data

    from adasingan.images import to_tensor

    return to_tensor(data.astronaut()[::step, ::step][:size, :size])


def tiny_config(**kw) -> TrainConfig:
    base = dict(iters_per_scale=6, r_target=1.5, base_channels=8, n_blocks=3,
                log_every=1, bound_every=3, attack=AttackConfig(mode="adaptive"))
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def toy_image():
    return astronaut(40, 12)


@pytest.fixture(scope="session")
def tiny_ckpt(tmp_path_factory, toy_image):
    out = tmp_path_factory.mktemp("tiny_ckpt")
    train_all(toy_image, tiny_config(), out)
    return out


@pytest.fixture(scope="session")
def sr_ckpt(tmp_path_factory):
    """Ladder trained with the SR factor r = 4 ** (1/5) and alpha_rec = 100."""
    out = tmp_path_factory.mktemp("sr_ckpt")
    cfg = tiny_config(r_target=4 ** 0.2, exact_r=True, weights=LossWeights(alpha_rec=100.0),
                      attack=AttackConfig(mode="none"))
    train_all(astronaut(50, 10), cfg, out)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def png(tmp_path):
    def write(img: torch.Tensor, name: str) -> Path:
        p = tmp_path / name
        save_image(img, p)
        return p
    return write
