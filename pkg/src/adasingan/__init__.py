"""Single-image multi-scale GAN whose critic is trained against adaptive FGM/PGD attacks."""
from .adaptive import AttackDecision, DecisionLog, adaptive_step, decide
from .attacks import AttackConfig, KappaEstimator, fgm_perturb, pgd_attack, project_ball
from .bounds import BoundReport, BoundTerms, f_fgm, f_pgd, lip_bar, power_iteration, rhs
from .errors import ConfigError, ConfigMismatchError, InvalidInputError, NumericError
from .losses import LossWeights, gradient_penalty, reconstruction_loss, wgan_gp_loss
from .model import Discriminator, Generator, GeneratorSpec, NetParams
from .pyramid import ImagePyramid, ScaleSchedule, build_pyramid, build_schedule
from .tasks import load_ladder, paint_to_image, sample, style_transfer, super_resolve
from .trainer import TrainConfig, train_all, train_scale

__version__ = "0.1.0"

__all__ = [
    "AttackDecision", "DecisionLog", "adaptive_step", "decide",
    "AttackConfig", "KappaEstimator", "fgm_perturb", "pgd_attack", "project_ball",
    "BoundReport", "BoundTerms", "f_fgm", "f_pgd", "lip_bar", "power_iteration", "rhs",
    "ConfigError", "ConfigMismatchError", "InvalidInputError", "NumericError",
    "LossWeights", "gradient_penalty", "reconstruction_loss", "wgan_gp_loss",
    "Discriminator", "Generator", "GeneratorSpec", "NetParams",
    "ImagePyramid", "ScaleSchedule", "build_pyramid", "build_schedule",
    "load_ladder", "paint_to_image", "sample", "style_transfer", "super_resolve",
    "TrainConfig", "train_all", "train_scale",
]
