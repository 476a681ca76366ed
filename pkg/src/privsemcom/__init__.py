"""Privacy-aware deep semantic communication over Rayleigh block-fading channels.

Alice encodes images into power-normalized complex latents, Bob decodes
labels and reconstructions, and an eavesdropper (Eve) tries to classify
from her own channel.  Protection comes from adversarial min-max training
or from a cooperative jammer adding FGSM/PGD perturbations.
"""

from .config import ConfigError, ExperimentConfig, PerturbationConfig, RandomStreams, load_config
from .evaluation import EvalReport, evaluate, evaluate_with_jammer, fidelity_penalty, gap_sweep
from .models import ModelBundle, build_bundle
from .training import train_baseline, train_eve, train_minmax

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ExperimentConfig", "PerturbationConfig", "RandomStreams", "load_config",
    "EvalReport", "evaluate", "evaluate_with_jammer", "fidelity_penalty", "gap_sweep",
    "ModelBundle", "build_bundle", "train_baseline", "train_eve", "train_minmax",
]
