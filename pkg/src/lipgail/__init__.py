"""Locally-Lipschitz GAIL on toy continuous-control tasks, in plain numpy."""
from .envs import ENVS, Trajectory, gen_demos, load_demos, make_env
from .estimator import GAILImitator
from .evaluation import ellc, ellc_report, eval_noise
from .gail import VERSION_TAG, Agent, ConfigError, TrainConfig, TrainingDiverged, train
from .perturb import PerturbationSpec

__version__ = "0.1.0"

__all__ = ["ENVS", "Agent", "ConfigError", "GAILImitator", "PerturbationSpec", "TrainConfig",
           "TrainingDiverged", "Trajectory", "VERSION_TAG", "ellc", "ellc_report", "eval_noise",
           "gen_demos", "load_demos", "make_env", "train"]
