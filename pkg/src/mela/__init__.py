"""MeLA: a meta-learning autoencoder that reads a few examples of a task and
generates the weights of a network for it.

The package is plain numpy: a small reverse-mode autodiff tape, dense MLPs,
the recognition/generator model, its training loop, comparison models, two
task families and an experiment harness.
"""

from .autodiff import ContractError, DimensionError, EmptyDatasetError, NumericInstabilityError
from .datasets import TaskDataset, load_datasets, save_datasets
from .model import (
    MelaModel,
    MelaSpec,
    example_influence,
    instantiate,
    load_model,
    save_model,
    sensitivity_select,
)
from .nn import MlpSpec, ParamSet
from .training import MetaTrainConfig, evaluate, meta_train

__version__ = "0.1.0"
