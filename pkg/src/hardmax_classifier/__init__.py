"""Over-parametrized hard-max transformer classifiers."""

from .initialization import InitConfig, init_mixture, init_network
from .model import MixtureState, ModelConfig, NetworkParams, mixture_forward, network_forward
from .optimizer import LabeledDataset, TrainConfig, TrainedModel, train

__all__ = [
    "InitConfig", "LabeledDataset", "MixtureState", "ModelConfig", "NetworkParams",
    "TrainConfig", "TrainedModel", "init_mixture", "init_network", "mixture_forward",
    "network_forward", "train",
]
