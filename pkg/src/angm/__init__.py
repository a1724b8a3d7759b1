"""Attributed network embedding with a block-model prior, fitted by variational inference."""
from angm.graph import AttributedGraph, load_graph
from angm.inference import TrainConfig, TrainResult, train
from angm.kernels import BACKEND
from angm.model import ModelParams
from angm.synthgen import SyntheticSpec, generate

__version__ = "0.1.0"

__all__ = [
    "AttributedGraph",
    "BACKEND",
    "ModelParams",
    "SyntheticSpec",
    "TrainConfig",
    "TrainResult",
    "generate",
    "load_graph",
    "train",
]
