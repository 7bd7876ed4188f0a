"""End-to-end trainable kernel SVM for binary graph classification."""
from .data import DatasetBundle, LabeledGraph, parse_tu_dataset
from .harness import CvReport, HyperGrid, run_cv
from .kernel import ScaleParams, gram, multiscale_kernel, set_kernel
from .trainer import ModelParams, TrainConfig, predict_graphs, train

__version__ = "0.1.0"

__all__ = [
    "CvReport",
    "DatasetBundle",
    "HyperGrid",
    "LabeledGraph",
    "ModelParams",
    "ScaleParams",
    "TrainConfig",
    "gram",
    "multiscale_kernel",
    "parse_tu_dataset",
    "predict_graphs",
    "run_cv",
    "set_kernel",
    "train",
]
