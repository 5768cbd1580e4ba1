"""Simulation, unrolled restoration and peak metrics for sparse chromatographic signals."""

from .dataset import Dataset, generate_dataset
from .kernels import BACKEND
from .metrics import evaluate_dataset, record_metrics
from .operators import ForwardModel, estimate_operator_norm, make_forward
from .sigmodel import DatasetSpec, KernelSpec, SignalTriple, generate_split, preset, sample_kernel
from .solvers import HqConfig, IstaConfig, PdConfig, hq_solve, ista_solve, primal_dual_solve
from .unrolled import TrainConfig, UnrolledModel, forward, infer, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Dataset",
    "DatasetSpec",
    "ForwardModel",
    "HqConfig",
    "IstaConfig",
    "KernelSpec",
    "PdConfig",
    "SignalTriple",
    "TrainConfig",
    "UnrolledModel",
    "estimate_operator_norm",
    "evaluate_dataset",
    "forward",
    "generate_dataset",
    "generate_split",
    "hq_solve",
    "infer",
    "ista_solve",
    "load_checkpoint",
    "make_forward",
    "preset",
    "primal_dual_solve",
    "record_metrics",
    "sample_kernel",
    "save_checkpoint",
    "train",
]
