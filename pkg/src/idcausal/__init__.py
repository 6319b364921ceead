"""Causal structure and representation learning on multi-value variables with latent confounders."""

from .scm import CausalGraph, ConfounderSpec, Dataset, Sample, forward_generate, mixing_matrix
from .synthgen import BenchConfig, generate_bench
from .tensor import Tape, Tensor

__version__ = "0.1.0"

__all__ = [
    "CausalGraph",
    "ConfounderSpec",
    "Dataset",
    "Sample",
    "forward_generate",
    "mixing_matrix",
    "BenchConfig",
    "generate_bench",
    "Tape",
    "Tensor",
]
