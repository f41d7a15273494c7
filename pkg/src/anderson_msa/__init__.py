"""Numerical lab for multi-scale analysis of multi-particle Anderson Hamiltonians."""
from .geometry import Rectangle, scale_ladder, is_separable, classify_interactivity
from .operator import DisorderEnsemble, InteractionSpec, assemble, sample_for
from .solver import ModelParams

__all__ = ["Rectangle", "scale_ladder", "is_separable", "classify_interactivity",
           "DisorderEnsemble", "InteractionSpec", "assemble", "sample_for", "ModelParams"]
__version__ = "0.1.0"
