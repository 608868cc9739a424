"""Modular and ensemble spiking neural networks for visual place recognition."""
from .data import PatchNormalizer, PlaceDataset, generate_synthetic_dataset, preprocess_image
from .ensemble import EnsembleConfig, EnsembleModularSNN
from .matching import (correct_match_sparsity, predictions_from_distance, recall_at_n, sequence_match,
                       similarity_to_distance)
from .modular import ModularSNN, ModuleState
from .params import SimulationParams

__all__ = [
    "EnsembleConfig",
    "EnsembleModularSNN",
    "ModularSNN",
    "ModuleState",
    "PatchNormalizer",
    "PlaceDataset",
    "SimulationParams",
    "correct_match_sparsity",
    "generate_synthetic_dataset",
    "predictions_from_distance",
    "preprocess_image",
    "recall_at_n",
    "sequence_match",
    "similarity_to_distance",
]
__version__ = "0.1.0"
