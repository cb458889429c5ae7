"""Explicit feature-interaction graph networks.

Training, joint learning with a conventional GCN branch, and closed-form
per-feature interaction effects of any order.
"""

from .autodiff import NumericError, Tape
from .data import DatasetBundle, load_bundle, load_model, save_bundle, save_model
from .graph import EdgeList, SparseAdj, normalized_adjacency
from .interpret import EffectQuery, EffectTable, effects, export_heatmap
from .model import EfiGnnConfig, GcnConfig, Model
from .train import SplitMasks, TrainConfig, TrainReport

# the training entry point lives at efignn.train.train; re-exporting the
# function here would shadow the submodule of the same name

__version__ = "0.1.0"

__all__ = [
    "DatasetBundle", "EdgeList", "EffectQuery", "EffectTable",
    "EfiGnnConfig", "GcnConfig", "Model", "NumericError", "SparseAdj",
    "SplitMasks", "Tape", "TrainConfig", "TrainReport", "effects",
    "export_heatmap", "load_bundle", "load_model", "normalized_adjacency",
    "save_bundle", "save_model", "__version__",
]
