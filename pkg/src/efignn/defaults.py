"""Per-dataset hyperparameter defaults, keyed by the bundle's dataset name.

Unknown names fall back to the large-graph profile.
"""
from __future__ import annotations

CITATION_DEFAULTS = {
    "cora": dict(gnn_layers=3, efi_layers=2, units=128, lr=1e-3,
                 weight_decay=1e-2, dropout=0.9, skip="none",
                 batch_norm=False, epochs=200),
    "citeseer": dict(gnn_layers=3, efi_layers=2, units=128, lr=1e-3,
                     weight_decay=1e-2, dropout=0.9, skip="none",
                     batch_norm=False, epochs=200),
    "pubmed": dict(gnn_layers=3, efi_layers=2, units=1024, lr=1e-3,
                   weight_decay=1e-3, dropout=0.85, skip="dense",
                   batch_norm=True, epochs=200),
}

LARGE_GRAPH_DEFAULTS = dict(gnn_layers=1, efi_layers=1, units=128, lr=1e-2,
                            weight_decay=0.0, dropout=0.3, skip="none",
                            batch_norm=True, epochs=1000)


def defaults_for(dataset_name: str) -> dict:
    """Defaults for a dataset, by lowercased name; a copy safe to mutate."""
    profile = CITATION_DEFAULTS.get(dataset_name.lower(), LARGE_GRAPH_DEFAULTS)
    return dict(profile)
