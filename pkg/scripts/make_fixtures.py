"""Regenerate the synthetic dataset bundles committed under data/bundles/.

Both bundles are deterministic (fixed seeds), so re-running this script
reproduces the committed bytes exactly.

  toy4     4 nodes, two 2-cliques with one-hot features; smoke tests.
  synth300 300 nodes, 4 classes with class-banded sparse features and a
           mostly assortative graph; node 0 has exactly 9 active features
           so effect tables over it have a fixed 9-row / 9x9 shape.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from efignn.data import DatasetBundle, save_bundle
from efignn.graph import EdgeList
from efignn.train import SplitMasks

ROOT = Path(__file__).resolve().parents[1]
BUNDLE_DIR = ROOT / "data" / "bundles"

BAND = 8  # features per class band in synth300


def make_toy4() -> DatasetBundle:
    x = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]],
                 dtype=np.float32)
    edges = EdgeList.from_pairs([(0, 1), (2, 3)], 4)
    labels = np.array([0, 0, 1, 1])
    masks = SplitMasks(train=np.array([0, 2]), val=np.array([1]),
                       test=np.array([3]))
    return DatasetBundle("toy4", x, edges, labels, masks, num_classes=2)


def make_synth300() -> DatasetBundle:
    rng = np.random.default_rng(42)
    n, num_classes = 300, 4
    m = BAND * num_classes
    labels = rng.integers(0, num_classes, n)
    labels[0] = 0

    x = np.zeros((n, m), dtype=np.float32)
    for i in range(n):
        band = np.arange(BAND * labels[i], BAND * (labels[i] + 1))
        if i == 0:
            own, noise = 7, 2  # exactly 9 active features
        else:
            own = rng.integers(3, 8)
            noise = rng.integers(0, 3)
        active = list(rng.choice(band, size=own, replace=False))
        off_band = np.setdiff1d(np.arange(m), band)
        active += list(rng.choice(off_band, size=noise, replace=False))
        x[i, active] = rng.uniform(0.5, 1.5, size=len(active))
    assert np.count_nonzero(x[0]) == 9

    pairs = set()
    for i in range(n):
        for _ in range(2):
            if rng.random() < 0.8:
                same = np.flatnonzero(labels == labels[i])
                j = int(rng.choice(same))
            else:
                j = int(rng.integers(0, n))
            if i != j:
                pairs.add((min(i, j), max(i, j)))
    edges = EdgeList.from_pairs(sorted(pairs), n)

    order = rng.permutation(n)
    masks = SplitMasks(train=np.sort(order[:200]), val=np.sort(order[200:250]),
                       test=np.sort(order[250:]))
    return DatasetBundle("synth300", x, edges, labels, masks,
                         num_classes=num_classes)


def main():
    for bundle in (make_toy4(), make_synth300()):
        out = BUNDLE_DIR / bundle.name
        save_bundle(out, bundle)
        print(f"wrote {out} ({bundle.num_nodes} nodes, "
              f"{bundle.edges.edges.shape[0]} edges)")


if __name__ == "__main__":
    main()
