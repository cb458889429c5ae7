#!/usr/bin/env python3
"""Convert Planetoid-format citation datasets into portable dataset bundles.

Usage: convert.py <name> <src_dir> <out_dir>

``name`` is one of cora, citeseer, pubmed. ``src_dir`` must hold the
upstream distribution files ``ind.<name>.{x,y,tx,ty,allx,ally,graph,
test.index}``. The converter reassembles the full node ordering, derives
the train/val/test split, prints a one-line statistics summary, and aborts
without writing anything if any statistic disagrees with the published
numbers for that dataset.

Bundle layout written (all little-endian):
  meta.txt          key=value lines: name, nodes, features, classes
  graph.edges       one "src<TAB>dst" line per link occurrence
  features.bin      FMAT magic, u64 rows, u64 cols, f32 row-major
  labels.bin        LABL magic, u64 count, u32 per node
  split_train.idx   one node index per line (same for val/test)

Split derivation: the validation set is the last 500 rows of the ally
block, the test set is the sorted content of test.index, and the training
set is every remaining node. Test-range gaps (nodes in the contiguous
test-index span that no test.index line names; CiteSeer has 15) become
zero-feature, class-0 training nodes.

Edge multiplicity: the upstream graph dict stores each citation in both
directions, so a reciprocal pair contributes four adjacency entries. Each
undirected pair is emitted ceil(entries / 2) times, which reproduces the
published link counts (one line per citation occurrence).

Re-running the conversion is byte-identical: every output is sorted and
carries no timestamps.
"""
from __future__ import annotations

import pickle
import struct
import sys
from collections import Counter
from pathlib import Path

import numpy as np

# published statistics; any disagreement aborts the conversion
EXPECTED = {
    "cora": dict(nodes=2708, edges=5429, features=1433, classes=7,
                 train=1208, val=500, test=1000),
    "citeseer": dict(nodes=3327, edges=4732, features=3703, classes=6,
                     train=1827, val=500, test=1000),
    "pubmed": dict(nodes=19717, edges=44338, features=500, classes=3,
                   train=18217, val=500, test=1000),
}

UPSTREAM_PARTS = ("x", "y", "tx", "ty", "allx", "ally", "graph", "test.index")

FEATURES_MAGIC = b"FMAT"
LABELS_MAGIC = b"LABL"


class ConversionError(Exception):
    """Anything that should abort the conversion with a message."""


def _load_pickle(path: Path):
    with open(path, "rb") as fh:
        return pickle.load(fh, encoding="latin1")


def _read_test_index(path: Path) -> np.ndarray:
    lines = path.read_text().split()
    try:
        idx = np.array([int(v) for v in lines], dtype=np.int64)
    except ValueError:
        raise ConversionError(f"{path.name} contains a non-integer index")
    if idx.size == 0:
        raise ConversionError(f"{path.name} is empty")
    return idx


def _dense_f32(matrix) -> np.ndarray:
    if hasattr(matrix, "toarray"):
        matrix = matrix.toarray()
    return np.asarray(matrix, dtype=np.float32)


def assemble(name: str, src_dir: Path) -> dict:
    """Load the upstream files and reassemble the full node ordering."""
    src = {part: src_dir / f"ind.{name}.{part}" for part in UPSTREAM_PARTS}
    missing = [p.name for p in src.values() if not p.is_file()]
    if missing:
        raise ConversionError("missing upstream files: " + ", ".join(missing))

    allx = _dense_f32(_load_pickle(src["allx"]))
    tx = _dense_f32(_load_pickle(src["tx"]))
    ally = np.asarray(_load_pickle(src["ally"]))
    ty = np.asarray(_load_pickle(src["ty"]))
    graph = _load_pickle(src["graph"])
    test_index = _read_test_index(src["test.index"])

    if allx.shape[1] != tx.shape[1]:
        raise ConversionError(
            f"allx has {allx.shape[1]} features but tx has {tx.shape[1]}")
    if ally.shape[0] != allx.shape[0] or ty.shape[0] != tx.shape[0]:
        raise ConversionError("label blocks do not match feature blocks")
    if test_index.size != tx.shape[0]:
        raise ConversionError(
            f"test.index names {test_index.size} rows, tx has {tx.shape[0]}")

    num_known = allx.shape[0]
    span_lo, span_hi = int(test_index.min()), int(test_index.max())
    if span_lo < num_known:
        raise ConversionError("test.index overlaps the allx block")
    num_nodes = num_known + (span_hi - span_lo + 1)
    if span_hi >= num_nodes:
        raise ConversionError(
            "test.index span does not follow the allx block contiguously")

    # scatter the test rows into the full ordering; span gaps (isolated
    # nodes absent from test.index) stay zero-feature with one-hot zeros
    features = np.zeros((num_nodes, allx.shape[1]), dtype=np.float32)
    features[:num_known] = allx
    features[test_index] = tx
    onehot = np.zeros((num_nodes, ally.shape[1]), dtype=ally.dtype)
    onehot[:num_known] = ally
    onehot[test_index] = ty
    labels = np.argmax(onehot, axis=1).astype(np.int64)

    val = np.arange(num_known - 500, num_known, dtype=np.int64)
    test = np.sort(test_index)
    claimed = np.zeros(num_nodes, dtype=bool)
    claimed[val] = True
    claimed[test] = True
    train = np.flatnonzero(~claimed).astype(np.int64)

    pair_counts = Counter()
    for u, neighbors in graph.items():
        for v in neighbors:
            if not (0 <= u < num_nodes and 0 <= v < num_nodes):
                raise ConversionError(
                    f"graph names node {max(u, v)} outside [0, {num_nodes})")
            pair_counts[(min(u, v), max(u, v))] += 1
    edges = []
    for pair in sorted(pair_counts):
        edges.extend([pair] * ((pair_counts[pair] + 1) // 2))

    return dict(name=name, features=features, labels=labels,
                num_classes=int(ally.shape[1]), edges=edges,
                train=train, val=val, test=test)


def check_values(name: str, features: np.ndarray) -> None:
    if name in ("cora", "citeseer"):
        if not np.isin(features, (0.0, 1.0)).all():
            raise ConversionError(
                f"{name} features must be 0/1-valued; found other values")
    elif (features < 0).any():
        raise ConversionError(f"{name} features must be nonnegative")


def stats_line(d: dict) -> str:
    return (f"{d['name']}: {d['features'].shape[0]} nodes, "
            f"{len(d['edges'])} edges, {d['features'].shape[1]} features, "
            f"{d['num_classes']} classes, splits "
            f"{d['train'].size}/{d['val'].size}/{d['test'].size}")


def check_stats(d: dict) -> None:
    want = EXPECTED[d["name"]]
    got = dict(nodes=d["features"].shape[0], edges=len(d["edges"]),
               features=d["features"].shape[1], classes=d["num_classes"],
               train=d["train"].size, val=d["val"].size, test=d["test"].size)
    bad = [f"{k}: got {got[k]}, expected {want[k]}"
           for k in want if got[k] != want[k]]
    if bad:
        raise ConversionError(
            "statistics disagree with the published numbers; refusing to "
            "write the bundle (" + "; ".join(bad) + ")")


def write_bundle(d: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    features, labels = d["features"], d["labels"]
    n, m = features.shape

    (out_dir / "meta.txt").write_text(
        f"name={d['name']}\nnodes={n}\nfeatures={m}\n"
        f"classes={d['num_classes']}\n")
    (out_dir / "graph.edges").write_text(
        "".join(f"{u}\t{v}\n" for u, v in d["edges"]))
    with open(out_dir / "features.bin", "wb") as fh:
        fh.write(FEATURES_MAGIC)
        fh.write(struct.pack("<QQ", n, m))
        fh.write(np.ascontiguousarray(features, dtype="<f4").tobytes())
    with open(out_dir / "labels.bin", "wb") as fh:
        fh.write(LABELS_MAGIC)
        fh.write(struct.pack("<Q", n))
        fh.write(np.ascontiguousarray(labels, dtype="<u4").tobytes())
    for split in ("train", "val", "test"):
        (out_dir / f"split_{split}.idx").write_text(
            "".join(f"{i}\n" for i in d[split]))


def convert(name: str, src_dir: Path, out_dir: Path, emit=print) -> None:
    """Full conversion; emits the statistics line. Raises ConversionError."""
    if name not in EXPECTED:
        raise ConversionError(
            f"unknown dataset {name!r}; supported: " + ", ".join(EXPECTED))
    if not src_dir.is_dir():
        raise ConversionError(f"source directory not found: {src_dir}")
    assembled = assemble(name, src_dir)
    check_values(name, assembled["features"])
    emit(stats_line(assembled))  # printed before the check so it can be diffed
    check_stats(assembled)
    write_bundle(assembled, out_dir)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 3:
        print("usage: convert.py <name> <src_dir> <out_dir>", file=sys.stderr)
        return 1
    name, src_dir, out_dir = argv
    try:
        convert(name, Path(src_dir), Path(out_dir))
    except ConversionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
