"""Dataset-bundle loading and model serialization.

The bundle is a directory of little-endian files writable from any language:
``meta.txt`` (key=value: name, nodes, features, classes), ``graph.edges``
(text, one ``src<TAB>dst`` per line), ``features.bin`` (magic ``FMAT``, u64
rows, u64 cols, float32 row-major), ``labels.bin`` (magic ``LABL``, u64 n,
u32 each), and ``split_{train,val,test}.idx`` (text, one index per line).
Loading validates everything; any bundle that loads satisfies all invariants.

Model files carry magic ``EFIG``, a format version, a canonical JSON header,
float64 weight blobs, and a trailing sha256 over all preceding bytes.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import EdgeList
from .model import EfiGnnConfig, GcnConfig, Model
from .train import SplitMasks

FEATURES_MAGIC = b"FMAT"
LABELS_MAGIC = b"LABL"
MODEL_MAGIC = b"EFIG"
MODEL_VERSION = 1
_SPLIT_FILES = {"train": "split_train.idx", "val": "split_val.idx",
                "test": "split_test.idx"}


@dataclass
class DatasetBundle:
    name: str
    x_init: np.ndarray
    edges: EdgeList
    labels: np.ndarray
    masks: SplitMasks
    num_classes: int

    @property
    def num_nodes(self) -> int:
        return self.x_init.shape[0]

    @property
    def num_features(self) -> int:
        return self.x_init.shape[1]


def _require(path: Path) -> Path:
    if not path.is_file():
        raise FileNotFoundError(f"bundle missing required file: {path.name}")
    return path


def _read_meta(path: Path) -> dict:
    meta = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"meta.txt line without key=value: {line!r}")
        key, value = line.split("=", 1)
        meta[key.strip()] = value.strip()
    for key in ("name", "nodes", "features", "classes"):
        if key not in meta:
            raise ValueError(f"meta.txt missing key: {key}")
    for key in ("nodes", "features", "classes"):
        try:
            meta[key] = int(meta[key])
        except ValueError:
            raise ValueError(f"meta.txt {key} is not an integer: {meta[key]!r}")
        if meta[key] < 1:
            raise ValueError(f"meta.txt {key} must be positive")
    if meta["classes"] < 2:
        raise ValueError("meta.txt classes must be >= 2")
    return meta


def _read_features(path: Path, nodes: int, features: int) -> np.ndarray:
    raw = path.read_bytes()
    if raw[:4] != FEATURES_MAGIC:
        raise ValueError(f"features.bin has wrong magic {raw[:4]!r}")
    rows, cols = struct.unpack("<QQ", raw[4:20])
    if rows != nodes or cols != features:
        raise ValueError(f"features.bin is {rows}x{cols} but meta says "
                         f"{nodes}x{features}")
    expected = 20 + rows * cols * 4
    if len(raw) != expected:
        raise ValueError(f"features.bin payload is {len(raw)} bytes, "
                         f"expected {expected}")
    data = np.frombuffer(raw, dtype="<f4", count=rows * cols, offset=20)
    return data.reshape(rows, cols)


def _read_labels(path: Path, nodes: int, classes: int) -> np.ndarray:
    raw = path.read_bytes()
    if raw[:4] != LABELS_MAGIC:
        raise ValueError(f"labels.bin has wrong magic {raw[:4]!r}")
    (count,) = struct.unpack("<Q", raw[4:12])
    if count != nodes:
        raise ValueError(f"labels.bin holds {count} labels but meta says {nodes}")
    if len(raw) != 12 + count * 4:
        raise ValueError("labels.bin payload truncated")
    labels = np.frombuffer(raw, dtype="<u4", offset=12).astype(np.int64)
    if labels.size and labels.max() >= classes:
        raise ValueError(f"label {labels.max()} out of range for "
                         f"{classes} classes")
    return labels


def _read_edges(path: Path, nodes: int) -> EdgeList:
    pairs = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"graph.edges line {lineno} is not src<TAB>dst: "
                             f"{line!r}")
        try:
            src, dst = int(parts[0]), int(parts[1])
        except ValueError:
            raise ValueError(f"graph.edges line {lineno} is not integral: "
                             f"{line!r}")
        if not (0 <= src < nodes and 0 <= dst < nodes):
            raise ValueError(f"graph.edges line {lineno} endpoint outside "
                             f"[0, {nodes}): {line!r}")
        pairs.append((src, dst))
    return EdgeList.from_pairs(pairs, nodes)


def _read_split(path: Path) -> np.ndarray:
    text = path.read_text().split()
    try:
        idx = np.array([int(tok) for tok in text], dtype=np.int64)
    except ValueError:
        raise ValueError(f"{path.name} contains a non-integer index")
    return idx


def load_bundle(bundle_dir: str | Path, dtype=np.float64) -> DatasetBundle:
    """Load and fully validate a dataset bundle directory."""
    root = Path(bundle_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"bundle directory not found: {root}")
    meta = _read_meta(_require(root / "meta.txt"))
    x = _read_features(_require(root / "features.bin"), meta["nodes"],
                       meta["features"]).astype(dtype)
    labels = _read_labels(_require(root / "labels.bin"), meta["nodes"],
                          meta["classes"])
    edges = _read_edges(_require(root / "graph.edges"), meta["nodes"])
    masks = SplitMasks(**{part: _read_split(_require(root / fname))
                          for part, fname in _SPLIT_FILES.items()})
    masks.check(meta["nodes"])
    return DatasetBundle(name=meta["name"], x_init=x, edges=edges,
                         labels=labels, masks=masks,
                         num_classes=meta["classes"])


def save_bundle(bundle_dir: str | Path, bundle: DatasetBundle) -> None:
    """Write a bundle directory in the exact on-disk layout."""
    root = Path(bundle_dir)
    root.mkdir(parents=True, exist_ok=True)
    n, m = bundle.x_init.shape
    (root / "meta.txt").write_text(
        f"name={bundle.name}\nnodes={n}\nfeatures={m}\n"
        f"classes={bundle.num_classes}\n")
    with open(root / "features.bin", "wb") as fh:
        fh.write(FEATURES_MAGIC)
        fh.write(struct.pack("<QQ", n, m))
        fh.write(np.ascontiguousarray(bundle.x_init, dtype="<f4").tobytes())
    with open(root / "labels.bin", "wb") as fh:
        fh.write(LABELS_MAGIC)
        fh.write(struct.pack("<Q", n))
        fh.write(np.ascontiguousarray(bundle.labels, dtype="<u4").tobytes())
    with open(root / "graph.edges", "w") as fh:
        for src, dst in bundle.edges.edges:
            fh.write(f"{src}\t{dst}\n")
    for part, fname in _SPLIT_FILES.items():
        idx = getattr(bundle.masks, part)
        (root / fname).write_text("".join(f"{i}\n" for i in idx))


# -- model files ------------------------------------------------------------

def _config_header(model: Model) -> dict:
    efi = gcn = None
    if model.efi_cfg is not None:
        c = model.efi_cfg
        efi = {"num_layers": c.num_layers, "units": c.units,
               "dropout": c.dropout, "include_block0": c.include_block0}
    if model.gcn_cfg is not None:
        c = model.gcn_cfg
        gcn = {"num_layers": c.num_layers, "units": c.units, "slope": c.slope,
               "dropout": c.dropout, "skip_mode": c.skip_mode,
               "batch_norm": c.batch_norm}
    return {"kind": model.kind, "num_features": model.num_features,
            "num_classes": model.num_classes, "efi_cfg": efi, "gcn_cfg": gcn}


def save_model(path: str | Path, model: Model, params: dict,
               bn_state: dict | None = None) -> None:
    """Serialize model configuration and weights with a trailing checksum."""
    names = sorted(params)
    bn_names = sorted(bn_state) if bn_state else []
    header = _config_header(model)
    header["params"] = [{"name": k, "shape": list(params[k].shape)}
                        for k in names]
    header["bn_state"] = [{"name": k, "width": int(bn_state[k]["mean"].size)}
                          for k in bn_names]
    header["block_layout"] = [[name, lo, hi]
                              for name, lo, hi in model.block_layout()]
    header_bytes = json.dumps(header, sort_keys=True,
                              separators=(",", ":")).encode()
    blob = bytearray()
    blob += MODEL_MAGIC
    blob += struct.pack("<II", MODEL_VERSION, len(header_bytes))
    blob += header_bytes
    for k in names:
        blob += np.ascontiguousarray(params[k], dtype="<f8").tobytes()
    for k in bn_names:
        blob += np.ascontiguousarray(bn_state[k]["mean"], dtype="<f8").tobytes()
        blob += np.ascontiguousarray(bn_state[k]["var"], dtype="<f8").tobytes()
    blob += hashlib.sha256(bytes(blob)).digest()
    Path(path).write_bytes(bytes(blob))


def load_model(path: str | Path):
    """Inverse of save_model; returns (model, params, bn_state)."""
    raw = Path(path).read_bytes()
    if len(raw) < 44 or raw[:4] != MODEL_MAGIC:
        raise ValueError(f"not a model file: {path}")
    digest = raw[-32:]
    if hashlib.sha256(raw[:-32]).digest() != digest:
        raise ValueError("model file checksum mismatch (corrupt or truncated)")
    version, header_len = struct.unpack("<II", raw[4:12])
    if version != MODEL_VERSION:
        raise ValueError(f"unsupported model format version {version}")
    header = json.loads(raw[12:12 + header_len].decode())
    efi_cfg = EfiGnnConfig(**header["efi_cfg"]) if header["efi_cfg"] else None
    gcn_cfg = GcnConfig(**header["gcn_cfg"]) if header["gcn_cfg"] else None
    model = Model(header["kind"], header["num_features"],
                  header["num_classes"], efi_cfg=efi_cfg, gcn_cfg=gcn_cfg)
    offset = 12 + header_len
    params = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        params[entry["name"]] = np.frombuffer(
            raw, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += count * 8
    bn_state = {}
    for entry in header["bn_state"]:
        width = entry["width"]
        mean = np.frombuffer(raw, dtype="<f8", count=width, offset=offset).copy()
        offset += width * 8
        var = np.frombuffer(raw, dtype="<f8", count=width, offset=offset).copy()
        offset += width * 8
        bn_state[entry["name"]] = {"mean": mean, "var": var}
    if offset != len(raw) - 32:
        raise ValueError("model file payload size mismatch")
    expected = model.param_shapes()
    if {k: tuple(v.shape) for k, v in params.items()} != expected:
        raise ValueError("model file weights do not match the declared configs")
    return model, params, (bn_state or None)
