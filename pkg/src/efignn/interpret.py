"""Closed-form feature-interaction effects and heatmap export.

Because the EFI branch is linear, the contribution of any order-l feature
tuple to a class logit has a closed form: chain the first-order vectors
a1_i = x[n,i] * W0[i,:] through Hadamard products and the layer weights,
then project onto the output-weight rows of the matching block.

The chain is the self-node form: no neighbor aggregation enters it, so
effect sums reconstruct logit blocks exactly only on edgeless graphs (and
orders above one additionally require width-1 embeddings, where Hadamard
and matmul commute). On real graphs the values are per-node attributions.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import Model


@dataclass(frozen=True)
class EffectQuery:
    node: int
    class_index: int
    order: int
    features: tuple | None = None  # None = every active feature
    top_k: int | None = None

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("order must be >= 1")
        if self.top_k is not None and self.top_k < 1:
            raise ValueError("top_k must be >= 1 when given")


@dataclass
class EffectTable:
    node: int
    class_index: int
    order: int
    entries: list = field(default_factory=list)  # (feature tuple, float)

    def total(self) -> float:
        return float(sum(e for _, e in self.entries))

    def as_dict(self) -> dict:
        return {features: effect for features, effect in self.entries}


def _validate_query(model: Model, x_init: np.ndarray, query: EffectQuery) -> None:
    n, m = x_init.shape
    if not 0 <= query.node < n:
        raise ValueError(f"node {query.node} outside [0, {n})")
    if not 0 <= query.class_index < model.num_classes:
        raise ValueError(f"class {query.class_index} outside [0, {model.num_classes})")
    if query.features is not None:
        bad = [f for f in query.features if not 0 <= f < m]
        if bad:
            raise ValueError(f"feature ids {bad} outside [0, {m})")
    if model.efi_cfg is None:
        raise ValueError("interaction effects require an EFI branch")


def _out_column(model: Model, params: dict, block: str, class_index: int):
    for name, lo, hi in model.block_layout():
        if name == block:
            return params["out.w"][lo:hi, class_index]
    raise ValueError(f"block {block} absent from the model's output layout")


def _first_order_vectors(params: dict, x_row: np.ndarray, features) -> dict:
    w0 = params["efi.w0"]
    return {i: x_row[i] * w0[i] for i in features}


def _query_features(x_row: np.ndarray, query: EffectQuery):
    if query.features is not None:
        return tuple(query.features)
    return tuple(np.flatnonzero(x_row).tolist())


def _apply_top_k(table: EffectTable, top_k: int | None) -> EffectTable:
    if top_k is not None and len(table.entries) > top_k:
        table.entries = sorted(table.entries,
                               key=lambda e: (-abs(e[1]), e[0]))[:top_k]
    return table


def first_order_effects(model: Model, params: dict, x_init: np.ndarray,
                        query: EffectQuery) -> EffectTable:
    """e1_i: the direct contribution of feature i to the queried logit."""
    _validate_query(model, x_init, query)
    if query.order != 1:
        raise ValueError("first_order_effects answers order-1 queries only")
    if not model.efi_cfg.include_block0:
        raise ValueError("first-order effects unavailable: block 0 is "
                         "excluded from the concatenated output")
    out_col = _out_column(model, params, "efi0", query.class_index)
    x_row = x_init[query.node]
    features = _query_features(x_row, query)
    a1 = _first_order_vectors(params, x_row, features)
    table = EffectTable(query.node, query.class_index, 1)
    for i in features:
        table.entries.append(((i,), float(a1[i] @ out_col)))
    return _apply_top_k(table, query.top_k)


def second_order_effects(model: Model, params: dict, x_init: np.ndarray,
                         query: EffectQuery) -> EffectTable:
    """e2_ij over ordered pairs: (a1_i Hadamard a1_j) chained through W1."""
    _validate_query(model, x_init, query)
    if query.order != 2:
        raise ValueError("second_order_effects answers order-2 queries only")
    if model.efi_cfg.num_layers < 1:
        raise ValueError("order 2 exceeds model depth: no crossing layer")
    out_col = _out_column(model, params, "efi1", query.class_index)
    w1 = params["efi.w1"]
    x_row = x_init[query.node]
    features = _query_features(x_row, query)
    a1 = _first_order_vectors(params, x_row, features)
    table = EffectTable(query.node, query.class_index, 2)
    for i, j in itertools.product(features, repeat=2):
        a2 = (a1[i] * a1[j]) @ w1
        table.entries.append(((i, j), float(a2 @ out_col)))
    return _apply_top_k(table, query.top_k)


def higher_order_effects(model: Model, params: dict, x_init: np.ndarray,
                         query: EffectQuery) -> EffectTable:
    """General order-l effects by recursive crossing with each a1_k."""
    _validate_query(model, x_init, query)
    order = query.order
    if order > model.efi_cfg.num_layers + 1:
        raise ValueError(f"order {order} exceeds model depth "
                         f"{model.efi_cfg.num_layers + 1}")
    if order == 1:
        return first_order_effects(model, params, x_init, query)
    if query.features is not None and len(query.features) != order:
        raise ValueError(f"feature tuple arity {len(query.features)} != order {order}")
    out_col = _out_column(model, params, f"efi{order - 1}", query.class_index)
    x_row = x_init[query.node]
    if query.features is not None:
        tuples = [tuple(query.features)]
        base = set(query.features)
    else:
        base = set(np.flatnonzero(x_row).tolist())
        tuples = list(itertools.product(sorted(base), repeat=order))
    a1 = _first_order_vectors(params, x_row, sorted(base))
    table = EffectTable(query.node, query.class_index, order)
    for tup in tuples:
        a = a1[tup[0]]
        for depth, k in enumerate(tup[1:], start=1):
            a = (a * a1[k]) @ params[f"efi.w{depth}"]
        table.entries.append((tup, float(a @ out_col)))
    return _apply_top_k(table, query.top_k)


def effects(model: Model, params: dict, x_init: np.ndarray,
            query: EffectQuery) -> EffectTable:
    """Dispatch on query.order."""
    if query.order == 1:
        return first_order_effects(model, params, x_init, query)
    if query.order == 2:
        return second_order_effects(model, params, x_init, query)
    return higher_order_effects(model, params, x_init, query)


# -- export ---------------------------------------------------------------

CSV_HEADER = ["order", "node", "class", "features", "effect"]
CELL = 24     # px per heatmap cell
MARGIN = 30   # px reserved for index labels


def _cell_color(value: float, max_abs: float) -> str:
    """White at zero; red for positive, blue for negative; linear in |v|."""
    if max_abs == 0.0 or value == 0.0:
        return "rgb(255,255,255)"
    t = min(abs(value) / max_abs, 1.0)
    fade = round(255 * (1.0 - t))
    if value > 0:
        return f"rgb(255,{fade},{fade})"
    return f"rgb({fade},{fade},255)"


def _svg_grid(table: EffectTable) -> str:
    values = table.as_dict()
    axis = sorted({f for tup, _ in table.entries for f in tup})
    max_abs = max(abs(e) for _, e in table.entries)
    rows = axis if table.order == 2 else [None]
    width = MARGIN + CELL * len(axis)
    height = MARGIN + CELL * len(rows)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" font-size="10" font-family="monospace">']
    for col, f in enumerate(axis):
        parts.append(f'<text x="{MARGIN + col * CELL + CELL // 2}" y="{MARGIN - 6}" '
                     f'text-anchor="middle">{f}</text>')
    for row, r in enumerate(rows):
        if r is not None:
            parts.append(f'<text x="{MARGIN - 6}" y="{MARGIN + row * CELL + 16}" '
                         f'text-anchor="end">{r}</text>')
        for col, c in enumerate(axis):
            key = (c,) if r is None else (r, c)
            value = values.get(key, 0.0)
            parts.append(f'<rect x="{MARGIN + col * CELL}" y="{MARGIN + row * CELL}" '
                         f'width="{CELL}" height="{CELL}" '
                         f'fill="{_cell_color(value, max_abs)}" '
                         f'stroke="rgb(200,200,200)"/>')
    parts.append("</svg>")
    return "\n".join(parts)


def export_heatmap(table: EffectTable, fmt: str = "both",
                   out_dir: str | Path = ".") -> list:
    """Write the table as CSV and/or an SVG heatmap; returns written paths.

    SVG covers orders 1 (strip) and 2 (matrix); higher orders fall back to
    CSV only.
    """
    if not table.entries:
        raise ValueError("empty table: nothing to export")
    if fmt not in ("csv", "svg", "both"):
        raise ValueError(f"format must be csv, svg, or both, got {fmt!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"effects_node{table.node}_class{table.class_index}_order{table.order}"
    written = []
    if fmt in ("csv", "both"):
        path = out_dir / f"{stem}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for tup, effect in table.entries:
                writer.writerow([table.order, table.node, table.class_index,
                                 "+".join(str(f) for f in tup), repr(effect)])
        written.append(path)
    if fmt in ("svg", "both") and table.order <= 2:
        path = out_dir / f"{stem}.svg"
        path.write_text(_svg_grid(table))
        written.append(path)
    return written


def parse_effect_csv(path: str | Path) -> EffectTable:
    """Inverse of the CSV export; used to round-trip tables."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise ValueError(f"unrecognized effect CSV header: {header}")
        rows = list(reader)
    if not rows:
        raise ValueError("effect CSV has no entries")
    order, node, class_index = int(rows[0][0]), int(rows[0][1]), int(rows[0][2])
    table = EffectTable(node, class_index, order)
    for row in rows:
        tup = tuple(int(f) for f in row[3].split("+"))
        table.entries.append((tup, float(row[4])))
    return table
