"""Sparse adjacency handling: CSR build, self-loops, symmetric normalization, SpMM.

The adjacency is treated as binary (a citation link either exists or not);
duplicate edges collapse on build. All functions are pure: they return new
structures and never mutate their inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class EdgeList:
    """Raw (src, dst) pairs over ``num_nodes`` nodes.

    ``edges`` is an (E, 2) int64 array; an empty edge list is allowed.
    """

    edges: np.ndarray
    num_nodes: int

    @classmethod
    def from_pairs(cls, pairs, num_nodes: int) -> "EdgeList":
        arr = np.asarray(list(pairs), dtype=np.int64)
        if arr.size == 0:
            arr = arr.reshape(0, 2)
        return cls(edges=arr, num_nodes=int(num_nodes))


@dataclass
class SparseAdj:
    """CSR matrix with float64 values.

    Invariants: ``row_ptr`` is monotone with ``row_ptr[-1] == nnz``, and
    column indices are strictly increasing within each row.
    """

    num_nodes: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray
    _transpose: "SparseAdj | None" = field(default=None, repr=False, compare=False)

    @property
    def nnz(self) -> int:
        return int(self.col_idx.shape[0])

    def row_of_entry(self) -> np.ndarray:
        """Row index of every stored entry, in storage order."""
        counts = np.diff(self.row_ptr)
        return np.repeat(np.arange(self.num_nodes, dtype=np.int64), counts)

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.num_nodes, self.num_nodes), dtype=np.float64)
        dense[self.row_of_entry(), self.col_idx] = self.values
        return dense

    def transpose(self) -> "SparseAdj":
        """CSR transpose; cached because adjacencies are reused across epochs."""
        if self._transpose is None:
            rows = self.row_of_entry()
            order = np.lexsort((rows, self.col_idx))
            t_rows = self.col_idx[order]
            counts = np.bincount(t_rows, minlength=self.num_nodes)
            row_ptr = np.zeros(self.num_nodes + 1, dtype=np.int64)
            np.cumsum(counts, out=row_ptr[1:])
            self._transpose = SparseAdj(
                num_nodes=self.num_nodes,
                row_ptr=row_ptr,
                col_idx=rows[order],
                values=self.values[order],
            )
        return self._transpose


def _csr_from_coo(rows: np.ndarray, cols: np.ndarray, vals: np.ndarray,
                  num_nodes: int) -> SparseAdj:
    """Assemble CSR from unsorted COO triplets; duplicates must be pre-collapsed."""
    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    counts = np.bincount(rows, minlength=num_nodes)
    row_ptr = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(counts, out=row_ptr[1:])
    return SparseAdj(num_nodes=num_nodes, row_ptr=row_ptr,
                     col_idx=cols.astype(np.int64), values=vals.astype(np.float64))


def build_csr(edges: EdgeList, symmetrize: bool = True) -> SparseAdj:
    """Build a binary CSR adjacency from an edge list.

    Duplicate edges collapse to a single entry with value 1.0. With
    ``symmetrize`` both (i, j) and (j, i) are stored. Raises ``ValueError``
    naming the first offending edge if an index is out of range.
    """
    n = edges.num_nodes
    e = np.asarray(edges.edges, dtype=np.int64)
    if e.ndim != 2 or (e.size and e.shape[1] != 2):
        raise ValueError(f"edge array must have shape (E, 2), got {e.shape}")
    if e.size:
        bad = (e < 0) | (e >= n)
        if bad.any():
            i = int(np.flatnonzero(bad.any(axis=1))[0])
            raise ValueError(
                f"edge ({e[i, 0]}, {e[i, 1]}) out of range for {n} nodes")
    src, dst = e[:, 0], e[:, 1]
    if symmetrize:
        src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
    if src.size:
        keys = src * n + dst
        keys = np.unique(keys)
        src, dst = keys // n, keys % n
    vals = np.ones(src.shape[0], dtype=np.float64)
    return _csr_from_coo(src, dst, vals, n)


def add_self_loops(a: SparseAdj) -> SparseAdj:
    """Return the adjacency with every diagonal entry set to 1.0.

    Existing diagonal entries are overwritten; off-diagonal entries are kept.
    """
    rows = a.row_of_entry()
    off_diag = rows != a.col_idx
    n = a.num_nodes
    rows = np.concatenate([rows[off_diag], np.arange(n, dtype=np.int64)])
    cols = np.concatenate([a.col_idx[off_diag], np.arange(n, dtype=np.int64)])
    vals = np.concatenate([a.values[off_diag], np.ones(n, dtype=np.float64)])
    return _csr_from_coo(rows, cols, vals, n)


def sym_normalize(a_tilde: SparseAdj) -> SparseAdj:
    """Scale each entry (i, j) by 1/sqrt(deg(i) * deg(j)).

    Degrees are row sums of the input, which must all be positive (always
    true after ``add_self_loops``).
    """
    n = a_tilde.num_nodes
    rows = a_tilde.row_of_entry()
    deg = np.zeros(n, dtype=np.float64)
    np.add.at(deg, rows, a_tilde.values)
    assert (deg > 0).all(), "zero-degree row; add self-loops before normalizing"
    inv_sqrt = 1.0 / np.sqrt(deg)
    values = a_tilde.values * inv_sqrt[rows] * inv_sqrt[a_tilde.col_idx]
    return SparseAdj(num_nodes=n, row_ptr=a_tilde.row_ptr.copy(),
                     col_idx=a_tilde.col_idx.copy(), values=values)


def spmm(a: SparseAdj, x: np.ndarray) -> np.ndarray:
    """Sparse-dense product a @ x with a deterministic reduction order.

    Entries within a row are summed left to right in storage order, so the
    result is bitwise reproducible for a fixed adjacency.
    """
    if x.ndim != 2 or x.shape[0] != a.num_nodes:
        raise ValueError(
            f"shape mismatch: adjacency is {a.num_nodes}x{a.num_nodes}, "
            f"dense operand is {x.shape}")
    out = np.zeros((a.num_nodes, x.shape[1]), dtype=x.dtype)
    if a.nnz == 0:
        return out
    prod = a.values[:, None].astype(x.dtype) * x[a.col_idx]
    counts = np.diff(a.row_ptr)
    nonempty = counts > 0
    # reduceat over the starts of nonempty rows: each segment spans exactly
    # that row's entries because empty rows contribute no elements
    starts = a.row_ptr[:-1][nonempty]
    out[nonempty] = np.add.reduceat(prod, starts, axis=0)
    return out


def normalized_adjacency(edges: EdgeList, symmetrize: bool = True) -> SparseAdj:
    """Self-looped, symmetrically normalized adjacency used by every layer."""
    return sym_normalize(add_self_loops(build_csr(edges, symmetrize=symmetrize)))
