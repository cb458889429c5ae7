"""Reverse-mode differentiation over a recorded tape.

Covers exactly the dense ops the models need: matmul, sparse aggregation,
Hadamard product, column concatenation, leaky ReLU, inverted dropout, batch
normalization, and masked softmax cross-entropy. Every op validates shapes,
rejects non-finite outputs, and records a closure that routes the output
gradient back to the inputs in exact reverse order of the forward pass.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .graph import SparseAdj
from .graph import spmm as _spmm_raw


class NumericError(ArithmeticError):
    """A computation produced NaN/Inf or an otherwise unusable value."""


def _check_finite(value: np.ndarray, op: str) -> None:
    if not np.isfinite(value).all():
        raise NumericError(f"non-finite values produced by {op}")


class Tensor:
    """A node in the tape: a value plus the gradient slot filled by backward."""

    __slots__ = ("value", "tape", "requires_grad", "grad", "name", "col_blocks")

    def __init__(self, value, tape, requires_grad, name=None):
        self.value = value
        self.tape = tape
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self.col_blocks = None

    @property
    def shape(self):
        return self.value.shape

    def add_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g


class Tape:
    """Ordered record of ops; backward replays it in exact reverse."""

    def __init__(self):
        self.records: list[tuple[Tensor, Callable[[], None]]] = []
        self.parameters: dict[str, Tensor] = {}

    def leaf(self, name: str, value: np.ndarray) -> Tensor:
        """Register a trainable leaf. The array is referenced, not copied."""
        if name in self.parameters:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(value, self, requires_grad=True, name=name)
        self.parameters[name] = t
        return t

    def constant(self, value: np.ndarray) -> Tensor:
        return Tensor(np.asarray(value), self, requires_grad=False)

    def emit(self, value: np.ndarray, inputs: tuple, backward: Callable[[], None],
             op: str) -> Tensor:
        """Create an op output and record its backward closure."""
        _check_finite(value, op)
        requires = any(t.requires_grad for t in inputs)
        out = Tensor(value, self, requires_grad=requires)
        if requires:
            self.records.append((out, backward))
        return out

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Accumulate d(loss)/d(leaf) for every registered leaf."""
        if loss.tape is not self:
            raise ValueError("loss was recorded on a different tape")
        for out, _ in self.records:
            out.grad = None
        for p in self.parameters.values():
            p.grad = None
        loss.grad = np.ones_like(loss.value)
        for out, fn in reversed(self.records):
            if out.grad is not None:
                fn()
        grads = {}
        for name, p in self.parameters.items():
            grads[name] = p.grad if p.grad is not None else np.zeros_like(p.value)
        return grads


def _same_tape(*tensors: Tensor) -> Tape:
    tape = tensors[0].tape
    for t in tensors[1:]:
        if t.tape is not tape:
            raise ValueError("operands recorded on different tapes")
    return tape


def matmul(x: Tensor, w: Tensor) -> Tensor:
    tape = _same_tape(x, w)
    if x.value.shape[1] != w.value.shape[0]:
        raise ValueError(f"matmul shape mismatch: {x.value.shape} @ {w.value.shape}")
    value = x.value @ w.value

    def backward():
        g = out.grad
        if x.requires_grad:
            x.add_grad(g @ w.value.T)
        if w.requires_grad:
            w.add_grad(x.value.T @ g)

    out = tape.emit(value, (x, w), backward, "matmul")
    return out


def spmm(adj: SparseAdj, x: Tensor) -> Tensor:
    """Aggregate rows of x with the (constant) sparse adjacency."""
    value = _spmm_raw(adj, x.value)

    def backward():
        if x.requires_grad:
            x.add_grad(_spmm_raw(adj.transpose(), out.grad))

    out = x.tape.emit(value, (x,), backward, "spmm")
    return out


def hadamard(p: Tensor, q: Tensor) -> Tensor:
    tape = _same_tape(p, q)
    if p.value.shape != q.value.shape:
        raise ValueError(f"hadamard shape mismatch: {p.value.shape} vs {q.value.shape}")
    value = p.value * q.value

    def backward():
        g = out.grad
        if p.requires_grad:
            p.add_grad(g * q.value)
        if q.requires_grad:
            q.add_grad(g * p.value)

    out = tape.emit(value, (p, q), backward, "hadamard")
    return out


def add(p: Tensor, q: Tensor) -> Tensor:
    tape = _same_tape(p, q)
    if p.value.shape != q.value.shape:
        raise ValueError(f"add shape mismatch: {p.value.shape} vs {q.value.shape}")
    value = p.value + q.value

    def backward():
        g = out.grad
        if p.requires_grad:
            p.add_grad(g)
        if q.requires_grad:
            q.add_grad(g)

    out = tape.emit(value, (p, q), backward, "add")
    return out


def concat_cols(tensors: list[Tensor]) -> Tensor:
    """Append columns in list order; block offsets are kept on the output."""
    if not tensors:
        raise ValueError("concat_cols needs at least one input")
    tape = _same_tape(*tensors)
    rows = tensors[0].value.shape[0]
    for t in tensors:
        if t.value.shape[0] != rows:
            raise ValueError("concat_cols row mismatch")
    value = np.concatenate([t.value for t in tensors], axis=1) \
        if len(tensors) > 1 else tensors[0].value.copy()
    blocks = []
    start = 0
    for t in tensors:
        stop = start + t.value.shape[1]
        blocks.append((start, stop))
        start = stop

    def backward():
        g = out.grad
        for t, (lo, hi) in zip(tensors, blocks):
            if t.requires_grad:
                t.add_grad(g[:, lo:hi])

    out = tape.emit(value, tuple(tensors), backward, "concat_cols")
    out.col_blocks = blocks
    return out


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must be in (0, 1), got {slope}")
    mask = x.value >= 0
    value = np.where(mask, x.value, slope * x.value)

    def backward():
        if x.requires_grad:
            x.add_grad(np.where(mask, out.grad, slope * out.grad))

    out = x.tape.emit(value, (x,), backward, "leaky_relu")
    return out


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, scale survivors."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = rng.random(x.value.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    factor = keep.astype(x.value.dtype) * scale
    value = x.value * factor

    def backward():
        if x.requires_grad:
            x.add_grad(out.grad * factor)

    out = x.tape.emit(value, (x,), backward, "dropout")
    return out


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running: dict,
               training: bool, eps: float = 1e-5, momentum: float = 0.9) -> Tensor:
    """Per-column standardization over all rows of the (full-graph) batch.

    ``running`` holds "mean"/"var" arrays; in training mode they are updated
    in place with the given momentum (variance stored unbiased, normalization
    uses the biased estimate), in eval mode they replace the batch statistics.
    """
    tape = _same_tape(x, gamma, beta)
    cols = x.value.shape[1]
    if gamma.value.shape != (cols,) or beta.value.shape != (cols,):
        raise ValueError("batch_norm gamma/beta must match the column count")
    n = x.value.shape[0]
    if training:
        mean = x.value.mean(axis=0)
        var = x.value.var(axis=0)
        unbiased = var * n / (n - 1) if n > 1 else var
        running["mean"] *= momentum
        running["mean"] += (1.0 - momentum) * mean
        running["var"] *= momentum
        running["var"] += (1.0 - momentum) * unbiased
    else:
        mean = running["mean"].astype(x.value.dtype)
        var = running["var"].astype(x.value.dtype)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.value - mean) * inv_std
    value = gamma.value * x_hat + beta.value

    def backward():
        g = out.grad
        if beta.requires_grad:
            beta.add_grad(g.sum(axis=0))
        if gamma.requires_grad:
            gamma.add_grad((g * x_hat).sum(axis=0))
        if x.requires_grad:
            if training:
                # full backward through the batch mean and (biased) variance
                gxh = g * gamma.value
                dx = gxh - gxh.mean(axis=0) - x_hat * (gxh * x_hat).mean(axis=0)
                x.add_grad(dx * inv_std)
            else:
                x.add_grad(g * gamma.value * inv_std)

    out = tape.emit(value, (x, gamma, beta), backward, "batch_norm")
    return out


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray,
                          mask: np.ndarray) -> Tensor:
    """Mean negative log-likelihood over the masked rows.

    ``labels`` are class indices for all rows; ``mask`` is an index array (or
    boolean mask) selecting the rows that contribute. Stabilized by row-max
    subtraction.
    """
    idx = np.asarray(mask)
    if idx.dtype == bool:
        idx = np.flatnonzero(idx)
    if idx.size == 0:
        raise ValueError("empty mask: no rows to average the loss over")
    z = logits.value[idx]
    y = np.asarray(labels)[idx]
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    value = np.asarray((log_norm - z[np.arange(idx.size), y]).mean(),
                       dtype=logits.value.dtype)

    def backward():
        if logits.requires_grad:
            p = np.exp(z - log_norm[:, None])
            p[np.arange(idx.size), y] -= 1.0
            full = np.zeros_like(logits.value)
            full[idx] = p / idx.size
            logits.add_grad(full * out.grad)

    out = logits.tape.emit(value, (logits,), backward, "softmax_cross_entropy")
    return out


def finite_diff_check(loss_fn: Callable[[Tape], Tensor], params: dict,
                      wrt: str, h: float = 1e-5) -> float:
    """Max relative error between the tape gradient and central differences.

    ``loss_fn`` rebuilds the scalar loss on a fresh tape from the arrays in
    ``params`` (read by reference, so in-place perturbation is observed). It
    must be deterministic call to call; seed any rng inside it.
    """
    tape = Tape()
    loss = loss_fn(tape)
    if loss.value.size != 1:
        raise ValueError("finite_diff_check needs a scalar loss")
    analytic = tape.backward(loss)[wrt]

    def eval_loss() -> float:
        return loss_fn(Tape()).value.item()

    flat = params[wrt].reshape(-1)
    fd = np.empty(flat.shape[0], dtype=np.float64)
    for i in range(flat.shape[0]):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = eval_loss()
        flat[i] = orig - h
        f_minus = eval_loss()
        flat[i] = orig
        fd[i] = (f_plus - f_minus) / (2.0 * h)
    diff = np.abs(fd - analytic.reshape(-1))
    denom = np.maximum(np.maximum(np.abs(fd), np.abs(analytic.reshape(-1))), 1e-6)
    return float((diff / denom).max())
