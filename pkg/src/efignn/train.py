"""Full-batch training: Adam with classic L2-in-gradient, validation-based
model selection, and accuracy evaluation."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .model import Model


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    weight_decay: float = 0.0
    epochs: int = 200
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eval_every: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


@dataclass(frozen=True)
class SplitMasks:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def check(self, num_nodes: int) -> None:
        """Masks must be pairwise disjoint index sets within the graph."""
        sets = {}
        for part in ("train", "val", "test"):
            idx = getattr(self, part)
            if idx.size and (idx.min() < 0 or idx.max() >= num_nodes):
                raise ValueError(f"{part} mask indexes outside [0, {num_nodes})")
            if np.unique(idx).size != idx.size:
                raise ValueError(f"{part} mask contains duplicate indices")
            sets[part] = set(idx.tolist())
        for a, b in (("train", "val"), ("train", "test"), ("val", "test")):
            overlap = sets[a] & sets[b]
            if overlap:
                raise ValueError(f"{a}/{b} masks overlap on {sorted(overlap)[:5]}")


@dataclass
class TrainReport:
    losses: list = field(default_factory=list)  # per-epoch train loss
    evals: list = field(default_factory=list)   # (epoch, train, val, test) acc
    best_epoch: int = 0
    best_val_accuracy: float = 0.0
    best_test_accuracy: float = 0.0
    final_val_accuracy: float = 0.0
    final_test_accuracy: float = 0.0
    wall_time: float = 0.0


def adam_step(params: dict, grads: dict, state: dict, t: int,
              cfg: TrainConfig) -> dict:
    """One bias-corrected Adam update, in place.

    Weight decay enters the gradient (classic L2), and is not applied to
    batch-norm scale/shift parameters.
    """
    if t < 1:
        raise ValueError("Adam step index t starts at 1")
    m, v = state["m"], state["v"]
    for name, p in params.items():
        g = grads[name]
        if not np.isfinite(g).all():
            raise ad.NumericError(f"non-finite gradient for parameter {name!r}")
        if cfg.weight_decay != 0.0 and ".bn" not in name:
            g = g + cfg.weight_decay * p
        m[name] = cfg.beta1 * m[name] + (1.0 - cfg.beta1) * g
        v[name] = cfg.beta2 * v[name] + (1.0 - cfg.beta2) * g * g
        m_hat = m[name] / (1.0 - cfg.beta1 ** t)
        v_hat = v[name] / (1.0 - cfg.beta2 ** t)
        p -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return params


def init_adam_state(params: dict) -> dict:
    return {"m": {k: np.zeros_like(p) for k, p in params.items()},
            "v": {k: np.zeros_like(p) for k, p in params.items()}}


def evaluate_accuracy(logits: np.ndarray, labels: np.ndarray,
                      mask: np.ndarray) -> float:
    """Fraction of masked rows whose argmax (lowest index on ties) is right."""
    idx = np.asarray(mask)
    if idx.dtype == bool:
        idx = np.flatnonzero(idx)
    if idx.size == 0:
        raise ValueError("empty mask: nothing to evaluate")
    pred = np.argmax(logits[idx], axis=1)
    return float((pred == np.asarray(labels)[idx]).mean())


def _snapshot(params: dict, bn_state: dict | None):
    p = {k: v.copy() for k, v in params.items()}
    b = None
    if bn_state is not None:
        b = {k: {s: v.copy() for s, v in d.items()} for k, d in bn_state.items()}
    return p, b


def train(model: Model, adj, x_init: np.ndarray, labels: np.ndarray,
          masks: SplitMasks, cfg: TrainConfig):
    """Train full-batch; returns (best_params, best_bn_state, TrainReport).

    Every epoch runs one whole-graph forward/backward and one Adam step.
    Validation accuracy is measured in eval mode every ``eval_every`` epochs
    and the parameters are snapshotted whenever it improves.
    """
    masks.check(x_init.shape[0])
    started = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    params = model.init_params(rng)
    bn_state = model.init_bn_state() or None
    if x_init.dtype != np.float64:
        # parameters inherit the feature dtype so f32 runs stay f32 end to end
        params = {k: v.astype(x_init.dtype) for k, v in params.items()}
        if bn_state is not None:
            bn_state = {k: {s: v.astype(x_init.dtype) for s, v in d.items()}
                        for k, d in bn_state.items()}
    adam = init_adam_state(params)
    report = TrainReport()
    best = _snapshot(params, bn_state)

    def eval_all():
        out = model.forward(ad.Tape(), adj, x_init, params,
                            bn_state=bn_state, training=False)
        logits = out.logits.value
        return tuple(evaluate_accuracy(logits, labels, split)
                     for split in (masks.train, masks.val, masks.test))

    for epoch in range(1, cfg.epochs + 1):
        try:
            tape = ad.Tape()
            out = model.forward(tape, adj, x_init, params, bn_state=bn_state,
                                training=True, rng=rng)
            loss = ad.softmax_cross_entropy(out.logits, labels, masks.train)
            grads = tape.backward(loss)
            adam_step(params, grads, adam, epoch, cfg)
            report.losses.append(float(loss.value))
            if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
                train_acc, val_acc, test_acc = eval_all()
                report.evals.append((epoch, train_acc, val_acc, test_acc))
                if val_acc > report.best_val_accuracy:
                    report.best_epoch = epoch
                    report.best_val_accuracy = val_acc
                    report.best_test_accuracy = test_acc
                    best = _snapshot(params, bn_state)
        except ad.NumericError as exc:
            raise ad.NumericError(f"epoch {epoch}: {exc}") from exc

    report.final_val_accuracy = report.evals[-1][2]
    report.final_test_accuracy = report.evals[-1][3]
    report.wall_time = time.perf_counter() - started
    return best[0], best[1], report
