"""Self-contained verification suite: gradient checks, brute-force oracle
equivalences, invariants, and IO round-trips on synthetic fixtures.

Every check returns (name, passed, detail) so the CLI can print one line per
check and exit nonzero if any fail. All fixtures are tiny; the whole suite
runs in seconds.
"""
from __future__ import annotations

import itertools
import tempfile
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import data as dio
from . import interpret as ip
from . import model as md
from . import train as tr
from .graph import EdgeList, normalized_adjacency


def _toy_graph(n=4):
    return normalized_adjacency(EdgeList.from_pairs(
        [(i, (i + 1) % n) for i in range(n)], n))


def _edgeless(n):
    return normalized_adjacency(EdgeList.from_pairs([], n))


def check_op_gradients() -> tuple:
    """Finite differences across one graph touching every recorded op."""
    adj = _toy_graph(3)
    rng = np.random.default_rng(0)
    params = {
        "x": rng.uniform(-1, 1, (3, 4)),
        "w1": rng.uniform(-1, 1, (4, 5)),
        "gamma": rng.uniform(0.5, 1.5, 5),
        "beta": rng.uniform(-0.5, 0.5, 5),
        "w2": rng.uniform(-1, 1, (10, 3)),
    }
    labels = np.array([0, 1, 2])

    def loss_fn(tape):
        x = tape.leaf("x", params["x"])
        pre = ad.matmul(x, tape.leaf("w1", params["w1"]))
        act = ad.leaky_relu(pre)
        norm = ad.batch_norm(act, tape.leaf("gamma", params["gamma"]),
                             tape.leaf("beta", params["beta"]),
                             {"mean": np.zeros(5), "var": np.ones(5)},
                             training=True)
        drop = ad.dropout(norm, 0.3, True, np.random.default_rng(7))
        agg = ad.spmm(adj, drop)
        mixed = ad.add(ad.hadamard(agg, norm), norm)
        cat = ad.concat_cols([mixed, drop])
        logits = ad.matmul(cat, tape.leaf("w2", params["w2"]))
        return ad.softmax_cross_entropy(logits, labels, np.arange(3))

    worst = max(ad.finite_diff_check(loss_fn, params, name, h=1e-5)
                for name in params)
    return ("grad.ops", worst < 1e-4, f"max rel err {worst:.3e} (< 1e-4)")


def check_model_gradients() -> tuple:
    """Finite differences through full efignn / gcn / joint losses."""
    adj = _toy_graph(4)
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, (4, 3))
    labels = np.array([0, 1, 0, 1])
    worst = 0.0
    for kind in ("efignn", "gcn", "joint"):
        model = md.Model(
            kind, 3, 2,
            efi_cfg=md.EfiGnnConfig(num_layers=2, units=2)
            if kind != "gcn" else None,
            gcn_cfg=md.GcnConfig(num_layers=2, units=2)
            if kind != "efignn" else None)
        params = model.init_params(rng)

        def loss_fn(tape):
            out = model.forward(tape, adj, x, params)
            return ad.softmax_cross_entropy(out.logits, labels, np.arange(4))

        worst = max(worst, max(ad.finite_diff_check(loss_fn, params, name)
                               for name in params))
    return ("grad.models", worst < 1e-4, f"max rel err {worst:.3e} (< 1e-4)")


def _brute_crossing(adj_dense, x_prev, wl, x0):
    n, k = x_prev.shape
    out = np.zeros((n, k))
    for v in range(n):
        for u in range(n):
            if adj_dense[v, u] == 0.0:
                continue
            mixed = np.zeros(k)
            for j in range(k):
                for t in range(k):
                    mixed[t] += x_prev[u, j] * wl[j, t]
            out[v] += adj_dense[v, u] * mixed
    return out * x0


def check_brute_force_equivalence() -> tuple:
    """Matrix crossing layer vs term-by-term enumeration on small graphs."""
    rng = np.random.default_rng(2)
    worst = 0.0
    for n, m, k in [(1, 1, 1), (2, 2, 1), (3, 2, 2), (4, 4, 3)]:
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)
                 if rng.random() < 0.7]
        adj = normalized_adjacency(EdgeList.from_pairs(pairs, n))
        x0 = rng.uniform(-1, 1, (n, k))
        x_prev = rng.uniform(-1, 1, (n, k))
        wl = rng.uniform(-1, 1, (k, k))
        tape = ad.Tape()
        got = md.efignn_layer(adj, tape.constant(x_prev), tape.constant(wl),
                              tape.constant(x0)).value
        want = _brute_crossing(adj.to_dense(), x_prev, wl, x0)
        worst = max(worst, float(np.abs(got - want).max()))
    return ("oracle.brute_force", worst < 1e-10, f"max |diff| {worst:.3e} (< 1e-10)")


def check_homogeneity() -> tuple:
    """Scaling features by alpha scales block l by alpha^(l+1)."""
    rng = np.random.default_rng(3)
    adj = _toy_graph(4)
    cfg = md.EfiGnnConfig(num_layers=4, units=2)
    model = md.Model("efignn", 3, 2, efi_cfg=cfg)
    params = model.init_params(rng)
    x = rng.uniform(-1, 1, (4, 3))
    base = model.forward(ad.Tape(), adj, x, params).blocks
    worst = 0.0
    for alpha in (0.5, 2.0, 3.0):
        scaled = model.forward(ad.Tape(), adj, alpha * x, params).blocks
        for (name, t0), (_, t1) in zip(base, scaled):
            order = int(name.removeprefix("efi")) + 1
            want = alpha ** order * t0.value
            rel = np.abs(t1.value - want) / np.maximum(np.abs(want), 1e-300)
            worst = max(worst, float(rel.max()))
    return ("invariant.homogeneity", worst < 1e-10,
            f"max rel err {worst:.3e} (< 1e-10)")


def check_locality() -> tuple:
    """Edgeless graphs keep every node's logits independent of the others."""
    rng = np.random.default_rng(4)
    model = md.Model("efignn", 3, 2,
                     efi_cfg=md.EfiGnnConfig(num_layers=2, units=2))
    params = model.init_params(rng)
    x = rng.uniform(-1, 1, (4, 3))
    adj = _edgeless(4)
    before = model.forward(ad.Tape(), adj, x, params).logits.value
    perturbed = x.copy()
    perturbed[2] += 1.0
    after = model.forward(ad.Tape(), adj, perturbed, params).logits.value
    untouched = [v for v in range(4) if v != 2]
    ok = (np.array_equal(before[untouched], after[untouched])
          and not np.array_equal(before[2], after[2]))
    return ("invariant.locality", ok, "off-node logits bitwise unchanged")


def check_interpret_completeness() -> tuple:
    """Effect sums against forward-pass block contributions."""
    rng = np.random.default_rng(5)
    model = md.Model("efignn", 5, 3,
                     efi_cfg=md.EfiGnnConfig(num_layers=2, units=1))
    params = model.init_params(rng)
    x = (rng.random((4, 5)) < 0.7) * rng.uniform(0.5, 1.5, (4, 5))
    adj = _edgeless(4)
    out = model.forward(ad.Tape(), adj, x, params)
    values = {name: t.value for name, t in out.blocks}
    slices = {name: (lo, hi) for name, lo, hi in out.block_slices}
    worst = 0.0
    for node, (order, block) in itertools.product(
            range(4), [(1, "efi0"), (2, "efi1"), (3, "efi2")]):
        table = ip.effects(model, params, x, ip.EffectQuery(node, 1, order))
        lo, hi = slices[block]
        want = float(values[block][node] @ params["out.w"][lo:hi, 1])
        worst = max(worst, abs(table.total() - want))
    return ("interpret.completeness", worst < 1e-8,
            f"max |sum - block| {worst:.3e} (< 1e-8)")


def check_interpret_annihilation() -> tuple:
    """Tuples containing an inactive feature contribute exactly zero."""
    rng = np.random.default_rng(6)
    model = md.Model("efignn", 4, 2,
                     efi_cfg=md.EfiGnnConfig(num_layers=2, units=3))
    params = model.init_params(rng)
    x = np.array([[1.0, 0.0, 2.0, 0.0]])
    ok = True
    for order, features in [(1, (0, 1, 2, 3)), (2, (0, 1)), (3, (0, 1, 2))]:
        query = ip.EffectQuery(0, 0, order, features=features)
        table = ip.effects(model, params, x, query)
        for tup, effect in table.entries:
            if (1 in tup or 3 in tup) and effect != 0.0:
                ok = False
    return ("interpret.annihilation", ok, "inactive features contribute 0.0")


def check_model_roundtrip() -> tuple:
    """Serialized models reload bitwise and reproduce logits."""
    rng = np.random.default_rng(7)
    model = md.Model("joint", 3, 2,
                     efi_cfg=md.EfiGnnConfig(num_layers=1, units=2),
                     gcn_cfg=md.GcnConfig(num_layers=1, units=2,
                                          batch_norm=True))
    params = model.init_params(rng)
    bn_state = model.init_bn_state()
    adj = _toy_graph(3)
    x = rng.uniform(-1, 1, (3, 3))
    before = model.forward(ad.Tape(), adj, x, params,
                           bn_state=bn_state).logits.value
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "model.efig"
        dio.save_model(path, model, params, bn_state)
        lm, lp, lbn = dio.load_model(path)
        after = lm.forward(ad.Tape(), adj, x, lp, bn_state=lbn).logits.value
        ok = (np.array_equal(before, after)
              and all(np.array_equal(params[k], lp[k]) for k in params))
    return ("io.model_roundtrip", ok, "weights and logits bitwise identical")


def check_train_determinism() -> tuple:
    """Two identically seeded runs agree bitwise on losses and weights."""
    adj = _toy_graph(4)
    x = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    labels = np.array([0, 0, 1, 1])
    masks = tr.SplitMasks(np.array([0, 2]), np.array([1]), np.array([3]))
    model = md.Model("efignn", 2, 2,
                     efi_cfg=md.EfiGnnConfig(num_layers=1, units=3,
                                             dropout=0.2))
    cfg = tr.TrainConfig(learning_rate=0.05, epochs=10, seed=0)
    p1, _, r1 = tr.train(model, adj, x, labels, masks, cfg)
    p2, _, r2 = tr.train(model, adj, x, labels, masks, cfg)
    ok = (r1.losses == r2.losses and r1.evals == r2.evals
          and all(np.array_equal(p1[k], p2[k]) for k in p1))
    return ("determinism.train", ok, "seeded runs bitwise identical")


CHECKS = (
    check_op_gradients,
    check_model_gradients,
    check_brute_force_equivalence,
    check_homogeneity,
    check_locality,
    check_interpret_completeness,
    check_interpret_annihilation,
    check_model_roundtrip,
    check_train_determinism,
)


def run_all(emit=print) -> bool:
    """Run every check; emit one line per check; True if all passed."""
    all_ok = True
    for check in CHECKS:
        try:
            name, ok, detail = check()
        except Exception as exc:  # a crash is a failure, not an abort
            name, ok, detail = check.__name__, False, f"raised {exc!r}"
        emit(f"{'ok  ' if ok else 'FAIL'} {name}: {detail}")
        all_ok &= ok
    return all_ok
