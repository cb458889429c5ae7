"""End-to-end CLI tests: flag handling, exit codes, JSON summaries, exports."""
import json

import numpy as np
import pytest

import efignn.autodiff as ad_module
from efignn import cli
from efignn.data import DatasetBundle, save_bundle
from efignn.graph import EdgeList
from efignn.train import SplitMasks


def two_clique_bundle(name):
    """Two labeled 2-cliques plus an isolated node with no active features."""
    x = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0],
                  [0.0, 0.0]], dtype=np.float32)
    edges = EdgeList.from_pairs([(0, 1), (2, 3)], 5)
    labels = np.array([0, 0, 1, 1, 0])
    masks = SplitMasks(train=np.array([0, 2]), val=np.array([1]),
                       test=np.array([3, 4]))
    return DatasetBundle(name, x, edges, labels, masks, num_classes=2)


@pytest.fixture(scope="module")
def bundle_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("bundle") / "toy"
    save_bundle(path, two_clique_bundle("toy"))
    return str(path)


@pytest.fixture(scope="module")
def cora_named_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("bundle") / "cora"
    save_bundle(path, two_clique_bundle("cora"))
    return str(path)


@pytest.fixture(scope="module")
def wide_bundle_dir(tmp_path_factory):
    base = two_clique_bundle("wide")
    x = np.hstack([base.x_init, np.ones((5, 1), dtype=np.float32)])
    wide = DatasetBundle("wide", x, base.edges, base.labels, base.masks, 2)
    path = tmp_path_factory.mktemp("bundle") / "wide"
    save_bundle(path, wide)
    return str(path)


TRAIN_FLAGS = ["--efi-layers", "2", "--units", "4", "--lr", "0.05",
               "--weight-decay", "0", "--dropout", "0", "--epochs", "20"]


@pytest.fixture(scope="module")
def efi_model(tmp_path_factory, bundle_dir):
    out = tmp_path_factory.mktemp("model") / "efi.efig"
    code = cli.main(["train", "--dataset", bundle_dir, "--model", "efignn",
                     *TRAIN_FLAGS, "--out", str(out)])
    assert code == 0
    return str(out)


@pytest.fixture(scope="module")
def gcn_model(tmp_path_factory, bundle_dir):
    out = tmp_path_factory.mktemp("model") / "gcn.efig"
    code = cli.main(["train", "--dataset", bundle_dir, "--model", "gcn",
                     "--gnn-layers", "2", "--units", "4", "--lr", "0.05",
                     "--weight-decay", "0", "--dropout", "0", "--epochs",
                     "20", "--out", str(out)])
    assert code == 0
    return str(out)


def last_json_line(capsys):
    out = capsys.readouterr().out
    return json.loads(out.strip().splitlines()[-1]), out


class TestTrainCommand:
    def test_trains_and_writes_summary(self, bundle_dir, tmp_path, capsys):
        out = tmp_path / "m.efig"
        code = cli.main(["train", "--dataset", bundle_dir, "--model",
                         "efignn", *TRAIN_FLAGS, "--seeds", "0,1",
                         "--out", str(out)])
        summary, text = last_json_line(capsys)
        assert code == 0
        assert out.exists()
        assert "seed 0:" in text and "seed 1:" in text
        assert "best-val test accuracy" in text
        assert summary["schema_version"] == 1
        assert summary["command"] == "train"
        assert summary["dataset"] == "toy"
        assert summary["seeds"] == [0, 1]
        assert [r["seed"] for r in summary["per_seed"]] == [0, 1]
        assert set(summary["per_seed"][0]) == {"seed", "best_epoch",
                                               "best_val", "best_test",
                                               "final_val", "final_test"}
        # converged on the separable toy; best-val can snapshot earlier
        assert summary["final_test_mean"] == 1.0
        assert 0.0 <= summary["best_test_mean"] <= 1.0

    def test_model_file_is_first_seed_best(self, bundle_dir, tmp_path,
                                           capsys):
        multi, single = tmp_path / "multi.efig", tmp_path / "single.efig"
        cli.main(["train", "--dataset", bundle_dir, "--model", "efignn",
                  *TRAIN_FLAGS, "--seeds", "5,6", "--out", str(multi)])
        cli.main(["train", "--dataset", bundle_dir, "--model", "efignn",
                  *TRAIN_FLAGS, "--seeds", "5", "--out", str(single)])
        capsys.readouterr()
        assert multi.read_bytes() == single.read_bytes()

    def test_seeded_runs_identical_minus_wall_time(self, bundle_dir,
                                                   tmp_path, capsys):
        summaries = []
        for run in range(2):
            cli.main(["train", "--dataset", bundle_dir, "--model", "joint",
                      "--efi-layers", "1", "--gnn-layers", "1", "--units",
                      "4", "--lr", "0.05", "--weight-decay", "0.001",
                      "--dropout", "0.5", "--epochs", "15", "--seeds", "3",
                      "--out", str(tmp_path / f"r{run}.efig")])
            summary, _ = last_json_line(capsys)
            del summary["wall_time"]
            del summary["model_path"]
            summaries.append(json.dumps(summary, sort_keys=True))
        assert summaries[0] == summaries[1]
        assert (tmp_path / "r0.efig").read_bytes() == \
               (tmp_path / "r1.efig").read_bytes()

    def test_named_dataset_profile_fills_defaults(self, cora_named_dir,
                                                  tmp_path, capsys):
        code = cli.main(["train", "--dataset", cora_named_dir, "--model",
                         "joint", "--epochs", "2", "--dropout", "0",
                         "--out", str(tmp_path / "m.efig")])
        summary, _ = last_json_line(capsys)
        assert code == 0
        cfg = summary["config"]
        assert cfg["efi_layers"] == 2
        assert cfg["gnn_layers"] == 3
        assert cfg["units"] == 128
        assert cfg["lr"] == 0.001
        assert cfg["weight_decay"] == 0.01
        assert cfg["batch_norm"] is False
        assert cfg["skip"] == "none"
        assert cfg["epochs"] == 2  # explicit flag wins over the profile

    def test_unknown_dataset_uses_large_graph_profile(self, bundle_dir,
                                                      tmp_path, capsys):
        code = cli.main(["train", "--dataset", bundle_dir, "--model", "gcn",
                         "--epochs", "2", "--dropout", "0",
                         "--out", str(tmp_path / "m.efig")])
        summary, _ = last_json_line(capsys)
        assert code == 0
        cfg = summary["config"]
        assert cfg["gnn_layers"] == 1
        assert cfg["lr"] == 0.01
        assert cfg["weight_decay"] == 0.0
        assert cfg["batch_norm"] is True
        assert cfg["efi_layers"] is None  # not part of a gcn run

    @pytest.mark.parametrize("model,flag,value", [
        ("gcn", "--efi-layers", "2"),
        ("gcn", "--include-block0", "off"),
        ("efignn", "--gnn-layers", "2"),
        ("efignn", "--batch-norm", "on"),
        ("efignn", "--skip", "dense"),
    ])
    def test_foreign_flags_rejected(self, bundle_dir, tmp_path, capsys,
                                    model, flag, value):
        out = tmp_path / "never.efig"
        code = cli.main(["train", "--dataset", bundle_dir, "--model", model,
                         flag, value, "--out", str(out)])
        assert code == 1
        assert not out.exists()
        assert "does not apply" in capsys.readouterr().err

    def test_bad_seeds_rejected(self, bundle_dir, capsys):
        code = cli.main(["train", "--dataset", bundle_dir, "--model",
                         "efignn", "--seeds", "1,two"])
        assert code == 1
        assert "comma-separated integers" in capsys.readouterr().err

    def test_bad_hyperparameter_rejected(self, bundle_dir, capsys):
        code = cli.main(["train", "--dataset", bundle_dir, "--model",
                         "efignn", "--units", "0"])
        assert code == 1

    def test_missing_dataset_dir(self, tmp_path, capsys):
        code = cli.main(["train", "--dataset", str(tmp_path / "nope"),
                         "--model", "efignn"])
        assert code == 1
        assert "bundle directory not found" in capsys.readouterr().err

    def test_f32_precision_runs(self, bundle_dir, tmp_path, capsys):
        code = cli.main(["train", "--dataset", bundle_dir, "--model",
                         "efignn", *TRAIN_FLAGS, "--precision", "f32",
                         "--out", str(tmp_path / "m32.efig")])
        summary, _ = last_json_line(capsys)
        assert code == 0
        assert summary["config"]["precision"] == "f32"
        assert summary["final_test_mean"] == 1.0


class TestExplainCommand:
    def test_exports_to_cwd(self, efi_model, bundle_dir, tmp_path,
                            monkeypatch, capsys):
        monkeypatch.chdir(tmp_path)
        code = cli.main(["explain", "--model", efi_model, "--dataset",
                         bundle_dir, "--node", "0", "--class", "1",
                         "--order", "2"])
        text = capsys.readouterr().out
        assert code == 0
        assert (tmp_path / "effects_node0_class1_order2.csv").exists()
        assert (tmp_path / "effects_node0_class1_order2.svg").exists()
        assert "node 0 class 1 order 2" in text

    def test_top_k_limits_rows(self, efi_model, bundle_dir, tmp_path,
                               monkeypatch, capsys):
        monkeypatch.chdir(tmp_path)
        code = cli.main(["explain", "--model", efi_model, "--dataset",
                         bundle_dir, "--node", "0", "--class", "0",
                         "--order", "1", "--top-k", "1", "--format", "csv"])
        text = capsys.readouterr().out
        assert code == 0
        effect_lines = [l for l in text.splitlines() if l.startswith("  ")]
        assert len(effect_lines) == 1
        assert not (tmp_path / "effects_node0_class0_order1.svg").exists()

    def test_inactive_node_warns_and_exports_nothing(self, efi_model,
                                                     bundle_dir, tmp_path,
                                                     monkeypatch, capsys):
        monkeypatch.chdir(tmp_path)
        code = cli.main(["explain", "--model", efi_model, "--dataset",
                         bundle_dir, "--node", "4", "--class", "0",
                         "--order", "1"])
        captured = capsys.readouterr()
        assert code == 0
        assert "no active features" in captured.err
        assert list(tmp_path.iterdir()) == []

    def test_order_beyond_depth_rejected(self, efi_model, bundle_dir,
                                         capsys):
        code = cli.main(["explain", "--model", efi_model, "--dataset",
                         bundle_dir, "--node", "0", "--class", "0",
                         "--order", "9"])
        assert code == 1
        assert "exceeds model depth" in capsys.readouterr().err

    def test_node_out_of_range_rejected(self, efi_model, bundle_dir, capsys):
        code = cli.main(["explain", "--model", efi_model, "--dataset",
                         bundle_dir, "--node", "99", "--class", "0",
                         "--order", "1"])
        assert code == 1
        assert "outside" in capsys.readouterr().err

    def test_gcn_model_rejected(self, gcn_model, bundle_dir, capsys):
        code = cli.main(["explain", "--model", gcn_model, "--dataset",
                         bundle_dir, "--node", "0", "--class", "0",
                         "--order", "1"])
        assert code == 1
        assert "EFI branch" in capsys.readouterr().err

    def test_feature_mismatch_rejected(self, efi_model, wide_bundle_dir,
                                       capsys):
        code = cli.main(["explain", "--model", efi_model, "--dataset",
                         wide_bundle_dir, "--node", "0", "--class", "0",
                         "--order", "1"])
        assert code == 1
        assert "features" in capsys.readouterr().err

    def test_svg_unavailable_above_order_two(self, efi_model, bundle_dir,
                                             tmp_path, monkeypatch, capsys):
        monkeypatch.chdir(tmp_path)
        code = cli.main(["explain", "--model", efi_model, "--dataset",
                         bundle_dir, "--node", "0", "--class", "0",
                         "--order", "3", "--format", "svg"])
        captured = capsys.readouterr()
        assert code == 0
        assert "no files written" in captured.err
        assert list(tmp_path.iterdir()) == []


class TestVerifyCommand:
    def test_clean_build_passes(self, capsys):
        code = cli.main(["verify"])
        out = capsys.readouterr().out
        assert code == 0
        assert "FAIL" not in out
        assert out.count("ok  ") >= 8

    def test_injected_gradient_bug_fails(self, monkeypatch, capsys):
        real_matmul = ad_module.matmul

        def buggy_matmul(x, w):
            out = real_matmul(x, w)
            tape = out.tape
            if tape is not None and tape.records and \
                    tape.records[-1][0] is out:
                def bad_backward():
                    g = out.grad
                    if x.requires_grad:
                        x.add_grad(1.02 * (g @ w.value.T))
                    if w.requires_grad:
                        w.add_grad(x.value.T @ g)
                tape.records[-1] = (out, bad_backward)
            return out

        monkeypatch.setattr(ad_module, "matmul", buggy_matmul)
        code = cli.main(["verify"])
        out = capsys.readouterr().out
        assert code == 2
        assert "FAIL grad.ops" in out
        assert "FAIL grad.models" in out


class TestParsing:
    def test_unknown_subcommand(self, capsys):
        assert cli.main(["bogus"]) == 1

    def test_missing_required_flag(self, capsys):
        assert cli.main(["train", "--model", "efignn"]) == 1

    def test_bad_thread_env(self, bundle_dir, monkeypatch, capsys):
        monkeypatch.setenv(cli.THREADS_ENV, "many")
        assert cli.main(["verify"]) == 1
        assert "must be an integer" in capsys.readouterr().err

    def test_thread_env_accepts_integer(self, monkeypatch, capsys):
        monkeypatch.setenv(cli.THREADS_ENV, "2")
        assert cli.main(["verify"]) == 0
