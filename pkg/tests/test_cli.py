import json

import pytest

from asmatch.checks import fixture_path
from asmatch.cli import main
from asmatch.datagen import DatasetConfig, generate_dataset, load_dataset, save_dataset
from asmatch.encodings import EncodingConfig
from asmatch.policy_net import EncoderConfig, PolicyNet

Q, T = str(fixture_path("q3")), str(fixture_path("t4"))


def test_search_on_fixture(tmp_path, capsys):
    out = tmp_path / "res.json"
    assert main(["search", "--query", Q, "--target", T, "--policy", "greedy", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert text.startswith("cost 0 ")
    assert "exhausted" in text
    doc = json.loads(out.read_text())
    assert doc["best_cost"]["total"] == 0
    assert doc["mapping"][0] == [0, 0]


def test_search_neural_with_checkpoint(tmp_path, capsys):
    ckpt = tmp_path / "net.ckpt"
    PolicyNet(EncoderConfig(num_labels=3, hidden_dim=16, layers=1, interaction_dim=8,
                            encoding=EncodingConfig(rwse_m=4)), 0).save(ckpt)
    assert main(["search", "--query", Q, "--target", T, "--policy", "neural", "--checkpoint", str(ckpt)]) == 0
    assert capsys.readouterr().out.startswith("cost 0 ")


def test_oracle_on_fixture(capsys):
    assert main(["oracle", "--query", Q, "--target", T]) == 0
    assert capsys.readouterr().out.startswith("optimum 0 over 24 mappings")


def test_missing_file_is_an_error(tmp_path, capsys):
    code = main(["search", "--query", str(tmp_path / "nope.json"), "--target", T])
    assert code != 0
    assert "error" in capsys.readouterr().err


def test_gen_writes_dataset(tmp_path, capsys):
    out = tmp_path / "ds"
    args = ["gen", "--out", str(out), "--n-pairs", "10", "--query-size", "3,5", "--target-nodes", "12",
            "--target-edges", "18", "--labels", "3", "--n-targets", "2", "--seed", "4"]
    assert main(args) == 0
    assert "wrote 10 pairs" in capsys.readouterr().out
    ds = load_dataset(out)
    assert len(ds.pairs) == 10
    assert sum(len(ds.split(s)) for s in ("train", "val", "test")) == 10


def test_grad_check_passes(capsys):
    assert main(["grad-check"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[-1].startswith("max relative error")
    assert any(ln.startswith("policy_forward") for ln in lines)


def _small_dataset(root, **kw):
    cfg = dict(n_pairs=10, query_size=(3, 5), target_nodes=12, target_edges=18, num_labels=3, n_targets=2, seed=2)
    cfg.update(kw)
    save_dataset(generate_dataset(DatasetConfig(**cfg)), root)
    return root


def test_bench_on_empty_split_is_usage_error(tmp_path, capsys):
    root = _small_dataset(tmp_path / "ds", split_ratio=(1, 0, 0))
    code = main(["bench", "--dataset", str(root), "--out", str(tmp_path / "out")])
    assert code == 2
    err = capsys.readouterr().err
    assert "usage:" in err and "no instances" in err


def test_bench_without_dataset_is_usage_error(tmp_path, capsys):
    assert main(["bench", "--out", str(tmp_path / "out")]) == 2


def test_bench_then_replay(tmp_path, capsys):
    root = _small_dataset(tmp_path / "ds")
    a, b = tmp_path / "a", tmp_path / "b"
    base = ["--budget-seconds", "0.05", "--policies", "greedy,random", "--split", "all"]
    assert main(["bench", "--dataset", str(root), "--out", str(a)] + base) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].split()[0] == "Method"
    assert main(["bench", "--replay", str(a / "manifest.json"), "--out", str(b)]) == 0
    for name in ("report.json", "report.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_train_cli_runs(tmp_path, capsys):
    root = _small_dataset(tmp_path / "ds", n_pairs=6, split_ratio=(2, 1, 0))
    out = tmp_path / "run"
    args = ["train", "--dataset", str(root), "--out", str(out), "--il-epochs", "1", "--il-batch-size", "16",
            "--ppo-epochs", "0", "--val-pairs", "2"]
    assert main(args) == 0
    assert "best validation mean GED" in capsys.readouterr().out
    assert any(out.iterdir())


def test_unknown_subcommand_exits():
    with pytest.raises(SystemExit):
        main(["frobnicate"])
