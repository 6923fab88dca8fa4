import json

import pytest

from upliftlab.cli import build_parser, main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    rc = main(["gen", "--n-users", "80", "--pool-multiplier", "3", "--seed", "1", "--out", str(root / "data")])
    assert rc == 0
    rc = main(["group", "--data", str(root / "data"), "--k", "3", "--epochs", "2", "--sweep", "3", "4",
               "--out", str(root / "grouped")])
    assert rc == 0
    return root


def test_gen_writes_splits(workspace):
    names = sorted(p.name for p in (workspace / "data").iterdir())
    assert names == ["schema.json", "test.csv", "train.csv", "val.csv"]


def test_group_outputs(workspace):
    g = workspace / "grouped"
    assert {"grouping.json", "grouped.csv", "grouped.json", "group_stats.json"} <= {p.name for p in g.iterdir()}
    stats = json.loads((g / "group_stats.json").read_text())["stats"]
    assert stats["k"] == 3 and "alignment_k4" in stats


def test_group_sweep(workspace, tmp_path):
    out = tmp_path / "sweep.csv"
    assert main(["group-sweep", "--data", str(workspace / "data"), "--ks", "2", "3", "--epochs", "1",
                 "--out", str(out)]) == 0
    lines = out.read_text().strip().split("\n")
    assert lines[0] == "k,alignment,purity" and len(lines) == 3


@pytest.mark.parametrize("extra", [[], ["--model", "t_learner"], ["--no-tfi", "--no-uci", "--base", "mlp"]])
def test_train_and_eval(workspace, tmp_path, extra):
    ckpt = tmp_path / "m.json"
    assert main(["train", "--data", str(workspace / "grouped"), "--epochs", "2", "--out", str(ckpt), *extra]) == 0
    assert main(["eval", "--checkpoint", str(ckpt), "--data", str(workspace / "grouped"),
                 "--out", str(tmp_path / "ev")]) == 0
    ev = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    assert {"auuc", "qini", "kendall"} <= set(ev)
    assert (tmp_path / "ev" / "gain_curve.csv").exists()


def test_train_raw(workspace, tmp_path):
    ckpt = tmp_path / "raw.json"
    assert main(["train", "--data", str(workspace / "data"), "--no-rcg", "--max-steps", "3",
                 "--out", str(ckpt)]) == 0
    assert main(["eval", "--checkpoint", str(ckpt), "--data", str(workspace / "data"),
                 "--out", str(tmp_path / "ev")]) == 0
    header = (tmp_path / "ev" / "preds.csv").read_text().split("\n")[0]
    assert header.startswith("user_id,ctx_row,")


def test_pipeline_search_report(tmp_path, capsys):
    cfg = {"data": {"n_users": 60, "pool_multiplier": 2, "contexts_per_user_min": 4, "contexts_per_user_max": 6},
           "grouping": {"k": 2, "hidden": [4], "max_epochs": 1},
           "training": {"max_epochs": 1},
           "models": [{"name": "u", "kind": "umlc", "hidden": [4], "d": 2}],
           "search": {"n_trials": 2, "ranges": {"lr": {"low": 0.001, "high": 0.01}}},
           "seeds": [0]}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    assert main(["pipeline", "--config", str(path), "--out", str(tmp_path / "run")]) == 0
    assert main(["search", "--config", str(path), "--out", str(tmp_path / "search")]) == 0
    trials = json.loads((tmp_path / "search" / "search.json").read_text())["seeds"]["0"]["u"]["trials"]
    assert len(trials) == 2
    capsys.readouterr()
    assert main(["report", str(tmp_path / "run"), "--markdown", str(tmp_path / "r.md")]) == 0
    assert "| u |" in capsys.readouterr().out


def test_exit_codes(tmp_path, workspace, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("seeds: []\n")
    assert main(["pipeline", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "ConfigError" in capsys.readouterr().err
    # grouped data without the --no-rcg flag mismatch is a config error too
    assert main(["train", "--data", str(workspace / "data"), "--out", str(tmp_path / "x.json")]) == 2
    # a split with no control records cannot be trained
    single = tmp_path / "single"
    single.mkdir()
    text = (workspace / "grouped" / "grouped.csv").read_text().split("\n")
    cols = text[0].split(",")
    t_col = cols.index("t")
    rows = [r for r in text[1:] if r and r.split(",")[t_col] == "1"]
    (single / "grouped.csv").write_text("\n".join([text[0], *rows]) + "\n")
    (single / "grouped.json").write_text((workspace / "grouped" / "grouped.json").read_text())
    assert main(["train", "--data", str(single), "--epochs", "1", "--out", str(tmp_path / "y.json")]) == 3


def test_eval_failure_exit_code(workspace, tmp_path):
    ckpt = tmp_path / "m.json"
    assert main(["train", "--data", str(workspace / "grouped"), "--epochs", "1", "--out", str(ckpt)]) == 0
    no_test = tmp_path / "no_test"
    no_test.mkdir()
    text = (workspace / "grouped" / "grouped.csv").read_text().split("\n")
    s_col = text[0].split(",").index("split")
    rows = [r for r in text[1:] if r and r.split(",")[s_col] != "test"]
    (no_test / "grouped.csv").write_text("\n".join([text[0], *rows]) + "\n")
    (no_test / "grouped.json").write_text((workspace / "grouped" / "grouped.json").read_text())
    assert main(["eval", "--checkpoint", str(ckpt), "--data", str(no_test), "--out", str(tmp_path / "e")]) == 4


def test_parser_has_every_command():
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    assert set(sub.choices) == {"gen", "group", "group-sweep", "train", "eval", "pipeline", "search", "report"}
    with pytest.raises(SystemExit) as exc:
        parser.parse_args(["train"])
    assert exc.value.code == 2
