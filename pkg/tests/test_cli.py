import json

import pytest

from predpo.cli import main
from predpo.model import load_snapshot

TINY = {"arch": {"vocab_size": 12, "context": 3, "embed_dim": 4, "hidden_dim": 8}}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    assert main(["sft", "--config", str(cfg), "--n-prompts", "40", "--epochs", "4",
                 "--out", str(root / "sft")]) == 0
    assert main(["gen-data", "--model", str(root / "sft/snapshots/sft.snap"),
                 "--prompts", str(root / "sft/prompts.json"), "--seed", "1",
                 "--out", str(root / "data")]) == 0
    return root


def test_sft_outputs(workspace):
    out = workspace / "sft"
    for name in ("config.json", "manifest.json", "snapshots/sft.snap", "csv/loss_curve.csv"):
        assert (out / name).exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert load_snapshot(out / "snapshots/sft.snap").content_hash == manifest["sft_hash"]
    assert json.loads((out / "config.json").read_text())["sft"]["epochs"] == 4


def test_gen_data_outputs(workspace):
    manifest = json.loads((workspace / "data/manifest.json").read_text())
    assert manifest["n_triples"] > 0
    assert manifest["n_triples"] + manifest["n_dropped"] == 40


@pytest.mark.parametrize("method,extra", [("dpo", []), ("trdpo", ["--tr-every", "2"]),
                                          ("sdpo", []), ("simpo", None)])
def test_train_methods(workspace, tmp_path, method, extra):
    sft = str(workspace / "sft/snapshots/sft.snap")
    args = ["train", "--method", method, "--policy", sft, "--data",
            str(workspace / "data/dataset.jsonl"), "--out", str(tmp_path)]
    args += ["--beta", "2.0", "--gamma", "0.5"] if extra is None else ["--ref", sft] + extra
    assert main(args) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["initial_hash"] == load_snapshot(sft).content_hash
    assert (tmp_path / "csv/lambdas.csv").exists()


def test_simpo_with_reference_is_a_config_error(workspace, tmp_path, capsys):
    code = main(["train", "--method", "simpo", "--policy", "x.snap", "--ref", "x.snap",
                 "--data", "d.jsonl", "--out", str(tmp_path)])
    assert code == 1
    err = capsys.readouterr().err.strip()
    assert "config error" in err and "train.ref" in err
    assert len(err.splitlines()) == 1


def test_unknown_flag_exits_two(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--no-such-flag"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2


def test_unknown_config_key_names_field(workspace, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"beta": 0.1, "lerning_rate": 1.0}}))
    code = main(["train", "--method", "dpo", "--config", str(bad), "--policy", "p",
                 "--ref", "r", "--data", "d", "--out", str(tmp_path / "o")])
    assert code == 1
    assert "train.lerning_rate" in capsys.readouterr().err


def test_missing_input_file_is_one_line_error(tmp_path, capsys):
    code = main(["eval", "--a", str(tmp_path / "none.snap"), "--b", "x", "--out", str(tmp_path)])
    assert code == 1
    assert len(capsys.readouterr().err.strip().splitlines()) == 1


def test_pre_dpo_simpo_manifest_has_no_first_reference(workspace, tmp_path):
    out = tmp_path / "pre"
    assert main(["pre-dpo", "--first", "simpo", "--beta", "2.0", "--gamma", "0.5",
                 "--sft", str(workspace / "sft/snapshots/sft.snap"),
                 "--data", str(workspace / "data/dataset.jsonl"), "--out", str(out)]) == 0
    m = json.loads((out / "manifest.json").read_text())
    assert m["first_method"] == "simpo"
    assert m["first_ref_hash"] is None
    assert m["second_initial_hash"] == m["sft_hash"]
    assert m["second_ref_hash"] == m["guide_hash"]
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["second"]["method"] == "dpo" and cfg["second"]["beta"] == 0.1


def test_pre_dpo_eval_and_lambda_report(workspace, tmp_path, capsys):
    out = tmp_path / "pre"
    sft = str(workspace / "sft/snapshots/sft.snap")
    assert main(["pre-dpo", "--first", "dpo", "--sft", sft, "--data",
                 str(workspace / "data/dataset.jsonl"), "--out", str(out)]) == 0
    m = json.loads((out / "manifest.json").read_text())
    assert m["first_ref_hash"] == m["sft_hash"]

    assert main(["eval", "--a", str(out / "snapshots/final.snap"), "--b", sft,
                 "--n-prompts", "30", "--out", str(tmp_path / "eval")]) == 0
    report = json.loads((tmp_path / "eval/eval.json").read_text())
    assert report["n_prompts"] == 30
    assert report["win_rate"] + report["loss_rate"] == pytest.approx(1.0)

    capsys.readouterr()
    assert main(["lambda-report", str(out)]) == 0
    text = capsys.readouterr().out
    rows = [line for line in text.splitlines() if line.startswith(("early", "late"))]
    assert len(rows) == 4  # two phases for each of the two rounds
    for row in rows:
        cells = [float(c.rstrip("%")) for c in row.split()[1:6]]
        assert sum(cells) == pytest.approx(100.0, abs=0.05)


def test_lambda_report_without_records_fails(tmp_path):
    assert main(["lambda-report", str(tmp_path)]) == 1


def test_search_command(workspace, tmp_path):
    cfg = tmp_path / "search.json"
    cfg.write_text(json.dumps({"search": {"beta_grid": [0.1, 0.5], "lr_grid": [5e-3, 1e-2],
                                          "base": {"epochs": 1}}}))
    out = tmp_path / "search"
    assert main(["search", "--method", "dpo", "--config", str(cfg), "--sft",
                 str(workspace / "sft/snapshots/sft.snap"), "--data",
                 str(workspace / "data/dataset.jsonl"), "--n-eval-prompts", "16",
                 "--jobs", "2", "--out", str(out)]) == 0
    manifest = json.loads((out / "search_manifest.json").read_text())
    assert len(manifest["runs"]) == 2 + 2 * 2
    assert (out / "summary.csv").exists()


def test_default_output_root_from_environment(workspace, tmp_path, monkeypatch):
    monkeypatch.setenv("PREDPO_OUT", str(tmp_path))
    assert main(["eval", "--a", str(workspace / "sft/snapshots/sft.snap"), "--b",
                 str(workspace / "sft/snapshots/sft.snap"), "--n-prompts", "5"]) == 0
    assert (tmp_path / "eval" / "eval.json").exists()


def test_inputs_not_mutated(workspace, tmp_path):
    data = workspace / "data/dataset.jsonl"
    before = data.read_bytes()
    sft = str(workspace / "sft/snapshots/sft.snap")
    main(["train", "--method", "dpo", "--policy", sft, "--ref", sft, "--data", str(data),
          "--out", str(tmp_path)])
    assert data.read_bytes() == before
