import json

import pytest
import yaml

from glitter.cli import default_document, main
from glitter.data import load_checkpoint, load_dataset

SMALL = {"classes_per_graph": 6, "nodes_per_class": 10, "feature_dim": 4, "epochs": 2, "N": 2, "K": 2,
         "Q": 4, "eta": 2, "hidden_dim": 4, "d_a": 3, "D_max": 4, "class_ratios": [0.34, 0.33, 0.33],
         "val_every": 0}


def resolved(out: str) -> dict:
    body = out.split("# resolved configuration\n", 1)[1].split("# ---", 1)[0]
    return yaml.safe_load(body)


@pytest.fixture
def small_yaml(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("# tiny run\n" + yaml.safe_dump(SMALL))
    return path


def test_config_defaults_match_published_hyperparameters(capsys):
    assert main(["config", "--defaults"]) == 0
    doc = resolved(capsys.readouterr().out)
    assert (doc["h"], doc["C"], doc["m"], doc["eta"]) == (2, 10, 2, 20)
    assert (doc["alpha"], doc["beta1"], doc["beta2"]) == (0.1, 0.005, 0.005)
    assert (doc["hidden_dim"], doc["dropout_rate"]) == (16, 0.5)
    assert doc == default_document()


def test_bad_arguments_exit_2(capsys):
    assert main(["frobnicate"]) == 2
    assert "usage" in capsys.readouterr().err
    assert main([]) == 2
    assert main(["train", "--data", "x"]) == 2
    assert main(["config", "--set", "no_equals_sign"]) == 2
    assert main(["verify", "--suite", "everything"]) == 2


def test_unknown_key_and_invalid_value_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("bogus_key: 3\n")
    assert main(["config", "--config", str(bad)]) == 1
    assert main(["config", "--set", "flavour=1"]) == 1
    assert main(["generate", "--set", "p_intra=0.0", "--out", str(tmp_path / "d")]) == 1
    assert main(["train", "--set", "eta=0", "--data", str(tmp_path), "--out", str(tmp_path / "c")]) == 1
    assert "unknown config keys" in capsys.readouterr().err


def test_precedence_file_then_set_then_flag(small_yaml, capsys):
    assert main(["config", "--config", str(small_yaml), "--set", "K=3", "--set", "seed=4", "--seed", "9"]) == 0
    doc = resolved(capsys.readouterr().out)
    assert doc["N"] == 2 and doc["K"] == 3 and doc["seed"] == 9
    assert doc["m"] == 2


def test_pipeline_end_to_end(tmp_path, small_yaml, capsys):
    data, ckpt, logf, rep = tmp_path / "data", tmp_path / "ck.json", tmp_path / "log.jsonl", tmp_path / "r.json"
    assert main(["generate", "--config", str(small_yaml), "--out", str(data), "--seed", "3"]) == 0
    assert load_dataset(data).graphs[0].node_count == 60
    assert main(["train", "--config", str(small_yaml), "--data", str(data), "--out", str(ckpt),
                 "--log", str(logf)]) == 0
    assert load_checkpoint(ckpt).config["eta"] == 2
    lines = [json.loads(x) for x in logf.read_text().splitlines()]
    assert [x["kind"] for x in lines] == ["episode", "episode", "done"]
    assert len(lines[0]["L_support"]) == 2
    capsys.readouterr()
    assert main(["evaluate", "--checkpoint", str(ckpt), "--data", str(data), "--reps", "2",
                 "--episodes", "3", "--out", str(rep)]) == 0
    out = capsys.readouterr().out
    assert resolved(out)["reps"] == 2
    report = json.loads(rep.read_text())
    assert len(report["per_repetition_accuracy"]) == 2 and report["method"] == "glitter"
    for model in ("knn", "protonet"):
        assert main(["baseline", "--model", model, "--config", str(small_yaml), "--data", str(data),
                     "--reps", "2", "--episodes", "3"]) == 0
        assert f"method   : {model}" in capsys.readouterr().out


def test_missing_dataset_exit_1(tmp_path, small_yaml, capsys):
    assert main(["train", "--config", str(small_yaml), "--data", str(tmp_path / "none"),
                 "--out", str(tmp_path / "c.json")]) == 1
    assert "ParseError" in capsys.readouterr().err


def test_verify_sampling_suite_passes(capsys):
    assert main(["verify", "--suite", "sampling", "--seed", "1"]) == 0
    out = capsys.readouterr().out
    assert "[FAIL]" not in out and "checks passed" in out
