"""
Command line tests: every sub-command end to end on tiny inputs, exit codes
for handled failures and usage errors.
"""

import json

import pytest

from censalign.cli import build_parser, main

TINY_SUBLIGN = {
    "latent_dim": 2,
    "rnn_hidden": 6,
    "mlp_hidden": 6,
    "epochs": 2,
    "grid": {"delta_max": 4.0, "step": 0.2},
}


@pytest.fixture
def sigmoid_file(tmp_path):
    path = tmp_path / "sigmoid.jsonl"
    assert main(["generate", "--family", "sigmoid", "--n", "12", "--m", "4", "--seed", "2", "--out", str(path)]) == 0
    return path


@pytest.fixture
def quadratic_file(tmp_path):
    path = tmp_path / "quad.jsonl"
    args = ["generate", "--family", "quad5", "--n", "16", "--m", "4", "--noise-var", "0", "--seed", "1"]
    assert main(args + ["--out", str(path)]) == 0
    return path


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "sublign.json"
    path.write_text(json.dumps(TINY_SUBLIGN))
    return path


# ----------------------------------------------------------------------
# Data commands
# ----------------------------------------------------------------------


def test_generate_writes_header_and_trajectories(sigmoid_file):
    lines = sigmoid_file.read_text().splitlines()
    assert json.loads(lines[0])["dim"] == 3
    assert len(lines) == 13


def test_generate_with_missingness(tmp_path):
    path = tmp_path / "holes.jsonl"
    args = ["generate", "--family", "spline-any", "--n", "8", "--missing-rate", "0.3", "--out", str(path)]
    assert main(args) == 0
    assert "null" in path.read_text()


def test_generate_unknown_family_is_a_handled_error(tmp_path, capsys):
    assert main(["generate", "--family", "cubic", "--out", str(tmp_path / "x.jsonl")]) == 1
    assert capsys.readouterr().out.startswith("error:")


def test_validate_clean_dataset(sigmoid_file, capsys):
    assert main(["validate", "--data", str(sigmoid_file)]) == 0
    assert "0 violations" in capsys.readouterr().out


def test_validate_reports_violations(tmp_path, capsys):
    path = tmp_path / "bad.jsonl"
    path.write_text(
        '{"dim": 1, "link": "sigmoid", "provenance": ""}\n'
        '{"id": "a", "times": [0.0, 2.0, 1.0], "values": [[0.1], [0.2], [0.3]]}\n'
    )
    assert main(["validate", "--data", str(path)]) == 1
    out = capsys.readouterr().out
    assert out.splitlines()[0].startswith("a:")


def test_validate_flags_subtype_beyond_header_count(tmp_path, capsys):
    path = tmp_path / "k.jsonl"
    path.write_text(
        '{"dim": 1, "link": "sigmoid", "provenance": "", "k": 2}\n'
        '{"id": "a", "times": [0.0], "values": [[0.1]], "true_subtype": 2}\n'
    )
    assert main(["validate", "--data", str(path)]) == 1
    assert "true_subtype 2 >= K=2" in capsys.readouterr().out


def test_missing_file_is_a_handled_error(tmp_path):
    assert main(["validate", "--data", str(tmp_path / "absent.jsonl")]) == 1


# ----------------------------------------------------------------------
# Fitting commands
# ----------------------------------------------------------------------


def test_train_infer_evaluate_probe(tmp_path, sigmoid_file, config_file, capsys):
    model, fit = tmp_path / "model.json", tmp_path / "fit.json"
    assert main(["train", "--data", str(sigmoid_file), "--config", str(config_file), "--out", str(model)]) == 0
    assert main(["infer", "--model", str(model), "--data", str(sigmoid_file), "--k", "2", "--out", str(fit)]) == 0
    assert len(json.loads(fit.read_text())["records"]) == 12

    scores = tmp_path / "scores.json"
    assert main(["evaluate", "--fit", str(fit), "--data", str(sigmoid_file), "--out", str(scores)]) == 0
    assert 0.0 <= json.loads(scores.read_text())["swaps"] <= 1.0

    probe = tmp_path / "probe.json"
    args = ["censor-probe", "--model", str(model), "--data", str(sigmoid_file), "--width", "0.5"]
    assert main(args + ["--out", str(probe)]) == 0
    assert "fraction" in capsys.readouterr().out
    assert json.loads(probe.read_text())["n_compared"] + json.loads(probe.read_text())["n_excluded"] == 12


def test_train_without_alignment(tmp_path, sigmoid_file, config_file):
    model, fit = tmp_path / "model.json", tmp_path / "fit.json"
    args = ["train", "--data", str(sigmoid_file), "--config", str(config_file), "--out", str(model), "--no-align"]
    assert main(args) == 0
    assert main(["infer", "--model", str(model), "--data", str(sigmoid_file), "--out", str(fit)]) == 0
    assert all(r["delta_hat"] is None for r in json.loads(fit.read_text())["records"])


def test_identify_and_evaluate(tmp_path, quadratic_file):
    ident = tmp_path / "ident.json"
    assert main(["identify", "--data", str(quadratic_file), "--k", "2", "--out", str(ident)]) == 0
    assert json.loads(ident.read_text())["method"] == "identify"
    assert main(["evaluate", "--fit", str(ident), "--data", str(quadratic_file)]) == 0


def test_identify_on_noisy_sigmoid_data_fails_cleanly(tmp_path, sigmoid_file):
    out = tmp_path / "ident.json"
    result = main(["identify", "--data", str(sigmoid_file), "--link", "sigmoid", "--out", str(out)])
    assert result in (0, 1)
    assert out.exists() == (result == 0)


def test_kmeans_loss_baseline(tmp_path, sigmoid_file):
    out = tmp_path / "base.json"
    assert main(["baseline", "kmeans-loss", "--data", str(sigmoid_file), "--k", "2", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["method"] == "kmeans-loss"


def test_experiment_command(tmp_path, capsys):
    config = tmp_path / "exp.json"
    config.write_text(
        json.dumps(
            {
                "generator": {"family": "sigmoid", "n_patients": 20, "seed": 0},
                "methods": ["kmeans-loss"],
                "n_trials": 2,
                "sublign": TINY_SUBLIGN,
            }
        )
    )
    assert main(["experiment", "--config", str(config), "--out-dir", str(tmp_path / "results")]) == 0
    assert capsys.readouterr().out.split()[:4] == ["METHOD", "ARI", "SWAPS", "PEARSON"]
    assert (tmp_path / "results" / "report.txt").exists()


def test_experiment_with_bad_config(tmp_path):
    config = tmp_path / "exp.json"
    config.write_text(json.dumps({"n_trials": -1}))
    assert main(["experiment", "--config", str(config)]) == 1


# ----------------------------------------------------------------------
# Usage errors
# ----------------------------------------------------------------------


@pytest.mark.parametrize(
    "argv",
    [[], ["train"], ["baseline"], ["identify", "--data", "d.jsonl", "--out", "o.json", "--link", "tanh"]],
    ids=["no-command", "missing-options", "missing-baseline", "bad-choice"],
)
def test_usage_errors_exit_with_two(argv):
    with pytest.raises(SystemExit) as excinfo:
        main(argv)
    assert excinfo.value.code == 2


def test_parser_defaults():
    args = build_parser().parse_args(["infer", "--model", "m.json", "--data", "d.jsonl", "--out", "f.json"])
    assert args.k == 2
