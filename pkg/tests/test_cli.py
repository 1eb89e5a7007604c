"""End-to-end command-line runs: every subcommand against real files in a
temporary directory, exit-status checks, artifact recomputation, and
determinism replays."""

import csv
import json
import os
import shutil

import numpy as np
import pytest

from netchoice.cli import main
from netchoice.dataio import load_dataset
from netchoice.estimation import weighted_accuracy
from netchoice.models import load_checkpoint

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
SMOKE_FEATURES = os.path.join(DATA_DIR, "smoke_features.csv")
SMOKE_MANIFEST = os.path.join(DATA_DIR, "smoke_manifest.json")


def _cfg(tmp_path, name, payload):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def _smoke_data():
    return {"features": SMOKE_FEATURES, "manifest": SMOKE_MANIFEST}


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _simulate_dataset(tmp_path, n=100, seed=4):
    out = tmp_path / "simdata"
    cfg = _cfg(tmp_path, "sim.json", {
        "command": "simulate", "process": "logit", "n": n,
        "beta": [1.2, -0.8], "seed": seed, "out": str(out),
    })
    assert main(["simulate", "--config", cfg]) == 0
    return {"features": str(out / "features.csv"),
            "manifest": str(out / "manifest.json")}


# ---------------------------------------------------------------------------
# train


def test_train_smoke_fixture_writes_checkpoint(tmp_path):
    out = tmp_path / "fit"
    cfg = _cfg(tmp_path, "train.json", {
        "command": "train",
        "data": _smoke_data(),
        "model": {"family": "logit"},
        "train": {"epochs": 30, "learning_rate": 0.2},
        "seed": 1,
        "out": str(out),
    })
    assert main(["train", "--config", cfg]) == 0
    assert (out / "checkpoint.json").is_file()

    log_rows = _read_csv(out / "training_log.csv")
    assert log_rows[0] == ["epoch", "loss"]
    assert len(log_rows) == 1 + 30
    losses = [float(r[1]) for r in log_rows[1:]]
    assert losses[-1] < losses[0]

    summary = json.load(open(out / "summary.json"))
    assert summary["family"] == "logit"
    assert summary["n"] == 20 and summary["k"] == 2 and summary["r"] == 1
    assert summary["n_updates"] == 30

    echo = json.load(open(out / "config.json"))
    assert echo["seed"] == 1 and echo["jobs"] == 1
    assert echo["out"] == str(out)
    assert not any(key.startswith("_") for key in echo)


def test_train_missing_graph_file_reports_path(tmp_path, capsys):
    missing = str(tmp_path / "no_such_edges.txt")
    cfg = _cfg(tmp_path, "train.json", {
        "command": "train",
        "data": dict(_smoke_data(),
                     graph={"source": "edges", "edges": missing}),
        "model": {"family": "skip_gnn_binary", "gcn_layers": 1,
                  "fc_layers": 1, "fc_width": 4},
        "train": {"epochs": 5},
        "seed": 0,
        "out": str(tmp_path / "fit"),
    })
    assert main(["train", "--config", cfg]) == 1
    err = capsys.readouterr().err
    assert err.startswith("error:")
    assert "no_such_edges.txt" in err


def test_train_same_seed_gives_byte_identical_checkpoints(tmp_path):
    def run(out, seed):
        cfg = _cfg(tmp_path, f"train_{out}_{seed}.json", {
            "command": "train",
            "data": _smoke_data(),
            "model": {"family": "logit"},
            "train": {"epochs": 20, "learning_rate": 0.2,
                      "batch_size": 8},
            "seed": seed,
            "out": str(tmp_path / out),
        })
        assert main(["train", "--config", cfg]) == 0
        return (tmp_path / out / "checkpoint.json").read_bytes()

    assert run("a", 3) == run("b", 3)
    assert run("c", 4) != run("a", 3)


# ---------------------------------------------------------------------------
# simulate


def test_simulate_writes_dataset_latents_and_summary(tmp_path):
    out = tmp_path / "sim"
    cfg = _cfg(tmp_path, "sim.json", {
        "command": "simulate", "process": "logit", "n": 50,
        "beta": [1.0, -0.5], "gamma": [0.3], "seed": 11, "out": str(out),
    })
    assert main(["simulate", "--config", cfg]) == 0
    features = _read_csv(out / "features.csv")
    assert len(features) == 1 + 50
    latents = _read_csv(out / "latents.csv")
    assert latents[0] == ["id", "utility", "epsilon"]
    assert len(latents) == 1 + 50
    ds = load_dataset(str(out / "features.csv"), str(out / "manifest.json"))
    assert ds.n == 50 and ds.k == 2 and ds.r == 1
    summary = json.load(open(out / "summary.json"))
    assert summary["n"] == 50 and summary["process"] == "logit"
    assert summary["share_alternative_1"] == pytest.approx(ds.y.mean())
    # latent file agrees with the drawn labels: u > 0 iff y = 1
    u = np.array([float(r[1]) for r in latents[1:]])
    assert np.array_equal((u > 0).astype(int), ds.y)


def test_simulate_network_process_writes_edge_list(tmp_path):
    out = tmp_path / "sim"
    cfg = _cfg(tmp_path, "sim.json", {
        "command": "simulate", "process": "sal", "n": 40,
        "beta": [1.0], "rho": 0.4,
        "graph": {"source": "knn", "k": 4, "normalization": "row"},
        "seed": 2, "out": str(out),
    })
    assert main(["simulate", "--config", cfg]) == 0
    assert (out / "edges.txt").is_file()
    cfg2 = _cfg(tmp_path, "sim2.json", {
        "command": "simulate", "process": "sal", "n": 40,
        "beta": [1.0], "rho": 0.4, "seed": 2, "out": str(out),
    })
    assert main(["simulate", "--config", cfg2]) == 1  # graph section required


# ---------------------------------------------------------------------------
# cross-validation


def test_cv_writes_five_folds_and_consistent_mean(tmp_path):
    data = _simulate_dataset(tmp_path)
    out = tmp_path / "cv"
    cfg = _cfg(tmp_path, "cv.json", {
        "command": "cv", "data": data,
        "model": {"family": "logit"},
        "train": {"epochs": 30, "learning_rate": 0.5},
        "cv": {"folds": 5},
        "seed": 3, "out": str(out),
    })
    assert main(["cv", "--config", cfg]) == 0
    rows = _read_csv(out / "cv_folds.csv")
    assert rows[0] == ["fold", "n_test", "accuracy", "flagged"]
    assert len(rows) == 1 + 5
    assert sum(int(r[1]) for r in rows[1:]) == 100
    summary = json.load(open(out / "summary.json"))
    accs = [float(r[2]) for r in rows[1:]]
    assert abs(np.mean(accs) - summary["mean_accuracy"]) <= 1e-12
    assert summary["fold_accuracy"] == accs
    assert summary["n_folds"] == 5


def test_cv_seed_changes_fold_assignment(tmp_path):
    data = _simulate_dataset(tmp_path)
    blobs = []
    for seed in (0, 1):
        out = tmp_path / f"cv{seed}"
        cfg = _cfg(tmp_path, f"cv{seed}.json", {
            "command": "cv", "data": data,
            "model": {"family": "logit"},
            "train": {"epochs": 20, "learning_rate": 0.5},
            "cv": {"folds": 4},
            "seed": seed, "out": str(out),
        })
        assert main(["cv", "--config", cfg]) == 0
        blobs.append((out / "cv_folds.csv").read_bytes())
    assert blobs[0] != blobs[1]


# ---------------------------------------------------------------------------
# grid search


def test_gridsearch_single_point_grid(tmp_path):
    data = _simulate_dataset(tmp_path, n=60)
    out = tmp_path / "gs"
    cfg = _cfg(tmp_path, "gs.json", {
        "command": "gridsearch", "data": data,
        "model": {"family": "logit"},
        "train": {"epochs": 15},
        "search": {"grid": {"learning_rate": [0.3]}, "n_trials": 4,
                   "folds": 3},
        "seed": 5, "out": str(out),
    })
    assert main(["gridsearch", "--config", cfg]) == 0
    rows = _read_csv(out / "trials.csv")
    assert rows[0] == ["trial", "learning_rate", "mean_accuracy"]
    assert len(rows) == 1 + 1
    summary = json.load(open(out / "summary.json"))
    assert summary["best_params"] == {"learning_rate": 0.3}
    assert summary["n_combinations"] == 1


def test_gridsearch_winner_matches_trial_log(tmp_path):
    data = _simulate_dataset(tmp_path, n=80)
    out = tmp_path / "gs"
    cfg = _cfg(tmp_path, "gs.json", {
        "command": "gridsearch", "data": data,
        "model": {"family": "logit"},
        "search": {"grid": {"learning_rate": [0.0, 0.2, 0.8],
                            "epochs": [10, 30]},
                   "n_trials": 6, "folds": 3},
        "seed": 6, "out": str(out),
    })
    assert main(["gridsearch", "--config", cfg]) == 0
    rows = _read_csv(out / "trials.csv")
    assert len(rows) == 1 + 6
    scores = [float(r[-1]) for r in rows[1:]]
    summary = json.load(open(out / "summary.json"))
    assert summary["best_score"] == pytest.approx(max(scores), abs=1e-12)
    assert summary["best_params"]["learning_rate"] in (0.0, 0.2, 0.8)
    assert summary["best_params"]["epochs"] in (10, 30)


def test_gridsearch_rejects_unknown_hyperparameters(tmp_path, capsys):
    cfg = _cfg(tmp_path, "gs.json", {
        "command": "gridsearch", "data": _smoke_data(),
        "model": {"family": "logit"},
        "search": {"grid": {"temperature": [1.0]}},
        "seed": 0, "out": str(tmp_path / "gs"),
    })
    assert main(["gridsearch", "--config", cfg]) == 1
    assert "temperature" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# posterior


def _posterior_cfg(tmp_path, out, seed=3):
    return _cfg(tmp_path, f"post_{os.path.basename(out)}.json", {
        "command": "posterior", "data": _smoke_data(),
        "model": {"family": "logit"},
        "train": {"epochs": 40, "learning_rate": 0.2, "weight_decay": 0.5},
        "posterior": {"epochs": 450, "step_size": 0.02, "thinning": 10,
                      "burn_in_frac": 0.2,
                      "functionals": [
                          {"type": "vott", "time_index": 0, "cost_index": 1},
                          {"type": "odds_ratio", "kind": "q", "index": 0,
                           "delta": 1.0},
                          {"type": "marginal_utility", "kind": "x",
                           "index": 0},
                      ]},
        "seed": seed, "out": str(out),
    })


def test_posterior_thinning_and_burn_in_counts(tmp_path):
    out = tmp_path / "post"
    cfg = _cfg(tmp_path, "post_counts.json", {
        "command": "posterior", "data": _smoke_data(),
        "model": {"family": "logit"},
        "train": {"epochs": 40, "learning_rate": 0.2, "weight_decay": 0.5},
        "posterior": {"epochs": 125, "step_size": 0.02, "thinning": 10,
                      "burn_in_frac": 0.2},
        "seed": 3, "out": str(out),
    })
    assert main(["posterior", "--config", cfg]) == 0
    summary = json.load(open(out / "summary.json"))
    # 125 full-batch steps, 20% burn-in -> 100 kept, every 10th retained
    assert summary["n_samples"] == 10
    assert summary["burn_in"] == 25
    rows = _read_csv(out / "posterior_samples.csv")
    assert len(rows) == 1 + 10
    assert rows[0][0] == "sample"


def test_posterior_interval_tables_are_ordered(tmp_path):
    out = tmp_path / "post"
    assert main(["posterior", "--config",
                 _posterior_cfg(tmp_path, out)]) == 0
    summary = json.load(open(out / "summary.json"))
    assert summary["n_samples"] == 36
    rows = _read_csv(out / "posterior_samples.csv")
    assert len(rows) == 1 + 36

    for name in ("vott", "odds_ratio", "marginal_utility_x0"):
        table = _read_csv(out / f"{name}.csv")
        assert table[0] == ["id", "estimate", "lower", "upper"]
        assert len(table) == 1 + 20
        for row in table[1:]:
            if row[1] == "":
                continue
            lo, mid, hi = float(row[2]), float(row[1]), float(row[3])
            assert lo <= mid <= hi
        assert (out / f"{name}_hist.csv").is_file()
    assert set(summary["functionals"]) == {"vott", "odds_ratio",
                                           "marginal_utility_x0"}


def test_posterior_rerun_with_same_seed_is_identical(tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["posterior", "--config",
                 _posterior_cfg(tmp_path, out_a)]) == 0
    assert main(["posterior", "--config",
                 _posterior_cfg(tmp_path, out_b)]) == 0
    assert (out_a / "posterior_samples.csv").read_bytes() == \
        (out_b / "posterior_samples.csv").read_bytes()
    assert (out_a / "vott.csv").read_bytes() == \
        (out_b / "vott.csv").read_bytes()


# ---------------------------------------------------------------------------
# inference


def test_infer_reports_probabilities_and_economics(tmp_path):
    fit_out = tmp_path / "fit"
    train_cfg = _cfg(tmp_path, "train.json", {
        "command": "train", "data": _smoke_data(),
        "model": {"family": "logit"},
        "train": {"epochs": 60, "learning_rate": 0.2},
        "seed": 1, "out": str(fit_out),
    })
    assert main(["train", "--config", train_cfg]) == 0
    ckpt = str(fit_out / "checkpoint.json")

    out = tmp_path / "infer"
    infer_cfg = _cfg(tmp_path, "infer.json", {
        "command": "infer", "data": _smoke_data(), "checkpoint": ckpt,
        "report": {"vott": {"time_index": 0, "cost_index": 1},
                   "odds_ratio": {"kind": "q", "index": 0, "delta": 1.0},
                   "marginal_utilities": True},
        "seed": 0, "out": str(out),
    })
    assert main(["infer", "--config", infer_cfg]) == 0

    rows = _read_csv(out / "predictions.csv")
    assert rows[0] == ["id", "p_0", "p_1", "predicted", "observed"]
    assert len(rows) == 1 + 20
    probs = np.array([[float(r[1]), float(r[2])] for r in rows[1:]])
    predicted = np.array([int(r[3]) for r in rows[1:]])
    observed = np.array([int(r[4]) for r in rows[1:]])
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    assert np.array_equal(predicted, probs.argmax(axis=1))

    summary = json.load(open(out / "summary.json"))
    assert summary["accuracy"] == pytest.approx(
        weighted_accuracy(observed, predicted), abs=1e-12)

    weights = load_checkpoint(ckpt)
    beta = weights.params["beta"].ravel()
    gamma = weights.params["gamma"].ravel()
    vott_rows = _read_csv(out / "vott.csv")
    values = np.array([float(r[1]) for r in vott_rows[1:]])
    assert np.allclose(values, 60.0 * beta[0] / beta[1], atol=1e-10)
    assert summary["vott_median"] == pytest.approx(values[0])

    or_rows = _read_csv(out / "odds_ratio.csv")
    or_values = np.array([float(r[1]) for r in or_rows[1:]])
    assert np.allclose(or_values, np.exp(gamma[0]), atol=1e-12)

    mu_rows = _read_csv(out / "marginal_utility_x0.csv")
    assert np.allclose([float(r[1]) for r in mu_rows[1:]], beta[0],
                       atol=1e-15)
    assert (out / "marginal_utility_q0.csv").is_file()


def test_infer_missing_checkpoint_reports_path(tmp_path, capsys):
    cfg = _cfg(tmp_path, "infer.json", {
        "command": "infer", "data": _smoke_data(),
        "checkpoint": str(tmp_path / "absent_checkpoint.json"),
        "seed": 0, "out": str(tmp_path / "infer"),
    })
    assert main(["infer", "--config", cfg]) == 1
    assert "absent_checkpoint.json" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# config plumbing


def test_config_error_paths(tmp_path, capsys):
    out = str(tmp_path / "out")

    assert main(["train", "--config", str(tmp_path / "absent.json")]) == 1
    assert "does not exist" in capsys.readouterr().err

    bad_json = tmp_path / "bad.json"
    bad_json.write_text("{nope")
    assert main(["train", "--config", str(bad_json)]) == 1
    assert "not valid JSON" in capsys.readouterr().err

    arr = tmp_path / "arr.json"
    arr.write_text("[1]")
    assert main(["train", "--config", str(arr)]) == 1
    assert "JSON object" in capsys.readouterr().err

    mismatch = _cfg(tmp_path, "mismatch.json",
                    {"command": "train", "data": _smoke_data(),
                     "model": {"family": "logit"}, "out": out})
    assert main(["cv", "--config", mismatch]) == 1
    assert "declares command" in capsys.readouterr().err

    no_out = _cfg(tmp_path, "noout.json",
                  {"command": "train", "data": _smoke_data(),
                   "model": {"family": "logit"}})
    assert main(["train", "--config", no_out]) == 1
    assert "output directory" in capsys.readouterr().err

    bad_family = _cfg(tmp_path, "fam.json",
                      {"command": "train", "data": _smoke_data(),
                       "model": {"family": "perceptron"}, "out": out})
    assert main(["train", "--config", bad_family]) == 1
    assert "model.family" in capsys.readouterr().err

    bad_setting = _cfg(tmp_path, "set.json",
                       {"command": "train", "data": _smoke_data(),
                        "model": {"family": "logit"},
                        "train": {"temperature": 2.0}, "out": out})
    assert main(["train", "--config", bad_setting]) == 1
    assert "unknown settings" in capsys.readouterr().err

    bad_graph = _cfg(tmp_path, "graph.json",
                     {"command": "train",
                      "data": dict(_smoke_data(), graph={"source": "random"}),
                      "model": {"family": "logit"}, "out": out})
    assert main(["train", "--config", bad_graph]) == 1
    assert "graph.source" in capsys.readouterr().err

    no_model = _cfg(tmp_path, "nomodel.json",
                    {"command": "train", "data": _smoke_data(), "out": out})
    assert main(["train", "--config", no_model]) == 1
    assert "'model'" in capsys.readouterr().err


def test_flag_overrides_and_relative_paths(tmp_path, capsys):
    nest = tmp_path / "nest"
    nest.mkdir()
    shutil.copy(SMOKE_FEATURES, nest / "features.csv")
    shutil.copy(SMOKE_MANIFEST, nest / "manifest.json")
    cfg = _cfg(nest, "train.json", {
        "command": "train",
        "data": {"features": "features.csv", "manifest": "manifest.json"},
        "model": {"family": "logit"},
        "train": {"epochs": 10, "learning_rate": 0.2},
        "seed": 1,
        "out": "results",
    })
    assert main(["train", "--config", cfg]) == 0
    assert (nest / "results" / "checkpoint.json").is_file()
    echo = json.load(open(nest / "results" / "config.json"))
    assert echo["out"] == str(nest / "results")

    override_out = tmp_path / "elsewhere"
    assert main(["train", "--config", cfg, "--seed", "99",
                 "--out", str(override_out), "--jobs", "2"]) == 0
    echo = json.load(open(override_out / "config.json"))
    assert echo["seed"] == 99 and echo["jobs"] == 2
    assert echo["out"] == str(override_out)

    stdout = capsys.readouterr().out
    lines = [l for l in stdout.splitlines() if l]
    assert lines and all(l.startswith("wrote ") for l in lines)
