import json

import numpy as np
import pytest

from slsid import Dataset, find_isomorphism, model_from_dict
from slsid.cli import main


def write_json(path, obj):
    path.write_text(json.dumps(obj, indent=2))
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory, two_mode):
    """One simulate run shared by the downstream command tests."""
    root = tmp_path_factory.mktemp("cli")
    model_path = write_json(root / "true_model.json", two_mode.model.to_dict())
    cfg = write_json(root / "sim.json", {
        "model": "true_model.json",
        "sim": {"seed": 3, "length": 20000, "burn_in": 500},
    })
    assert main(["simulate", "--config", str(cfg), "--out", str(root / "sim")]) == 0
    return root


def test_simulate_outputs_and_manifest(workspace):
    out = workspace / "sim"
    assert (out / "data.csv").exists()
    assert (out / "data_clean.csv").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["rows"] == 20000
    assert manifest["files"] == ["data.csv", "data_clean.csv"]
    assert len(manifest["model_sha256"]) == 64
    assert manifest["effective_config"]["sim"]["seed"] == 3
    data = Dataset.from_csv(out / "data.csv",
                            clean_path=out / "data_clean.csv")
    assert len(data) == 20000


def test_simulate_is_reproducible(workspace):
    rc = main(["simulate", "--config", str(workspace / "sim.json"),
               "--out", str(workspace / "sim_again")])
    assert rc == 0
    a = (workspace / "sim" / "data.csv").read_bytes()
    b = (workspace / "sim_again" / "data.csv").read_bytes()
    assert a == b


def test_simulate_seed_override_changes_data(workspace):
    rc = main(["simulate", "--config", str(workspace / "sim.json"),
               "--out", str(workspace / "sim_seeded"), "--seed", "4"])
    assert rc == 0
    a = (workspace / "sim" / "data.csv").read_bytes()
    b = (workspace / "sim_seeded" / "data.csv").read_bytes()
    assert a != b


def test_estimate_realize_compare_round_trip(workspace, two_mode):
    # explicit p: find_isomorphism requires the probability vectors to match
    est_cfg = write_json(workspace / "est.json", {
        "data": "sim/data.csv",
        "p": [0.5, 0.5],
        "words": {"max_len": 5},
        "estimator": "direct",
    })
    assert main(["estimate", "--config", str(est_cfg),
                 "--out", str(workspace / "est")]) == 0
    cov_obj = json.loads((workspace / "est" / "covariances.json").read_text())
    assert cov_obj["effective_config"]["estimator"] == "direct"
    assert cov_obj["n_y"] == 1 and cov_obj["n_u"] == 1

    real_cfg = write_json(workspace / "real.json", {
        "covariances": "est/covariances.json",
        "n_x": 3,
        "selection": two_mode.sel.to_jsonable(),
        "selection_bar": two_mode.sel_bar.to_jsonable(),
    })
    assert main(["realize", "--config", str(real_cfg),
                 "--out", str(workspace / "real")]) == 0
    report = json.loads((workspace / "real" / "report.json").read_text())
    assert report["diagnostics"]["n_x"] == 3
    assert report["effective_config"]["selection"] == two_mode.sel.to_jsonable()

    model = model_from_dict(
        json.loads((workspace / "real" / "model.json").read_text()))
    model.validate()
    # identified from 6000 samples: close enough for a loose isomorphism
    find_isomorphism(model, two_mode.model, tol=1.0)


def test_identify_with_validation_split(workspace, two_mode):
    cfg = write_json(workspace / "ident.json", {
        "data": "sim/data.csv",
        "ident": {
            "n_x": 3,
            "selection": two_mode.sel.to_jsonable(),
            "selection_bar": two_mode.sel_bar.to_jsonable(),
        },
        "validation": {"split": 1000, "exclude": 6},
    })
    assert main(["identify", "--config", str(cfg),
                 "--out", str(workspace / "ident")]) == 0
    report = json.loads((workspace / "ident" / "report.json").read_text())
    assert 0.0 <= report["validation"]["bfr"] <= 100.0
    assert report["validation"]["n_excluded"] == 6
    assert "runtime_seconds" not in report["validation"]
    assert report["effective_config"]["ident"]["estimator"] == "direct"
    model_from_dict(
        json.loads((workspace / "ident" / "model.json").read_text())).validate()


def test_identify_rerun_is_byte_identical(workspace):
    first = (workspace / "ident" / "report.json").read_bytes()
    assert main(["identify", "--config", str(workspace / "ident.json"),
                 "--out", str(workspace / "ident2")]) == 0
    assert (workspace / "ident2" / "report.json").read_bytes() == first
    a = (workspace / "ident" / "model.json").read_bytes()
    assert (workspace / "ident2" / "model.json").read_bytes() == a


def test_validate_command(workspace):
    cfg = write_json(workspace / "val.json", {
        "model": "ident/model.json",
        "data": "sim/data.csv",
        "exclude": 6,
    })
    assert main(["validate", "--config", str(cfg),
                 "--out", str(workspace / "val")]) == 0
    report = json.loads((workspace / "val" / "report.json").read_text())
    assert 0.0 <= report["bfr"] <= 100.0
    lines = (workspace / "val" / "predictions.csv").read_text().splitlines()
    assert lines[0] == "t,yhat_1"
    assert len(lines) == 20001


def test_transform_then_compare_isomorphic(workspace, capsys):
    write_json(workspace / "T.json", [[2.0, 0.0, 0.0],
                                      [1.0, 1.0, 0.0],
                                      [0.0, 0.0, -1.0]])
    assert main(["transform", str(workspace / "true_model.json"),
                 str(workspace / "T.json"),
                 "--out", str(workspace / "moved")]) == 0
    rc = main(["compare", str(workspace / "true_model.json"),
               str(workspace / "moved" / "model.json")])
    out = capsys.readouterr().out
    assert rc == 0
    assert "isomorphic: yes" in out
    assert "worst residual" in out


def test_compare_rejects_different_models(workspace, two_mode, capsys):
    bumped = two_mode.model.to_dict()
    bumped["A"][0][0][0] += 0.05
    write_json(workspace / "bumped.json", bumped)
    rc = main(["compare", str(workspace / "true_model.json"),
               str(workspace / "bumped.json")])
    assert rc == 5
    assert "not isomorphic" in capsys.readouterr().err


def test_config_error_paths(workspace, tmp_path, capsys):
    # missing config file
    assert main(["estimate", "--config", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "x")]) == 3
    # malformed JSON reports the position
    bad = tmp_path / "bad.json"
    bad.write_text("{\"data\": }")
    assert main(["estimate", "--config", str(bad),
                 "--out", str(tmp_path / "x")]) == 3
    assert "line" in capsys.readouterr().err
    # missing required key (data path must exist; it is checked first)
    cfg = write_json(tmp_path / "incomplete.json",
                     {"data": str(workspace / "sim" / "data.csv")})
    assert main(["estimate", "--config", str(cfg),
                 "--out", str(tmp_path / "x")]) == 3
    err = capsys.readouterr().err
    assert "words" in err


def test_insufficient_data_exit_code(workspace, tmp_path):
    short = tmp_path / "short.csv"
    short.write_text("t,q,u_1,y_1\n0,1,0.0,1.0\n1,1,0.0,2.0\n")
    cfg = write_json(tmp_path / "ident_short.json", {
        "data": "short.csv",
        "ident": {"n_x": 1},
    })
    assert main(["identify", "--config", str(cfg),
                 "--out", str(tmp_path / "out")]) == 4


def test_invalid_model_exit_code(workspace, tmp_path, two_mode):
    unstable = two_mode.model.to_dict()
    unstable["A"] = [[[1.2, 0, 0], [0, 1.2, 0], [0, 0, 1.2]]] * 2
    write_json(tmp_path / "unstable.json", unstable)
    cfg = write_json(tmp_path / "sim_bad.json", {
        "model": "unstable.json",
        "sim": {"seed": 1, "length": 100},
    })
    assert main(["simulate", "--config", str(cfg),
                 "--out", str(tmp_path / "out")]) == 2


def test_estimate_ls_flag_overrides_config(workspace):
    est_cfg = write_json(workspace / "est_ls.json", {
        "data": "sim/data.csv",
        "words": {"max_len": 3},
        "estimator": "direct",
    })
    assert main(["estimate", "--config", str(est_cfg),
                 "--out", str(workspace / "est_ls"), "--estimator", "ls"]) == 0
    obj = json.loads((workspace / "est_ls" / "covariances.json").read_text())
    assert obj["effective_config"]["estimator"] == "ls"
