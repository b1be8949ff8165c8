import json

import pytest

from takeover import cli


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_DIR_ENV, str(tmp_path))
    return tmp_path


def _run(*argv):
    return cli.run([str(a) for a in argv])


def test_parse_seeds():
    assert cli.parse_seeds("0..3") == [0, 1, 2, 3]
    assert cli.parse_seeds("1,4,7..8") == [1, 4, 7, 8]
    with pytest.raises(cli.CliError):
        cli.parse_seeds("5..2")


def test_end_to_end(workdir, capsys):
    data = workdir / "synthetic.csv"
    assert _run("synth", "--rows", 120, "--seed", 1) == 0
    assert data.is_file()

    assert _run("ingest", "--data", data, "--clean-out", workdir / "clean.csv") == 0
    summary = json.loads((workdir / "summary.json").read_text())
    assert summary["summary"]["row_count"] <= 120
    assert any(v["name"] == "TBTC&TBTB" for v in summary["schema"])
    assert (workdir / "summary.json.manifest.json").is_file()

    assert _run("train", "--data", data, "--n-estimators", 15) == 0
    model = workdir / "model.json"
    doc = json.loads(model.read_text())
    assert len(doc["trees"]) == 15 and doc["params"]["n_estimators"] == 15

    capsys.readouterr()
    assert _run("predict", "--model", model, "--explain") == 0
    out = json.loads((workdir / "prediction.json").read_text())
    assert float(capsys.readouterr().out) == out["prediction"]
    assert all(v is None for v in out["features"].values())
    force = out["force"]
    assert force["base_value"] + sum(c["phi"] for c in force["contributions"]) == pytest.approx(out["prediction"], abs=1e-9)

    assert _run("predict", "--model", model, "--values", "URG=2,AGE=41", "--out", workdir / "p2.json") == 0
    assert json.loads((workdir / "p2.json").read_text())["features"]["URG"] == 2.0

    assert _run("explain", "--model", model, "--data", data, "--global", "--out", workdir / "global.json") == 0
    ranking = json.loads((workdir / "global.json").read_text())["ranking"]
    assert len(ranking) == 17

    assert _run("explain", "--model", model, "--data", data, "--dependence", "URG", "--out", workdir / "dep.json") == 0
    assert (workdir / "dep.csv").read_text().startswith("feature_value,main_effect")

    assert _run("explain", "--model", model, "--data", data, "--interactions", 0, "--out", workdir / "int.json") == 0
    values = json.loads((workdir / "int.json").read_text())["values"]
    assert len(values) == 17 and len(values[0]) == 17

    assert _run("cv", "--data", data, "--n-estimators", 10, "--k", 3, "--seeds", "0..1") == 0
    cv = json.loads((workdir / "cv.json").read_text())
    assert [r["seed"] for r in cv["per_seed"]] == [0, 1]

    assert _run("bins", "--data", data, "--n-estimators", 5, "--k", 3, "--seeds", "0", "--bounds", "1,3,9") == 0
    assert (workdir / "bins.csv").read_text().startswith("upper_bound,samples")

    assert _run("baseline", "--data", data, "--n-estimators", 10, "--k", 3, "--seeds", "0") == 0
    rows = (workdir / "baseline.csv").read_text().splitlines()
    assert rows[0] == "model,rmse,adj_r2,mae,corr" and len(rows) == 3


def test_errors_exit_with_status_two(workdir, capsys):
    assert _run("train", "--data", workdir / "absent.csv") == 2
    err = capsys.readouterr().err
    assert err.startswith("takeover train: error:") and "not found" in err

    bad = workdir / "bad.csv"
    bad.write_text("AGE,URG,takeover_time\n30,5,2.0\n")
    assert _run("ingest", "--data", bad) == 2
    assert "URG" in capsys.readouterr().err

    _run("synth", "--rows", 30)
    _run("train", "--data", workdir / "synthetic.csv", "--n-estimators", 2)
    assert _run("predict", "--model", workdir / "model.json", "--values", "NOPE=1") == 2


def test_module_entry_point_parses_help():
    with pytest.raises(SystemExit) as e:
        cli.main(["--help"])
    assert e.value.code == 0
