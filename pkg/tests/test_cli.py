import json
from pathlib import Path

import pandas as pd
import pytest

from canardlab.cli import main, parse_box, parse_params, parse_point, UsageError
from canardlab.exceptions import ModelException
from canardlab.slowfast import chua3
from canardlab.sweep import ParameterSweep, parse_values, run_sweep, thread_count

MODELS_DIR = Path(__file__).parent.parent / "models"


def test_analyze_stdout(capsys):
    code = main(["analyze", "--builtin", "chua3", "--grid", "6"])
    captured = capsys.readouterr()
    assert code == 0

    document = json.loads(captured.out)
    print(f"{document['verdicts'] = }")
    assert document["schema_version"] == "1.0"
    assert document["model"]["builtin"] == "chua3"
    assert document["verdicts"] == {
        "jacobian": "CanardBySaddle",
        "curvature": "CanardByCurvatureSaddle",
        "agrees": True,
    }
    assert len(document["jacobian"]["points"]) == 2
    assert document["errors"] == []
    assert "equilibria" not in document


def test_analyze_file_is_deterministic(tmp_path):
    args = ["analyze", "--model", str(MODELS_DIR / "chua3.json"), "--grid", "6", "--equilibria"]
    assert main(args + ["--out", str(tmp_path / "a.json")]) == 0
    assert main(args + ["--out", str(tmp_path / "b.json")]) == 0

    text = (tmp_path / "a.json").read_text()
    assert text == (tmp_path / "b.json").read_text()
    assert text.endswith("\n")
    # the outer equilibria sit at +-sqrt(6), outside the default box
    equilibria = json.loads(text)["equilibria"]
    assert len(equilibria) == 1
    assert max(abs(v) for v in equilibria[0]["point"]) < 1e-8


def test_analyze_param_override(capsys):
    code = main(["analyze", "--builtin", "chua3", "--param", "alpha=-0.2", "--grid", "6"])
    document = json.loads(capsys.readouterr().out)
    assert code == 0
    assert document["model"]["params"]["alpha"] == -0.2
    assert document["verdicts"]["jacobian"] == "NoCanardEvidence"


def test_usage_errors(capsys, tmp_path):
    assert main(["analyze", "--builtin", "chua3", "--param", "beta=1"]) == 2
    assert main(["analyze", "--builtin", "chua3", "--param", "alpha"]) == 2
    assert main(["analyze", "--builtin", "chua3", "--param", "alpha=abc"]) == 2
    assert main(["analyze", "--builtin", "chua3", "--box", "x=0"]) == 2
    assert main(["analyze", "--builtin", "chua3", "--box", "w=0:1"]) == 2
    assert main(["analyze", "--model", str(tmp_path / "missing.json")]) == 2
    assert main(["simulate", "--builtin", "chua3", "--x0", "1,2", "--out", str(tmp_path / "run")]) == 2
    assert main(["simulate", "--builtin", "chua3", "--t-end", "-1", "--out", str(tmp_path / "run")]) == 2
    assert main(["simulate", "--builtin", "chua3", "--rtol", "0", "--out", str(tmp_path / "run")]) == 2

    err = capsys.readouterr().err
    print(err)
    assert "canard-lab: error:" in err

    # argparse handles the structural errors itself
    with pytest.raises(SystemExit) as exc_info:
        main(["analyze"])
    assert exc_info.value.code == 2

    with pytest.raises(SystemExit):
        main(["analyze", "--builtin", "lorenz"])


def test_simulate(tmp_path):
    prefix = tmp_path / "runs" / "chua3"
    code = main(
        ["simulate", "--builtin", "chua3", "--t-end", "2", "--transient", "0", "--samples", "21", "--grid", "6"]
        + ["--out", str(prefix)]
    )
    assert code == 0

    for suffix in [".csv", ".plot", ".json"]:
        assert (tmp_path / "runs" / f"chua3{suffix}").exists()

    df = pd.read_csv(tmp_path / "runs" / "chua3.csv")
    assert list(df.columns) == ["t", "x", "y", "z"]
    assert len(df) == 21

    record = json.loads((tmp_path / "runs" / "chua3.json").read_text())
    print(f"{record['metrics'] = }")
    assert record["n_samples"] == 21
    assert record["files"] == {"csv": "chua3.csv", "plot": "chua3.plot", "images": []}
    assert record["t_span"] == [0.0, 2.0]
    assert record["metrics"]["closest_approach_to_M"] >= 0.0


def test_simulate_with_x0(tmp_path):
    code = main(
        ["simulate", "--builtin", "chua3", "--x0", "0.3,-0.2,1.7", "--t-end", "1", "--method", "rk4"]
        + ["--fixed-step", "0.01", "--grid", "6", "--out", str(tmp_path / "run")]
    )
    assert code == 0
    record = json.loads((tmp_path / "run.json").read_text())
    assert record["initial_state"] == [0.3, -0.2, 1.7]
    assert record["solver"]["method"] == "rk4"


def test_sweep(tmp_path, capsys):
    out = tmp_path / "alpha_sweep"
    code = main(
        ["sweep", "--builtin", "chua3", "--parameter", "alpha", "--values", "0.1,-0.1", "--grid", "6"]
        + ["--out", str(out)]
    )
    assert code == 0
    assert capsys.readouterr().out.strip() == str(out)

    summary = json.loads((out / "summary.json").read_text())
    records = summary["records"]
    assert summary["parameter"] == "alpha"
    assert [r["value"] for r in records] == [0.1, -0.1]
    assert [r["jacobian_verdict"] for r in records] == ["CanardBySaddle", "NoCanardEvidence"]
    assert all(r["status"] == "ok" for r in records)
    assert (out / records[0]["output"] / "report.json").exists()

    df = pd.read_csv(out / "summary.csv")
    assert len(df) == 2
    assert "jacobian_verdict" in df.columns

    # the existing folder is never overwritten
    assert main(["sweep", "--builtin", "chua3", "--parameter", "alpha", "--values", "0.2", "--out", str(out)]) == 0
    assert (tmp_path / "alpha_sweep_0" / "summary.json").exists()


def test_sweep_brackets_chua4_threshold(tmp_path):
    out = tmp_path / "alpha2_sweep"
    code = main(
        ["sweep", "--builtin", "chua4", "--parameter", "alpha2", "--values", "0.90,0.95", "--grid", "5"]
        + ["--out", str(out)]
    )
    assert code == 0

    records = json.loads((out / "summary.json").read_text())["records"]
    print(f"{records = }")
    # the saddle threshold -2 c2 / (3 + 2 c2) = 0.931918 lies between the two values
    assert [r["jacobian_verdict"] for r in records] == ["DegenerateCanardBySaddle", "NoCanardEvidence"]
    assert [list(r["thresholds"].values()) for r in records] == [[True], [False]]
    assert all(r["status"] == "ok" and r["n_points"] == 2 for r in records)


def test_sweep_simulate_mode(tmp_path):
    result = run_sweep(
        chua3(),
        "epsilon",
        [0.05, 0.1],
        tmp_path / "eps",
        mode="simulate",
        t_span=(0.0, 1.0),
        transient=0.0,
        n_samples=11,
        grid_per_axis=6,
    )
    assert result.info.n_failed == 0
    for record in result.records:
        folder = result.out_dir / record["output"]
        assert (folder / "trajectory.csv").exists()
        assert record["n_samples"] == 11


def test_sweep_records_failures(tmp_path):
    result = run_sweep(chua3(), "epsilon", [0.05, 0.0], tmp_path / "eps", mode="simulate", t_span=(0.0, 0.5))
    print(f"{result.records = }")
    assert [r["status"] for r in result.records] == ["ok", "failed"]
    assert result.records[1]["error"].startswith("ModelException")
    assert result.info.n_failed == 1


def test_empty_sweep(tmp_path):
    result = run_sweep(chua3(), "alpha", [], tmp_path / "empty")
    assert result.records == []
    assert json.loads((result.out_dir / "summary.json").read_text())["records"] == []
    assert (result.out_dir / "summary.csv").exists()


def test_sweep_arguments(tmp_path):
    with pytest.raises(ModelException):
        ParameterSweep(chua3(), "beta", [1.0], tmp_path)
    with pytest.raises(ValueError):
        ParameterSweep(chua3(), "alpha", [1.0], tmp_path, mode="plot")


def test_thread_count(monkeypatch):
    monkeypatch.setenv("CANARD_LAB_THREADS", "3")
    assert thread_count() == 3

    for raw in ["abc", "0", "-2"]:
        monkeypatch.setenv("CANARD_LAB_THREADS", raw)
        assert thread_count() == 1

    monkeypatch.delenv("CANARD_LAB_THREADS")
    assert 1 <= thread_count() <= 4


def test_parse_values():
    assert parse_values("0.1, 0.2,0.3") == [0.1, 0.2, 0.3]
    assert parse_values("") == []
    assert parse_values("0:1:5") == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert parse_values("2:3:1") == [2.0]
    assert parse_values("-1,0:1:3") == [-1.0, 0.0, 0.5, 1.0]

    for text in ["a", "0:1", "0:1:0", "nan", "inf"]:
        with pytest.raises(ValueError):
            parse_values(text)


def test_parse_helpers():
    assert parse_params(["alpha=0.5", " beta = -1 "]) == {"alpha": 0.5, "beta": -1.0}
    assert parse_box(["x=-1:2"]) == {"x": (-1.0, 2.0)}
    assert parse_point("1,2.5") == [1.0, 2.5]
    assert parse_point(None) is None

    for fn, arg in [(parse_params, ["=1"]), (parse_box, ["x=1:2:3"]), (parse_point, "1,,2")]:
        with pytest.raises(UsageError):
            fn(arg)
