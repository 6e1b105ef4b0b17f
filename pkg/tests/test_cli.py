import csv
import io
import json

import numpy as np
import pytest

from seocert import cli, sdp_adapter as sa
from seocert.scenarios import maximally_entangled, mub_assemblage


def run_cli(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def strip_times(obj):
    if isinstance(obj, dict):
        return {k: strip_times(v) for k, v in obj.items() if k != "wall_time"}
    if isinstance(obj, list):
        return [strip_times(v) for v in obj]
    return obj


# ---------------------------------------------------------------------------
# certify


@pytest.mark.slow
def test_certify_mub_above_threshold_exits_zero(tmp_path, capsys):
    out = tmp_path / "report.json"
    code, _, err = run_cli(["certify", "--scenario", "mub", "--d", "3", "--n-m", "4", "--k", "3",
                            "--tier", "dps", "--t", "0.95", "-o", str(out)], capsys)
    assert code == cli.EXIT_CERTIFIED, err
    doc = json.loads(out.read_text())
    cli.validate_report(doc)
    assert doc["verdict"] == "CERTIFIED_AT_LEAST" and doc["certified_count"] == 4
    assert doc["seo_rank"] == 3


@pytest.mark.parametrize("scenario", ["mub", "hollow-triangle"])
def test_certify_zero_visibility_is_inconclusive(scenario, capsys):
    code, out, _ = run_cli(["certify", "--scenario", scenario, "--d", "2", "--n-m", "3", "--k", "2",
                            "--tier", "ppt", "--t", "0"], capsys)
    assert code == cli.EXIT_INCONCLUSIVE
    doc = json.loads(out)
    cli.validate_report(doc)
    assert doc["verdict"] == "INCONCLUSIVE" and doc["certified_count"] is None


def test_certify_qubit_above_threshold(capsys):
    code, out, _ = run_cli(["certify", "--d", "2", "--n-m", "3", "--k", "2", "--tier", "ppt",
                            "--t", "0.9"], capsys)
    assert code == cli.EXIT_CERTIFIED
    doc = json.loads(out)
    # the cascade stops at the first certifying tier
    assert doc["stages"][-1]["verdict"] == "CERTIFIED_AT_LEAST"
    assert doc["stages"][0]["tier"] == "KCOMPAT"


def test_certify_max_visibility_report(capsys):
    code, out, _ = run_cli(["certify", "--d", "2", "--n-m", "3", "--k", "2", "--tier", "kcompat",
                            "--mode", "max-visibility"], capsys)
    assert code == cli.EXIT_INCONCLUSIVE
    doc = json.loads(out)
    cli.validate_report(doc)
    assert abs(doc["t_c_raw"] - np.sqrt(3) / 2) < 1e-4
    assert doc["t_c"] == round(doc["t_c_raw"], 4)


@pytest.mark.parametrize("content", ["{not json", '{"measurements": {"n_m": 1}}',
                                     '{"measurements": {"n_m": 1, "n_a": 2, "d": 2, '
                                     '"effects": [[[[[1,0],[0,0]],[[0,0],[0,0]]],'
                                     '[[[0,0],[0,0]],[[0,0],[0,0]]]]]}}'])
def test_malformed_input_exits_one(tmp_path, capsys, content):
    path = tmp_path / "bad.json"
    path.write_text(content)
    code, _, err = run_cli(["certify", "--scenario", "file", "--input", str(path), "--k", "1",
                            "--tier", "kcompat"], capsys)
    assert code == cli.EXIT_ERROR
    assert err.startswith("error:")


def test_missing_input_file_exits_one(tmp_path, capsys):
    code, _, _ = run_cli(["certify", "--scenario", "file", "--input", str(tmp_path / "none.json")],
                         capsys)
    assert code == cli.EXIT_ERROR


def test_file_input_round_trip(tmp_path, capsys):
    m = mub_assemblage(2, 3)
    doc = cli.dump_input(m, maximally_entangled(2))
    back, state = cli.parse_input(json.loads(json.dumps(doc)))
    assert np.allclose(back.effects, m.effects) and np.allclose(state, maximally_entangled(2))
    path = tmp_path / "in.json"
    path.write_text(json.dumps(doc))
    base = ["certify", "--k", "2", "--tier", "kcompat", "--t", "0.9"]
    code_file, out_file, _ = run_cli(base + ["--scenario", "file", "--input", str(path)], capsys)
    code_mub, out_mub, _ = run_cli(base + ["--scenario", "mub", "--d", "2", "--n-m", "3"], capsys)
    assert code_file == code_mub == cli.EXIT_CERTIFIED
    assert strip_times(json.loads(out_file))["verdict"] == strip_times(json.loads(out_mub))["verdict"]


def test_state_dimension_mismatch_is_input_error():
    doc = cli.dump_input(mub_assemblage(2, 2), np.eye(9) / 9)
    doc["state"]["dims"] = [3, 3]
    with pytest.raises(cli.InputError):
        cli.parse_input(doc)


def test_cap_refusal_exits_one(capsys):
    code, _, err = run_cli(["certify", "--d", "3", "--n-m", "4", "--k", "3", "--tier", "dps",
                            "--level", "3"], capsys)
    assert code == cli.EXIT_ERROR and "allow" in err.lower()


def test_reports_are_reproducible(capsys):
    argv = ["certify", "--d", "2", "--n-m", "2", "--k", "1", "--tier", "kcompat", "--t", "0.8"]
    _, first, _ = run_cli(argv, capsys)
    _, second, _ = run_cli(argv, capsys)
    assert strip_times(json.loads(first)) == strip_times(json.loads(second))


# ---------------------------------------------------------------------------
# solver settings from the environment


def test_env_overrides_and_flag_precedence(monkeypatch):
    monkeypatch.setenv("SEOCERT_SOLVER", "scs")
    monkeypatch.setenv("SEOCERT_MAX_ITER", "1234")
    monkeypatch.setenv("SEOCERT_TIME_LIMIT", "12.5")
    monkeypatch.setenv("SEOCERT_TOL", "1e-7")
    args = cli.build_parser().parse_args(["certify"])
    s = cli.solver_settings(args)
    assert (s.solver, s.max_iter, s.time_limit, s.tol) == ("scs", 1234, 12.5, 1e-7)
    args = cli.build_parser().parse_args(["certify", "--solver", "clarabel", "--max-iter", "9"])
    s = cli.solver_settings(args)
    assert s.solver == "clarabel" and s.max_iter == 9 and s.time_limit == 12.5


def test_defaults_without_env(monkeypatch):
    for name in ("SEOCERT_SOLVER", "SEOCERT_MAX_ITER", "SEOCERT_TIME_LIMIT", "SEOCERT_TOL"):
        monkeypatch.delenv(name, raising=False)
    s = cli.solver_settings(cli.build_parser().parse_args(["certify"]))
    assert s == sa.SolverSettings()
    assert (s.max_iter, s.time_limit) == (50_000, 600.0)


@pytest.mark.parametrize("name,value", [("SEOCERT_MAX_ITER", "many"), ("SEOCERT_SOLVER", "mosek"),
                                        ("SEOCERT_TOL", "-1")])
def test_bad_env_values_exit_one(monkeypatch, capsys, name, value):
    monkeypatch.setenv(name, value)
    code, _, err = run_cli(["certify", "--d", "2", "--n-m", "2", "--k", "1", "--tier", "kcompat"],
                           capsys)
    assert code == cli.EXIT_ERROR and "error" in err


# ---------------------------------------------------------------------------
# sweep


def _sweep(capsys, grid, *extra):
    code, out, err = run_cli(["sweep", "--d", "2", "--n-m", "3", "--k", "2", "--tier", "kcompat",
                              "--grid", grid, "--format", "json", *extra], capsys)
    assert code == 0, err
    return json.loads(out), err


def test_sweep_brackets_qubit_threshold(capsys):
    rows, _ = _sweep(capsys, "0.90,0.80,0.85")
    assert [r["t"] for r in rows] == [0.80, 0.85, 0.90]
    assert [r["verdict"] for r in rows] == ["feasible", "feasible", "infeasible"]
    assert all(r["monotone"] for r in rows)


def test_sweep_zero_is_feasible(capsys):
    rows, _ = _sweep(capsys, "0")
    assert rows[0]["verdict"] == "feasible"


def test_sweep_full_visibility_with_k_measurements(capsys):
    code, out, _ = run_cli(["sweep", "--d", "3", "--n-m", "2", "--k", "2", "--tier", "ppt",
                            "--grid", "1", "--format", "json"], capsys)
    assert code == 0
    assert json.loads(out)[0]["verdict"] == "feasible"


def test_sweep_csv_has_header(capsys):
    code, out, _ = run_cli(["sweep", "--d", "2", "--n-m", "2", "--k", "1", "--tier", "kcompat",
                            "--grid", "0.5,0.9"], capsys)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert [r["verdict"] for r in rows] == ["feasible", "infeasible"]


def test_sweep_rejects_grid_outside_unit_interval(capsys):
    code, _, _ = run_cli(["sweep", "--grid", "0.5,1.5"], capsys)
    assert code == cli.EXIT_ERROR


def test_monotone_prefix_flags_inversions():
    assert cli.monotone_prefix(["feasible", "unknown", "infeasible"])
    assert not cli.monotone_prefix(["feasible", "infeasible", "feasible"])


def test_parallel_sweep_keeps_grid_order(capsys):
    serial, _ = _sweep(capsys, "0.8,0.9,0.85")
    parallel, _ = _sweep(capsys, "0.8,0.9,0.85", "--jobs", "2")
    assert strip_times(serial) == strip_times(parallel)


# ---------------------------------------------------------------------------
# table1


def test_table1_cells_gate_heavy_cell():
    light = cli.table1_cells(False)
    assert len(light) == 11
    assert (3, 4, 3, "dps", "skip") in light
    assert cli.HEAVY_CELL in cli.table1_cells(True)


def test_table1_output_with_stubbed_cells(monkeypatch, tmp_path, capsys):
    cells = [(2, 3, 2, "kcompat"), (2, 3, 2, "ppt"), (3, 4, 3, "dps", "skip")]
    monkeypatch.setattr(cli, "table1_cells", lambda heavy: cells)
    out = tmp_path / "t.csv"
    code, _, _ = run_cli(["table1", "-o", str(out)], capsys)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert list(rows[0].keys()) == cli.TABLE_COLUMNS
    assert abs(float(rows[0]["t_c"]) - 0.8660) < 1e-4
    assert abs(float(rows[1]["t_c"]) - 0.8165) < 1e-4
    assert rows[2]["solver_status"] == "SKIPPED" and rows[2]["t_c"] == ""
    again = tmp_path / "t2.json"
    run_cli(["table1", "-o", str(again)], capsys)
    doc = json.loads(again.read_text())
    assert [r["solver_status"] for r in doc] == ["OPTIMAL", "OPTIMAL", "SKIPPED"]


def test_table1_records_cell_errors_in_row(monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("solver exploded")

    monkeypatch.setattr(cli.cert, "critical_visibility", boom)
    row = cli._table_cell((2, 3, 2, "kcompat"), sa.SolverSettings())
    assert row["solver_status"].startswith("ERROR") and row["t_c"] is None
