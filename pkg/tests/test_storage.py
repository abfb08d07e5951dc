from __future__ import annotations

from pathlib import Path
import json

import numpy as np
import pytest
from openpyxl import load_workbook

from irs_seguro.harness import TRACE_COLUMNS, AggregateRow, TrialRow
from irs_seguro.perf_metrics import DesignSolution
from irs_seguro.storage import (
    SolutionFileError,
    load_solution,
    read_trial_csv,
    save_solution,
    write_summary_xlsx,
    write_trace_csv,
    write_trial_csv,
)
from irs_seguro.sysconfig import SystemConfig


def _close_workbook(workbook) -> None:
    close = getattr(workbook, "close", None)
    if callable(close):
        close()


def _trial_row(trial: int, sweep_value: float | None) -> TrialRow:
    return TrialRow(
        trial=trial,
        seed=100 + trial,
        scheme="proposed",
        sweep_var="d" if sweep_value is not None else "",
        sweep_value=sweep_value,
        sum_rate_bps_hz=3.141592653589793,
        secrecy_rate_bps_hz=0.1 * trial,
        feasible=True,
        audit_feasible=trial % 2 == 0,
        iterations=7,
        solve_time_s=1.25,
        n_reflect=3,
        harvested_mw=0.0385,
        rank_ratio_max=2.5e-6,
    )


def _aggregate_row(scheme: str, sweep_value: float | None) -> AggregateRow:
    return AggregateRow(
        scheme=scheme,
        sweep_var="" if sweep_value is None else "tau",
        sweep_value=sweep_value,
        trials=20,
        failures=1,
        mean_sum_rate=5.123456,
        ci_sum_rate=0.25,
        mean_secrecy_rate=2.5,
        ci_secrecy_rate=0.125,
    )


def _solution() -> DesignSolution:
    return DesignSolution(
        w=np.array([[1.0 + 2.0j, -0.5j], [0.25, 3.0]]),
        z_cov=np.array([[0.5, 0.1j], [-0.1j, 0.5]]),
        mode=np.array([1, 0, 1]),
        theta=np.array([7, 0, 2]),
        phase_levels=8,
    )


def test_trial_csv_keeps_metadata_and_reads_back(tmp_path: Path) -> None:
    csv_path = tmp_path / "saida" / "sweep.csv"
    rows = [_trial_row(0, 10.0), _trial_row(1, None)]

    write_trial_csv(csv_path, rows, metadata=["seed0 = 100"], config=SystemConfig(m_t=2))

    lines = csv_path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "# seed0 = 100"
    assert "# config: m_t = 2" in lines
    assert "# config: geometry.d = 10.0" in lines
    header = next(line for line in lines if not line.startswith("#"))
    assert header.startswith("trial,seed,scheme,sweep_var,sweep_value,sum_rate_bps_hz")
    assert lines[-1].split(",")[4] == ""
    assert ",false," in lines[-1]

    assert read_trial_csv(csv_path) == rows


def test_read_trial_csv_missing_file(tmp_path: Path) -> None:
    with pytest.raises(FileNotFoundError):
        read_trial_csv(tmp_path / "nao_existe.csv")


def test_write_trace_csv(tmp_path: Path) -> None:
    trace_path = tmp_path / "trace.csv"
    rows = [
        {
            "trial": 0,
            "seed": 1,
            "scheme": "ao",
            "iteration": 1,
            "objective": 0.5,
            "merit": "",
            "solve_time_s": 0.1,
            "status": "converged",
        },
    ]

    write_trace_csv(trace_path, rows)

    lines = trace_path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == ",".join(TRACE_COLUMNS)
    assert lines[1] == "0,1,ao,1,0.5,,0.1,converged"


def test_write_summary_xlsx_layout(tmp_path: Path) -> None:
    xlsx_path = tmp_path / "resumo.xlsx"
    rows = [_aggregate_row("proposed", None), _aggregate_row("b1_no_irs_mrt", 2.0)]

    write_summary_xlsx(xlsx_path, rows, title="Varredura de tau")

    workbook = load_workbook(xlsx_path)
    try:
        sheet = workbook["resumo"]
        assert sheet["A1"].value == "Varredura de tau"
        assert "A1:I1" in {str(item) for item in sheet.merged_cells.ranges}
        assert sheet["A2"].value == "Esquema"
        assert sheet["F2"].value == "Soma media (bps/Hz)"
        assert [sheet.cell(row=3, column=col).value for col in range(1, 6)] == [
            "proposed", "-", None, 20, 1,
        ]
        assert sheet["C4"].value == 2.0
        assert sheet["B4"].value == "tau"
        assert sheet["F3"].value == pytest.approx(5.123456)
        assert sheet["F3"].number_format == "0.0000"
        assert sheet["I4"].number_format == "0.0000"
        assert sheet.freeze_panes == "A3"
        assert sheet.auto_filter.ref == "A2:I4"
        assert sheet["A2"].fill.fgColor.rgb.endswith("D9E1F2")
        assert sheet["A4"].fill.fgColor.rgb.endswith("ECF3FB")
    finally:
        _close_workbook(workbook)


def test_solution_json_round_trip(tmp_path: Path) -> None:
    path = tmp_path / "solucao.json"
    original = _solution()

    save_solution(path, original, seed=42, scheme="proposed")
    loaded, seed, scheme = load_solution(path)

    assert (seed, scheme) == (42, "proposed")
    np.testing.assert_array_equal(loaded.w, original.w)
    np.testing.assert_array_equal(loaded.z_cov, original.z_cov)
    np.testing.assert_array_equal(loaded.mode, original.mode)
    np.testing.assert_array_equal(loaded.theta, original.theta)
    assert loaded.phase_levels == 8
    assert loaded.n_reflect == 2


def test_load_solution_rejects_bad_files(tmp_path: Path) -> None:
    with pytest.raises(FileNotFoundError):
        load_solution(tmp_path / "ausente.json")

    broken = tmp_path / "quebrado.json"
    broken.write_text("{", encoding="utf-8")
    with pytest.raises(SolutionFileError):
        load_solution(broken)

    other = tmp_path / "outro.json"
    other.write_text(json.dumps({"format": "outro/v2"}), encoding="utf-8")
    with pytest.raises(SolutionFileError):
        load_solution(other)

    path = tmp_path / "incompleto.json"
    save_solution(path, _solution(), seed=1, scheme="ao")
    payload = json.loads(path.read_text(encoding="utf-8"))
    del payload["w"]
    path.write_text(json.dumps(payload), encoding="utf-8")
    with pytest.raises(SolutionFileError):
        load_solution(path)

    payload = json.loads(path.read_text(encoding="utf-8"))
    payload.update(
        w={"shape": [2, 2], "re": [1.0], "im": [0.0]},
        z_cov={"shape": [1, 1], "re": [0.0], "im": [0.0]},
        mode=[0],
        theta=[0],
        phase_levels=8,
    )
    path.write_text(json.dumps(payload), encoding="utf-8")
    with pytest.raises(SolutionFileError):
        load_solution(path)


def test_load_solution_runs_consistency_checks(tmp_path: Path) -> None:
    path = tmp_path / "solucao.json"
    save_solution(path, _solution(), seed=1, scheme="proposed")
    payload = json.loads(path.read_text(encoding="utf-8"))
    payload.update(mode=[2, 0, 1], theta=[8, 0, 2])
    path.write_text(json.dumps(payload), encoding="utf-8")

    with pytest.raises(SolutionFileError) as excinfo:
        load_solution(path)

    message = str(excinfo.value)
    assert "modos: modos fora de {0,1}: [2, 0, 1]" in message
    assert "fases: indices fora de 0..7: [8, 0, 2]" in message
    assert "dimensoes" not in message
