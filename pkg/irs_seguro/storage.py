from __future__ import annotations

from dataclasses import asdict, fields
from pathlib import Path
import csv
import json
import math
from typing import Iterable, Sequence

import numpy as np
from openpyxl import Workbook
from openpyxl.styles import Alignment, Border, Font, PatternFill, Side
from openpyxl.utils import get_column_letter

from irs_seguro.checks import Check, ConsistencyError, ensure_consistency
from irs_seguro.harness import CSV_COLUMNS, TRACE_COLUMNS, AggregateRow, TrialRow
from irs_seguro.perf_metrics import DesignSolution
from irs_seguro.sysconfig import SystemConfig, config_lines


_SOLUTION_FORMAT = "irs-seguro/solucao-v1"
_RATE_NUMBER_FORMAT = "0.0000"
_SUMMARY_HEADERS = (
    "Esquema",
    "Variavel",
    "Valor",
    "Trials",
    "Falhas",
    "Soma media (bps/Hz)",
    "IC 95% soma",
    "Sigilo medio (bps/Hz)",
    "IC 95% sigilo",
)
_COLUMN_WIDTHS = (26.0, 10.0, 10.0, 8.0, 8.0, 20.0, 12.0, 20.0, 12.0)
_HEADER_TOP_FILL = PatternFill(fill_type="solid", fgColor="DCE6F1")
_HEADER_FILL = PatternFill(fill_type="solid", fgColor="D9E1F2")
_ROW_ODD_FILL = PatternFill(fill_type="solid", fgColor="FFFFFF")
_ROW_EVEN_FILL = PatternFill(fill_type="solid", fgColor="ECF3FB")
_BORDER_SIDE = Side(style="thin", color="9CB6D9")
_CELL_BORDER = Border(
    left=_BORDER_SIDE,
    right=_BORDER_SIDE,
    top=_BORDER_SIDE,
    bottom=_BORDER_SIDE,
)
_HEADER_FONT = Font(name="Calibri", size=11, bold=True, color="1F2937")
_BODY_FONT = Font(name="Calibri", size=11, bold=False, color="000000")
_ALIGN_CENTER = Alignment(horizontal="center", vertical="center")
_ALIGN_RIGHT = Alignment(horizontal="right", vertical="center")
_ALIGN_LEFT = Alignment(horizontal="left", vertical="center")


class SolutionFileError(ValueError):
    pass


_SOLUTION_CHECKS = [
    Check(
        "dimensoes",
        lambda s: (
            s.mode.shape == s.theta.shape and s.z_cov.shape == (s.w.shape[-1],) * 2,
            f"w {s.w.shape}, z_cov {s.z_cov.shape}, mode {s.mode.shape}, theta {s.theta.shape}",
        ),
    ),
    Check(
        "modos",
        lambda s: (bool(np.isin(s.mode, (0, 1)).all()), f"modos fora de {{0,1}}: {s.mode.tolist()}"),
    ),
    Check(
        "fases",
        lambda s: (
            bool(((s.theta >= 0) & (s.theta < s.phase_levels)).all()),
            f"indices fora de 0..{s.phase_levels - 1}: {s.theta.tolist()}",
        ),
    ),
    Check(
        "z_hermitiana",
        lambda s: (bool(np.allclose(s.z_cov, s.z_cov.conj().T)), "z_cov nao e hermitiana"),
    ),
]


def _format_value(value: object) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return repr(value)
    return str(value)


def _metadata_lines(metadata: Iterable[str], config: SystemConfig | None) -> list[str]:
    lines = [f"# {line}" for line in metadata]
    if config is not None:
        lines.extend(f"# config: {line}" for line in config_lines(config))
    return lines


def write_trial_csv(
    path: str | Path,
    rows: Sequence[TrialRow],
    *,
    metadata: Iterable[str] = (),
    config: SystemConfig | None = None,
) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", encoding="utf-8", newline="") as handle:
        for line in _metadata_lines(metadata, config):
            handle.write(line + "\n")
        writer = csv.writer(handle, delimiter=",", quoting=csv.QUOTE_MINIMAL)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            values = asdict(row)
            writer.writerow([_format_value(values[column]) for column in CSV_COLUMNS])
    return target


def _parse_bool(text: str) -> bool:
    return text.strip().lower() in ("true", "1")


def read_trial_csv(path: str | Path) -> list[TrialRow]:
    source = Path(path)
    if not source.exists():
        raise FileNotFoundError(source)
    with source.open("r", encoding="utf-8", newline="") as handle:
        lines = [line for line in handle if line.strip() and not line.startswith("#")]
    reader = csv.DictReader(lines, delimiter=",")
    converters = {
        item.name: item.type for item in fields(TrialRow)
    }
    rows: list[TrialRow] = []
    for raw in reader:
        values: dict[str, object] = {}
        for column in CSV_COLUMNS:
            text = (raw.get(column) or "").strip()
            kind = converters[column]
            if kind == "bool":
                values[column] = _parse_bool(text)
            elif kind == "int":
                values[column] = int(text)
            elif kind == "str":
                values[column] = text
            elif column == "sweep_value":
                values[column] = float(text) if text else None
            else:
                values[column] = float(text)
        rows.append(TrialRow(**values))
    return rows


def write_trace_csv(path: str | Path, rows: Sequence[dict[str, object]]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, delimiter=",", quoting=csv.QUOTE_MINIMAL)
        writer.writerow(TRACE_COLUMNS)
        for row in rows:
            writer.writerow([_format_value(row.get(column)) for column in TRACE_COLUMNS])
    return target


def _apply_visual_style(sheet, last_row: int) -> None:
    last_column = len(_SUMMARY_HEADERS)
    last_letter = get_column_letter(last_column)
    sheet.merge_cells(f"A1:{last_letter}1")
    for index, width in enumerate(_COLUMN_WIDTHS, start=1):
        sheet.column_dimensions[get_column_letter(index)].width = width

    sheet.row_dimensions[1].height = 22
    sheet.row_dimensions[2].height = 20
    sheet.freeze_panes = "A3"
    sheet.auto_filter.ref = f"A2:{last_letter}{max(2, last_row)}"

    for col_index in range(1, last_column + 1):
        top_cell = sheet.cell(row=1, column=col_index)
        top_cell.fill = _HEADER_TOP_FILL
        top_cell.font = _HEADER_FONT
        top_cell.alignment = _ALIGN_CENTER
        top_cell.border = _CELL_BORDER

        header_cell = sheet.cell(row=2, column=col_index)
        header_cell.fill = _HEADER_FILL
        header_cell.font = _HEADER_FONT
        header_cell.alignment = _ALIGN_CENTER
        header_cell.border = _CELL_BORDER

    for row in range(3, last_row + 1):
        row_fill = _ROW_EVEN_FILL if row % 2 == 0 else _ROW_ODD_FILL
        for col_index in range(1, last_column + 1):
            cell = sheet.cell(row=row, column=col_index)
            cell.fill = row_fill
            cell.font = _BODY_FONT
            cell.border = _CELL_BORDER
            cell.alignment = _ALIGN_LEFT if col_index == 1 else _ALIGN_RIGHT


def write_summary_xlsx(
    path: str | Path,
    aggregates: Sequence[AggregateRow],
    *,
    title: str = "Resumo da simulacao",
) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    workbook = Workbook()
    try:
        sheet = workbook.active
        sheet.title = "resumo"
        sheet["A1"] = title
        for col_index, header in enumerate(_SUMMARY_HEADERS, start=1):
            sheet.cell(row=2, column=col_index).value = header
        for row_index, item in enumerate(aggregates, start=3):
            values = (
                item.scheme,
                item.sweep_var or "-",
                item.sweep_value,
                item.trials,
                item.failures,
                item.mean_sum_rate,
                item.ci_sum_rate,
                item.mean_secrecy_rate,
                item.ci_secrecy_rate,
            )
            for col_index, value in enumerate(values, start=1):
                cell = sheet.cell(row=row_index, column=col_index)
                cell.value = value
                if col_index >= 6:
                    cell.number_format = _RATE_NUMBER_FORMAT
        _apply_visual_style(sheet, len(aggregates) + 2)
        workbook.save(target)
    finally:
        close = getattr(workbook, "close", None)
        if callable(close):
            close()
    return target


def _complex_to_json(values: np.ndarray) -> dict[str, object]:
    array = np.asarray(values, dtype=complex)
    return {
        "shape": list(array.shape),
        "re": array.real.ravel().tolist(),
        "im": array.imag.ravel().tolist(),
    }


def _complex_from_json(payload: dict[str, object]) -> np.ndarray:
    shape = tuple(int(size) for size in payload["shape"])
    real = np.asarray(payload["re"], dtype=float)
    imag = np.asarray(payload["im"], dtype=float)
    if real.size != imag.size or real.size != int(np.prod(shape)):
        raise SolutionFileError("tamanhos inconsistentes no arquivo de solucao")
    return (real + 1j * imag).reshape(shape)


def save_solution(
    path: str | Path,
    solution: DesignSolution,
    *,
    seed: int,
    scheme: str,
) -> Path:
    payload = {
        "format": _SOLUTION_FORMAT,
        "seed": int(seed),
        "scheme": scheme,
        "phase_levels": int(solution.phase_levels),
        "mode": [int(value) for value in solution.mode],
        "theta": [int(value) for value in solution.theta],
        "w": _complex_to_json(solution.w),
        "z_cov": _complex_to_json(solution.z_cov),
    }
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return target


def load_solution(path: str | Path) -> tuple[DesignSolution, int, str]:
    """Retorna (solucao, semente, esquema) gravados por `save_solution`."""
    source = Path(path)
    if not source.exists():
        raise FileNotFoundError(source)
    try:
        payload = json.loads(source.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SolutionFileError(f"JSON invalido em {source}: {exc}") from exc
    if payload.get("format") != _SOLUTION_FORMAT:
        raise SolutionFileError(f"formato desconhecido: {payload.get('format')!r}")
    try:
        solution = DesignSolution(
            w=_complex_from_json(payload["w"]),
            z_cov=_complex_from_json(payload["z_cov"]),
            mode=np.asarray(payload["mode"], dtype=int),
            theta=np.asarray(payload["theta"], dtype=int),
            phase_levels=int(payload["phase_levels"]),
        )
    except KeyError as exc:
        raise SolutionFileError(f"campo ausente no arquivo de solucao: {exc}") from exc
    try:
        ensure_consistency(solution, source=str(source), checks=_SOLUTION_CHECKS)
    except ConsistencyError as exc:
        raise SolutionFileError(str(exc)) from exc
    return solution, int(payload.get("seed", 0)), str(payload.get("scheme", ""))
