from __future__ import annotations

from dataclasses import dataclass

import pytest

from irs_seguro.checks import Check, ConsistencyError, collect_failures, ensure_consistency


@dataclass
class _Subject:
    name: str
    value: float


def _positive() -> Check:
    return Check("positivo", lambda subject: (subject.value > 0, "valor deve ser > 0"))


def _explodes() -> Check:
    def validate(subject):
        raise RuntimeError("quebrou")

    return Check("explode", validate)


def test_collect_failures_reports_detail_and_exceptions() -> None:
    failures = collect_failures(_Subject("x", -1.0), [_positive(), _explodes()])

    assert failures == [
        "positivo: valor deve ser > 0",
        "explode: excecao RuntimeError quebrou",
    ]


def test_ensure_consistency_passes_and_raises() -> None:
    ensure_consistency(_Subject("ok", 1.0), source="teste", checks=[_positive()])

    with pytest.raises(ConsistencyError) as excinfo:
        ensure_consistency(_Subject("ruim", 0.0), source="teste", checks=[_positive()])

    message = str(excinfo.value)
    assert "teste" in message
    assert "nome='ruim'" in message
