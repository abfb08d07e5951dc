from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable


class ConsistencyError(RuntimeError):
    pass


@dataclass(frozen=True)
class Check:
    name: str
    validate: Callable[[Any], tuple[bool, str]]


def describe_subject(subject: object) -> str:
    name = getattr(subject, "name", None)
    if name:
        return f"objeto={subject.__class__.__name__}; nome={name!r}"
    return f"objeto={subject.__class__.__name__}"


def collect_failures(subject: object, checks: list[Check]) -> list[str]:
    failures: list[str] = []
    for check in checks:
        try:
            ok, detail = check.validate(subject)
        except Exception as exc:
            failures.append(
                f"{check.name}: excecao {exc.__class__.__name__} {exc}"
            )
            continue
        if not ok:
            failures.append(f"{check.name}: {detail}")
    return failures


def ensure_consistency(
    subject: object,
    *,
    source: str,
    checks: list[Check],
) -> None:
    failures = collect_failures(subject, checks)
    if failures:
        detail = " | ".join(failures)
        raise ConsistencyError(
            f"verificacao de consistencia falhou em {source}; "
            f"falhas: {detail}; {describe_subject(subject)}"
        )
