from __future__ import annotations

import re


class ParseNumberError(ValueError):
    pass


_NON_NUMERIC = re.compile(r"[^\d,.eE+-]")
_TRUE_WORDS = {"1", "true", "sim", "yes", "on"}
_FALSE_WORDS = {"0", "false", "nao", "no", "off"}


def parse_number(text: str) -> float:
    """Parseia numeros de configuracao, aceitando virgula decimal.

    Exemplos aceitos: "1.5", "1,5", "2.1e-6", "30 dBm" (sufixo ignorado).
    """
    cleaned = _NON_NUMERIC.sub("", (text or "")).strip()
    if "," in cleaned:
        cleaned = cleaned.replace(".", "").replace(",", ".")
    try:
        return float(cleaned)
    except ValueError as exc:
        raise ParseNumberError(f"valor invalido: {text!r}") from exc


def parse_int(text: str) -> int:
    value = parse_number(text)
    if not value.is_integer():
        raise ParseNumberError(f"inteiro esperado: {text!r}")
    return int(value)


def parse_bool(text: str) -> bool:
    word = " ".join((text or "").split()).lower()
    if word in _TRUE_WORDS:
        return True
    if word in _FALSE_WORDS:
        return False
    raise ParseNumberError(f"booleano invalido: {text!r}")


def parse_number_list(text: str) -> list[float]:
    # Em listas a virgula separa itens, entao cada item usa ponto decimal.
    items = [item.strip() for item in (text or "").split(",")]
    values = [parse_number(item) for item in items if item]
    if not values:
        raise ParseNumberError(f"lista vazia: {text!r}")
    return values
