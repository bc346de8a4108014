"""Flat key=value config files: one pair per line, # comments allowed."""

from __future__ import annotations

from .errors import DataError


def parse_flat(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for line_no, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise DataError(f"line {line_no}: expected key=value, got {stripped!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key in out:
            raise DataError(f"line {line_no}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def format_flat(d: dict) -> str:
    return "".join(f"{k}={d[k]}\n" for k in d)


def load_flat(path) -> dict[str, str]:
    with open(path, encoding="utf-8") as f:
        return parse_flat(f.read())


def save_flat(path, d: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_flat(d))


def get_int(d: dict, key: str, default: int) -> int:
    return int(d[key]) if key in d else default


def get_float(d: dict, key: str, default: float) -> float:
    return float(d[key]) if key in d else default


def get_bool(d: dict, key: str, default: bool) -> bool:
    if key not in d:
        return default
    raw = d[key].lower()
    if raw in ("true", "1", "yes"):
        return True
    if raw in ("false", "0", "no"):
        return False
    raise DataError(f"{key}: expected a boolean, got {d[key]!r}")


def get_str(d: dict, key: str, default: str) -> str:
    return d.get(key, default)
