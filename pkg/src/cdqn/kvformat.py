"""Flat ``key = value`` text format shared by run configs and SCM fixtures."""

from __future__ import annotations


class KvError(ValueError):
    pass


def parse(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, blanks ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise KvError(f"line {lineno}: expected `key = value`, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise KvError(f"line {lineno}: empty key")
        out[key] = value.strip()
    return out


def format_lines(pairs: dict[str, str]) -> str:
    return "".join(f"{key} = {value}\n" for key, value in pairs.items())


def split_list(value: str) -> list[str]:
    return [part.strip() for part in value.split(",") if part.strip()]


def fmt_float(x: float) -> str:
    # repr round-trips doubles exactly
    return repr(float(x))
