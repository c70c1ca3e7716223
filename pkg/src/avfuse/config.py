"""Flat key=value configuration files.

One ``key = value`` pair per line; ``#`` starts a comment; blank lines are
ignored. Values are parsed as int, then float, then bool (``true``/``false``),
falling back to the raw string. Floats are written back via ``repr`` so a
save/load cycle reproduces them bit-exactly.
"""

from __future__ import annotations

from pathlib import Path

__all__ = ["ConfigError", "parse_value", "format_value", "load_config", "save_config"]


class ConfigError(Exception):
    """Malformed config file or an invalid option value."""


def parse_value(text: str):
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    if text.lower() == "true":
        return True
    if text.lower() == "false":
        return False
    return text


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    text = str(value)
    if "\n" in text or "#" in text:
        raise ConfigError(f"value {text!r} cannot be written to a config line")
    return text


def load_config(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(str(p))
    out: dict = {}
    for lineno, raw in enumerate(p.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{p}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"{p}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{p}:{lineno}: duplicate key {key!r}")
        out[key] = parse_value(value)
    return out


def save_config(path, cfg: dict) -> None:
    lines = [f"{key} = {format_value(cfg[key])}" for key in sorted(cfg)]
    Path(path).write_text("\n".join(lines) + "\n")
