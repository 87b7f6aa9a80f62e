"""Flat key=value config files.

One ``key = value`` per line.  Blank lines and lines starting with ``#`` are
ignored.  Values are uninterpreted strings; the consumer decides their types
(see ``harness.from_mapping`` for the experiment keys).  Keys may not repeat.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {ln}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"config line {ln}: empty key")
        if key in out:
            raise ConfigError(f"config line {ln}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def load_config(path) -> dict[str, str]:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text())


def dump_config(mapping: dict[str, str]) -> str:
    """Canonical text form: sorted keys, one per line."""
    return "".join(f"{k} = {mapping[k]}\n" for k in sorted(mapping))


def save_config(path, mapping: dict[str, str]) -> None:
    Path(path).write_text(dump_config(mapping))
