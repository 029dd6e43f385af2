"""Line-oriented ``section.key = value`` config files.

Grammar: one assignment per line, ``#`` starts a comment, blank lines are
ignored.  Values are plain strings; typed accessors convert on demand.
Unknown keys are rejected by the pipeline loader so typos fail fast.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value': {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key or "." not in key:
            raise ConfigError(f"line {lineno}: key must look like 'section.key': {raw!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def parse_config_file(path) -> dict[str, str]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text())


class ConfigView:
    """Typed accessors over a parsed key/value map, tracking consumed keys."""

    def __init__(self, values: dict[str, str]):
        self.values = dict(values)
        self._used: set[str] = set()

    def _raw(self, key: str, default):
        if key in self.values:
            self._used.add(key)
            return self.values[key]
        return default

    def get_str(self, key: str, default: str | None = None) -> str | None:
        v = self._raw(key, default)
        return v if v is None else str(v)

    def get_int(self, key: str, default: int | None = None) -> int | None:
        v = self._raw(key, None)
        if v is None:
            return default
        try:
            return int(v)
        except ValueError:
            raise ConfigError(f"{key}: expected integer, got {v!r}") from None

    def get_float(self, key: str, default: float | None = None) -> float | None:
        v = self._raw(key, None)
        if v is None:
            return default
        try:
            return float(v)
        except ValueError:
            raise ConfigError(f"{key}: expected number, got {v!r}") from None

    def get_bool(self, key: str, default: bool | None = None) -> bool | None:
        v = self._raw(key, None)
        if v is None:
            return default
        low = v.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected boolean, got {v!r}")

    def get_float_list(self, key: str, default=None):
        v = self._raw(key, None)
        if v is None:
            return default
        try:
            return [float(x) for x in v.split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"{key}: expected comma-separated numbers, got {v!r}") from None

    def reject_unknown(self):
        unknown = set(self.values) - self._used
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
