"""
Flat key=value configuration files.

Keys are section-prefixed (``scene.kind``, ``sim.duration``, ``track.K``, ...).
Unknown keys are rejected so that every run is auditable from its config.
"""

import logging
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, Mapping, Union

from errors import ConfigError

logger = logging.getLogger(__name__)


def parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ('1', 'true', 'yes', 'on'):
        return True
    if value in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_float_tuple(text: str) -> tuple:
    return tuple(float(part) for part in text.split(',') if part.strip())


def parse_points(text: str) -> tuple:
    """Parse ``x:y;x:y`` into a tuple of (x, y) pairs."""
    points = []
    for chunk in text.split(';'):
        chunk = chunk.strip()
        if not chunk:
            continue
        x_str, y_str = chunk.split(':')
        points.append((float(x_str), float(y_str)))
    return tuple(points)


def parse_optional_float(text: str):
    return None if text.strip().lower() in ('', 'none') else float(text)


def read_config(path: Union[str, Path],
                parsers: Mapping[str, Callable[[str], Any]]) -> Dict[str, Any]:
    """Read a key=value file, converting each value with its key's parser."""
    path = Path(path)
    try:
        lines = path.read_text(encoding='utf-8').splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc

    values: Dict[str, Any] = {}
    unknown = []
    for line_no, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith('#'):
            continue
        if '=' not in line:
            raise ConfigError(f"{path}:{line_no}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split('=', 1))
        if key not in parsers:
            unknown.append(f"{key} (line {line_no})")
            continue
        if key in values:
            raise ConfigError(f"{path}:{line_no}: duplicate key {key!r}")
        try:
            values[key] = parsers[key](value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}:{line_no}: bad value for {key!r}: {exc}") from exc

    if unknown:
        raise ConfigError(f"{path}: unknown keys: {', '.join(unknown)}")
    logger.debug("read %d keys from %s", len(values), path)
    return values


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if value is None:
        return 'none'
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ';'.join(f"{x!r}:{y!r}" for x, y in value)
        return ','.join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_config(path: Union[str, Path], values: Mapping[str, Any],
                 comment_lines: Iterable[str] = ()) -> None:
    """Write a key=value file with sorted keys."""
    lines = [f"# {text}" for text in comment_lines]
    lines.extend(f"{key} = {format_value(values[key])}" for key in sorted(values))
    Path(path).write_text('\n'.join(lines) + '\n', encoding='utf-8')


def section(values: Mapping[str, Any], prefix: str) -> Dict[str, Any]:
    """Return the keys under ``prefix.`` with the prefix stripped."""
    marker = prefix + '.'
    return {key[len(marker):]: value for key, value in values.items() if key.startswith(marker)}
