"""
TOML run configuration -> SweepConfig.

Sections: [foliage], [material], [geometry], [tracer], [channel], [sweep].
The [sweep] keys map onto the top level of SweepConfig. Unknown sections and
keys are rejected, range violations name the offending field, and both carry
the line number of the key when it can be located.
"""

from __future__ import annotations

import re

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Optional

from pydantic import ValidationError

from app.core.errors import ConfigError
from app.schemas.foliage_schema import SweepConfig

__all__ = ["SECTIONS", "parse_config", "parse_config_text", "apply_overrides"]

SECTIONS = ("foliage", "material", "geometry", "tracer", "channel", "sweep")
_LINE_RE = re.compile(r"at line (\d+)")


def _key_line(text: str, section: Optional[str], key: Optional[str]) -> Optional[int]:
    """Best-effort 1-based line of ``key`` inside ``[section]`` (or of the header)."""
    current = None
    header = re.compile(r"^\s*\[\s*([A-Za-z0-9_.-]+)\s*\]")
    for lineno, line in enumerate(text.splitlines(), start=1):
        m = header.match(line)
        if m:
            current = m.group(1)
            if key is None and current == section:
                return lineno
            continue
        if key is not None and current == section and re.match(rf"^\s*{re.escape(key)}\s*=", line):
            return lineno
    return None


def _decode(text: str) -> dict[str, Any]:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        if line is None:
            m = _LINE_RE.search(str(exc))
            line = int(m.group(1)) if m else None
        raise ConfigError(f"malformed config: {exc}", line=line) from exc


def _payload(data: dict[str, Any], text: str) -> dict[str, Any]:
    payload: dict[str, Any] = {}
    for section, body in data.items():
        if section not in SECTIONS:
            raise ConfigError("unknown section", line=_key_line(text, section, None), field=section)
        if not isinstance(body, dict):
            raise ConfigError("expected a [section] table", line=_key_line(text, None, section), field=section)
        if section == "sweep":
            for key in body:
                if key in SECTIONS:
                    raise ConfigError("nested sections are not allowed in [sweep]", field=f"sweep.{key}")
            payload.update(body)
        else:
            payload[section] = body
    return payload


def _locate(loc: tuple) -> tuple[Optional[str], Optional[str]]:
    parts = [str(p) for p in loc if not isinstance(p, int)]
    if not parts:
        return "sweep", None
    if parts[0] in SECTIONS:
        return parts[0], parts[1] if len(parts) > 1 else None
    return "sweep", parts[0]


def parse_config_text(text: str) -> SweepConfig:
    data = _decode(text)
    try:
        return SweepConfig.model_validate(_payload(data, text))
    except ValidationError as exc:
        err = exc.errors()[0]
        section, key = _locate(err["loc"])
        if key is None and section == "sweep" and "sweep value" in err["msg"]:
            key = "values"
        name = key if section == "sweep" or key is None else f"{section}.{key}"
        if err["type"] == "extra_forbidden":
            message = "unknown key"
        else:
            message = err["msg"]
        raise ConfigError(message, line=_key_line(text, section, key), field=name or section) from exc


def parse_config(path: str | Path | None = None) -> SweepConfig:
    """Read and validate a run configuration; no path means all defaults."""
    if path is None:
        return SweepConfig()
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror or exc}") from exc
    return parse_config_text(text)


def apply_overrides(
    config: SweepConfig,
    *,
    global_seed: Optional[int] = None,
    output_dir: Optional[str] = None,
    full_scale: bool = False,
) -> SweepConfig:
    update: dict[str, Any] = {}
    if global_seed is not None:
        update["global_seed"] = global_seed
    if output_dir is not None:
        update["output_dir"] = output_dir
    if full_scale:
        update["tracer"] = config.tracer.at_full_scale()
    if not update:
        return config
    try:
        return SweepConfig.model_validate({**dict(config), **update})
    except ValidationError as exc:
        err = exc.errors()[0]
        raise ConfigError(err["msg"], field=".".join(str(p) for p in err["loc"]) or None) from exc
