"""
YAML run configuration with dotted command-line overrides.
"""

import os
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

import yaml

from ..core.errors import ConfigError
from ..models.config import RunConfig
from ..utils.helpers import PathLike, canonical_hash

OUTPUT_DIR_ENV = "BMDL_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "bmdl_output"


def apply_override(payload: Dict[str, Any], assignment: str) -> Dict[str, Any]:
    """
    Apply one ``dotted.key=value`` override in place.

    The value is parsed as YAML, so ``3``, ``0.5``, ``true`` and ``[1, 2]``
    keep their types.
    """
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, raw = assignment.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"override {assignment!r} has an empty key")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {assignment!r}: cannot parse value ({exc})") from exc
    node = payload
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(f"override {assignment!r}: {part!r} is not a section")
        node = child
    node[parts[-1]] = value
    return payload


def load_run_config(path: Optional[PathLike] = None, overrides: Iterable[str] = ()) -> RunConfig:
    """
    Build a RunConfig from an optional YAML file plus overrides.

    Raises:
        ConfigError: unreadable file or malformed override
        pydantic.ValidationError: values outside their allowed ranges
    """
    payload: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            payload = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
        if not isinstance(payload, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    for assignment in overrides:
        apply_override(payload, assignment)
    return RunConfig.model_validate(payload)


def config_payload(config: RunConfig) -> Dict[str, Any]:
    return config.model_dump(mode="json")


def config_hash(config: RunConfig) -> str:
    return canonical_hash(config_payload(config))


def dump_run_config(config: RunConfig) -> str:
    return yaml.safe_dump(config_payload(config), sort_keys=False)


def resolve_output_dir(cli_value: Optional[PathLike], config: Optional[RunConfig] = None) -> Path:
    """Command line, then config, then ``$BMDL_OUTPUT_DIR``, then ``./bmdl_output``."""
    for candidate in (cli_value, config.output_dir if config else None, os.environ.get(OUTPUT_DIR_ENV)):
        if candidate:
            return Path(candidate)
    return Path(DEFAULT_OUTPUT_DIR)
