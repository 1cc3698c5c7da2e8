"""The INI-style configuration file shared by the CLI commands."""

from __future__ import annotations

import configparser
import logging
from dataclasses import dataclass, field, fields
from typing import Optional

from .abstractor import MappingFunction, Merge
from .errors import ConfigError, FormatError, ParseError
from .expr import parse_expr

log = logging.getLogger(__name__)

SECTION = "masabs"
TYPES = ("upper", "lower")

_LIST_KEYS = ("vars", "scope", "sync_available")
_INT_KEYS = ("merge_init", "cap")
KEYS = ("input", "output", "domain", "target", "vars", "type", "scope",
        "merge_name", "merge_init", "merge_expr", "sync_available", "cap")


@dataclass
class Config:
    input: Optional[str] = None
    output: Optional[str] = None
    domain: Optional[str] = None
    target: str = "ext"
    vars: list[str] = field(default_factory=list)
    type: str = "upper"
    scope: list[str] = field(default_factory=list)
    merge_name: Optional[str] = None
    merge_init: Optional[int] = None
    merge_expr: Optional[str] = None
    sync_available: list[str] = field(default_factory=list)
    cap: Optional[int] = None

    def validate(self) -> None:
        if self.type not in TYPES:
            raise ConfigError(f"key 'type': expected 'upper' or 'lower', got {self.type!r}")
        if not self.target:
            raise ConfigError("key 'target': must not be empty")
        merge = (self.merge_name, self.merge_init, self.merge_expr)
        if any(x is not None for x in merge) and not all(x is not None for x in merge):
            raise ConfigError("keys 'merge_name', 'merge_init' and 'merge_expr' go together")
        if self.cap is not None and self.cap < 1:
            raise ConfigError(f"key 'cap': must be positive, got {self.cap}")

    def mapping(self, constants=None) -> MappingFunction:
        if not self.vars:
            raise ConfigError("key 'vars': no variables to remove")
        merge = None
        if self.merge_name is not None:
            try:
                expr = parse_expr(self.merge_expr, constants)
            except ParseError as exc:
                raise ConfigError(f"key 'merge_expr': {exc}") from None
            merge = Merge(self.merge_name, self.merge_init, expr)
        return MappingFunction(self.target, tuple(self.vars), tuple(self.scope), merge)


def _split(value: str) -> list[str]:
    return [x.strip() for x in value.replace("\n", ",").split(",") if x.strip()]


def read_config(data: bytes | str) -> Config:
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"config file is not UTF-8: {exc}") from None
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(data)
    except configparser.Error as exc:
        raise FormatError(f"malformed config file: {exc}".splitlines()[0]) from None
    cfg = Config()
    for section in parser.sections():
        if section != SECTION:
            log.warning("config: ignoring unknown section [%s]", section)
    if parser.has_section(SECTION):
        for key, value in parser.items(SECTION):
            if key not in KEYS:
                log.warning("config: ignoring unknown key %r", key)
                continue
            value = value.strip()
            if key in _LIST_KEYS:
                setattr(cfg, key, _split(value))
            elif key in _INT_KEYS:
                if value == "":
                    continue
                try:
                    setattr(cfg, key, int(value))
                except ValueError:
                    raise ConfigError(f"key {key!r}: expected an integer, got {value!r}") from None
            else:
                setattr(cfg, key, value or None if key != "target" else value)
    cfg.validate()
    return cfg


def write_config(cfg: Config) -> bytes:
    lines = [f"[{SECTION}]"]
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if value is None or value == []:
            continue
        if isinstance(value, list):
            value = ", ".join(value)
        lines.append(f"{f.name} = {value}")
    return ("\n".join(lines) + "\n").encode("utf-8")
