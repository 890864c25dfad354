"""Flat ``key = value`` configuration files.

One setting per line, ``#`` starts a comment, blank lines are ignored. Keys
are the :class:`~cellcache.simulator.SimConfig` field names plus the sweep
axes ``zipf_values``, ``capacity_values``, ``schemes`` and ``seeds``. List
values are comma separated; ``seeds`` also accepts a half-open range
``start:stop``. Anything not given keeps its default.
"""
from __future__ import annotations

import warnings
from dataclasses import fields
from pathlib import Path

from .exceptions import InvalidConfig, ParseError, UnknownKey
from .simulator import SimConfig
from .sweep import SweepSpec

__all__ = ["SWEEP_KEYS", "parse_config_text", "build_config", "load_config", "config_warnings"]

SWEEP_KEYS = ("zipf_values", "capacity_values", "schemes", "seeds")

_SIM_TYPES = {f.name: type(f.default) for f in fields(SimConfig)}


def _scalar(raw: str, kind: type, line: int, key: str):
    if kind is str:
        if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
            raw = raw[1:-1]
        return raw
    try:
        return kind(raw)
    except ValueError:
        raise ParseError(f"{key}: expected {kind.__name__}, got {raw!r}", line=line, key=key) from None


def _list(raw: str, kind: type, line: int, key: str) -> tuple:
    if kind is int and ":" in raw:
        lo, _, hi = raw.partition(":")
        start, stop = _scalar(lo.strip(), int, line, key), _scalar(hi.strip(), int, line, key)
        if stop <= start:
            raise ParseError(f"{key}: empty range {raw!r}", line=line, key=key)
        return tuple(range(start, stop))
    items = [p.strip() for p in raw.split(",")]
    if any(not p for p in items):
        raise ParseError(f"{key}: empty list item in {raw!r}", line=line, key=key)
    return tuple(_scalar(p, kind, line, key) for p in items)


_SWEEP_TYPES = {"zipf_values": float, "capacity_values": int, "schemes": str, "seeds": int}


def parse_config_text(text: str) -> dict:
    """Parse configuration text into a dict of typed overrides.

    Raises
    ------
    ParseError
        Malformed line, duplicate key, empty or mistyped value.
    UnknownKey
        A key that is neither a simulation field nor a sweep axis.
    """
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, raw = body.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or not key:
            raise ParseError(f"expected 'key = value', got {line.strip()!r}", line=lineno, key=None)
        if key not in _SIM_TYPES and key not in _SWEEP_TYPES:
            raise UnknownKey(f"unknown key {key!r}", line=lineno, key=key)
        if key in out:
            raise ParseError(f"duplicate key {key!r}", line=lineno, key=key)
        if not raw:
            raise ParseError(f"{key}: missing value", line=lineno, key=key)
        if key in _SWEEP_TYPES:
            out[key] = _list(raw, _SWEEP_TYPES[key], lineno, key)
        else:
            out[key] = _scalar(raw, _SIM_TYPES[key], lineno, key)
    return out


def build_config(overrides: dict):
    """A :class:`SimConfig`, or a :class:`SweepSpec` when any sweep axis is set."""
    sim = {k: v for k, v in overrides.items() if k in _SIM_TYPES}
    base = SimConfig(**sim)
    axes = {k: v for k, v in overrides.items() if k in _SWEEP_TYPES}
    if not axes:
        return base
    return SweepSpec.around(base, **axes)


def config_warnings(config) -> list[str]:
    """Learning-rate warnings for a config, emitted and returned."""
    base = config.base if isinstance(config, SweepSpec) else config
    return base.schedule.validate()


def load_config(path=None, *, fallback_seed=None, warn: bool = True):
    """Read a configuration file.

    Parameters
    ----------
    path : path-like or None
        ``None`` means an empty file, i.e. all defaults.
    fallback_seed : int, optional
        Master seed used when the file does not set ``master_seed``.
    warn : bool, default=True
        Emit learning-rate warnings for the loaded schedule.

    Returns
    -------
    SimConfig or SweepSpec
    """
    text = ""
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            raise InvalidConfig(f"cannot read config {path}: {exc}") from exc
    overrides = parse_config_text(text)
    if fallback_seed is not None and "master_seed" not in overrides:
        overrides["master_seed"] = int(fallback_seed)
    config = build_config(overrides)
    if warn:
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            config_warnings(config)
    return config
