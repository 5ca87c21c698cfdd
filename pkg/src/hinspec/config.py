"""Pipeline configuration: a TOML file with strictly validated sections."""

from __future__ import annotations

import copy
import os
import sys
from dataclasses import dataclass
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


def _int(lo=None, hi=None):
    def check(v):
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError("expected an integer")
        if (lo is not None and v < lo) or (hi is not None and v > hi):
            raise ConfigError(f"must lie in [{lo}, {hi}]")
        return v

    return check


def _float(lo=None, hi=None, lo_open=False, hi_open=False):
    def check(v):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError("expected a number")
        v = float(v)
        bad_lo = lo is not None and (v <= lo if lo_open else v < lo)
        bad_hi = hi is not None and (v >= hi if hi_open else v > hi)
        if bad_lo or bad_hi:
            lb = "(" if lo_open else "["
            rb = ")" if hi_open else "]"
            raise ConfigError(f"must lie in {lb}{lo}, {hi}{rb}")
        return v

    return check


def _str(choices=None):
    def check(v):
        if not isinstance(v, str):
            raise ConfigError("expected a string")
        if choices is not None and v not in choices:
            raise ConfigError(f"must be one of {sorted(choices)}")
        return v

    return check


def _bool(v):
    if not isinstance(v, bool):
        raise ConfigError("expected true or false")
    return v


def _optional(check):
    def inner(v):
        return None if v is None else check(v)

    return inner


def _int_list(v):
    if isinstance(v, int) and not isinstance(v, bool):
        v = [v]
    if not isinstance(v, list) or not v or not all(isinstance(x, int) and not isinstance(x, bool) and x >= 1 for x in v):
        raise ConfigError("expected a positive integer or a list of them")
    return v


# section -> key -> (default, validator)
SCHEMA: dict[str, dict[str, tuple[Any, Any]]] = {
    "paths": {
        "nodes": (None, _optional(_str())),
        "edges": (None, _optional(_str())),
        "labels": (None, _optional(_str())),
        "schema": (None, _optional(_str())),
        "metagraphs": (None, _optional(_str())),
        "out": ("out", _str()),
    },
    "spectral": {
        "k": (None, _optional(_int(1))),
        "extra": (50, _int(0)),
        "tol": (1e-8, _float(0.0, 1.0, lo_open=True)),
        "zero_tol": (1e-8, _float(0.0, 1.0, lo_open=True)),
    },
    "assess": {
        "m": (10, _int(1)),
        "lambda_cap": (1.0, _float(0.0, 2.0, lo_open=True)),
        "budget": (40, _int(1)),
    },
    "combine": {
        "Q": (16, _int(1)),
        "P": (2, _int(1, 8)),
        "dropout": (0.2, _float(0.0, 1.0, hi_open=True)),
        "slope": (0.01, _float(0.0, 1.0)),
        "epochs": (200, _int(1)),
        "batch": (128, _int(1)),
        "lr": (1e-3, _float(0.0, 1.0, lo_open=True)),
        "loss": ("l21", _str({"l21", "l2"})),
        "seed": (None, _optional(_int(0))),
        "preprocess": ("group", _str({"group", "column"})),
        "smooth_eps": (None, _optional(_float(0.0, 1.0, lo_open=True))),
        "linear_output": (True, _bool),
        "dims": ("selected", _str({"selected", "all"})),
    },
    "eval": {
        "split": (0.5, _float(0.0, 1.0, lo_open=True, hi_open=True)),
        "repeats": (10, _int(1)),
        "K": ([10], _int_list),
        "link_cap": (100_000, _optional(_int(1))),
        "seed": (None, _optional(_int(0))),
    },
}
TOP_LEVEL = {"seed": (0, _int(0)), "threads": (None, _optional(_int(1)))}


@dataclass
class PipelineConfig:
    sections: dict[str, dict[str, Any]]
    seed: int = 0
    threads: int | None = None
    base_dir: str = "."
    source: str | None = None

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.sections[section]

    def path(self, key: str) -> str | None:
        p = self.sections["paths"][key]
        if p is None:
            return None
        return p if os.path.isabs(p) else os.path.normpath(os.path.join(self.base_dir, p))

    @property
    def out_dir(self) -> str:
        return self.path("out")

    def stage_seed(self, section: str) -> int:
        s = self.sections[section].get("seed")
        return self.seed if s is None else s

    def effective_threads(self) -> int:
        return self.threads if self.threads is not None else (os.cpu_count() or 1)

    def snapshot(self) -> dict:
        """Resolved settings, excluding thread count, which never alters results."""
        return {"seed": self.seed, **copy.deepcopy(self.sections)}


def defaults() -> dict[str, dict[str, Any]]:
    return {sec: {k: copy.deepcopy(d) for k, (d, _) in keys.items()} for sec, keys in SCHEMA.items()}


def from_dict(raw: dict, base_dir: str = ".", source: str | None = None) -> PipelineConfig:
    sections = defaults()
    top = {k: d for k, (d, _) in TOP_LEVEL.items()}
    for key, value in raw.items():
        if key in TOP_LEVEL:
            try:
                top[key] = TOP_LEVEL[key][1](value)
            except ConfigError as e:
                raise ConfigError(f"{key}: {e}") from None
            continue
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        if not isinstance(value, dict):
            raise ConfigError(f"[{key}] must be a table")
        for sub, v in value.items():
            if sub not in SCHEMA[key]:
                raise ConfigError(f"unknown config key {key}.{sub}")
            try:
                sections[key][sub] = SCHEMA[key][sub][1](v)
            except ConfigError as e:
                raise ConfigError(f"{key}.{sub}: {e}") from None
    return PipelineConfig(sections, top["seed"], top["threads"], base_dir, source)


def load_config(path: str | None) -> PipelineConfig:
    if path is None:
        return from_dict({}, os.getcwd())
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    return from_dict(raw, os.path.dirname(os.path.abspath(path)), path)


def override(cfg: PipelineConfig, seed: int | None = None, threads: int | None = None, out: str | None = None) -> PipelineConfig:
    """Apply command-line flags on top of file values."""
    sections = copy.deepcopy(cfg.sections)
    if out is not None:
        sections["paths"]["out"] = os.path.abspath(out)
    new = PipelineConfig(sections, cfg.seed, cfg.threads, cfg.base_dir, cfg.source)
    if seed is not None:
        new.seed = _int(0)(seed)
        # the flag wins over per-stage seeds from the file
        for sec in ("combine", "eval"):
            sections[sec]["seed"] = None
    if threads is not None:
        new.threads = _int(1)(threads)
    return new
