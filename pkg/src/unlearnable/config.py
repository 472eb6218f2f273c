"""Plain-text ``key = value`` run configuration.

One pair per line, ``#`` starts a comment. Numbers may be written as
fractions (``8/255``); lists are comma-separated. Unknown keys, malformed
values and out-of-range values are all collected and reported together.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable

from .errors import ConfigError


def _number(text: str) -> float:
    text = text.strip()
    if "/" in text:
        num, den = text.split("/", 1)
        return float(Fraction(num.strip()) / Fraction(den.strip()))
    return float(text)


def _integer(text: str) -> int:
    v = _number(text)
    if v != int(v):
        raise ValueError(f"{text!r} is not an integer")
    return int(v)


def _float_list(text: str) -> list[float]:
    return [_number(t) for t in text.split(",") if t.strip()]


def _str_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    check: Callable[[Any], bool] | None = None
    rule: str = ""
    doc: str = ""


def _positive(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _one_of(*options):
    return lambda v: v in options


SCHEMA: dict[str, Key] = {
    # dataset
    "dataset": Key(str, "blobs", _one_of("blobs", "idx", "csv"), "blobs|idx|csv"),
    "classes": Key(_integer, 3, lambda v: v >= 2, ">= 2"),
    "per_class": Key(_integer, 500, _positive, "> 0"),
    "dim": Key(_integer, 100, _positive, "> 0"),
    "separation": Key(_number, 3.0, _nonneg, ">= 0"),
    "frame": Key(str, "dense", _one_of("dense", "axis"), "dense|axis"),
    "idx_images": Key(str, ""),
    "idx_labels": Key(str, ""),
    "csv_path": Key(str, ""),
    "limit": Key(_integer, 0, _nonneg, ">= 0 (0 = all)"),
    "test_per_class": Key(_integer, 100, _positive, "> 0"),
    # noise generator
    "arch": Key(str, "mlp 100 64 3 tanh"),
    "method": Key(str, "two-stage", _one_of("two-stage", "em", "rem"), "two-stage|em|rem"),
    "iterations": Key(_integer, 1000, _nonneg, ">= 0"),
    "gen_lr": Key(_number, 0.3, _positive, "> 0"),
    "gen_batch": Key(_integer, 64, _positive, "> 0"),
    "rho_u": Key(_number, 8 / 255, _nonneg, ">= 0"),
    "alpha_u": Key(_number, 2 / 255, _nonneg, ">= 0"),
    "steps_u": Key(_integer, 10, _nonneg, ">= 0"),
    "rho_a": Key(_number, 4 / 255, _nonneg, ">= 0"),
    "alpha_a": Key(_number, 1 / 255, _nonneg, ">= 0"),
    "steps_a": Key(_integer, 5, _nonneg, ">= 0"),
    "asr_weight": Key(_number, 1.0, _nonneg, ">= 0"),
    # victim
    "victim_arch": Key(str, "", doc="empty = same as arch"),
    "epochs": Key(_integer, 100, _nonneg, ">= 0"),
    "lr": Key(_number, 0.3, _positive, "> 0"),
    "batch": Key(_integer, 64, _positive, "> 0"),
    "victim_rho_a": Key(_number, 0.0, _nonneg, ">= 0"),
    "victim_steps": Key(_integer, 5, _nonneg, ">= 0"),
    "victim_step_fraction": Key(_number, 0.25, _positive, "> 0"),
    "protect_percent": Key(_number, 100.0, lambda v: 0 <= v <= 100, "in [0, 100]"),
    "bank": Key(str, "", doc="noise bank for train; empty = clean data"),
    "model": Key(str, "", doc="model file for eval"),
    # sweeps
    "sweep": Key(str, "radius", _one_of("radius", "percentage"), "radius|percentage"),
    "methods": Key(_str_list, ["em", "rem", "two-stage"],
                   lambda v: bool(v) and all(m in ("two-stage", "em", "rem") for m in v),
                   "subset of two-stage,em,rem"),
    "radii": Key(_float_list, [0.0, 1 / 255, 2 / 255, 4 / 255],
                 lambda v: bool(v) and all(r >= 0 for r in v) and v == sorted(v),
                 "non-empty, ascending, >= 0"),
    "percentages": Key(_float_list, [0.0, 20.0, 50.0, 80.0, 100.0],
                       lambda v: bool(v) and all(0 <= p <= 100 for p in v), "in [0, 100]"),
    # run
    "seed": Key(_integer, 0, _nonneg, ">= 0"),
    "out": Key(str, "out"),
}

REQUIRED = {
    "synth": (),
    "craft": ("arch",),
    "train": ("arch",),
    "eval": ("model",),
    "sweep": ("arch",),
}


class RunConfig(dict):
    """Resolved configuration: every schema key present, values parsed."""

    def __getattr__(self, name):
        try:
            return self[name]
        except KeyError:
            raise AttributeError(name) from None

    def render(self) -> str:
        """Text that parses back to an equal config (floats use ``repr``)."""
        lines = []
        for key in SCHEMA:
            v = self[key]
            if isinstance(v, list):
                text = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, float):
                text = repr(v)
            else:
                text = str(v)
            lines.append(f"{key} = {text}")
        return "\n".join(lines) + "\n"


def parse_config_text(text: str, *, overrides: dict[str, str] | None = None,
                      required=()) -> RunConfig:
    raw: dict[str, str] = {}
    problems: list[str] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected key = value")
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            problems.append(f"{key}: unknown key (line {lineno})")
        elif key in raw:
            problems.append(f"{key}: given twice (line {lineno})")
        else:
            raw[key] = value
    raw.update(overrides or {})
    cfg = RunConfig()
    for key, spec in SCHEMA.items():
        if key not in raw:
            cfg[key] = spec.default
            continue
        try:
            value = spec.parse(raw[key])
        except (ValueError, ZeroDivisionError):
            problems.append(f"{key}: cannot parse {raw[key]!r}")
            continue
        if spec.check is not None and not spec.check(value):
            problems.append(f"{key}: {raw[key]!r} must be {spec.rule}")
            continue
        cfg[key] = value
    for key in required:
        if key not in raw:
            problems.append(f"{key}: required")
    if "rho_a" in cfg and "rho_u" in cfg and cfg["rho_a"] > cfg["rho_u"]:
        problems.append(f"rho_a: {cfg['rho_a']!r} exceeds rho_u {cfg['rho_u']!r}")
    if cfg.get("dataset") == "idx" and not (raw.get("idx_images") and raw.get("idx_labels")):
        problems.append("idx_images/idx_labels: required when dataset = idx")
    if cfg.get("dataset") == "csv" and not raw.get("csv_path"):
        problems.append("csv_path: required when dataset = csv")
    if problems:
        raise ConfigError("invalid config: " + "; ".join(problems), problems)
    return cfg


def load_config(path, *, overrides=None, required=()) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}", ["config"]) from None
    return parse_config_text(text, overrides=overrides, required=required)
