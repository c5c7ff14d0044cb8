"""Run configuration files.

One ``key = value`` pair per line; blank lines and ``#`` comments are
ignored. Unknown keys, duplicates and malformed values are errors.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

from ..optimizer import BatchSchedule


class ConfigError(ValueError):
    pass


OPTIMIZERS = ("kfac_bd", "kfac_btd", "sgd")


@dataclass
class RunConfig:
    problem: str = "digits16"
    optimizer: str = "kfac_btd"
    momentum: bool = True
    eta: float = 1e-5
    lambda0: float | None = None
    T1: int = 5
    T2: int = 20
    T3: int = 20
    tau1: float = 1 / 8
    tau2: float = 1 / 4
    batch_schedule: str | None = None
    max_iters: int = 100
    max_seconds: float = math.inf
    seed: int = 0
    # extensions
    data_file: str | None = None
    eval_every: int = 1
    learn_rate: float | None = None
    mu_max: float = 0.99

    def echo(self) -> dict:
        d = asdict(self)
        if math.isinf(d["max_seconds"]):
            d["max_seconds"] = None
        return d


def _bool(v: str) -> bool:
    if v in ("on", "true", "1", "yes"):
        return True
    if v in ("off", "false", "0", "no"):
        return False
    raise ValueError(f"expected on/off, got {v!r}")


def _optional_float(v: str) -> float | None:
    return None if v in ("auto", "default") else float(v)


def _schedule(v: str) -> str:
    BatchSchedule.parse(v)
    return v


def _optimizer(v: str) -> str:
    if v not in OPTIMIZERS:
        raise ValueError(f"expected one of {', '.join(OPTIMIZERS)}")
    return v


def _positive_int(v: str) -> int:
    n = int(v)
    if n < 0:
        raise ValueError("must be >= 0")
    return n


PARSERS = {
    "problem": str, "optimizer": _optimizer, "momentum": _bool, "eta": float,
    "lambda0": _optional_float, "T1": int, "T2": int, "T3": int, "tau1": float, "tau2": float,
    "batch_schedule": _schedule, "max_iters": _positive_int, "max_seconds": float,
    "seed": int, "data_file": str, "eval_every": int, "learn_rate": _optional_float,
    "mu_max": float,
}


def parse_config(text: str) -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, value = (p.strip() for p in line.partition("="))
        if key not in PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = PARSERS[key](value)
        except ValueError as err:
            raise ConfigError(f"line {lineno}: bad value for {key}: {err}") from None
    cfg = RunConfig(**values)
    if cfg.eval_every < 1:
        raise ConfigError("eval_every must be >= 1")
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    return parse_config(text)
