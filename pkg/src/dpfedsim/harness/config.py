"""Experiment configuration: a sectioned key/value file where every key is also a CLI flag."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from ..data import PartitionKind
from ..dp import Granularity, PrivacyConfig
from ..engine import RoundConfig
from ..errors import ConfigurationError


class ConfigValidationError(ConfigurationError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid experiment config:\n  - " + "\n  - ".join(problems))
        self.problems = problems


def _ints(text) -> tuple[int, ...]:
    if isinstance(text, (tuple, list)):
        return tuple(int(v) for v in text)
    return tuple(int(v) for v in str(text).replace(";", ",").split(",") if v.strip())


def _floats(text) -> tuple[float, ...]:
    if isinstance(text, (tuple, list)):
        return tuple(float(v) for v in text)
    return tuple(float(v) for v in str(text).replace(";", ",").split(",") if v.strip())


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text) -> int | None:
    if text is None or str(text).strip().lower() in ("", "none", "0"):
        return None
    return int(text)


def _opt_str(text) -> str | None:
    if text is None or str(text).strip().lower() in ("", "none"):
        return None
    return str(text).strip()


def _str(text) -> str:
    return str(text).strip()


# key -> (section, parser)
SCHEMA: dict[str, tuple[str, Any]] = {
    "id": ("experiment", _str),
    "figure": ("experiment", _str),
    "output_dir": ("experiment", _str),
    "seeds": ("experiment", _ints),
    "checkpoints": ("experiment", _ints),
    "threshold": ("experiment", float),
    "timing": ("experiment", _bool),
    "source": ("data", _str),
    "num_classes": ("data", int),
    "per_class": ("data", _ints),
    "input_dim": ("data", _opt_int),
    "input_side": ("data", _opt_int),
    "difficulty": ("data", float),
    "shared_offset": ("data", float),
    "test_fraction": ("data", float),
    "data_seed": ("data", int),
    "data_format": ("data", _str),
    "train_path": ("data", _opt_str),
    "test_path": ("data", _opt_str),
    "partition": ("data", _str),
    "model": ("model", _str),
    "hidden": ("model", _ints),
    "dtype": ("model", _str),
    "clients": ("federated", int),
    "fraction": ("federated", float),
    "clients_per_round": ("federated", _opt_int),
    "local_epochs": ("federated", int),
    "batch_size": ("federated", int),
    "learning_rate": ("federated", float),
    "rounds": ("federated", int),
    "eval_every": ("federated", int),
    "dp": ("privacy", _bool),
    "clip_norm": ("privacy", float),
    "noise": ("privacy", float),
    "delta": ("privacy", float),
    "dp_granularity": ("privacy", _str),
}

SECTIONS = ("experiment", "data", "model", "federated", "privacy", "sweep")


@dataclass(frozen=True)
class ExperimentConfig:
    id: str = "experiment"
    figure: str = ""
    output_dir: str = "runs"
    seeds: tuple[int, ...] = (0,)
    checkpoints: tuple[int, ...] = (50, 100, 150, 200)
    threshold: float = 0.75
    timing: bool = False
    # data
    source: str = "synthetic"
    num_classes: int = 3
    per_class: tuple[int, ...] = (1250,)
    input_dim: int | None = 10
    input_side: int | None = None
    difficulty: float = 3.0
    shared_offset: float = 8.0
    test_fraction: float = 0.2
    data_seed: int = 0
    data_format: str = "csv"
    train_path: str | None = None
    test_path: str | None = None
    partition: str = "iid"
    # model
    model: str = "mlp"
    hidden: tuple[int, ...] = (16,)
    dtype: str = "float64"
    # federated
    clients: int = 3
    fraction: float = 0.33
    clients_per_round: int | None = 2
    local_epochs: int = 1
    batch_size: int = 20
    learning_rate: float = 0.02
    rounds: int = 200
    eval_every: int = 1
    # privacy
    dp: bool = False
    clip_norm: float = 1.0
    noise: float = 1.0
    delta: float = 1e-5
    dp_granularity: str = "client"
    # sweep
    sweep_params: tuple[str, ...] = ()
    sweep_values: tuple[tuple[Any, ...], ...] = field(default=())

    # -- derived views --------------------------------------------------------

    def round_config(self, seed: int) -> RoundConfig:
        return RoundConfig(K=self.clients, C=self.fraction, E=self.local_epochs, B=self.batch_size,
                           eta=self.learning_rate, T=self.rounds, seed=seed,
                           clients_per_round=self.clients_per_round, eval_every=self.eval_every)

    def privacy_config(self) -> PrivacyConfig | None:
        if not self.dp:
            return None
        return PrivacyConfig(self.clip_norm, self.noise, self.delta, self.dp_granularity)

    def cells(self) -> list[tuple[str, dict[str, Any]]]:
        """``(label, overrides)`` for every sweep cell; one unlabeled cell when no sweep."""
        if not self.sweep_params:
            return [("", {})]
        out = []
        for values in self.sweep_values:
            overrides = dict(zip(self.sweep_params, values))
            label = " ".join(f"{k}={_fmt(v)}" for k, v in overrides.items())
            out.append((label, overrides))
        return out

    def with_overrides(self, overrides: dict[str, Any]) -> "ExperimentConfig":
        parsed = {}
        for key, value in overrides.items():
            if key not in SCHEMA:
                raise ConfigValidationError([f"unknown key {key!r}"])
            parsed[key] = SCHEMA[key][1](value) if isinstance(value, str) else value
        if "per_class" in parsed and isinstance(parsed["per_class"], int):
            parsed["per_class"] = (parsed["per_class"],)
        return dataclasses.replace(self, **parsed)

    def validate(self) -> "ExperimentConfig":
        problems = []
        if not self.seeds:
            problems.append("seeds must be non-empty")
        for p in self.sweep_params:
            if p not in SCHEMA:
                problems.append(f"sweep parameter {p!r} is not a config key")
        for i, values in enumerate(self.sweep_values):
            if len(values) != len(self.sweep_params):
                problems.append(f"sweep value #{i + 1} has {len(values)} fields, expected {len(self.sweep_params)}")
        if self.sweep_params and not self.sweep_values:
            problems.append("sweep parameter given without values")
        cells = [] if problems else self.cells()
        for label, overrides in cells or [("", {})]:
            try:
                cfg = self.with_overrides(overrides) if overrides else self
            except (ValueError, ConfigurationError) as exc:
                problems.append(f"[{label}] {exc}")
                continue
            problems.extend(f"[{label}] {p}" if label else p for p in cfg._cell_problems())
        if problems:
            raise ConfigValidationError(sorted(set(problems), key=problems.index))
        return self

    def _cell_problems(self) -> list[str]:
        problems = []
        if self.source not in ("synthetic", "csv", "idx"):
            problems.append(f"source must be synthetic, csv or idx, got {self.source!r}")
        if self.source != "synthetic" and not self.train_path:
            problems.append("file datasets need train_path")
        if self.num_classes < 2:
            problems.append(f"num_classes must be >= 2, got {self.num_classes}")
        if len(self.per_class) not in (1, self.num_classes):
            problems.append(f"per_class must list 1 or {self.num_classes} counts")
        if any(c < 2 for c in self.per_class):
            problems.append("per_class counts must be >= 2")
        if self.difficulty <= 0:
            problems.append(f"difficulty must be > 0, got {self.difficulty}")
        try:
            PartitionKind(self.partition)
        except ValueError:
            problems.append(f"partition must be iid, noniid1 or noniid2, got {self.partition!r}")
        if self.model not in ("mlp", "cnn"):
            problems.append(f"model must be mlp or cnn, got {self.model!r}")
        if self.model == "cnn" and self.source == "synthetic" and not self.input_side:
            problems.append("cnn on synthetic data needs input_side")
        if self.model == "mlp" and self.source == "synthetic" and self.input_side:
            problems.append("mlp on synthetic data needs input_dim, not input_side")
        if any(h <= 0 for h in self.hidden):
            problems.append(f"hidden sizes must be positive, got {self.hidden}")
        if self.dtype not in ("float64", "float32"):
            problems.append(f"dtype must be float64 or float32, got {self.dtype!r}")
        if not 0 < self.threshold <= 1:
            problems.append(f"threshold must be in (0, 1], got {self.threshold}")
        try:
            self.round_config(0)
        except ConfigurationError as exc:
            problems.extend(str(exc).split("; "))
        if self.dp:
            try:
                self.privacy_config()
            except (ConfigurationError, ValueError) as exc:
                problems.append(str(exc))
        return problems

    # -- serialisation --------------------------------------------------------

    def to_ini(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        for section in SECTIONS:
            parser.add_section(section)
        for key, (section, _) in SCHEMA.items():
            parser.set(section, key, _fmt(getattr(self, key)))
        if self.sweep_params:
            parser.set("sweep", "param", ",".join(self.sweep_params))
            parser.set("sweep", "values", "; ".join(",".join(_fmt(v) for v in vals) for vals in self.sweep_values))
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_ini().encode()).hexdigest()


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_sweep(params_text: str, values_text: str) -> tuple[tuple[str, ...], tuple[tuple[Any, ...], ...]]:
    params = tuple(p.strip() for p in params_text.split(",") if p.strip())
    if not params:
        return (), ()
    if len(params) == 1 and ";" not in values_text:
        raw_cells = [v for v in values_text.split(",")]
    else:
        raw_cells = values_text.split(";")
    cells = []
    for raw in raw_cells:
        raw = raw.strip()
        if not raw:
            continue
        parts = [raw] if len(params) == 1 else [p.strip() for p in raw.split(",")]
        cells.append(tuple(_parse_value(p, part) for p, part in zip(params, parts)) +
                     tuple(parts[len(params):]))
    return params, tuple(cells)


def _parse_value(key, text):
    if key not in SCHEMA:
        return text.strip()
    return SCHEMA[key][1](text)


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse config text; unknown sections or keys are reported together."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(text)
    problems, values = [], {}
    for section in parser.sections():
        if section not in SECTIONS:
            problems.append(f"unknown section [{section}]")
            continue
        for key, raw in parser.items(section):
            if section == "sweep":
                if key not in ("param", "values"):
                    problems.append(f"unknown key {key!r} in [sweep]")
                continue
            if key not in SCHEMA:
                problems.append(f"unknown key {key!r} in [{section}]")
                continue
            if SCHEMA[key][0] != section:
                problems.append(f"key {key!r} belongs in [{SCHEMA[key][0]}], not [{section}]")
                continue
            try:
                values[key] = SCHEMA[key][1](raw)
            except ValueError as exc:
                problems.append(f"{section}.{key}: {exc}")
    if parser.has_section("sweep"):
        try:
            params, cells = _parse_sweep(parser.get("sweep", "param", fallback=""),
                                         parser.get("sweep", "values", fallback=""))
            values["sweep_params"], values["sweep_values"] = params, cells
        except ValueError as exc:
            problems.append(f"sweep: {exc}")
    if problems:
        raise ConfigValidationError(problems)
    return dataclasses.replace(base or ExperimentConfig(), **values)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())
