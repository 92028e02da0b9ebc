"""Sweep execution, metrics CSV and manifest."""

from __future__ import annotations

import csv
import hashlib
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .. import __version__
from ..data import Dataset, PartitionScheme, generate_synthetic, labels_per_shard, load_dataset, partition
from ..dp import Granularity
from ..engine import run_training
from ..errors import ConfigurationError, DivergedError
from ..models import build_model
from .config import ExperimentConfig

log = logging.getLogger(__name__)

CSV_HEADER = ("experiment", "sweep", "seed", "round", "accuracy", "loss", "epsilon", "elapsed_ms", "status")
OUTPUT_ENV = "DPFEDSIM_OUTPUT"


@dataclass(frozen=True)
class MetricsRow:
    experiment: str
    sweep: str
    seed: int
    round: int
    accuracy: float | None
    loss: float | None
    epsilon: float | None
    elapsed_ms: float | None
    status: str = "ok"

    def as_csv(self) -> list[str]:
        return [self.experiment, self.sweep, str(self.seed), str(self.round), _num(self.accuracy),
                _num(self.loss), _num(self.epsilon), _num(self.elapsed_ms, "{:.1f}"), self.status]


def _num(x, fmt="{:.6f}") -> str:
    if x is None:
        return ""
    if math.isinf(x):
        return "inf"
    return fmt.format(x)


@lru_cache(maxsize=8)
def _datasets(source, num_classes, per_class, input_dim, input_side, difficulty, shared_offset,
              test_fraction, data_seed, data_format, train_path, test_path) -> tuple[Dataset, Dataset]:
    if source == "synthetic":
        counts = per_class[0] if len(per_class) == 1 else list(per_class)
        return generate_synthetic(num_classes, counts, input_dim=None if input_side else input_dim,
                                  input_side=input_side, difficulty=difficulty, shared_offset=shared_offset,
                                  test_fraction=test_fraction, seed=data_seed)
    train = load_dataset(train_path, data_format, num_classes=num_classes, split="train")
    if not test_path:
        raise ConfigurationError("file datasets need test_path")
    test = load_dataset(test_path, data_format, num_classes=num_classes, split="test")
    return train, test


def load_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    return _datasets(cfg.source, cfg.num_classes, tuple(cfg.per_class), cfg.input_dim, cfg.input_side,
                     cfg.difficulty, cfg.shared_offset, cfg.test_fraction, cfg.data_seed, cfg.data_format,
                     cfg.train_path, cfg.test_path)


def run_cell(cfg: ExperimentConfig, label: str, seed: int) -> list[MetricsRow]:
    """Train one (sweep cell, seed) pair; failures become a single flagged row."""
    def failed(status, round_index=0):
        return [MetricsRow(cfg.id, label, seed, round_index or 0, None, None, None, None, status)]

    try:
        train, test = load_data(cfg)
        feature_shape = train.feature_shape
        model = build_model(cfg.model, train.num_classes,
                            input_dim=feature_shape[0] if len(feature_shape) == 1 else None,
                            input_side=feature_shape[-1] if len(feature_shape) == 3 else None,
                            hidden_dims=cfg.hidden)
        shards = partition(train, PartitionScheme(cfg.partition, cfg.clients, seed))
        if cfg.partition == "noniid1":
            realised = max(labels_per_shard(train, shards))
            if realised > 1:
                log.warning("%s [%s] seed %d: noniid1 shards hold up to %d classes", cfg.id, label, seed, realised)
        dp = cfg.privacy_config()
        if dp is not None:
            units = len(train) if dp.granularity is Granularity.EXAMPLE else cfg.clients
            if dp.delta >= 1.0 / units:
                log.warning("delta=%g is not below 1/%d", dp.delta, units)
        records, _ = run_training(model, train, test, shards, cfg.round_config(seed), dp,
                                  dtype=np.dtype(cfg.dtype))
    except DivergedError as exc:
        log.warning("%s [%s] seed %d diverged: %s", cfg.id, label, seed, exc)
        return failed("diverged", exc.round_index)
    except ConfigurationError as exc:
        log.warning("%s [%s] seed %d rejected: %s", cfg.id, label, seed, exc)
        return failed("config_error")
    return [MetricsRow(cfg.id, label, seed, r.round, r.accuracy, r.loss, r.epsilon,
                       r.elapsed_ms if cfg.timing else None) for r in records]


def _job(args):
    cfg, label, seed = args
    return run_cell(cfg, label, seed)


def output_directory(cfg: ExperimentConfig, out: str | os.PathLike | None = None) -> Path:
    root = out or os.environ.get(OUTPUT_ENV) or cfg.output_dir
    return Path(root) / cfg.id


def run_experiment(cfg: ExperimentConfig, *, jobs: int | None = 1,
                   out: str | os.PathLike | None = None) -> Path:
    """Run every sweep cell for every seed; return the metrics CSV path.

    Rows are written in (cell, seed, round) order after all jobs finish, so
    the file is byte-identical for any worker count unless ``timing`` is on.
    """
    cfg.validate()
    tasks = [(cfg.with_overrides(overrides) if overrides else cfg, label, seed)
             for label, overrides in cfg.cells() for seed in cfg.seeds]
    workers = max(1, jobs or os.cpu_count() or 1)
    if workers == 1 or len(tasks) == 1:
        results = [_job(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
            results = list(pool.map(_job, tasks))

    outdir = output_directory(cfg, out)
    outdir.mkdir(parents=True, exist_ok=True)
    metrics = outdir / "metrics.csv"
    with open(metrics, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for rows in results:
            for row in rows:
                writer.writerow(row.as_csv())
    write_manifest(cfg, outdir / "manifest.txt", metrics)
    return metrics


def write_manifest(cfg: ExperimentConfig, path: Path, metrics: Path) -> None:
    ini = cfg.to_ini()
    digest = hashlib.sha256(metrics.read_bytes()).hexdigest()
    lines = [
        f"# dpfedsim {__version__}",
        f"# experiment: {cfg.id}",
        f"# reproduces: {cfg.figure or '-'}",
        f"# config_sha256: {cfg.content_hash()}",
        f"# metrics_sha256: {digest}",
        "",
        ini,
    ]
    path.write_text("\n".join(lines))


def read_metrics(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []
        return list(reader)
