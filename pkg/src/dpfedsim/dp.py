"""Clipping and Gaussian noising, at example level and at client level."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import ConfigurationError
from .params import ParamVector


class Granularity(str, Enum):
    EXAMPLE = "example"
    CLIENT = "client"


@dataclass(frozen=True)
class PrivacyConfig:
    clip_norm: float = 1.0
    noise_multiplier: float = 1.0
    delta: float = 1e-5
    granularity: Granularity = Granularity.CLIENT

    def __post_init__(self):
        object.__setattr__(self, "granularity", Granularity(self.granularity))
        if not self.clip_norm > 0:
            raise ConfigurationError(f"clip_norm must be > 0, got {self.clip_norm}")
        if self.noise_multiplier < 0:
            raise ConfigurationError(f"noise multiplier must be >= 0, got {self.noise_multiplier}")
        if not 0 < self.delta < 1:
            raise ConfigurationError(f"delta must be in (0, 1), got {self.delta}")

    def sampling_fraction(self, *, batch_size: int | None = None, n_k: int | None = None,
                          clients_per_round: int | None = None, K: int | None = None) -> float:
        """q = B/n_k for example-level accounting, m/K for client-level."""
        if self.granularity is Granularity.EXAMPLE:
            return min(1.0, batch_size / n_k)
        return min(1.0, clients_per_round / K)


def clip(g: ParamVector, clip_norm: float) -> ParamVector:
    """Scale ``g`` by ``min(1, S / ||g||)``."""
    if not clip_norm > 0:
        raise ConfigurationError(f"clip_norm must be > 0, got {clip_norm}")
    norm = np.linalg.norm(g.flat)
    if norm <= clip_norm:
        return g.copy()
    return ParamVector(g.layout, g.flat * (clip_norm / norm))


def _clipped_sum(vectors: Sequence[ParamVector], clip_norm: float) -> np.ndarray:
    first = vectors[0]
    total = np.zeros_like(first.flat)
    for v in vectors:
        first.check_compatible(v)
        total += clip(v, clip_norm).flat
    return total


def _gaussian(shape, std, rng, dtype):
    return rng.normal(0.0, std, size=shape).astype(dtype, copy=False)


def dp_sgd_batch_grad(per_sample: Sequence[ParamVector], clip_norm: float, noise_multiplier: float,
                      rng: np.random.Generator) -> ParamVector:
    """(sum_i clip(g_i, S) + N(0, (zS)^2 I)) / m."""
    if not per_sample:
        raise ConfigurationError("need at least one per-sample gradient")
    total = _clipped_sum(per_sample, clip_norm)
    if noise_multiplier > 0:
        total = total + _gaussian(total.shape, noise_multiplier * clip_norm, rng, total.dtype)
    return ParamVector(per_sample[0].layout, total / len(per_sample))


def noise_aggregate(updates: Sequence[tuple[int, ParamVector]], w_prev: ParamVector, clip_norm: float,
                    noise_multiplier: float, rng: np.random.Generator,
                    m: int | None = None) -> ParamVector:
    """Client-level DP aggregation of returned client models.

    Each delta ``w_k - w_prev`` is clipped to ``clip_norm``; clipped deltas are
    summed in a canonical order, Gaussian noise with std ``z * S`` is added,
    and the result is divided by ``m`` (the participating-client count).
    Weights are uniform: ``n_k`` is ignored so it cannot leak.
    """
    if not updates:
        raise ConfigurationError("no client updates to aggregate")
    m = len(updates) if m is None else m
    if m < 1:
        raise ConfigurationError(f"m must be >= 1, got {m}")
    deltas = []
    for _, w in updates:
        w_prev.check_compatible(w)
        deltas.append(w - w_prev)
    deltas.sort(key=lambda d: d.flat.tobytes())
    total = _clipped_sum(deltas, clip_norm)
    if noise_multiplier > 0:
        total = total + _gaussian(total.shape, noise_multiplier * clip_norm, rng, total.dtype)
    return ParamVector(w_prev.layout, w_prev.flat + total / m)
