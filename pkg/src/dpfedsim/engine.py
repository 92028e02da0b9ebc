"""Federated averaging: client sampling, local SGD, aggregation, round loop."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .accountant import AccountantState, compose_and_convert
from .backprop import evaluate, forward_backward, per_sample_grads
from .data import ClientShard, Dataset
from .dp import Granularity, PrivacyConfig, dp_sgd_batch_grad, noise_aggregate
from .errors import ConfigurationError, DivergedError
from .models import ModelSpec, init_params
from .params import ParamVector

# stream tags for np.random.SeedSequence entropy; keep them distinct
_INIT, _SAMPLE, _CLIENT, _NOISE = 1, 2, 3, 4


@dataclass(frozen=True)
class RoundConfig:
    K: int
    C: float = 0.33
    E: int = 1
    B: int = 20
    eta: float = 0.02
    T: int = 200
    seed: int = 0
    clients_per_round: int | None = None
    eval_every: int = 1

    def __post_init__(self):
        problems = []
        if self.K < 1:
            problems.append(f"K must be >= 1, got {self.K}")
        if not 0 < self.C <= 1:
            problems.append(f"C must be in (0, 1], got {self.C}")
        if self.E < 1:
            problems.append(f"E must be >= 1, got {self.E}")
        if self.B < 1:
            problems.append(f"B must be >= 1, got {self.B}")
        if not self.eta >= 0:
            problems.append(f"eta must be >= 0, got {self.eta}")
        if self.T < 0:
            problems.append(f"T must be >= 0, got {self.T}")
        if self.eval_every < 1:
            problems.append(f"eval_every must be >= 1, got {self.eval_every}")
        if self.clients_per_round is not None and not 1 <= self.clients_per_round <= self.K:
            problems.append(f"clients_per_round must be in [1, K={self.K}], got {self.clients_per_round}")
        if problems:
            raise ConfigurationError("; ".join(problems))

    @property
    def clients_per_round_effective(self) -> int:
        return clients_per_round(self.K, self.C, self.clients_per_round)


@dataclass(frozen=True)
class RoundRecord:
    round: int
    accuracy: float
    loss: float
    epsilon: float | None
    elapsed_ms: float


@dataclass
class GlobalState:
    round: int
    params: ParamVector
    accountant: AccountantState | None = None


def clients_per_round(K: int, C: float, override: int | None = None) -> int:
    if override is not None:
        if not 1 <= override <= K:
            raise ConfigurationError(f"clients_per_round override {override} outside [1, {K}]")
        return override
    if not 0 < C <= 1:
        raise ConfigurationError(f"C must be in (0, 1], got {C}")
    # tolerance keeps C=1/3 with K=30 at 10 rather than 11
    return max(math.ceil(C * K - 1e-9), 1)


def sample_clients(K: int, C: float, override: int | None, rng: np.random.Generator) -> list[int]:
    """``max(ceil(C*K), 1)`` distinct client ids (or ``override`` of them), ascending."""
    m = clients_per_round(K, C, override)
    return sorted(int(k) for k in rng.choice(K, size=m, replace=False))


def client_rng(seed: int, round_index: int, client_id: int) -> np.random.Generator:
    return np.random.default_rng([seed, _CLIENT, round_index, client_id])


def minibatches(n: int, B: int, rng: np.random.Generator):
    """Shuffled index chunks covering ``range(n)``, ceil(n/B) of them."""
    order = rng.permutation(n)
    return [order[i:i + B] for i in range(0, n, B)]


def client_update(model: ModelSpec, train: Dataset, shard: ClientShard, w: ParamVector, cfg: RoundConfig,
                  rng: np.random.Generator, dp: PrivacyConfig | None = None, *,
                  round_index: int | None = None) -> tuple[ParamVector, float]:
    """Run E epochs of minibatch SGD on one shard; return the local model and mean loss.

    Example-level DP swaps each minibatch gradient for the clipped and
    noised per-sample estimate.
    """
    x_all, y_all = train.subset(shard.indices)
    w = w.copy()
    example_dp = dp is not None and dp.granularity is Granularity.EXAMPLE
    losses = []
    for _ in range(cfg.E):
        for batch_idx in minibatches(shard.n_k, cfg.B, rng):
            batch = (x_all[batch_idx], y_all[batch_idx])
            seed = int(rng.integers(2**63)) if model.has_dropout else None
            if example_dp:
                grads = per_sample_grads(model, w, batch, seed)
                loss = forward_backward(model, w, batch)[0]
                g = dp_sgd_batch_grad(grads, dp.clip_norm, dp.noise_multiplier, rng)
            else:
                loss, g = forward_backward(model, w, batch, seed)
            w.flat -= cfg.eta * g.flat
            if not (math.isfinite(loss) and np.isfinite(w.flat).all()):
                raise DivergedError(f"non-finite loss or weights in round {round_index}, client {shard.client_id}",
                                    round_index, shard.client_id)
            losses.append(loss)
    return w, float(np.mean(losses))


def aggregate(updates: Sequence[tuple[int, ParamVector]]) -> ParamVector:
    """Weighted mean ``sum_k (n_k / n) w_k``.

    Reduction runs in a canonical order (by ``n_k`` then bytes), so the result
    does not depend on input order. It is computed as ``w_0 + sum (n_k/n)(w_k - w_0)``,
    which returns identical inputs exactly.
    """
    if not updates:
        raise ConfigurationError("no client updates to aggregate")
    ordered = sorted(updates, key=lambda u: (u[0], u[1].flat.tobytes()))
    base = ordered[0][1]
    for _, w in ordered[1:]:
        base.check_compatible(w)
    n = sum(n_k for n_k, _ in ordered)
    if n <= 0:
        raise ConfigurationError("total sample count must be positive")
    out = base.flat.copy()
    for n_k, w in ordered[1:]:
        out += (n_k / n) * (w.flat - base.flat)
    return ParamVector(base.layout, out)


def _epsilon_tracker(dp, cfg, shards):
    """Return ``f(round) -> epsilon`` for the configured DP granularity."""
    if dp is None:
        return None
    if dp.granularity is Granularity.CLIENT:
        m = cfg.clients_per_round_effective
        state = AccountantState(m / cfg.K, dp.noise_multiplier)
        return lambda t: compose_and_convert(state, t, dp.delta)
    # example level: worst client; one step per local minibatch while selected
    states = {}
    for s in shards:
        q = min(1.0, cfg.B / s.n_k)
        steps = cfg.E * math.ceil(s.n_k / cfg.B)
        key = (q, steps)
        if key not in states:
            states[key] = AccountantState(q, dp.noise_multiplier)
    return lambda t: max(compose_and_convert(st, t * steps, dp.delta) for (q, steps), st in states.items())


def run_training(model: ModelSpec, train: Dataset, test: Dataset, shards: Sequence[ClientShard],
                 cfg: RoundConfig, dp: PrivacyConfig | None = None, *, dtype=np.float64,
                 init: ParamVector | None = None,
                 on_round: Callable[[RoundRecord], None] | None = None) -> tuple[list[RoundRecord], ParamVector]:
    """Run ``cfg.T`` FedAvg rounds; return the per-round records and final parameters.

    Every random draw comes from a stream keyed on ``(seed, purpose, round,
    client)``, so the output depends only on the inputs. Records are emitted
    every ``cfg.eval_every`` rounds and always for the last round.
    """
    if len(shards) != cfg.K:
        raise ConfigurationError(f"partition has {len(shards)} shards but K={cfg.K}")
    params = init if init is not None else init_params(model, np.random.default_rng([cfg.seed, _INIT]), dtype)
    state = GlobalState(0, params.copy())
    eps_at = _epsilon_tracker(dp, cfg, shards)
    client_dp = dp is not None and dp.granularity is Granularity.CLIENT
    records = []
    start = time.perf_counter()
    for t in range(1, cfg.T + 1):
        chosen = sample_clients(cfg.K, cfg.C, cfg.clients_per_round, np.random.default_rng([cfg.seed, _SAMPLE, t]))
        updates, losses = [], []
        for k in chosen:
            w_k, loss = client_update(model, train, shards[k], state.params, cfg, client_rng(cfg.seed, t, k),
                                      dp, round_index=t)
            updates.append((shards[k].n_k, w_k))
            losses.append(loss)
        if client_dp:
            noise_rng = np.random.default_rng([cfg.seed, _NOISE, t])
            new = noise_aggregate(updates, state.params, dp.clip_norm, dp.noise_multiplier, noise_rng, len(chosen))
        else:
            new = aggregate(updates)
        if not new.is_finite():
            raise DivergedError(f"non-finite parameters after aggregation in round {t}", t, None)
        state.params, state.round = new, t
        if t % cfg.eval_every == 0 or t == cfg.T:
            acc, _ = evaluate(model, state.params, test.features, test.labels)
            rec = RoundRecord(t, acc, float(np.mean(losses)), eps_at(t) if eps_at else None,
                              (time.perf_counter() - start) * 1000.0)
            records.append(rec)
            if on_round is not None:
                on_round(rec)
    return records, state.params
