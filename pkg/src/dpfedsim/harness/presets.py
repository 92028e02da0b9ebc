"""Built-in experiment suite E1-E6.

Desk scale keeps the synthetic corpus at ~3000 training examples and 200
rounds; ``full_scale=True`` restores the larger client counts and 1000
rounds.
"""

from __future__ import annotations

import dataclasses

from .config import ExperimentConfig

FULL_CHECKPOINTS = (400, 600, 800, 1000)


def _base(**kw) -> ExperimentConfig:
    return dataclasses.replace(ExperimentConfig(seeds=(0, 1, 2)), **kw)


def _e1(full):
    return _base(id="E1-iid-vs-noniid", figure="accuracy by partition regime (table + curves)",
                 clients=3, fraction=0.33, clients_per_round=2,
                 sweep_params=("partition",), sweep_values=(("iid",), ("noniid1",), ("noniid2",)))


def _e2(full):
    cells = [(3, 2), (30, None)] + ([(300, None)] if full else [])
    return _base(id="E2-client-count", figure="accuracy by client count (table + curves)", partition="noniid1",
                 fraction=0.33, sweep_params=("clients", "clients_per_round"), sweep_values=tuple(cells))


def _e3(full):
    return _base(id="E3-client-fraction", figure="rounds to target vs client fraction (curves)", partition="noniid1",
                 clients=300 if full else 30, clients_per_round=None, threshold=0.75,
                 sweep_params=("fraction",), sweep_values=((0.1,), (0.2,), (0.3,), (0.7,), (1.0,)))


def _e4(full):
    big = 300 if full else 30
    cells = (
        (3, 0.33, 2, 20),  # baseline
        (big, 0.33, None, 20),  # more clients
        (big, 0.7, None, 1),  # batch sweep at C=0.7
        (big, 0.7, None, 20),
        (big, 0.7, None, 100),  # refined: every winning knob combined
    )
    return _base(id="E4-batch-size-refined", figure="batch size curves + refined settings table", partition="noniid1",
                 sweep_params=("clients", "fraction", "clients_per_round", "batch_size"), sweep_values=cells)


def _e5(full):
    return _base(id="E5-noise", figure="accuracy vs noise multiplier (curves)", partition="iid", clients=3, fraction=0.33,
                 clients_per_round=2, dp=True, clip_norm=0.1, dp_granularity="client",
                 sweep_params=("noise",), sweep_values=((0.0,), (0.5,), (1.0,), (2.0,)))


def _e6(full):
    if full:
        rows = ((3, 1, 0.1), (30, 10, 0.3), (90, 30, 0.7), (180, 60, 1.3), (270, 90, 1.9), (300, 100, 2.1))
    else:
        # client counts divided by three, keeping q = 1/3 exact
        rows = ((3, 1, 0.1), (9, 3, 0.3), (30, 10, 0.7), (60, 20, 1.3), (90, 30, 1.9), (99, 33, 2.1))
    return _base(id="E6-robustness", figure="epsilon and accuracy at constant q (table + curves)", partition="iid", fraction=1 / 3,
                 dp=True, clip_norm=0.1, dp_granularity="client",
                 sweep_params=("clients", "clients_per_round", "noise"), sweep_values=rows)


_BUILDERS = {"E1": _e1, "E2": _e2, "E3": _e3, "E4": _e4, "E5": _e5, "E6": _e6}


def preset_names() -> list[str]:
    return [get_preset(k).id for k in _BUILDERS]


def get_preset(name: str, full_scale: bool = False) -> ExperimentConfig:
    """Look up a preset by short (``E1``) or full (``E1-iid-vs-noniid``) name."""
    key = name.split("-")[0].upper()
    if key not in _BUILDERS:
        raise KeyError(f"unknown preset {name!r}; known: {', '.join(_BUILDERS)}")
    cfg = _BUILDERS[key](full_scale)
    if full_scale:
        cfg = dataclasses.replace(cfg, rounds=1000, checkpoints=FULL_CHECKPOINTS)
    return cfg


def describe() -> list[tuple[str, str, str]]:
    """``(id, reproduced artefact, sweep)`` for every preset."""
    out = []
    for key in _BUILDERS:
        cfg = get_preset(key)
        out.append((cfg.id, cfg.figure, ",".join(cfg.sweep_params)))
    return out
