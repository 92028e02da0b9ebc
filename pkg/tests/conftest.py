import numpy as np
import pytest

from dpfedsim.backprop import forward_backward
from dpfedsim.data import generate_synthetic
from dpfedsim.engine import client_rng
from dpfedsim.models import build_mlp, build_cnn, init_params
from dpfedsim.params import ParamVector

ACCEPTANCE = pytest.StashKey[list]()


def central_difference(f, flat, indices, h=1e-5):
    """Central finite differences of scalar ``f`` at ``flat`` along the given coordinates."""
    out = np.empty(len(indices))
    for j, i in enumerate(indices):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        out[j] = (up - down) / (2 * h)
    return out


def max_relative_error(a, b, floor=1e-6):
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), floor)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_data():
    return generate_synthetic(3, 40, input_dim=4, difficulty=3.0, seed=3)


@pytest.fixture
def tiny_mlp():
    return build_mlp(4, [6], 3)


@pytest.fixture
def tiny_cnn():
    return build_cnn(8, 2)


@pytest.fixture
def mlp_params(tiny_mlp):
    return init_params(tiny_mlp, np.random.default_rng(0))


def sequential_sgd(model, train, cfg, rounds):
    """Plain SGD over the whole set, drawing batch orders from the same streams as a single-client run."""
    w = init_params(model, np.random.default_rng([cfg.seed, 1]))
    x, y = train.features, train.labels
    for t in range(1, rounds + 1):
        rng = client_rng(cfg.seed, t, 0)
        for _ in range(cfg.E):
            order = rng.permutation(len(train))
            for i in range(0, len(train), cfg.B):
                idx = order[i:i + cfg.B]
                _, g = forward_backward(model, w, (x[idx], y[idx]))
                w = ParamVector(w.layout, w.flat - cfg.eta * g.flat)
    return w


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the summary hook prints them all at the end."""
    def record(number, name, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {name}: {detail}"
        print(line)
        request.config.stash.setdefault(ACCEPTANCE, []).append(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
