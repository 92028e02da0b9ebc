"""Forward and reverse passes for the zoo's operator set.

Each layer has a hand-written backward rule; there is no general tape.
Per-sample gradients replay the batch one example at a time.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import StructureError
from .models import Conv2D, Dense, Dropout, Flatten, MaxPool2D, ModelSpec
from .params import ParamVector


def check_params(model: ModelSpec, params: ParamVector) -> None:
    expected = model.param_shapes()
    names, shapes = params.layout.names, params.layout.shapes
    for i, (name, shape) in enumerate(expected):
        if i >= len(names) or names[i] != name or tuple(shapes[i]) != tuple(shape):
            got = (names[i], shapes[i]) if i < len(names) else None
            raise StructureError(f"segment {name!r}: model expects {shape}, params hold {got}", name)
    if len(names) > len(expected):
        extra = names[len(expected)]
        raise StructureError(f"unexpected segment {extra!r} for model {model.name!r}", extra)


def _conv_forward(x, w, b):
    k = w.shape[2]
    win = sliding_window_view(x, (k, k), axis=(2, 3))  # N, C, H', W', k, k
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # N, H', W', O
    out = out.transpose(0, 3, 1, 2) + b[None, :, None, None]
    return np.ascontiguousarray(out), win


def _conv_backward(dout, win, w):
    k = w.shape[2]
    dw = np.tensordot(dout, win, axes=([0, 2, 3], [0, 2, 3]))  # O, C, k, k
    db = dout.sum(axis=(0, 2, 3))
    padded = np.pad(dout, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
    pwin = sliding_window_view(padded, (k, k), axis=(2, 3))  # N, O, H, W, k, k
    dx = np.tensordot(pwin, w[:, :, ::-1, ::-1], axes=([1, 4, 5], [0, 2, 3]))  # N, H, W, C
    return np.ascontiguousarray(dx.transpose(0, 3, 1, 2)), dw, db


def _pool_forward(x, size):
    n, c, h, w = x.shape
    h2, w2 = h // size, w // size
    blocks = x[:, :, :h2 * size, :w2 * size].reshape(n, c, h2, size, w2, size)
    blocks = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, size * size)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, arg)


def _pool_backward(dout, cache, size):
    shape, arg = cache
    n, c, h, w = shape
    h2, w2 = dout.shape[2], dout.shape[3]
    blocks = np.zeros((n, c, h2, w2, size * size), dtype=dout.dtype)
    np.put_along_axis(blocks, arg[..., None], dout[..., None], axis=-1)
    blocks = blocks.reshape(n, c, h2, w2, size, size).transpose(0, 1, 2, 4, 3, 5)
    dx = np.zeros(shape, dtype=dout.dtype)
    dx[:, :, :h2 * size, :w2 * size] = blocks.reshape(n, c, h2 * size, w2 * size)
    return dx


def _forward(model, params, x, rng):
    caches = []
    for i, layer in enumerate(model.layers):
        if isinstance(layer, Dense):
            w, b = params[f"layer{i}.weight"], params[f"layer{i}.bias"]
            out = x @ w + b
            if layer.relu:
                out = np.maximum(out, 0.0)
            caches.append((x, out))
        elif isinstance(layer, Conv2D):
            out, win = _conv_forward(x, params[f"layer{i}.weight"], params[f"layer{i}.bias"])
            if layer.relu:
                out = np.maximum(out, 0.0)
            caches.append((win, out))
        elif isinstance(layer, MaxPool2D):
            out, cache = _pool_forward(x, layer.size)
            caches.append(cache)
        elif isinstance(layer, Dropout):
            if rng is None or layer.rate == 0.0:
                out, mask = x, None
            else:
                keep = rng.random(x.shape) >= layer.rate
                mask = keep.astype(x.dtype) / (1.0 - layer.rate)
                out = x * mask
            caches.append(mask)
        elif isinstance(layer, Flatten):
            out = x.reshape(x.shape[0], -1)
            caches.append(x.shape)
        x = out
    return x, caches


def _backward(model, params, dout, caches):
    grads = {}
    for i in range(len(model.layers) - 1, -1, -1):
        layer, cache = model.layers[i], caches[i]
        if isinstance(layer, Dense):
            x, out = cache
            if layer.relu:
                dout = dout * (out > 0)
            grads[f"layer{i}.weight"] = x.T @ dout
            grads[f"layer{i}.bias"] = dout.sum(axis=0)
            if i > 0:
                dout = dout @ params[f"layer{i}.weight"].T
        elif isinstance(layer, Conv2D):
            win, out = cache
            if layer.relu:
                dout = dout * (out > 0)
            dx, dw, db = _conv_backward(dout, win, params[f"layer{i}.weight"])
            grads[f"layer{i}.weight"], grads[f"layer{i}.bias"] = dw, db
            dout = dx
        elif isinstance(layer, MaxPool2D):
            dout = _pool_backward(dout, cache, layer.size)
        elif isinstance(layer, Dropout):
            if cache is not None:
                dout = dout * cache
        elif isinstance(layer, Flatten):
            dout = dout.reshape(cache)
    return grads


def _softmax_xent(logits, y):
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    s = ez.sum(axis=1, keepdims=True)
    probs = ez / s
    m = logits.shape[0]
    loss = float(np.mean(np.log(s[:, 0]) - z[np.arange(m), y]))
    dlogits = probs
    dlogits[np.arange(m), y] -= 1.0
    return loss, dlogits / m


def _prepare(model, params, x):
    check_params(model, params)
    x = np.asarray(x, dtype=params.dtype)
    if x.ndim == len(model.input_shape):
        x = x[None]
    if tuple(x.shape[1:]) != tuple(model.input_shape):
        raise StructureError(f"batch features have shape {x.shape[1:]}, model expects {model.input_shape}", "input")
    return x


def forward_backward(model: ModelSpec, params: ParamVector, batch, dropout_seed=None) -> tuple[float, ParamVector]:
    """Mean cross-entropy over ``batch = (x, y)`` and its gradient.

    Dropout is active only when ``dropout_seed`` is given; masks come from a
    generator seeded with it, so repeated calls are bit-identical.
    """
    x, y = batch
    x = _prepare(model, params, x)
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if x.shape[0] == 0 or x.shape[0] != y.shape[0]:
        raise StructureError(f"batch has {x.shape[0]} examples and {y.shape[0]} labels", "batch")
    rng = None
    if dropout_seed is not None and model.has_dropout:
        rng = np.random.default_rng(dropout_seed)
    logits, caches = _forward(model, params, x, rng)
    loss, dlogits = _softmax_xent(logits, y)
    grads = _backward(model, params, dlogits, caches)
    flat = np.concatenate([grads[name].ravel() for name in params.layout.names]).astype(params.dtype, copy=False)
    return loss, ParamVector(params.layout, flat)


def per_sample_grads(model: ModelSpec, params: ParamVector, batch, dropout_seed=None) -> list[ParamVector]:
    """One gradient per example, each from a size-1 replay of forward_backward."""
    x, y = batch
    x = np.asarray(x)
    y = np.asarray(y).reshape(-1)
    if x.ndim == len(model.input_shape):
        x = x[None]
    out = []
    for i in range(x.shape[0]):
        seed = None if dropout_seed is None else (*np.atleast_1d(dropout_seed).tolist(), i)
        out.append(forward_backward(model, params, (x[i:i + 1], y[i:i + 1]), seed)[1])
    return out


def predict_proba(model: ModelSpec, params: ParamVector, x, chunk: int = 512) -> np.ndarray:
    x = _prepare(model, params, x)
    parts = []
    for start in range(0, x.shape[0], chunk):
        logits, _ = _forward(model, params, x[start:start + chunk], None)
        z = logits - logits.max(axis=1, keepdims=True)
        ez = np.exp(z)
        parts.append(ez / ez.sum(axis=1, keepdims=True))
    return np.concatenate(parts)


def evaluate(model: ModelSpec, params: ParamVector, x, y) -> tuple[float, float]:
    """Return ``(accuracy, mean cross-entropy)`` with dropout disabled."""
    probs = predict_proba(model, params, x)
    y = np.asarray(y, dtype=np.int64)
    acc = float(np.mean(probs.argmax(axis=1) == y))
    loss = float(-np.mean(np.log(np.clip(probs[np.arange(len(y)), y], 1e-300, None))))
    return acc, loss
