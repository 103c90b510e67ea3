"""LSTM layers, the Adam optimizer, and checkpoint serialization.

Weights initialize uniform(-0.1, 0.1) from a caller-supplied seeded generator;
biases start at zero. Gradients are clipped by global norm before each Adam
step (2.0 unless configured otherwise).
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .autodiff import (
    Parameter,
    Tensor,
    add,
    concat,
    matmul,
    mul,
    narrow,
    sigmoid,
    tanh,
)

INIT_SCALE = 0.1


def uniform_param(name: str, shape, rng: np.random.Generator, trainable: bool = True) -> Parameter:
    return Parameter(name, rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape), trainable=trainable)


def zeros_param(name: str, shape, trainable: bool = True) -> Parameter:
    return Parameter(name, np.zeros(shape), trainable=trainable)


class LstmParams:
    """Gate weights for one LSTM direction, gate order [input, forget, cell, output]."""

    def __init__(self, prefix: str, input_size: int, hidden_size: int, rng: np.random.Generator):
        self.hidden_size = hidden_size
        self.w_x = uniform_param(f"{prefix}.w_x", (input_size, 4 * hidden_size), rng)
        self.w_h = uniform_param(f"{prefix}.w_h", (hidden_size, 4 * hidden_size), rng)
        self.b = zeros_param(f"{prefix}.b", (1, 4 * hidden_size))

    def parameters(self) -> list[Parameter]:
        return [self.w_x, self.w_h, self.b]


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor, params: LstmParams):
    """One step of the standard LSTM gating; returns (h, c), each (1, H)."""
    hs = params.hidden_size
    gates = add(add(matmul(x, params.w_x), matmul(h_prev, params.w_h)), params.b)
    i = sigmoid(narrow(gates, 1, 0, hs))
    f = sigmoid(narrow(gates, 1, hs, hs))
    g = tanh(narrow(gates, 1, 2 * hs, hs))
    o = sigmoid(narrow(gates, 1, 3 * hs, hs))
    c = add(mul(f, c_prev), mul(i, g))
    h = mul(o, tanh(c))
    return h, c


def lstm_run(xs: Tensor, params: LstmParams, reverse: bool = False):
    """Scan an (n, D) input; returns per-position h list (input order) and final (h, c)."""
    n = xs.shape[0]
    if n == 0:
        raise ValueError("lstm_run on empty sequence")
    h = Tensor(np.zeros((1, params.hidden_size)))
    c = Tensor(np.zeros((1, params.hidden_size)))
    positions = range(n - 1, -1, -1) if reverse else range(n)
    outputs: list[Tensor | None] = [None] * n
    for t in positions:
        h, c = lstm_cell(narrow(xs, 0, t, 1), h, c, params)
        outputs[t] = h
    return outputs, (h, c)


def bilstm(xs: Tensor, fwd: LstmParams, bwd: LstmParams) -> Tensor:
    """Concatenate forward and backward hidden states per position, (n, 2H)."""
    if xs.shape[0] == 0:
        raise ValueError("bilstm on empty sequence")
    fwd_states, _ = lstm_run(xs, fwd)
    bwd_states, _ = lstm_run(xs, bwd, reverse=True)
    rows = [concat([f, b], axis=1) for f, b in zip(fwd_states, bwd_states)]
    return concat(rows, axis=0)


class Adam:
    """Adam with global-norm gradient clipping; frozen parameters never move."""

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 clip_norm: float | None = 2.0):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self._m = {id(p): np.zeros_like(p.data) for p in self.params if p.trainable}
        self._v = {id(p): np.zeros_like(p.data) for p in self.params if p.trainable}

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad[...] = 0.0

    def clip_gradients(self) -> float:
        total = np.sqrt(sum(float((p.grad**2).sum()) for p in self.params if p.trainable))
        if self.clip_norm is not None and total > self.clip_norm > 0:
            scale = self.clip_norm / total
            for p in self.params:
                if p.trainable:
                    p.grad *= scale
        return total

    def step(self) -> None:
        self.clip_gradients()
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p in self.params:
            if not p.trainable:
                continue
            m = self._m[id(p)]
            v = self._v[id(p)]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad**2
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def decay_lr(self, factor: float) -> None:
        if factor <= 0:
            raise ValueError(f"decay factor must be positive, got {factor}")
        self.lr *= factor


CHECKPOINT_VERSION = 1


def save_checkpoint(path, config: dict, params) -> None:
    """One JSON header line, then each parameter as little-endian float64."""
    params = list(params)
    header = {
        "version": CHECKPOINT_VERSION,
        "config": config,
        "manifest": [
            {"name": p.name, "shape": list(p.data.shape), "trainable": p.trainable}
            for p in params
        ],
    }
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8"))
            fh.write(b"\n")
            for p in params:
                fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path):
    """Returns (config, {name: array}, manifest)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    nl = blob.index(b"\n")
    header = json.loads(blob[:nl].decode("utf-8"))
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
    offset = nl + 1
    arrays = {}
    for entry in header["manifest"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        arr = np.frombuffer(blob[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        arrays[entry["name"]] = arr
        offset = end
    if offset != len(blob):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return header["config"], arrays, header["manifest"]
