"""Fully connected ReLU network trained with Adam on mean squared error.

Samples are rows. Loss convention: mean over batch *and* output units of
the squared residual, i.e. ||y - t||^2 / (batch * n_out).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, TrainingError


@dataclass(frozen=True)
class MLPArchitecture:
    widths: tuple

    def __post_init__(self):
        w = tuple(int(x) for x in self.widths)
        if len(w) < 2 or min(w) < 1:
            raise DimensionError(f"need at least input and output widths >= 1, got {w}")
        object.__setattr__(self, "widths", w)

    @classmethod
    def build(cls, n_in, hidden, n_out):
        return cls((n_in, *hidden, n_out))

    @property
    def n_in(self):
        return self.widths[0]

    @property
    def n_out(self):
        return self.widths[-1]


@dataclass
class MLPParams:
    weights: list  # W[l] has shape (fan_in, fan_out)
    biases: list
    seed: int | None = None

    @property
    def arch(self):
        return MLPArchitecture((self.weights[0].shape[0], *(W.shape[1] for W in self.weights)))

    def copy(self):
        return MLPParams([W.copy() for W in self.weights], [b.copy() for b in self.biases], self.seed)

    def flat(self):
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in zip(self.weights, self.biases)])

    def n_params(self):
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 5000
    batch_size: int = 128
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning rate must be nonnegative")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs >= 0 and batch_size >= 1 required")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**(d or {}))


def init_params(arch: MLPArchitecture, seed=0):
    """He-style uniform initialization, U(-sqrt(6/fan_in), +sqrt(6/fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    Ws, bs = [], []
    for fan_in, fan_out in zip(arch.widths[:-1], arch.widths[1:]):
        lim = math.sqrt(6.0 / fan_in)
        Ws.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return MLPParams(Ws, bs, seed)


def _check_input(params, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != params.weights[0].shape[0]:
        raise DimensionError(f"input shape {x.shape} does not match width {params.weights[0].shape[0]}")
    return X, single


def forward(params: MLPParams, x):
    X, single = _check_input(params, x)
    h = X
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ W + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h[0] if single else h


def loss_and_grad(params: MLPParams, X, Y):
    """MSE and its gradient, as ([dW...], [db...])."""
    X, _ = _check_input(params, X)
    Y = np.asarray(Y, dtype=float).reshape(X.shape[0], -1)
    n = X.shape[0]
    if n == 0:
        raise DimensionError("empty batch")
    acts = [X]
    pre = []
    h = X
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ W + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < last else z
        acts.append(h)
    res = h - Y
    loss = float(np.sum(res * res) / res.size)
    g = (2.0 / res.size) * res
    dWs = [None] * len(params.weights)
    dbs = [None] * len(params.weights)
    for i in range(last, -1, -1):
        dWs[i] = acts[i].T @ g
        dbs[i] = g.sum(axis=0)
        if i > 0:
            g = (g @ params.weights[i].T) * (pre[i - 1] > 0)
    return loss, (dWs, dbs)


class Adam:
    def __init__(self, params: MLPParams, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m = [np.zeros_like(p) for p in params.weights + params.biases]
        self.v = [np.zeros_like(p) for p in params.weights + params.biases]

    def step(self, params: MLPParams, grads):
        c = self.cfg
        self.t += 1
        b1t = 1.0 - c.beta1 ** self.t
        b2t = 1.0 - c.beta2 ** self.t
        tensors = params.weights + params.biases
        for p, g, m, v in zip(tensors, list(grads[0]) + list(grads[1]), self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p -= c.learning_rate * (m / b1t) / (np.sqrt(v / b2t) + c.eps)


@dataclass
class TrainResult:
    params: MLPParams
    curve: np.ndarray = field(repr=False)


def train(arch: MLPArchitecture, X, Y, cfg: TrainConfig, params: MLPParams | None = None):
    """Minibatch Adam. The batch size is clipped to the dataset size."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if n == 0:
        raise DimensionError("training data is empty")
    Y = np.asarray(Y, dtype=float).reshape(n, -1)
    if X.shape[1] != arch.n_in or Y.shape[1] != arch.n_out:
        raise DimensionError(f"data shapes {X.shape}/{Y.shape} do not match architecture {arch.widths}")
    params = init_params(arch, cfg.seed) if params is None else params.copy()
    opt = Adam(params, cfg)
    rng = np.random.default_rng(cfg.seed + 1)
    bs = min(cfg.batch_size, n)
    curve = np.empty(cfg.epochs)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            loss, grads = loss_and_grad(params, X[idx], Y[idx])
            if not math.isfinite(loss) or loss > 1e12:
                raise TrainingError(f"loss {loss} at epoch {epoch}, batch {start // bs}",
                                    trial=epoch, curve=curve[:epoch].tolist())
            total += loss * idx.size
            opt.step(params, grads)
        curve[epoch] = total / n
    return TrainResult(params, curve)


def grad_check(params: MLPParams, X, Y, h=1e-5, max_params=10_000, seed=0, kink_margin=1e-3):
    """Largest relative gap between analytic and central-difference gradients.

    Hidden units whose pre-activation sits within ``kink_margin`` of zero
    are moved off the kink (bias nudge on a copy) before differencing.
    """
    p = params.copy()
    X, _ = _check_input(p, X)
    Y = np.asarray(Y, dtype=float).reshape(X.shape[0], -1)
    for _ in range(10):
        h_act = X
        moved = False
        for i, (W, b) in enumerate(zip(p.weights[:-1], p.biases[:-1])):
            z = h_act @ W + b
            near = np.any(np.abs(z) < kink_margin, axis=0)
            if near.any():
                b[near] += 4 * kink_margin
                moved = True
                z = h_act @ W + b
            h_act = np.maximum(z, 0.0)
        if not moved:
            break
    _, (dWs, dbs) = loss_and_grad(p, X, Y)
    tensors = p.weights + p.biases
    analytic = dWs + dbs
    slots = [(t, idx) for t in range(len(tensors)) for idx in np.ndindex(tensors[t].shape)]
    if len(slots) > max_params:
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(slots), size=max_params, replace=False)
        slots = [slots[i] for i in sorted(pick)]
    ga = np.array([analytic[t][idx] for t, idx in slots])
    gf = np.empty_like(ga)
    for k, (t, idx) in enumerate(slots):
        orig = tensors[t][idx]
        tensors[t][idx] = orig + h
        lp, _ = loss_and_grad(p, X, Y)
        tensors[t][idx] = orig - h
        lm, _ = loss_and_grad(p, X, Y)
        tensors[t][idx] = orig
        gf[k] = (lp - lm) / (2 * h)
    floor = 1e-6 * max(np.max(np.abs(ga)), np.max(np.abs(gf)), 1e-300)
    return float(np.max(np.abs(ga - gf) / np.maximum(np.abs(ga) + np.abs(gf), floor)))


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X, mode="feature"):
        """Per-feature scaling, or one shared scale (``mode="global"``).

        The shared scale keeps the relative size of low-variance directions,
        which matters for latent coordinates ordered by singular value.
        """
        X = np.asarray(X, dtype=float)
        mean = X.mean(axis=0)
        if mode == "feature":
            scale = X.std(axis=0)
        elif mode == "global":
            s = float(np.sqrt(np.mean((X - mean) ** 2)))
            scale = np.full(X.shape[1], s)
        else:
            raise ValueError(f"unknown standardization mode {mode!r}")
        scale[scale == 0] = 1.0
        return cls(mean, scale)

    @classmethod
    def identity(cls, n):
        return cls(np.zeros(n), np.ones(n))

    def transform(self, X):
        return (np.asarray(X, dtype=float) - self.mean) / self.scale

    def inverse(self, Z):
        return np.asarray(Z, dtype=float) * self.scale + self.mean


@dataclass
class Regressor:
    """Network plus input/target standardization."""

    params: MLPParams
    x_std: Standardizer
    y_std: Standardizer

    def predict(self, X):
        return self.y_std.inverse(forward(self.params, self.x_std.transform(X)))

    def predict_one(self, x):
        # single-sample path used for streaming (per-sample) evaluation
        h = (np.asarray(x, dtype=float) - self.x_std.mean) / self.x_std.scale
        last = len(self.params.weights) - 1
        for i, (W, b) in enumerate(zip(self.params.weights, self.params.biases)):
            h = h @ W + b
            if i < last:
                h = np.maximum(h, 0.0)
        return h * self.y_std.scale + self.y_std.mean


def fit_regressor(X, Y, hidden, cfg: TrainConfig, standardize=True):
    """``standardize``: True/"feature", "global", or False for none."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float).reshape(X.shape[0], -1)
    mode = "feature" if standardize is True else standardize
    xs = Standardizer.fit(X, mode) if mode else Standardizer.identity(X.shape[1])
    ys = Standardizer.fit(Y, mode) if mode else Standardizer.identity(Y.shape[1])
    arch = MLPArchitecture.build(X.shape[1], hidden, Y.shape[1])
    res = train(arch, xs.transform(X), ys.transform(Y), cfg)
    return Regressor(res.params, xs, ys), res.curve


# ---------------------------------------------------------------------------
# model files: JSON header + little-endian float64 payload
# ---------------------------------------------------------------------------

def regressor_arrays(reg: Regressor, prefix=""):
    arrays = {}
    for i, (W, b) in enumerate(zip(reg.params.weights, reg.params.biases)):
        arrays[f"{prefix}W{i}"] = W
        arrays[f"{prefix}b{i}"] = b
    arrays[f"{prefix}x_mean"] = reg.x_std.mean
    arrays[f"{prefix}x_scale"] = reg.x_std.scale
    arrays[f"{prefix}y_mean"] = reg.y_std.mean
    arrays[f"{prefix}y_scale"] = reg.y_std.scale
    return arrays


def regressor_from_arrays(arrays, n_layers, prefix="", seed=None):
    Ws = [arrays[f"{prefix}W{i}"] for i in range(n_layers)]
    bs = [arrays[f"{prefix}b{i}"] for i in range(n_layers)]
    return Regressor(
        MLPParams(Ws, bs, seed),
        Standardizer(arrays[f"{prefix}x_mean"], arrays[f"{prefix}x_scale"]),
        Standardizer(arrays[f"{prefix}y_mean"], arrays[f"{prefix}y_scale"]),
    )


def save_arrays(json_path, header, arrays):
    """Write ``header`` (plus an array index) to JSON and the arrays to a .bin payload."""
    json_path = Path(json_path)
    bin_path = json_path.with_suffix(".bin")
    index, offset, chunks = [], 0, []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        index.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.nbytes
    doc = dict(header)
    doc["payload"] = {"file": bin_path.name, "dtype": "<f8", "arrays": index}
    from .io import atomic_write_bytes, atomic_write_text

    atomic_write_bytes(bin_path, b"".join(chunks))
    atomic_write_text(json_path, json.dumps(doc, indent=2, sort_keys=True))
    return json_path, bin_path


def load_arrays(json_path):
    json_path = Path(json_path)
    doc = json.loads(json_path.read_text())
    raw = (json_path.parent / doc["payload"]["file"]).read_bytes()
    arrays = {}
    for e in doc["payload"]["arrays"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        a = np.frombuffer(raw, dtype="<f8", count=count, offset=e["offset"])
        arrays[e["name"]] = a.reshape(e["shape"]).copy()
    return doc, arrays
