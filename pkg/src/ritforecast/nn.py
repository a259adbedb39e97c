"""Small feed-forward networks with hand-written backprop and Adam.

Two output heads are supported:

``survival``
    two softplus outputs, the Weibull scale and shape, each floored at
    ``EPS``. The scale is in units of ``time_scale`` steps.
``classifier``
    one logit, read through a sigmoid.

Losses take the raw (pre-activation) head output so the head nonlinearity
is differentiated together with the loss.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

EPS = 1e-4
HEADS = ("survival", "classifier")
FORMAT = "ritforecast-mlp"


def softplus(z):
    return np.logaddexp(0.0, z)


def sigmoid(z):
    # split by sign so neither branch overflows
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class MLP:
    """ReLU network ``n_inputs -> hidden... -> head``.

    Inputs are standardized with ``mean`` / ``std`` before the first layer;
    both are part of the model and saved with it.
    """

    def __init__(self, n_inputs: int, hidden: Sequence[int] = (128,), head: str = "classifier",
                 seed: int = 0, time_scale: float = 1.0):
        if head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}, got {head!r}")
        self.head = head
        self.time_scale = float(time_scale)
        self.metadata: Dict = {}
        sizes = [n_inputs, *hidden, 2 if head == "survival" else 1]
        rng = np.random.default_rng(seed)
        self.weights: List[np.ndarray] = []
        self.biases: List[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = math.sqrt(6.0 / fan_in)
            self.weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        # keep the initial head near zero so training starts from a flat prediction
        self.weights[-1] *= 0.01
        self.mean = np.zeros(n_inputs)
        self.std = np.ones(n_inputs)

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[0]

    @property
    def params(self) -> List[np.ndarray]:
        return [*self.weights, *self.biases]

    def set_params(self, params: Sequence[np.ndarray]) -> None:
        n = len(self.weights)
        self.weights = [np.array(p, dtype=float) for p in params[:n]]
        self.biases = [np.array(p, dtype=float) for p in params[n:]]

    def copy(self) -> "MLP":
        other = MLP.__new__(MLP)
        other.head = self.head
        other.time_scale = self.time_scale
        other.metadata = dict(self.metadata)
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        other.mean = self.mean.copy()
        other.std = self.std.copy()
        return other

    def fit_normalization(self, X: np.ndarray) -> None:
        self.mean = X.mean(axis=0)
        std = X.std(axis=0)
        # constant columns pass through centered but unscaled
        self.std = np.where(std > 1e-12, std, 1.0)

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_inputs:
            raise ValueError(f"expected {self.n_inputs} features, got {X.shape[1]}")
        return X

    def raw(self, X, cache: Optional[list] = None) -> np.ndarray:
        """Pre-activation head output, shape (n, n_out)."""
        h = (self._check(X) - self.mean) / self.std
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if cache is not None:
                cache.append(h)
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
        return h

    def forward(self, X) -> np.ndarray:
        """Head output: ``(n, 2)`` of (scale, shape) or ``(n,)`` probabilities."""
        z = self.raw(X)
        if self.head == "survival":
            return softplus(z) + EPS
        return sigmoid(z[:, 0])

    def backward(self, cache: list, dz: np.ndarray) -> List[np.ndarray]:
        """Gradients of ``sum(dz * raw)`` w.r.t. weights then biases."""
        gw = [None] * len(self.weights)
        gb = [None] * len(self.biases)
        g = dz
        for i in range(len(self.weights) - 1, -1, -1):
            h = cache[i]
            gw[i] = h.T @ g
            gb[i] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.weights[i].T) * (h > 0)
        return [*gw, *gb]

    # -- persistence -----------------------------------------------------

    def to_dict(self) -> Dict:
        return {
            "format": FORMAT,
            "version": 1,
            "head": self.head,
            "time_scale": self.time_scale,
            "layers": [{"weight": w.tolist(), "bias": b.tolist()} for w, b in zip(self.weights, self.biases)],
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: Dict) -> "MLP":
        if d.get("format") != FORMAT:
            raise ValueError(f"not a {FORMAT} file")
        m = cls.__new__(cls)
        m.head = d["head"]
        m.time_scale = float(d["time_scale"])
        m.weights = [np.array(layer["weight"], dtype=float) for layer in d["layers"]]
        m.biases = [np.array(layer["bias"], dtype=float) for layer in d["layers"]]
        for a, b in zip(m.weights[:-1], m.weights[1:]):
            if a.shape[1] != b.shape[0]:
                raise ValueError("layer shapes do not chain")
        m.mean = np.array(d["mean"], dtype=float)
        m.std = np.array(d["std"], dtype=float)
        m.metadata = dict(d.get("metadata", {}))
        return m

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "MLP":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# -- losses ---------------------------------------------------------------
# Each loss maps (raw head output, targets) to (mean loss, d mean loss / d raw).


def weibull_nll_terms(lam, rho, t, censored):
    """Per-sample censored Weibull negative log-likelihood and its partials.

    Returns ``(loss, dloss/dlam, dloss/drho)``. Events contribute
    ``-log f(t)``; censored samples contribute ``-log S(t) = (t/lam)**rho``.
    """
    lam = np.asarray(lam, dtype=float)
    rho = np.asarray(rho, dtype=float)
    t = np.asarray(t, dtype=float)
    event = 1.0 - np.asarray(censored, dtype=float)
    log_ratio = np.log(t) - np.log(lam)
    u = np.exp(rho * log_ratio)
    loss = u - event * (np.log(rho) - np.log(lam) + (rho - 1.0) * log_ratio)
    d_lam = (event - u) * rho / lam
    d_rho = u * log_ratio - event * (1.0 / rho + log_ratio)
    return loss, d_lam, d_rho


class CensoredWeibullLoss:
    """Mean censored Weibull NLL on survival-head output.

    ``targets`` is an ``(n, 2)`` array of (time, censored) with time in
    steps; it is divided by the model's ``time_scale``.
    """

    def __init__(self, time_scale: float = 1.0):
        self.time_scale = time_scale

    def __call__(self, z: np.ndarray, targets: np.ndarray) -> Tuple[float, np.ndarray]:
        lam = softplus(z[:, 0]) + EPS
        rho = softplus(z[:, 1]) + EPS
        t = targets[:, 0] / self.time_scale
        loss, d_lam, d_rho = weibull_nll_terms(lam, rho, t, targets[:, 1])
        n = len(z)
        dz = np.empty_like(z)
        dz[:, 0] = d_lam * sigmoid(z[:, 0]) / n
        dz[:, 1] = d_rho * sigmoid(z[:, 1]) / n
        return float(loss.mean()), dz


class BinaryCrossEntropy:
    """Mean logistic loss on a single-logit head; ``targets`` in {0, 1}."""

    def __call__(self, z: np.ndarray, targets: np.ndarray) -> Tuple[float, np.ndarray]:
        logit = z[:, 0]
        y = np.asarray(targets, dtype=float).reshape(-1)
        loss = np.logaddexp(0.0, logit) - y * logit
        dz = ((sigmoid(logit) - y) / len(y))[:, None]
        return float(loss.mean()), dz


def gradient(model: MLP, loss_fn: Callable, X, targets) -> Tuple[float, List[np.ndarray]]:
    """Mean batch loss and its gradient w.r.t. every parameter of ``model``."""
    X = model._check(X)
    if len(X) == 0:
        raise ValueError("empty batch")
    cache: list = []
    z = model.raw(X, cache)
    value, dz = loss_fn(z, np.asarray(targets))
    if not math.isfinite(value):
        raise FloatingPointError(f"non-finite loss {value!r} on a batch of {len(X)}")
    return value, model.backward(cache, dz)


def evaluate(model: MLP, loss_fn: Callable, X, targets, batch_size: int = 65536) -> float:
    X = model._check(X)
    targets = np.asarray(targets)
    total = 0.0
    for start in range(0, len(X), batch_size):
        value, _ = loss_fn(model.raw(X[start:start + batch_size]), targets[start:start + batch_size])
        total += value * len(X[start:start + batch_size])
    return total / len(X)


@dataclass(frozen=True)
class TrainParams:
    lr: float = 1e-3
    epochs: int = 10
    batch_size: int = 256
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    seed: int = 0


def optimize(model: MLP, X, targets, loss_fn: Callable, hp: TrainParams = TrainParams()):
    """Minibatch Adam.

    Returns ``(model, curve)`` where ``curve[k]`` is the full-data loss after
    ``k`` epochs (``curve[0]`` before training). The returned model holds the
    parameters from the epoch with the lowest full-data loss, so its loss
    never exceeds the starting one.
    """
    X = model._check(X)
    targets = np.asarray(targets)
    if len(X) == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(hp.seed)
    params = model.params
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    curve = [evaluate(model, loss_fn, X, targets)]
    best, best_params = curve[0], [p.copy() for p in params]
    k = 0
    for _ in range(hp.epochs):
        order = rng.permutation(len(X))
        for start in range(0, len(X), hp.batch_size):
            idx = order[start:start + hp.batch_size]
            _, grads = gradient(model, loss_fn, X[idx], targets[idx])
            k += 1
            for p, g, mi, vi in zip(params, grads, m, v):
                if hp.weight_decay:
                    g = g + hp.weight_decay * p
                mi *= hp.beta1
                mi += (1 - hp.beta1) * g
                vi *= hp.beta2
                vi += (1 - hp.beta2) * g * g
                mhat = mi / (1 - hp.beta1 ** k)
                vhat = vi / (1 - hp.beta2 ** k)
                p -= hp.lr * mhat / (np.sqrt(vhat) + 1e-8)
        loss = evaluate(model, loss_fn, X, targets)
        if not math.isfinite(loss):
            raise FloatingPointError(f"training diverged after {len(curve)} epochs")
        curve.append(loss)
        if loss < best:
            best, best_params = loss, [p.copy() for p in params]
    model.set_params(best_params)
    return model, curve
