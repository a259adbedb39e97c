"""Success-probability forecasters and the threshold monitor that uses them.

Three models estimate ``p_t``, the chance that the insertion succeeds inside
a horizon starting at step ``t``:

* :class:`TimeOnlyForecaster`: empirical success-time distribution, no
  observations used.
* :class:`WeibullSurvivalRegressor`: MLP mapping the recent history to a
  Weibull success-time law; ``p_t = S(t) - S(t + T_F)``.
* :class:`SuccessClassifier`: MLP classifying whether the episode ends in
  success before the time limit.

All three follow the scikit-learn estimator protocol (``fit`` returns
``self``, hyper-parameters live in ``__init__`` and ``get_params``).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, List, NamedTuple, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import nn
from .pose import PlanarPose

TIME_ONLY = "time_only"
MOVING_WINDOW = "moving_window"
FULL_TRAJECTORY = "full_trajectory"
KINDS = (TIME_ONLY, MOVING_WINDOW, FULL_TRAJECTORY)


# -- features ---------------------------------------------------------------


def n_features(history: int) -> int:
    return 4 * history + 1


def make_features(history: Sequence[PlanarPose], t: int, max_steps: int, n_history: int,
                  include_time: bool = True) -> np.ndarray:
    """Flatten the last ``n_history`` relative poses (oldest first) and ``t / T``.

    Short histories are front-padded with their oldest entry.
    """
    if not history:
        raise ValueError("history is empty")
    recent = list(history)[-n_history:]
    recent = [recent[0]] * (n_history - len(recent)) + recent
    out = np.empty(4 * n_history + 1)
    for i, p in enumerate(recent):
        out[4 * i:4 * i + 4] = (p.x, p.y, p.z, p.yaw)
    out[-1] = t / max_steps if include_time else 0.0
    return out


def episode_features(obs: np.ndarray, max_steps: int, n_history: int, include_time: bool = True) -> np.ndarray:
    """Feature rows for every step of one episode's ``(L, 4)`` observation array."""
    obs = np.asarray(obs, dtype=float).reshape(-1, 4)
    padded = np.vstack([np.repeat(obs[:1], n_history - 1, axis=0), obs])
    windows = sliding_window_view(padded, (n_history, 4))[:, 0].reshape(len(obs), 4 * n_history)
    t = np.arange(len(obs)) / max_steps if include_time else np.zeros(len(obs))
    return np.hstack([windows, t[:, None]])


class Dataset(NamedTuple):
    X: np.ndarray
    success_time: np.ndarray
    censored: np.ndarray
    label: np.ndarray  # 1 = episode succeeded
    episode_id: np.ndarray
    t: np.ndarray

    def __len__(self):
        return len(self.X)

    def survival_targets(self) -> np.ndarray:
        return np.column_stack([self.success_time, self.censored]).astype(float)


def build_dataset(trajectories: Iterable, max_steps: int, n_history: int = 10,
                  include_time: bool = True) -> Dataset:
    """One labeled sample per (episode, step) of monitor-free rollouts.

    Successful episodes carry their success time; failed ones are censored at
    ``max_steps``.
    """
    parts = []
    for traj in trajectories:
        obs = traj.observations()
        n = len(obs)
        if n == 0:
            continue
        parts.append((
            episode_features(obs, max_steps, n_history, include_time),
            np.full(n, traj.success_time if traj.success else max_steps, dtype=float),
            np.full(n, not traj.success),
            np.full(n, int(traj.success)),
            np.full(n, traj.episode_id),
            np.arange(n),
        ))
    if not parts:
        raise ValueError("no trajectories to build a dataset from")
    cols = list(zip(*parts))
    return Dataset(*(np.concatenate(c) for c in cols))


# -- time-only model ---------------------------------------------------------


@dataclass(frozen=True)
class TimeOnlyTable:
    """Counts per step ``t = 0..T``; ``p`` is NaN where no episode is alive."""

    alive: np.ndarray
    succeeded: np.ndarray
    p: np.ndarray

    @property
    def max_steps(self) -> int:
        return len(self.p) - 1

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "alive", "succeeded", "p"])
            for t, (a, s, p) in enumerate(zip(self.alive, self.succeeded, self.p)):
                w.writerow([t, int(a), int(s), "" if np.isnan(p) else repr(float(p))])

    @classmethod
    def from_csv(cls, path) -> "TimeOnlyTable":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows or set(rows[0]) != {"t", "alive", "succeeded", "p"}:
            raise ValueError(f"{path}: expected columns t, alive, succeeded, p")
        if [int(r["t"]) for r in rows] != list(range(len(rows))):
            raise ValueError(f"{path}: t must run 0..T without gaps")
        return cls(
            np.array([int(r["alive"]) for r in rows]),
            np.array([int(r["succeeded"]) for r in rows]),
            np.array([float(r["p"]) if r["p"] else np.nan for r in rows]),
        )


def fit_time_only(success_time, success, max_steps: int) -> TimeOnlyTable:
    """Empirical ``P(success by T | still running at t)``.

    An episode counts as running at ``t`` when its success time is at least
    ``t`` (failures are censored at ``T`` and so run through every step).
    """
    ts = np.asarray(success_time, dtype=int)
    ok = np.asarray(success, dtype=bool)
    if len(ts) == 0:
        raise ValueError("need at least one episode")
    ts = np.where(ok, ts, max_steps)
    # alive[t] = #(ts >= t): reverse cumulative histogram
    hist_all = np.bincount(ts, minlength=max_steps + 1)[: max_steps + 1]
    hist_ok = np.bincount(ts[ok & (ts < max_steps)], minlength=max_steps + 1)[: max_steps + 1]
    alive = np.cumsum(hist_all[::-1])[::-1]
    succeeded = np.cumsum(hist_ok[::-1])[::-1]
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(alive > 0, succeeded / np.maximum(alive, 1), np.nan)
    return TimeOnlyTable(alive, succeeded, p)


def predict_time_only(table: TimeOnlyTable, t: int) -> Optional[float]:
    """Table lookup; ``None`` where no training episode was alive at ``t``."""
    if t < 0 or t > table.max_steps:
        raise ValueError(f"t={t} outside 0..{table.max_steps}")
    p = table.p[t]
    return None if np.isnan(p) else float(p)


class TimeOnlyForecaster(BaseEstimator):
    def __init__(self, max_steps: int = 255):
        self.max_steps = max_steps

    def fit(self, success_time, success):
        self.table_ = fit_time_only(success_time, success, self.max_steps)
        return self

    def fit_trajectories(self, trajectories):
        trajs = list(trajectories)
        return self.fit([tr.success_time for tr in trajs], [tr.success for tr in trajs])

    def predict_proba(self, t) -> np.ndarray:
        """Success probability per step; NaN marks steps without data."""
        check_is_fitted(self, "table_")
        t = np.asarray(t, dtype=int)
        if np.any((t < 0) | (t > self.max_steps)):
            raise ValueError(f"t outside 0..{self.max_steps}")
        return self.table_.p[t]


# -- Weibull survival --------------------------------------------------------


def weibull_survival(tau, lam, rho):
    """``exp(-(tau / lam) ** rho)``, the probability success has not happened by ``tau``."""
    lam = np.asarray(lam, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if np.any(lam <= 0) or np.any(rho <= 0):
        raise ValueError("Weibull scale and shape must be positive")
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ValueError("tau must be non-negative")
    out = np.exp(-((tau / lam) ** rho))
    return float(out) if out.ndim == 0 else out


def censored_weibull_nll(lam, rho, success_time, censored):
    """Negative log-likelihood of right-censored Weibull success times."""
    if np.any(np.asarray(lam) <= 0) or np.any(np.asarray(rho) <= 0):
        raise ValueError("Weibull scale and shape must be positive")
    if np.any(np.asarray(success_time) <= 0):
        raise ValueError("success time must be positive")
    loss, _, _ = nn.weibull_nll_terms(lam, rho, success_time, censored)
    if not np.all(np.isfinite(loss)):
        raise FloatingPointError("non-finite Weibull likelihood")
    return float(loss) if np.ndim(loss) == 0 else loss


def window_probability(t, horizon, lam, rho):
    """Probability that success lands in ``[t, t + horizon]``."""
    return weibull_survival(t, lam, rho) - weibull_survival(np.asarray(t) + horizon, lam, rho)


class _MLPEstimator(BaseEstimator):
    head = "classifier"

    def _train_params(self):
        return nn.TrainParams(lr=self.lr, epochs=self.epochs, batch_size=self.batch_size,
                              weight_decay=self.weight_decay, seed=self.random_state)

    def _new_model(self, n_inputs):
        model = nn.MLP(n_inputs, self.hidden, head=self.head, seed=self.random_state,
                       time_scale=getattr(self, "time_scale", 1.0))
        return model

    def save(self, path, **metadata) -> None:
        check_is_fitted(self, "model_")
        self.model_.metadata = {**self.model_.metadata, **metadata, "params": self.get_params()}
        self.model_.save(path)

    @classmethod
    def load(cls, path):
        model = nn.MLP.load(path)
        if model.head != cls.head:
            raise ValueError(f"{path} holds a {model.head} model, expected {cls.head}")
        params = dict(model.metadata.get("params", {}))
        if "hidden" in params:
            params["hidden"] = tuple(params["hidden"])
        est = cls(**params)
        est.model_ = model
        est.n_features_in_ = model.n_inputs
        return est


class WeibullSurvivalRegressor(RegressorMixin, _MLPEstimator):
    """MLP emitting a Weibull (scale, shape) per feature row.

    ``y`` for :meth:`fit` is an ``(n, 2)`` array of (success time in steps,
    censored flag). Scales come back in steps.
    """

    head = "survival"

    def __init__(self, hidden=(128, 128), lr=1e-3, epochs=10, batch_size=256,
                 weight_decay=0.0, time_scale=255.0, random_state=0):
        self.hidden = hidden
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.time_scale = time_scale
        self.random_state = random_state

    def fit(self, X, y):
        X = check_array(X)
        y = check_array(y)
        if y.shape[1] != 2 or len(y) != len(X):
            raise ValueError("y must be (n_samples, 2): success time, censored")
        self.n_features_in_ = X.shape[1]
        model = self._new_model(X.shape[1])
        model.fit_normalization(X)
        self.model_, self.loss_curve_ = nn.optimize(
            model, X, y, nn.CensoredWeibullLoss(self.time_scale), self._train_params())
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        out = self.model_.forward(check_array(X))
        out[:, 0] *= self.model_.time_scale
        return out

    def survival_function(self, X, tau) -> np.ndarray:
        params = self.predict(X)
        return weibull_survival(tau, params[:, 0], params[:, 1])

    def window_probability(self, X, t, horizon) -> np.ndarray:
        params = self.predict(X)
        return window_probability(t, horizon, params[:, 0], params[:, 1])

    def score(self, X, y):
        """Mean censored log-likelihood (higher is better)."""
        params = self.predict(X)
        y = check_array(y)
        return -float(np.mean(censored_weibull_nll(params[:, 0], params[:, 1], y[:, 0], y[:, 1])))


def predict_moving_window(model: WeibullSurvivalRegressor, features, t, horizon) -> np.ndarray:
    return model.window_probability(np.atleast_2d(features), t, horizon)


def upsample_minority(X, y, rng: np.random.Generator):
    """Replicate the smaller class until both class counts match.

    Whole copies first, then a without-replacement draw for the remainder,
    so every minority sample appears at least once.
    """
    y = np.asarray(y).astype(int)
    counts = np.bincount(y, minlength=2)
    if counts.min() == 0:
        raise ValueError("both classes are needed to train a classifier")
    minority = int(np.argmin(counts))
    small = np.flatnonzero(y == minority)
    reps, rem = divmod(counts.max(), counts.min())
    extra = np.concatenate([np.tile(small, reps - 1), rng.choice(small, rem, replace=False)])
    idx = np.concatenate([np.arange(len(y)), extra]).astype(int)
    return np.asarray(X)[idx], y[idx]


class SuccessClassifier(ClassifierMixin, _MLPEstimator):
    """MLP estimating the probability that the episode ends in success.

    Failures are up-sampled to the number of successes before training.
    """

    head = "classifier"

    def __init__(self, hidden=(128,), lr=1e-3, epochs=10, batch_size=256,
                 weight_decay=0.0, upsample=True, random_state=0):
        self.hidden = hidden
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.upsample = upsample
        self.random_state = random_state

    def fit(self, X, y):
        X = check_array(X)
        y = np.asarray(y).astype(int).reshape(-1)
        if len(y) != len(X):
            raise ValueError("X and y lengths differ")
        if len(np.unique(y)) < 2:
            raise ValueError("both classes are needed to train a classifier")
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        if self.upsample:
            X, y = upsample_minority(X, y, np.random.default_rng(self.random_state))
        model = self._new_model(X.shape[1])
        model.fit_normalization(X)
        self.model_, self.loss_curve_ = nn.optimize(model, X, y, nn.BinaryCrossEntropy(), self._train_params())
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        p = self.model_.forward(check_array(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(int)


def predict_full_trajectory(model: SuccessClassifier, features) -> np.ndarray:
    return model.predict_proba(np.atleast_2d(features))[:, 1]


# -- monitor -----------------------------------------------------------------


def monitor_decide(p: Optional[float], alpha: float) -> bool:
    """Fire when the forecast is strictly below ``alpha``; never on missing data."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if p is None or (isinstance(p, float) and math.isnan(p)):
        return False
    return p < alpha


@dataclass(frozen=True)
class MonitorConfig:
    kind: str = FULL_TRAJECTORY
    alpha: float = 0.5
    horizon: int = 30  # T_F, moving window only
    history: int = 10  # T_H

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.horizon < 1 or self.history < 1:
            raise ValueError("horizon and history must be >= 1")


class ConstantMonitor:
    """Always (or never) fires; used for degenerate baselines."""

    def __init__(self, fire: bool):
        self.fire = fire

    def should_recover(self, history, t) -> bool:
        return self.fire


class TimeOnlyMonitor:
    def __init__(self, forecaster: TimeOnlyForecaster, alpha: float):
        self.table = forecaster.table_
        self.alpha = alpha

    def probability(self, history, t):
        return predict_time_only(self.table, min(t, self.table.max_steps))

    def should_recover(self, history, t) -> bool:
        return monitor_decide(self.probability(history, t), self.alpha)


class MovingWindowMonitor:
    def __init__(self, regressor: WeibullSurvivalRegressor, alpha: float, horizon: int,
                 n_history: int, max_steps: int, include_time: bool = True):
        self.regressor = regressor
        self.alpha = alpha
        self.horizon = horizon
        self.n_history = n_history
        self.max_steps = max_steps
        self.include_time = include_time

    def probability(self, history, t):
        f = make_features(history, t, self.max_steps, self.n_history, self.include_time)
        return float(predict_moving_window(self.regressor, f, t, self.horizon)[0])

    def should_recover(self, history, t) -> bool:
        return monitor_decide(self.probability(history, t), self.alpha)


class FullTrajectoryMonitor:
    def __init__(self, classifier: SuccessClassifier, alpha: float, n_history: int,
                 max_steps: int, include_time: bool = True):
        self.classifier = classifier
        self.alpha = alpha
        self.n_history = n_history
        self.max_steps = max_steps
        self.include_time = include_time

    def probability(self, history, t):
        f = make_features(history, t, self.max_steps, self.n_history, self.include_time)
        return float(predict_full_trajectory(self.classifier, f)[0])

    def should_recover(self, history, t) -> bool:
        return monitor_decide(self.probability(history, t), self.alpha)
