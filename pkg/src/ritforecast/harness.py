"""Experiment pipeline: collection, training, evaluation, rhythmic runs, sweeps."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .config import DEFAULT_ALPHA, ExperimentConfig, episode_seed
from .forecasting import (
    FULL_TRAJECTORY,
    MOVING_WINDOW,
    TIME_ONLY,
    ConstantMonitor,
    FullTrajectoryMonitor,
    MovingWindowMonitor,
    SuccessClassifier,
    TimeOnlyForecaster,
    TimeOnlyMonitor,
    TimeOnlyTable,
    WeibullSurvivalRegressor,
    build_dataset,
)
from .nn import MLP
from .policies import ScriptedInsertionPolicy, Trajectory, run_episode
from .pose import PlanarPose, planar_compose, wrap_angle
from .sim import SimConfig, SimState, initial_rel, observe, reset

log = logging.getLogger(__name__)

NONE = "none"
METHOD_ORDER = [NONE, TIME_ONLY, MOVING_WINDOW, FULL_TRAJECTORY, "always", "never"]


# -- collection ---------------------------------------------------------------


def collect(cfg: ExperimentConfig, n_episodes: int, root_seed: int) -> List[Trajectory]:
    """Monitor-free rollouts of the insertion policy."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    policy = ScriptedInsertionPolicy(cfg.sim, cfg.gains)
    return [
        run_episode(cfg.sim, policy, None, cfg.executor, seed=episode_seed(root_seed, i), episode_id=i)
        for i in range(n_episodes)
    ]


def success_time_summary(trajs: Sequence[Trajectory], bin_width: int = 1) -> Dict:
    ok = np.array([t.success for t in trajs])
    ts = np.array([t.success_time for t in trajs])
    out = {"episodes": len(trajs), "success_rate": float(ok.mean())}
    if ok.any():
        hist = np.bincount(ts[ok] // bin_width)
        out["mode"] = int(np.argmax(hist) * bin_width)
        out["median"] = float(np.median(ts[ok]))
        out["histogram"] = {int(i * bin_width): int(c) for i, c in enumerate(hist) if c}
    return out


# -- training -------------------------------------------------------------------


def train_time_only(trajs, cfg: ExperimentConfig) -> TimeOnlyForecaster:
    return TimeOnlyForecaster(cfg.max_steps).fit_trajectories(trajs)


def train_survival(trajs, cfg: ExperimentConfig, **params) -> WeibullSurvivalRegressor:
    ds = build_dataset(trajs, cfg.max_steps, cfg.executor.history, cfg.include_time)
    est = WeibullSurvivalRegressor(
        hidden=cfg.survival_hidden, lr=cfg.lr, epochs=cfg.epochs, batch_size=cfg.batch_size,
        time_scale=cfg.time_scale, **params)
    return est.fit(ds.X, ds.survival_targets())


def train_classifier(trajs, cfg: ExperimentConfig, **params) -> SuccessClassifier:
    ds = build_dataset(trajs, cfg.max_steps, cfg.executor.history, cfg.include_time)
    est = SuccessClassifier(
        hidden=cfg.classifier_hidden, lr=cfg.lr, epochs=cfg.epochs, batch_size=cfg.batch_size, **params)
    return est.fit(ds.X, ds.label)


def model_metadata(cfg: ExperimentConfig, kind: str) -> Dict:
    return {
        "kind": kind,
        "history": cfg.executor.history,
        "horizon": cfg.horizon,
        "alpha": DEFAULT_ALPHA[kind],
        "max_steps": cfg.max_steps,
        "include_time": cfg.include_time,
    }


# -- monitors --------------------------------------------------------------------


def make_monitor(kind: str, model, cfg: ExperimentConfig, alpha: Optional[float] = None,
                 horizon: Optional[int] = None):
    alpha = DEFAULT_ALPHA.get(kind, 0.5) if alpha is None else alpha
    if kind == NONE:
        return None
    if kind == "always":
        return ConstantMonitor(True)
    if kind == "never":
        return ConstantMonitor(False)
    if kind == TIME_ONLY:
        return TimeOnlyMonitor(model, alpha)
    if kind == MOVING_WINDOW:
        return MovingWindowMonitor(model, alpha, cfg.horizon if horizon is None else horizon,
                                   cfg.executor.history, cfg.max_steps, cfg.include_time)
    if kind == FULL_TRAJECTORY:
        return FullTrajectoryMonitor(model, alpha, cfg.executor.history, cfg.max_steps, cfg.include_time)
    raise ValueError(f"unknown monitor kind {kind!r}")


def load_model(path):
    """Return ``(kind, model, metadata)`` for a time-only CSV table or a saved MLP file."""
    path = str(path)
    if path.endswith(".csv"):
        est = TimeOnlyForecaster()
        est.table_ = TimeOnlyTable.from_csv(path)
        est.max_steps = est.table_.max_steps
        return TIME_ONLY, est, {"max_steps": est.max_steps}
    meta = MLP.load(path).metadata
    if meta.get("kind") not in (None, MOVING_WINDOW, FULL_TRAJECTORY):
        raise ValueError(f"{path}: unknown model kind {meta.get('kind')!r}")
    try:
        return MOVING_WINDOW, WeibullSurvivalRegressor.load(path), meta
    except ValueError:
        return FULL_TRAJECTORY, SuccessClassifier.load(path), meta


# -- evaluation ---------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentReport:
    method: str
    friction: float
    alpha: float
    horizon: int
    seeds: int
    episodes: int
    success_rate: float
    success_std: float
    steps: float  # mean success time of successful trials
    reset_rate: float  # share of successful trials with at least one recovery

    def __post_init__(self):
        for name in ("success_rate", "reset_rate"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0 or math.isnan(v)):
                raise ValueError(f"{name} out of [0, 1]: {v}")

    def row(self) -> Dict:
        return {
            "method": self.method,
            "friction": repr(float(self.friction)),
            "alpha": repr(float(self.alpha)),
            "horizon": str(self.horizon),
            "seeds": str(self.seeds),
            "episodes": str(self.episodes),
            "success_rate": f"{self.success_rate:.6f}",
            "success_std": f"{self.success_std:.6f}",
            "steps": f"{self.steps:.3f}",
            "reset_rate": f"{self.reset_rate:.6f}",
        }


REPORT_FIELDS = list(ExperimentReport.__dataclass_fields__)


def rollouts(cfg: ExperimentConfig, monitor, seeds: int, episodes: int, root_seed: int) -> List[List[Trajectory]]:
    policy = ScriptedInsertionPolicy(cfg.sim, cfg.gains)
    return [
        [
            run_episode(cfg.sim, policy, monitor, cfg.executor,
                        seed=episode_seed(root_seed, s, e), episode_id=s * episodes + e)
            for e in range(episodes)
        ]
        for s in range(seeds)
    ]


def summarize(per_seed: List[List[Trajectory]], method: str, friction: float, alpha=float("nan"),
              horizon: int = 0) -> ExperimentReport:
    rates = np.array([np.mean([t.success for t in ts]) for ts in per_seed])
    flat = [t for ts in per_seed for t in ts]
    ok = [t for t in flat if t.success]
    steps = float(np.mean([t.success_time for t in ok])) if ok else float("nan")
    reset = float(np.mean([t.n_recoveries > 0 for t in ok])) if ok else float("nan")
    return ExperimentReport(
        method=method,
        friction=friction,
        alpha=float(alpha),
        horizon=int(horizon),
        seeds=len(per_seed),
        episodes=len(per_seed[0]) if per_seed else 0,
        success_rate=float(rates.mean()),
        success_std=float(rates.std(ddof=1)) if len(rates) > 1 else 0.0,
        steps=steps,
        reset_rate=reset,
    )


def evaluate(cfg: ExperimentConfig, method: str, model=None, alpha=None, horizon=None,
             seeds: Optional[int] = None, episodes: Optional[int] = None, root_seed: int = 0):
    """Closed-loop single-insertion evaluation; returns ``(report, per_seed_trajectories)``."""
    seeds = cfg.seeds if seeds is None else seeds
    episodes = cfg.episodes if episodes is None else episodes
    if seeds < 1 or episodes < 1:
        raise ValueError("seeds and episodes must be >= 1")
    monitor = make_monitor(method, model, cfg, alpha, horizon)
    per_seed = rollouts(cfg, monitor, seeds, episodes, root_seed)
    used_alpha = getattr(monitor, "alpha", float("nan"))
    used_horizon = getattr(monitor, "horizon", 0)
    return summarize(per_seed, method, cfg.sim.friction_mu, used_alpha, used_horizon), per_seed


def write_reports(path, reports: Iterable[ExperimentReport]) -> None:
    order = {m: i for i, m in enumerate(METHOD_ORDER)}
    rows = sorted((r.row() for r in reports),
                  key=lambda r: (order.get(r["method"], len(order)), float(r["friction"]), r["alpha"]))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def read_reports(path) -> List[Dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != REPORT_FIELDS and reader.fieldnames != RHYTHMIC_FIELDS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        return list(reader)


# -- rhythmic runs ---------------------------------------------------------------


def geometric_expectation(p: float) -> float:
    """Expected successes before the first failure for independent rounds of success probability ``p``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be a probability")
    if p == 1.0:
        raise ValueError("p = 1 gives an unbounded expectation")
    return p / (1.0 - p)


@dataclass(frozen=True)
class RhythmicConfig:
    rounds: int = 20
    round_steps: Optional[int] = None  # per-round step budget; defaults to T
    independent: bool = False  # re-seed the simulator every round
    rotation: float = math.radians(60.0)  # minimum nut advance per round
    rotation_jitter: float = math.radians(5.0)
    nut_jitter: float = 0.001

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.round_steps is not None and self.round_steps < 0:
            raise ValueError("round_steps must be >= 0")


def _next_round(state: SimState, sim: SimConfig, rcfg: RhythmicConfig, rng: np.random.Generator):
    """Open-loop rotate-and-reset between rounds.

    The wrench turns the nut by at least ``rotation``, lifts off, and is
    placed back above the nut with the usual initialization spread.
    """
    nut = state.nut
    turn = rcfg.rotation + rng.uniform(0.0, rcfg.rotation_jitter)
    shift = rng.uniform(-1.0, 1.0, 2) * rcfg.nut_jitter
    nut = PlanarPose(nut.x + shift[0], nut.y + shift[1], nut.z, wrap_angle(nut.yaw + turn))
    fresh = SimState(tool=planar_compose(nut, initial_rel(sim, rng)), nut=nut)
    return fresh, observe(fresh, sim, rng), rng


def rhythmic_trial(cfg: ExperimentConfig, rcfg: RhythmicConfig, monitor, root_seed: int, trial: int) -> int:
    """Consecutive successful rounds before the first failure (capped at ``rounds``)."""
    budget = cfg.max_steps if rcfg.round_steps is None else rcfg.round_steps
    if budget == 0:
        return 0
    sim = replace(cfg.sim, max_steps=budget)
    policy = ScriptedInsertionPolicy(sim, cfg.gains)
    start = reset(sim, episode_seed(root_seed, trial, 0))
    for k in range(rcfg.rounds):
        if rcfg.independent and k > 0:
            start = reset(sim, episode_seed(root_seed, trial, k))
        traj = run_episode(sim, policy, monitor, cfg.executor, start=start, episode_id=k)
        if not traj.success:
            return k
        if not rcfg.independent:
            start = _next_round(traj.final_state, sim, rcfg, start[2])
    return rcfg.rounds


def rhythmic_counts(cfg: ExperimentConfig, rcfg: RhythmicConfig, monitor, trials: int, root_seed: int) -> List[int]:
    return [rhythmic_trial(cfg, rcfg, monitor, root_seed, i) for i in range(trials)]


RHYTHMIC_FIELDS = ["size", "method", "friction", "trial", "consecutive"]


def write_rhythmic(path, counts: Sequence[int], method: str, friction: float, size: str = "default") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RHYTHMIC_FIELDS)
        for i, c in enumerate(counts):
            w.writerow([size, method, repr(float(friction)), i, c])


# -- threshold sweep --------------------------------------------------------------


def sweep_threshold(cfg: ExperimentConfig, kind: str, model, alphas: Sequence[float],
                    horizons: Sequence[int] = (0,), seeds: Optional[int] = None, episodes: Optional[int] = None,
                    root_seed: int = 1):
    """Grid search of (alpha, horizon) by closed-loop success rate.

    Ties go to the smaller alpha (fewer resets), then the smaller horizon.
    Returns ``(best_report, all_reports)``.
    """
    if not alphas or not horizons:
        raise ValueError("grids must be non-empty")
    if kind != MOVING_WINDOW:
        horizons = (0,)
    reports = []
    for a in sorted(alphas):
        for h in sorted(horizons):
            rep, _ = evaluate(cfg, kind, model, alpha=a, horizon=h or None, seeds=seeds,
                              episodes=episodes, root_seed=root_seed)
            log.info("sweep %s alpha=%g horizon=%d success=%.4f reset=%.4f",
                     kind, a, h, rep.success_rate, rep.reset_rate)
            reports.append(rep)
    best = max(reports, key=lambda r: (r.success_rate, -r.alpha, -r.horizon))
    return best, reports


# -- report merging --------------------------------------------------------------


def merge_reports(paths: Sequence) -> Tuple[List[str], List[Dict]]:
    """Concatenate report files of one schema into a single sorted table."""
    if not paths:
        raise ValueError("need at least one report file")
    rows, schema = [], None
    for p in paths:
        with open(p, newline="") as fh:
            reader = csv.DictReader(fh)
            if schema is None:
                schema = reader.fieldnames
            if reader.fieldnames != schema or schema not in (REPORT_FIELDS, RHYTHMIC_FIELDS):
                raise ValueError(f"{p}: schema mismatch ({reader.fieldnames})")
            rows.extend(reader)
    if schema == REPORT_FIELDS:
        order = {m: i for i, m in enumerate(METHOD_ORDER)}
        rows.sort(key=lambda r: (order.get(r["method"], len(order)), r["method"], float(r["friction"]), r["alpha"]))
    else:
        rows.sort(key=lambda r: (r["size"], r["method"], float(r["friction"]), int(r["trial"])))
    return schema, rows


def bar_rows(rows: List[Dict]) -> List[Dict]:
    """Per-trial consecutive-success bars, grouped by size label."""
    return [
        {"size": r["size"], "method": r["method"], "friction": r["friction"],
         "trial": r["trial"], "consecutive": r["consecutive"]}
        for r in sorted(rows, key=lambda r: (r["size"], r["method"], float(r["friction"]), int(r["trial"])))
    ]


def write_rows(path, schema: List[str], rows: List[Dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=schema, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
