import math

import numpy as np
import pytest
from sklearn.base import clone

from ritforecast.forecasting import (
    ConstantMonitor,
    FullTrajectoryMonitor,
    MonitorConfig,
    MovingWindowMonitor,
    SuccessClassifier,
    TimeOnlyForecaster,
    TimeOnlyMonitor,
    TimeOnlyTable,
    WeibullSurvivalRegressor,
    build_dataset,
    censored_weibull_nll,
    fit_time_only,
    make_features,
    monitor_decide,
    n_features,
    predict_full_trajectory,
    predict_moving_window,
    predict_time_only,
    upsample_minority,
    weibull_survival,
    window_probability,
)
from ritforecast.policies import Mode, StepRecord, Trajectory
from ritforecast.pose import PlanarPose
from ritforecast.sim import Outcome

T = 255


def fake_traj(eid, length, success, rng=None):
    rng = rng or np.random.default_rng(eid)
    goal = PlanarPose(0, 0, -0.025, 0)
    steps = [StepRecord(t, PlanarPose(*rng.uniform(-0.01, 0.01, 4)), goal, PlanarPose(0, 0, 0, 0), Mode.INSERT)
             for t in range(length)]
    return Trajectory(eid, steps, Outcome(success, length if success else T))


# -- features and datasets ----------------------------------------------------


def test_feature_padding():
    h = [PlanarPose(1, 2, 3, 4), PlanarPose(5, 6, 7, 8)]
    f = make_features(h, t=1, max_steps=T, n_history=4)
    assert len(f) == n_features(4) == 17
    np.testing.assert_array_equal(f[:16], [1, 2, 3, 4] * 3 + [5, 6, 7, 8])
    assert f[-1] == pytest.approx(1 / T)
    assert make_features(h, 1, T, 4, include_time=False)[-1] == 0.0


def test_build_dataset_counts():
    ds = build_dataset([fake_traj(0, 80, True)], T)
    assert len(ds) == 80 and not ds.censored.any() and np.all(ds.success_time == 80)
    ds = build_dataset([fake_traj(1, T, False)], T)
    assert len(ds) == T and ds.censored.all() and np.all(ds.label == 0)
    rng = np.random.default_rng(0)
    trajs = [fake_traj(i, int(n), bool(n < T)) for i, n in enumerate(rng.integers(20, T + 1, 10))]
    ds = build_dataset(trajs, T)
    assert len(ds) == sum(len(t.steps) for t in trajs)
    np.testing.assert_array_equal(ds.label, ~ds.censored)
    with pytest.raises(ValueError):
        build_dataset([], T)


def test_dataset_features_match_online_features():
    tr = fake_traj(3, 40, True)
    ds = build_dataset([tr], T, n_history=10)
    obs = [r.rel_pose for r in tr.steps]
    for t in (0, 3, 9, 10, 39):
        np.testing.assert_allclose(ds.X[t], make_features(obs[max(0, t - 9): t + 1], t, T, 10), atol=1e-15)


# -- time-only ------------------------------------------------------------------


def test_time_only_counting_examples():
    ts = [50, 60, 70, 80, 90, 100, 110, T, T, T]
    ok = [True] * 7 + [False] * 3
    table = fit_time_only(ts, ok, T)
    assert table.p[0] == pytest.approx(0.7)
    assert predict_time_only(table, 0) == pytest.approx(0.7)
    assert predict_time_only(table, 200) == 0.0
    assert table.alive[75] == 7 and table.succeeded[75] == 4


def test_time_only_all_succeed_at_60():
    table = fit_time_only([60] * 5, [True] * 5, T)
    assert np.all(table.p[:61] == 1.0)
    assert np.all(np.isnan(table.p[61:]))
    assert predict_time_only(table, 100) is None
    assert not monitor_decide(predict_time_only(table, 100), 0.5)
    with pytest.raises(ValueError):
        predict_time_only(table, T + 1)


def test_time_only_csv_roundtrip(tmp_path):
    table = fit_time_only([60, 70, T], [True, True, False], T)
    table.to_csv(tmp_path / "t.csv")
    back = TimeOnlyTable.from_csv(tmp_path / "t.csv")
    np.testing.assert_array_equal(back.alive, table.alive)
    np.testing.assert_array_equal(back.p, table.p)
    (tmp_path / "bad.csv").write_text("t,x\n0,1\n")
    with pytest.raises(ValueError):
        TimeOnlyTable.from_csv(tmp_path / "bad.csv")


def test_time_only_estimator():
    est = TimeOnlyForecaster(T).fit([60, T], [True, False])
    np.testing.assert_allclose(est.predict_proba([0, 60, 61]), [0.5, 0.5, 0.0])
    assert clone(est).get_params() == {"max_steps": T}


# -- Weibull ----------------------------------------------------------------------


def test_weibull_survival_values():
    assert weibull_survival(0.0, 70, 3) == 1.0
    assert weibull_survival(70, 70, 3) == pytest.approx(math.exp(-1), abs=1e-15)
    # 30-digit reference: exp(-(5/7)**3)
    assert weibull_survival(50, 70, 3) == pytest.approx(0.694591422987468, abs=1e-14)
    tau = np.linspace(0, 300, 500)
    assert np.all(np.diff(weibull_survival(tau, 70, 3)) <= 0)
    with pytest.raises(ValueError):
        weibull_survival(1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        weibull_survival(1.0, 1.0, -1.0)


def test_window_probability_values():
    # 30-digit reference: exp(-(5/7)**3) - exp(-(8/7)**3)
    assert window_probability(50, 30, 70, 3) == pytest.approx(0.469829008495650, abs=1e-14)
    assert window_probability(50, 0, 70, 3) == 0.0
    rng = np.random.default_rng(0)
    t = rng.uniform(0, 255, 1000)
    lam, rho = rng.uniform(1, 200, 1000), rng.uniform(0.2, 6, 1000)
    w = window_probability(t, rng.integers(1, 500, 1000), lam, rho)
    assert np.all(w >= 0) and np.all(w <= weibull_survival(t, lam, rho))


def test_censored_nll_values():
    assert censored_weibull_nll(70, 3, 70, True) == pytest.approx(1.0)
    assert censored_weibull_nll(1, 1, 1, False) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        censored_weibull_nll(1, 1, 0.0, False)


def test_survival_regressor_and_window_prediction():
    rng = np.random.default_rng(1)
    X = np.ones((4000, 1))
    t = 70 * rng.weibull(3, 4000)
    est = WeibullSurvivalRegressor(hidden=(4,), lr=0.05, epochs=15, random_state=0).fit(X, np.c_[t, np.zeros(4000)])
    lam, rho = est.predict(X[:1])[0]
    p = predict_moving_window(est, X[:1], 50, 30)[0]
    assert p == pytest.approx(window_probability(50, 30, lam, rho))
    assert 0.35 < p < 0.6


# -- classifier ---------------------------------------------------------------------


def test_upsampling_counts():
    rng = np.random.default_rng(0)
    X = np.arange(125, dtype=float)[:, None]
    y = np.r_[np.ones(100), np.zeros(25)]
    Xu, yu = upsample_minority(X, y, rng)
    assert (yu == 1).sum() == 100 and (yu == 0).sum() == 100
    assert set(Xu[yu == 0, 0]) == set(range(100, 125))
    assert set(Xu[yu == 1, 0]) == set(range(100))
    # uneven ratio: every failure kept, remainder sampled without replacement
    y2 = np.r_[np.ones(100), np.zeros(30)]
    Xu, yu = upsample_minority(np.arange(130.0)[:, None], y2, rng)
    counts = np.bincount(Xu[yu == 0, 0].astype(int) - 100)
    assert (yu == 0).sum() == 100 and counts.min() == 3 and counts.max() == 4
    Xb, yb = upsample_minority(X[:50], np.r_[np.ones(25), np.zeros(25)], rng)
    assert len(yb) == 50
    with pytest.raises(ValueError):
        upsample_minority(X, np.ones(125), rng)


def separable(n, rng):
    X = rng.normal(size=(n, 3))
    return X, (X[:, 0] - X[:, 1] > 0).astype(int)


def test_classifier_separable_heldout():
    rng = np.random.default_rng(2)
    X, y = separable(3000, rng)
    clf = SuccessClassifier(hidden=(16,), lr=0.02, epochs=20, random_state=0).fit(X[:2000], y[:2000])
    assert clf.score(X[2000:], y[2000:]) >= 0.95
    p = predict_full_trajectory(clf, np.array([[3.0, -3.0, 0.0], [-3.0, 3.0, 0.0]]))
    assert p[0] > 0.5 > p[1]
    with pytest.raises(ValueError):
        SuccessClassifier().fit(X, np.ones(len(X)))


def test_estimator_save_load(tmp_path):
    rng = np.random.default_rng(3)
    X, y = separable(500, rng)
    clf = SuccessClassifier(hidden=(8,), epochs=2, random_state=1).fit(X, y)
    clf.save(tmp_path / "c.json", history=10, alpha=0.05)
    back = SuccessClassifier.load(tmp_path / "c.json")
    np.testing.assert_array_equal(back.predict_proba(X), clf.predict_proba(X))
    assert back.get_params() == clf.get_params()
    with pytest.raises(ValueError):
        WeibullSurvivalRegressor.load(tmp_path / "c.json")


# -- monitors -------------------------------------------------------------------------


def test_monitor_decide_boundaries():
    assert monitor_decide(0.19, 0.2)
    assert not monitor_decide(0.2, 0.2)
    assert not monitor_decide(0.13, 0.13)
    assert not monitor_decide(None, 0.5)
    assert not monitor_decide(float("nan"), 0.5)
    with pytest.raises(ValueError):
        monitor_decide(0.5, 1.5)


def test_monitor_config_validation():
    MonitorConfig("moving_window", 0.13, 30, 10)
    with pytest.raises(ValueError):
        MonitorConfig("moving_window", 0.13, 0, 10)
    with pytest.raises(ValueError):
        MonitorConfig("time_only", -0.1, 30, 10)
    with pytest.raises(ValueError):
        MonitorConfig("oracle", 0.1, 30, 10)


def test_monitors_fire_below_threshold():
    hist = [PlanarPose(0, 0, 0.005, 0)] * 3
    to = TimeOnlyForecaster(T).fit([60, T], [True, False])
    assert not TimeOnlyMonitor(to, 0.5).should_recover(hist, 0)  # p = 0.5
    assert TimeOnlyMonitor(to, 0.5).should_recover(hist, 61)  # p = 0
    assert ConstantMonitor(True).should_recover(hist, 0)
    assert not ConstantMonitor(False).should_recover(hist, 0)

    rng = np.random.default_rng(4)
    X = rng.normal(size=(200, n_features(3)))
    clf = SuccessClassifier(hidden=(4,), epochs=1).fit(X, (X[:, 0] > 0).astype(int))
    mon = FullTrajectoryMonitor(clf, 0.5, 3, T)
    p = mon.probability(hist, 10)
    assert mon.should_recover(hist, 10) == (p < 0.5)

    reg = WeibullSurvivalRegressor(hidden=(4,), epochs=1).fit(X, np.c_[rng.uniform(1, T, 200), np.zeros(200)])
    mw = MovingWindowMonitor(reg, 0.1, 30, 3, T)
    p = mw.probability(hist, 10)
    assert 0 <= p < 1 and mw.should_recover(hist, 10) == (p < 0.1)
