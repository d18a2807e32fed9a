from dataclasses import replace

import numpy as np
import pytest

from kftune import harness
from kftune.harness import (
    ExperimentConfig,
    ReplayFormatError,
    TuningObjective,
    disturbance_increments,
    evaluate_candidate,
    matched_process_noise,
    process_noise_from_design,
    read_replay_csv,
    replay,
    rmse_validation,
    simulate,
    simulate_truth,
    write_replay_csv,
)
from kftune.skycrane import X_REF

SMALL = ExperimentConfig(n_runs=20, t_steps=40)


def test_noiseless_closed_loop_holds_trim():
    cfg = replace(SMALL, n_runs=3, t_steps=100, process_var=(0.0, 0.0, 0.0),
                  sensor_var=(0.0,) * 4, truth_p0=(0.0,) * 6)
    roll = simulate(cfg)
    assert np.max(np.abs(roll.truth - X_REF)) <= 1e-6
    np.testing.assert_allclose(roll.measurements, np.broadcast_to([0, 20, 0, 0], (3, 100, 4)), atol=1e-6)


def test_rollouts_are_reproducible_and_order_free():
    a = simulate(SMALL, eval_index=3)
    b = simulate(SMALL, eval_index=3)
    np.testing.assert_array_equal(a.truth, b.truth)
    np.testing.assert_array_equal(a.nis, b.nis)
    one = simulate(SMALL, run_indices=[7], eval_index=3)
    np.testing.assert_array_equal(one.truth[0], a.truth[7])
    np.testing.assert_array_equal(one.nis[0], a.nis[7])
    threaded = simulate(replace(SMALL, threads=4), eval_index=3)
    np.testing.assert_array_equal(threaded.nees, a.nees)
    other = simulate(SMALL, eval_index=4)
    assert not np.array_equal(other.truth, a.truth)


def test_crn_reuses_streams():
    cfg = replace(SMALL, crn=True)
    np.testing.assert_array_equal(simulate(cfg, eval_index=0).truth, simulate(cfg, eval_index=9).truth)


@pytest.mark.parametrize("convention,scale", [("continuous", lambda dt: dt), ("discrete", lambda dt: dt * dt)])
def test_injected_noise_variance(convention, scale):
    cfg = ExperimentConfig(n_runs=1000, t_steps=100, process_var=(0.04, 0.01, 0.002),
                           noise_convention=convention)
    _, w, _ = harness._draw_noise(cfg, 0, np.arange(cfg.n_runs))
    inc = disturbance_increments(cfg, w).reshape(-1, 6)
    var = inc[:, [1, 3, 5]].var(axis=0) / scale(cfg.dt)
    np.testing.assert_allclose(var, cfg.process_var, rtol=0.02)
    assert np.all(inc[:, [0, 2, 4]] == 0)


def test_matched_process_noise():
    cfg = ExperimentConfig(process_var=(0.01, 0.01, 0.001), dt=0.1)
    np.testing.assert_allclose(matched_process_noise(cfg), [0.1, 0.1, 0.01])
    cfg = replace(cfg, noise_convention="discrete")
    np.testing.assert_allclose(matched_process_noise(cfg), [0.01, 0.01, 0.001])


def test_design_parameterizations():
    np.testing.assert_allclose(process_noise_from_design([0.2], "1d"), [0.2, 0.2, 0.02])
    np.testing.assert_allclose(process_noise_from_design([0.2, 0.03], "2d", 0.1), [0.2, 0.1, 0.03])
    np.testing.assert_allclose(process_noise_from_design([1, 2, 3], "3d"), [1, 2, 3])
    with pytest.raises(ValueError):
        process_noise_from_design([1, 2], "1d")


@pytest.fixture(scope="module")
def matched_eval():
    cfg = ExperimentConfig(n_runs=500, threads=4)
    return cfg, evaluate_candidate([0.1], cfg)


def test_matched_filter_is_consistent(matched_eval):
    cfg, ev = matched_eval
    np.testing.assert_allclose(ev.Q, matched_process_noise(cfg))
    assert ev.cost < 0.05
    assert ev.report.verdict == "consistent"
    assert ev.n_excluded == 0


@pytest.mark.parametrize("factor,verdict", [(1e4, "pessimistic"), (1e-4, "optimistic")])
def test_detuned_verdicts(factor, verdict):
    cfg = ExperimentConfig(n_runs=200, threads=4)
    ev = evaluate_candidate([0.1 * factor], cfg)
    assert ev.nis_report.verdict == verdict
    assert ev.nees_report.verdict == verdict


def test_rmse_nonnegative_and_detuned_worse():
    cfg = ExperimentConfig(threads=4)
    rows = rmse_validation([[0.1], [1e-5]], cfg, n_repeats=100)
    assert all(r["median"] >= 0 and r["q25"] <= r["median"] <= r["q75"] for r in rows)
    xi = {r["candidate"]: r["median"] for r in rows if r["channel"] == "xi"}
    assert xi[1] >= xi[0]


def test_theta_rmse_order_of_magnitude():
    # with the accelerometer variance 0.0025 the matched filter's pitch RMSE
    # lands within a factor of three of 3e-3 rad
    cfg = ExperimentConfig(meas_var=(1.0, 0.5, 0.025, 0.0025), threads=4)
    rows = rmse_validation([[0.1]], cfg, n_repeats=200)
    theta = next(r["median"] for r in rows if r["channel"] == "theta")
    assert 1e-3 <= theta <= 9e-3


def test_theta_rmse_default_sensor():
    # default accelerometer variance 0.0225: pitch RMSE is about 0.017 rad
    rows = rmse_validation([[0.1]], ExperimentConfig(threads=4), n_repeats=200)
    theta = next(r["median"] for r in rows if r["channel"] == "theta")
    assert 0.01 <= theta <= 0.03


def test_excluded_runs_make_cost_infinite(monkeypatch):
    monkeypatch.setattr(harness, "DIVERGENCE_LIMIT", 20.5)
    ev = evaluate_candidate([0.1], SMALL)
    assert ev.n_excluded > 0.1 * SMALL.n_runs
    assert ev.cost == np.inf


def test_objective_counts_calls():
    obj = TuningObjective(replace(SMALL, n_runs=5, t_steps=10))
    c1, c2 = obj([0.1]), obj([0.1])
    assert obj.calls == 2 and len(obj.history) == 2
    assert c1 != c2  # fresh Monte-Carlo draws per call
    crn = TuningObjective(replace(SMALL, n_runs=5, t_steps=10, crn=True))
    assert crn([0.1]) == crn([0.1])


def test_replay_round_trip(tmp_path):
    roll = simulate_truth(SMALL, run_index=4, Q=[0.2, 0.2, 0.02], eval_index=1)
    path = tmp_path / "run.csv"
    write_replay_csv(path, roll, 0, SMALL.dt)
    t, z, u = read_replay_csv(path)
    np.testing.assert_allclose(t, SMALL.dt * np.arange(1, SMALL.t_steps + 1))
    series = replay(SMALL, z, u, [0.2, 0.2, 0.02])
    np.testing.assert_array_equal(series, roll.nis[0])


@pytest.mark.parametrize("text,msg", [
    ("", "empty"),
    ("t,z1,z2,z3,z4,u1,u2\n", "no data"),
    ("a,b\n1,2\n", "row 1"),
    ("t,z1,z2,z3,z4,u1,u2\n0.1,0,20,0,0,1,1\n0.2,0,20,x,0,1,1\n", "row 3"),
    ("t,z1,z2,z3,z4,u1,u2\n0.1,0,20,0,0,1\n", "row 2"),
    ("t,z1,z2,z3,z4,u1,u2\n0.1,0,20,0,nan,1,1\n", "row 2"),
])
def test_replay_format_errors(tmp_path, text, msg):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(ReplayFormatError, match=msg):
        read_replay_csv(path)


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(n_runs=0)
    with pytest.raises(ValueError):
        ExperimentConfig(meas_var=(1.0, 0.5, 0.0, 0.1))
    with pytest.raises(ValueError):
        ExperimentConfig(cost="rmse")
    with pytest.raises(ValueError):
        ExperimentConfig(noise_convention="hybrid")
