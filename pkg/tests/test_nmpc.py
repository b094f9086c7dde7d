import numpy as np
import pytest

from pacmpc.nmpc import (_bootstrap_policy, _freeze_prefix_mask, create_prior,
                         nmpc_step, run_closed_loop)
from pacmpc.policy import PolicyHyperparams
from pacmpc.rng import sample_stream, stream_key
from pacmpc.rollout import _nominal_states_batch
from pacmpc.scenario import ScenarioError, scenario_from_dict

from conftest import tiny_dict, tiny_scenario

T, N = 6, 2


def make_hyper(mean=None, variance=None):
    if mean is None:
        mean = np.linspace(-0.3, 0.3, T * N)
    if variance is None:
        variance = np.full(T * N, 0.5)
    return PolicyHyperparams(mean=np.asarray(mean, dtype=float),
                             variance=np.asarray(variance, dtype=float),
                             n_controls=N, n_timesteps=T)


def fresh_rng():
    return sample_stream(stream_key(0, 3), 0)


def route_scenario(**overrides):
    planner = {"timesteps": 8, "replan_period": 0.2,
               "iterations_per_interval": 4}
    planner.update(overrides.pop("planner", {}))
    data = tiny_dict(planner=planner, **overrides)
    data.setdefault("route", {"waypoints": [[0.0, 0.0], [6.0, 0.0]],
                              "closed": False, "lookahead": 0.8,
                              "cruise_speed": 1.0})
    data["feedback"] = overrides.get("feedback", True)
    return scenario_from_dict(data)


def test_create_prior_trims_and_pads_variance():
    scen = tiny_scenario()
    var_rows = np.arange(1.0, 13.0).reshape(T, N) * 0.01
    hyper = make_hyper(variance=var_rows.ravel())
    new = create_prior(hyper, scen.start, scen, fresh_rng(), hold_steps=2)
    assert new.n_timesteps == T and new.n_controls == N
    vs = new.variance_steps()
    assert np.array_equal(vs[:4], var_rows[2:])
    assert np.array_equal(vs[4], var_rows[5])
    assert np.array_equal(vs[5], var_rows[5])


def test_create_prior_zero_noise_on_nominal_keeps_mean():
    # Starting exactly where the trimmed policy's nominal predicts, with no
    # process noise, the re-meaned prefix is the old mean shifted by two
    # steps and the tail is fresh zero-mean padding.
    scen = tiny_scenario(noise={"cov_diag": [0.0] * 5})
    hyper = make_hyper()
    nominal = _nominal_states_batch(scen.model, scen.planner.dt, scen.start,
                                    hyper.mean_steps()[None])[0]
    new = create_prior(hyper, nominal[2], scen, fresh_rng(), hold_steps=2)
    assert np.array_equal(new.mean_steps()[:4], hyper.mean_steps()[2:])
    assert np.all(new.mean_steps()[4:] == 0.0)


def test_create_prior_remean_off_matches_zero_noise():
    scen_noisy = tiny_scenario()
    scen_quiet = tiny_scenario(noise={"cov_diag": [0.0] * 5})
    hyper = make_hyper()
    a = create_prior(hyper, scen_noisy.start, scen_noisy, fresh_rng(),
                     hold_steps=2, stochastic_remean=False)
    b = create_prior(hyper, scen_quiet.start, scen_quiet, fresh_rng(),
                     hold_steps=2)
    assert np.array_equal(a.mean, b.mean)
    assert np.array_equal(a.variance, b.variance)


def test_create_prior_hold_zero_is_re_rollout_only():
    scen = tiny_scenario(noise={"cov_diag": [0.0] * 5})
    hyper = make_hyper()
    new = create_prior(hyper, scen.start, scen, fresh_rng(), hold_steps=0)
    assert np.array_equal(new.mean, hyper.mean)
    assert np.array_equal(new.variance, hyper.variance)


def test_create_prior_hold_out_of_range():
    scen = tiny_scenario()
    hyper = make_hyper()
    with pytest.raises(ValueError, match="hold_steps"):
        create_prior(hyper, scen.start, scen, fresh_rng(), hold_steps=T)
    with pytest.raises(ValueError, match="hold_steps"):
        create_prior(hyper, scen.start, scen, fresh_rng(), hold_steps=-1)


def test_freeze_prefix_mask():
    mask = _freeze_prefix_mask(make_hyper(), 2)
    assert mask.shape == (T * N,)
    assert mask[:4].all() and not mask[4:].any()


def test_nmpc_step_freezes_executing_prefix():
    scen = route_scenario()
    h, n = scen.planner.hold_steps, scen.model.control_dim
    res = nmpc_step(scen.prior, scen.start, scen.with_goal(
        scen.route.goal_state(scen.start, scen.model.state_dim)), seed=0)
    assert np.array_equal(res.hyperparams.mean[:h * n], res.prior.mean[:h * n])
    assert np.array_equal(res.hyperparams.variance[:h * n],
                          res.prior.variance[:h * n])
    assert res.executable.horizon == scen.planner.timesteps - h
    assert res.executable.interval == 0
    assert res.executable.created_at == 0.0
    assert res.iterations_run == scen.planner.iterations_per_interval


def test_bootstrap_policy_is_untrimmed():
    scen = route_scenario()
    boot = _bootstrap_policy(scen.with_goal(
        scen.route.goal_state(scen.start, scen.model.state_dim)), scen.start)
    assert boot.horizon == scen.planner.timesteps
    assert boot.interval == -1


def test_run_closed_loop_requires_route(scenario):
    with pytest.raises(ScenarioError, match="route"):
        run_closed_loop(scenario, loops=0.1)


def test_run_closed_loop_zero_loops():
    log = run_closed_loop(route_scenario(), loops=0.0, seed=0, mc_samples=0)
    assert log.intervals == []
    assert log.loops_completed == 0.0
    assert not log.aborted
    assert log.states.shape == (1, 5)
    assert log.commands.shape == (0, 2)


def test_run_closed_loop_bookkeeping():
    scen = route_scenario()
    log = run_closed_loop(scen, loops=0.1, seed=0, mc_samples=16)
    h = scen.planner.hold_steps
    n_int = len(log.intervals)
    assert n_int >= 2
    assert log.states.shape == (1 + n_int * h, 5)
    assert log.commands.shape == (n_int * h, 2)
    assert np.allclose(np.diff(log.times), scen.planner.dt)
    assert [r.interval for r in log.intervals] == list(range(n_int))
    # the plant runs each policy one interval after it was planned
    assert log.intervals[0].active_interval == -1
    assert all(log.intervals[i].active_interval == i - 1
               for i in range(1, n_int))
    summary = log.summary()
    for key in ("scenario", "seed", "intervals", "loops_completed",
                "bounded_fraction", "cost_bounded_fraction",
                "violation_bounded_fraction", "mean_mc_violation"):
        assert key in summary
    assert summary["intervals"] == n_int
    assert summary["loops_completed"] >= 0.1


def test_run_closed_loop_deterministic():
    scen = route_scenario()
    a = run_closed_loop(scen, loops=0.05, seed=4, mc_samples=8)
    b = run_closed_loop(scen, loops=0.05, seed=4, mc_samples=8)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.commands, b.commands)
    assert a.summary() == b.summary()
    c = run_closed_loop(scen, loops=0.05, seed=5, mc_samples=8)
    assert not np.array_equal(a.states, c.states)


@pytest.mark.slow
def test_straight_route_tracking_without_noise():
    scen = route_scenario(noise={"cov_diag": [0.0] * 5}, obstacles=[])
    log = run_closed_loop(scen, loops=0.5, seed=0, mc_samples=0)
    assert not log.aborted
    assert log.loops_completed >= 0.5
    assert log.collision_steps == 0
    # cross-track error against the x-axis route
    assert abs(log.states[-1][1]) <= 0.1
