"""Full-system derivative, equilibria, adaptive simulation and the fixed-step reference."""

import dataclasses
import math

import numpy as np
import pytest

from gfmbess import simcore
from gfmbess.config import default_params
from gfmbess.simcore import (THETA_INDEX, EquilibriumError, ModelEvaluationError, Scenario,
                             SimulationError, SystemState, compare_orders, evaluate, find_equilibrium,
                             flat_start, max_pairwise_gap, reference_integrate, rk4_integrate, simulate,
                             state_labels, state_size)


@pytest.fixture(scope="module")
def params():
    return default_params()


@pytest.fixture(scope="module")
def eq(params):
    return find_equilibrium(params)


@pytest.fixture(scope="module")
def step_run(params):
    return simulate(params, Scenario(delta_p_l=0.5))


def test_state_layout():
    assert [state_size(o) for o in (0, 2, 4)] == [22, 24, 26]
    assert state_labels(0)[THETA_INDEX] == "theta_c"
    assert len(set(state_labels(4))) == 26
    x = np.linspace(0.1, 2.2, 22)
    np.testing.assert_array_equal(SystemState.from_array(x, 0).to_array(), x)
    with pytest.raises(ValueError):
        SystemState.from_array(x, 2)


def test_equilibrium_residual_and_boost_identity(eq):
    f = evaluate(eq.x, eq.params)
    assert np.max(np.abs(f)) < 1e-10
    _, out = evaluate(eq.x, eq.params, outputs=True)
    assert out["d_eff"] == pytest.approx(1 - out["v_b"] / out["v_dc"], abs=1e-10)
    assert out["v_dc"] == pytest.approx(eq.params.dc.v_dc_star, abs=1e-10)
    assert out["omega_c"] == pytest.approx(eq.params.ac.omega_star, abs=1e-12)


def test_equilibrium_ac_derivatives_vanish(eq):
    f = evaluate(eq.x, eq.params)
    assert np.max(np.abs(f[:13])) < 1e-9


def test_perturbed_guess_converges_to_same_point(params, eq):
    other = find_equilibrium(params, x_guess=eq.x * 1.02)
    np.testing.assert_allclose(other.x, eq.x, atol=1e-8)


def test_guess_with_clamped_duty_fails_loudly(params, eq):
    """A 5% scaling of every state drives the duty onto its clamp: flat rows, no Newton step."""
    _, out = evaluate(eq.x * 1.05, eq.params, outputs=True)
    assert out["d_raw"] == 0.0
    with pytest.raises(EquilibriumError, match="singular"):
        find_equilibrium(params, x_guess=eq.x * 1.05)


def test_zero_load_gives_unit_voltage(params):
    """Open-circuit limit with lossless filter and grid: no drop anywhere, |e_g| = v*."""
    p = dataclasses.replace(params, ac=dataclasses.replace(params.ac, r_g=0.0, r_f=0.0), p_l=1e-8)
    e = find_equilibrium(p)
    assert abs(e.x[0] + 1j * e.x[1]) == pytest.approx(p.ac.v_star, abs=1e-8)


def test_nonconvergence_reports_residual(params):
    with pytest.raises(EquilibriumError) as err:
        find_equilibrium(params, max_iter=1, x_guess=flat_start(params) * 0.5)
    assert math.isfinite(err.value.residual)


def test_evaluation_is_deterministic_and_batched(eq):
    a = evaluate(eq.x + 1e-3, eq.params)
    b = evaluate(eq.x + 1e-3, eq.params)
    assert np.array_equal(a, b)
    batch = np.column_stack([eq.x + 1e-3, eq.x - 2e-3])
    fb = evaluate(batch, eq.params)
    np.testing.assert_allclose(fb[:, 0], a, rtol=1e-13, atol=1e-10)
    np.testing.assert_allclose(fb[:, 1], evaluate(eq.x - 2e-3, eq.params), rtol=1e-13, atol=1e-10)


def test_guard_violation_names_stage(eq):
    x = eq.x.copy()
    x[13 + 1] = -0.1           # v_dc for order 0
    with pytest.raises(ModelEvaluationError, match="dc_electrical"):
        evaluate(x, eq.params)


def test_constant_power_load_option(params):
    p = dataclasses.replace(params, load_model="power")
    e = find_equilibrium(p)
    assert np.max(np.abs(evaluate(e.x, e.params))) < 1e-10
    i_g = e.x[2] + 1j * e.x[3]
    with pytest.raises(ModelEvaluationError, match="load"):
        x = e.x.copy()
        x[2] = x[3] = 0.0
        evaluate(x, e.params)
    assert abs(i_g) > 0.1


def test_no_disturbance_holds_equilibrium(params):
    traj = simulate(params, Scenario(delta_p_l=0.0, t_end=0.2))
    assert np.max(np.abs(traj.v_dc - params.dc.v_dc_star)) < 1e-7
    assert np.max(np.abs(traj.states - traj.x_eq)) < 1e-6


def test_load_step_dips_and_recovers(step_run, params):
    v = step_run.v_dc
    t = step_run.times
    star = params.dc.v_dc_star
    after = t > step_run.scenario.t_step
    assert v[after].min() < star - 1e-3
    assert abs(v[-1] - star) < 0.1 * abs(v[after].min() - star)
    # the DC link starts discharging right after the step
    k = np.argmax(after)
    load1 = (step_run.params.p_l + 0.5, step_run.params.q_l)
    dv_dc = evaluate(step_run.states[k], step_run.params, load1)[13 + 1]
    assert dv_dc < 0


@pytest.mark.parametrize("t_end", [0.12, 0.15, 0.3, 0.5, 0.1234])
def test_sample_grid_ends_exactly_on_horizon(t_end):
    # 1200 * 1e-4 rounds above 0.12; such a point must be snapped, not left unsampled
    times = simcore._sample_times(Scenario(t_end=t_end))
    assert times[-1] <= t_end
    assert np.all(np.diff(times) > 0)
    assert np.count_nonzero(times == 0.05) == 1
    if abs(t_end / 1e-4 - round(t_end / 1e-4)) < 1e-6:
        assert times[-1] == t_end


def test_short_horizon_states_are_all_written():
    traj = simulate(default_params(), Scenario(t_end=0.12))
    assert traj.times[-1] == 0.12
    assert np.all(np.isfinite(traj.states))


def test_step_sample_grid(step_run):
    t = step_run.times
    assert np.all(np.diff(t) > 0)
    assert np.count_nonzero(t == step_run.scenario.t_step) == 1
    assert step_run.states.shape == (t.size, 22)
    for name in ("v_dc", "v_b", "i_b", "i_in", "i_out", "d_raw", "d_eff", "v_m_ref_norm", "v_m_norm",
                 "omega_c", "p_c", "q_c"):
        assert step_run.outputs[name].shape == t.shape


def test_power_identity_at_every_sample(step_run):
    o = step_run.outputs
    assert np.max(np.abs(o["v_dc"] * o["i_in"] - o["v_b"] * o["i_b"])) <= 1e-12


def test_duty_inside_bounds(step_run, params):
    for name in ("d_raw", "d_eff"):
        assert step_run.outputs[name].min() >= 0.0
        assert step_run.outputs[name].max() <= params.dc.d_max


def test_simulation_is_bit_identical(params):
    sc = Scenario(t_end=0.1)
    a = simulate(params, sc)
    b = simulate(params, sc)
    assert np.array_equal(a.states, b.states)


def test_simulation_failure_carries_time(params, eq):
    """Open the DC/DC loops: the link collapses and the abort names the time."""
    dead = dataclasses.replace(eq.params.dc, kp_vdc=0.0, ki_vdc=0.0, kp_ib=0.0, ki_ib=0.0)
    broken = dataclasses.replace(eq, params=dataclasses.replace(eq.params, dc=dead))
    with pytest.raises(SimulationError) as err:
        simulate(broken.params, Scenario(delta_p_l=2.0, t_end=3.0), equilibrium=broken)
    assert 0 < err.value.t < 3.0
    assert str(err.value).startswith(f"t = {err.value.t:.6g} s: ")


def test_scenario_validation():
    with pytest.raises(ValueError):
        Scenario(t_step=0.5, t_end=0.5)
    with pytest.raises(ValueError):
        Scenario(delta_p_l=math.nan)


def test_rk4_on_exponential_decay():
    y, _ = rk4_integrate(lambda t, y: -y, np.array([1.0]), 0.0, 1.0, 1e-4)
    assert y[0] == pytest.approx(math.exp(-1), abs=1e-8)


def test_rk4_fourth_order():
    exact = math.exp(-1)
    errs = [abs(rk4_integrate(lambda t, y: -y, np.array([1.0]), 0.0, 1.0, dt)[0][0] - exact)
            for dt in (0.1, 0.05)]
    assert errs[0] / errs[1] == pytest.approx(16, rel=0.05)


def test_rk4_detects_instability():
    with pytest.raises(SimulationError, match="dt"):
        rk4_integrate(lambda t, y: -1e4 * y, np.array([1.0]), 0.0, 1.0, 1e-2)


def test_reference_integrator_agrees_on_short_horizon(params):
    sc = Scenario(t_step=0.002, t_end=0.006, stride=2e-4)
    ada = simulate(params, sc)
    ref = reference_integrate(params, sc, dt=1e-6)
    assert np.max(np.abs(ada.v_dc - ref.v_dc)) < 1e-4


def test_orders_agree_and_gap_validation(params):
    trajs, gap = compare_orders(params, Scenario(t_end=0.15))
    assert set(trajs) == {0, 2, 4}
    assert gap <= 0.01 * params.dc.v_dc_star
    _, self_gap = compare_orders(params, Scenario(t_end=0.1), orders=(0,))
    assert self_gap == 0.0
    other = simulate(params, Scenario(t_end=0.12))
    with pytest.raises(ValueError, match="mismatched"):
        max_pairwise_gap([trajs[0], other])


def test_order4_completes_without_collapse(params):
    traj = simulate(dataclasses.replace(params, battery=dataclasses.replace(params.battery, order=4)),
                    Scenario(t_end=0.2))
    assert np.all(np.isfinite(traj.states))
