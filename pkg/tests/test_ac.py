"""Grid-forming control cascade and AC filter dynamics."""

import cmath

import numpy as np
import pytest
from hypothesis import assume, example, given, strategies as st

from gfmbess import ac
from gfmbess.ac import AcState
from gfmbess.config import AcParams

finite = st.floats(-10, 10, allow_nan=False)
cplx = st.builds(complex, finite, finite)


def test_compute_power_examples():
    assert ac.compute_power(1 + 0j, 0.5 + 0j) == (0.5, 0.0)
    assert ac.compute_power(1 + 0j, 0.3 - 0.4j) == pytest.approx((0.3, 0.4))
    assert ac.compute_power(0j, 0.3 - 0.4j) == (0.0, 0.0)


@given(cplx, cplx, st.floats(-5, 5))
def test_compute_power_scales_with_real_current_factor(e, i, a):
    p, q = ac.compute_power(e, i)
    pa, qa = ac.compute_power(e, a * i)
    assert pa == pytest.approx(a * p, abs=1e-9)
    assert qa == pytest.approx(a * q, abs=1e-9)


def test_outer_droop_examples():
    prm = AcParams(rp=0.02, p_star=0.5)
    w, v = ac.outer_droop(1.0, 0.0, prm)
    assert w == pytest.approx(0.99, abs=1e-15)
    w, _ = ac.outer_droop(prm.p_star, 0.0, prm)
    assert w == prm.omega_star
    _, v = ac.outer_droop(0.3, 0.7, AcParams(rq=0.0))
    assert v == 1.0


def test_power_filter():
    assert ac.power_filter_derivatives(0.4, 0.1, 0.4, 0.1, 50.0) == (0.0, 0.0)
    dp, _ = ac.power_filter_derivatives(0.6, 0.0, 0.5, 0.0, 50.0)
    assert dp == pytest.approx(5.0)
    with pytest.raises(ValueError):
        ac.power_filter_derivatives(0.6, 0.0, 0.5, 0.0, 0.0)


def test_virtual_impedance_examples():
    assert ac.virtual_impedance(1.0, 0.7 + 0.2j, 1.0, 0.0, 0.0) == 1.0
    assert ac.virtual_impedance(1.0, 0j, 1.0, 0.1, 0.3) == 1.0
    assert ac.virtual_impedance(1.0, 1 + 0j, 1.0, 0.1, 0.0) == pytest.approx(0.9 + 0j)


def _state(**kw):
    base = dict(e_g=0j, i_g=0j, i_s=0j, xi=0j, gamma=0j, theta_c=0.0, p_tilde=0.0, q_tilde=0.0)
    base.update(kw)
    return AcState(**base)


def test_inner_loops_null_controller():
    prm = AcParams(kp_v=0, ki_v=0, kf_i=0, kp_i=0, ki_i=0, kf_v=0)
    s = _state(e_g=0.9 + 0.1j, i_g=0.4j, i_s=0.3, xi=0.2, gamma=0.1)
    assert ac.inner_loops(1.0, s, 0.0, prm) == (0, 0)


def test_inner_loops_feed_forward_isolated():
    c_f = 0.1
    prm = AcParams(c_f=c_f, kf_i=0.0)
    s = _state(e_g=1 + 0j)
    i_s_ref, _ = ac.inner_loops(1 + 0j, s, 1.0, prm)
    assert i_s_ref == pytest.approx(0.1j)


@pytest.mark.parametrize("ref, v_dc, expected", [
    (0.8 + 0j, 1.0, 0.8 + 0j),
    (3 + 4j, 1.0, 0.6 + 0.8j),
    (0j, 1.0, 0j),
])
def test_saturate_modulation_examples(ref, v_dc, expected):
    assert ac.saturate_modulation(ref, v_dc) == pytest.approx(expected, abs=1e-15)


def test_saturate_inside_limit_is_untouched():
    ref = 0.31 - 0.72j
    assert ac.saturate_modulation(ref, 1.2) is ref


def test_saturate_rejects_nonpositive_dc_voltage():
    with pytest.raises(ValueError):
        ac.saturate_modulation(0.5 + 0j, 0.0)
    with pytest.raises(ValueError):
        ac.saturate_modulation(np.array([0.5 + 0j]), np.array([-1.0]))


@given(cplx, st.floats(0.01, 5))
@example(2 + 5e-324j, 1.0)  # subnormal imaginary part: cmath.phase raises on underflow here
def test_saturation_properties(ref, v_dc):
    out = ac.saturate_modulation(ref, v_dc)
    assert abs(out) <= v_dc * (1 + 1e-12)
    assert ac.saturate_modulation(out, v_dc) == pytest.approx(out, abs=1e-12)
    if abs(ref) > 1e-9:
        assert np.angle(out) == pytest.approx(np.angle(ref), abs=1e-9)


def test_saturation_array_path_matches_scalar():
    refs = np.array([0.8 + 0j, 3 + 4j, 0j, -2 + 0.1j])
    v_dc = np.array([1.0, 1.0, 1.0, 1.5])
    out = ac.saturate_modulation(refs, v_dc)
    for r, v, o in zip(refs, v_dc, out):
        assert o == pytest.approx(ac.saturate_modulation(complex(r), float(v)), abs=1e-15)


def test_load_bus_voltage_examples():
    assert ac.load_bus_voltage(1 + 0j, 0.5, 0.0) == pytest.approx(0.5 + 0j)
    v = ac.load_bus_voltage(1j, 0.0, 1.0)
    assert v == pytest.approx(-1 + 0j)
    s = v * np.conj(1j)
    assert (s.real, s.imag) == pytest.approx((0.0, 1.0))
    with pytest.raises(ac.SingularLoadError):
        ac.load_bus_voltage(1e-6 + 0j, 0.5, 0.0)


@given(cplx, st.floats(-2, 2), st.floats(-2, 2))
def test_constant_power_load_absorbs_exactly(i_g, p, q):
    assume(abs(i_g) >= 1e-3)
    s = ac.load_bus_voltage(i_g, p, q) * np.conj(i_g)
    assert s.real == pytest.approx(p, abs=1e-12)
    assert s.imag == pytest.approx(q, abs=1e-12)


def test_impedance_load_draws_rated_power_at_unit_voltage():
    p, q = 0.5, 0.2
    y = p - 1j * q
    i_g = y * cmath.exp(0.3j)          # current that puts |v_l| = 1
    v_l = ac.impedance_load_voltage(i_g, p, q)
    s = v_l * np.conj(i_g)
    assert abs(v_l) == pytest.approx(1.0)
    assert (s.real, s.imag) == pytest.approx((p, q))
    with pytest.raises(ac.SingularLoadError):
        ac.impedance_load_voltage(i_g, 0.0, 0.0)


def test_ac_derivatives_zero_forcing_and_pure_rotation():
    prm = AcParams()
    wb = 2 * np.pi * 60
    e = 0.95 - 0.1j
    s = _state(e_g=e, i_g=0.3 + 0.1j, i_s=0j)
    de, di_g, di_s, *_ = ac.ac_derivatives(s, e, e, 1.0, e, 0j, prm, wb)
    assert di_s == 0
    s = _state(e_g=e, i_g=0.3 + 0.1j, i_s=0.3 + 0.1j)
    de, *_ = ac.ac_derivatives(s, e, e, 1.02, e, 0j, prm, wb)
    assert de == pytest.approx(-1j * 1.02 * wb * e, rel=1e-14)


def test_ac_derivatives_integrators_and_angle():
    prm = AcParams()
    s = _state(e_g=0.9 + 0.1j, i_s=0.2 + 0j)
    out = ac.ac_derivatives(s, 0.9 + 0j, 0.9 + 0j, 1.01, 1.0 + 0j, 0.5 + 0j, prm, 100.0)
    _, _, _, dxi, dgamma, dtheta, dp, dq = out
    assert dxi == pytest.approx(0.1 - 0.1j)
    assert dgamma == pytest.approx(0.3 + 0j)
    assert dtheta == pytest.approx(1.0)


def test_state_round_trip():
    x = np.arange(13, dtype=float) / 7
    s = AcState.from_array(x)
    np.testing.assert_array_equal(s.to_array(), x)
    assert len(AcState.LABELS) == AcState.N_STATES == 13
