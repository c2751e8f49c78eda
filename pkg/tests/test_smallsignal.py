"""Finite-difference Jacobians, modal analysis and the feasibility screen."""

import numpy as np
import pytest

from gfmbess.config import default_params
from gfmbess.numdiff import fd_jacobian, fd_step
from gfmbess.simcore import THETA_INDEX, evaluate, find_equilibrium
from gfmbess.smallsignal import (ModeReport, check_feasibility, eigen_analysis, format_mode_report,
                                 jacobian, linearize)


@pytest.fixture(scope="module")
def model():
    eq = find_equilibrium(default_params())
    return linearize(eq)


def test_step_rule():
    np.testing.assert_array_equal(fd_step([0.0, 0.5, -3.0, 20.0]), [1e-7, 1e-7, 3e-7, 2e-6])


def test_linear_map_is_recovered_exactly():
    """Production path (one extended-precision batch) at a generic point."""
    M = np.array([[1.0, -2.0, 0.5], [3.0, 0.25, -1.0], [0.0, 4.0, 2.0]])
    A = fd_jacobian(lambda x: M @ x, np.array([0.3, -1.2, 2.0]), vectorized=True, extended=True)
    np.testing.assert_allclose(A, M, atol=1e-9, rtol=0)


def test_plain_path_is_roundoff_limited():
    """Column-by-column double precision: error bounded by eps |f| / h."""
    M = np.array([[1.0, -2.0, 0.5], [3.0, 0.25, -1.0], [0.0, 4.0, 2.0]])
    x = np.array([0.3, -1.2, 2.0])
    A = fd_jacobian(lambda v: M @ v, x)
    bound = 4 * np.finfo(float).eps * np.max(np.abs(M @ x)) / (2 * 1e-7)
    assert np.max(np.abs(A - M)) <= bound
    np.testing.assert_allclose(fd_jacobian(lambda v: M @ v, np.zeros(3)), M, atol=1e-12, rtol=0)


def test_scalar_square():
    A = fd_jacobian(lambda x: x**2, np.array([1.0]))
    assert A[0, 0] == pytest.approx(2.0, abs=1e-7)


def test_jacobian_shapes_and_structural_zero(model):
    n = len(model.labels)
    assert model.A.shape == (n, n) == (22, 22)
    assert model.B.shape == (n, 2)
    assert np.all(model.A[:, THETA_INDEX] == 0.0)


def test_jacobian_predicts_small_perturbations(model):
    """||f(x + d) - f(x) - A d|| <= 1e-9 + 1e-4 ||A d|| for d = 1e-6 along each state."""
    p = model.params
    f0 = evaluate(model.x_eq, p)
    for j in range(model.A.shape[0]):
        d = np.zeros_like(model.x_eq)
        d[j] = 1e-6
        lin = model.A @ d
        err = np.linalg.norm(evaluate(model.x_eq + d, p) - f0 - lin)
        assert err <= 1e-9 + 1e-4 * np.linalg.norm(lin), model.labels[j]


def test_disturbance_matrix_matches_load_derivative(model):
    p = model.params
    h = 1e-6
    col = (evaluate(model.x_eq, p, (p.p_l + h, p.q_l)) - evaluate(model.x_eq, p, (p.p_l - h, p.q_l))) / (2 * h)
    np.testing.assert_allclose(model.B[:, 0], col, rtol=1e-5, atol=1e-6)


def test_diagonal_and_constructed_modes():
    r = eigen_analysis(np.diag([-1.0, -2.0]))
    np.testing.assert_allclose(np.sort(r.eigenvalues.real), [-2, -1])
    np.testing.assert_allclose(r.damping, [1, 1])
    zeta, w = 0.35, 10.0
    comp = np.array([[0.0, 1.0], [-w * w, -2 * zeta * w]])
    np.testing.assert_allclose(eigen_analysis(comp).damping, [zeta, zeta], atol=1e-9)
    rot = eigen_analysis(np.array([[0.0, 1.0], [-1.0, 0.0]]))
    np.testing.assert_allclose(rot.damping, [0, 0], atol=1e-15)
    assert eigen_analysis(np.array([[2.0]])).damping[0] == -1.0


def test_eigen_analysis_rejects_nonfinite():
    with pytest.raises(ValueError):
        eigen_analysis(np.array([[np.nan]]))


def _report(lams):
    lams = np.asarray(lams, dtype=complex)
    mag = np.abs(lams)
    zero = np.nonzero(mag < 1e-6)[0]
    damping = np.where(mag < 1e-6, 0.0, -lams.real / np.where(mag < 1e-6, 1, mag))
    return ModeReport(lams, damping, zero)


@pytest.mark.parametrize("lams, feasible, worst", [
    ([-5 + 2j, -5 - 2j], True, None),
    ([-2.0], False, -2.0),
    ([-1 + 10j, -1 - 10j], False, -1 - 10j),
    ([0.0, -5.0], True, None),
])
def test_feasibility_examples(lams, feasible, worst):
    v = check_feasibility(_report(lams), (-3.0, 0.35))
    assert v.feasible is feasible
    if worst is not None:
        assert v.offenders[0] == pytest.approx(worst)


def test_default_damping_of_table_example():
    v = check_feasibility(_report([-5 + 2j, -5 - 2j]))
    assert v.min_damping == pytest.approx(5 / np.hypot(5, 2))


def test_full_system_modes(model):
    r = eigen_analysis(model.A, model.labels)
    assert len(r.zero_modes) == 1
    assert abs(r.eigenvalues[r.zero_modes[0]]) < 1e-6
    assert r.dominant[r.zero_modes[0]] == "theta_c"
    lam = r.eigenvalues
    np.testing.assert_allclose(np.sort_complex(lam), np.sort_complex(lam.conj()), atol=1e-9)
    # complex pairs carry identical damping
    for k, l in enumerate(lam):
        if abs(l.imag) > 1e-9:
            mate = np.argmin(np.abs(lam - l.conjugate()))
            assert r.damping[k] == pytest.approx(r.damping[mate], abs=1e-12)


def test_similarity_invariance(model):
    rng = np.random.default_rng(0)
    perm = rng.permutation(model.A.shape[0])
    a = np.sort_complex(eigen_analysis(model.A).eigenvalues)
    b = np.sort_complex(eigen_analysis(model.A[np.ix_(perm, perm)]).eigenvalues)
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-9)


def test_mode_report_text(model):
    r = eigen_analysis(model.A, model.labels)
    text = format_mode_report(r, check_feasibility(r, (-3.0, 0.35)))
    assert "verdict feasible" in text
    assert "criteria lambda_crit=-3 zeta_crit=0.35" in text
    rows = [ln.split() for ln in text.splitlines() if ln and ln[0].isdigit()]
    lam = np.array([float(r_[1]) + 1j * float(r_[2]) for r_ in rows])
    np.testing.assert_allclose(np.sort_complex(lam), np.sort_complex(lam.conj()), rtol=1e-9)


def test_impossible_damping_is_infeasible(model):
    r = eigen_analysis(model.A)
    assert not check_feasibility(r, (-3.0, 1.1)).feasible
    assert not check_feasibility(r, (-1e6, 0.35)).feasible


def test_jacobian_equilibrium_solved_on_demand():
    m = jacobian(default_params())
    assert np.max(np.abs(evaluate(m.x_eq, m.params))) < 1e-10
