"""Coupled AC/DC model: state layout, full derivative, equilibria and time simulation."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from . import ac, dc
from .ac import AcState
from .config import SystemParams, with_battery_order, with_gains
from .dc import DcState
from .numdiff import fd_jacobian

__all__ = [
    "SystemState",
    "Scenario",
    "Trajectory",
    "Equilibrium",
    "ModelEvaluationError",
    "EquilibriumError",
    "SimulationError",
    "state_labels",
    "state_size",
    "THETA_INDEX",
    "OUTPUT_NAMES",
    "system_derivative",
    "evaluate",
    "flat_start",
    "find_equilibrium",
    "apply_scenario",
    "simulate",
    "reference_integrate",
    "rk4_integrate",
    "max_pairwise_gap",
    "compare_orders",
]

log = logging.getLogger(__name__)

THETA_INDEX = 10
N_AC = AcState.N_STATES

OUTPUT_NAMES = ("v_dc", "v_b", "i_b", "i_in", "i_out", "i_ref", "delta_i_out", "d_raw", "d_eff",
                "v_m_ref_norm", "v_m_norm", "omega_c", "p_c", "q_c")


class ModelEvaluationError(ArithmeticError):
    """A guard inside the model failed; ``stage`` names the sub-operation."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


class EquilibriumError(RuntimeError):
    def __init__(self, message: str, residual: float = math.nan):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class SimulationError(RuntimeError):
    def __init__(self, message: str, t: float = math.nan):
        super().__init__(f"t = {t:.6g} s: {message}")
        self.t = t


def state_labels(order: int) -> tuple[str, ...]:
    return AcState.LABELS + DcState.labels(order)


def state_size(order: int) -> int:
    return N_AC + DcState.size(order)


@dataclass
class SystemState:
    ac: AcState
    dc: DcState
    order: int

    @classmethod
    def from_array(cls, x, order: int) -> "SystemState":
        x = np.asarray(x, dtype=float)
        if x.shape != (state_size(order),):
            raise ValueError(f"expected {state_size(order)} states for order {order}, got {x.shape}")
        return cls(AcState.from_array(x[:N_AC]), DcState.from_array(x[N_AC:], order), order)

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.ac.to_array(), self.dc.to_array(self.order)])


# ---------------------------------------------------------------------------
# derivative

def evaluate(x, params: SystemParams, load=None, *, outputs: bool = False):
    """Full derivative ``f(x, u, w)``; ``x`` may be ``(n,)`` or a batch ``(n, k)``.

    With ``outputs=True`` also returns a dict of derived quantities plus the
    boolean ``saturated`` (modulation limit active).
    """
    p_l, q_l = params.load if load is None else load
    order = params.battery.order
    x = np.asarray(x)
    if x.dtype != np.longdouble:
        x = x.astype(float, copy=False)
    acp, dcp, bat = params.ac, params.dc, params.battery
    wb = params.bases.omega_b

    s = AcState.from_array(x[:N_AC])
    d = DcState.from_array(x[N_AC:], order)
    if dc._any_nonpositive(d.v_dc):
        raise ModelEvaluationError("dc_electrical_derivatives", f"v_dc = {np.min(d.v_dc):.6g} <= 0")

    p_c, q_c = ac.compute_power(s.e_g, s.i_g)
    omega_c, v_c = ac.outer_droop(s.p_tilde, s.q_tilde, acp)
    v_bar = ac.virtual_impedance(v_c, s.i_g, omega_c, acp.r_v, acp.l_v)
    i_s_ref, v_m_ref = ac.inner_loops(v_bar, s, omega_c, acp)
    v_m = ac.saturate_modulation(v_m_ref, d.v_dc, acp.v_m_limit_scale)
    try:
        if params.load_model == "power":
            v_l = ac.load_bus_voltage(s.i_g, p_l, q_l)
        else:
            v_l = ac.impedance_load_voltage(s.i_g, p_l, q_l)
    except ac.SingularLoadError as exc:
        raise ModelEvaluationError("load_bus_voltage", str(exc)) from None
    de_g, di_g, di_s, dxi, dgamma, dtheta, dp, dq = ac.ac_derivatives(
        s, v_m, v_l, omega_c, v_bar, i_s_ref, acp, wb, p_c, q_c)

    i_out = dc.converter_output_current(v_m, s.i_s, d.v_dc)
    delta_i_out = dc.predictor(v_m, di_s, d.v_dc, dcp.t_s)
    v_b = dc.battery_voltage(order, d, d.i_b, bat)
    if dcp.deadtime == "duty":
        d_eff = dc.deadtime_output(d.pade, dcp.d_max)
    i_in = _input_current(d.i_b, d.v_dc, v_b, d_eff if dcp.deadtime == "duty" else None, dcp)
    d_raw, i_ref, deta, dzeta = dc.dcdc_control(dcp.v_dc_star, d.v_dc, i_in, i_out, d.eta,
                                                d.zeta_i, delta_i_out, dcp)
    if dcp.deadtime == "duty":
        _, dpade = dc.deadtime_derivatives(d.pade, d_raw, dcp.t_dead, dcp.d_max)
    else:
        # no delay block: the Pade states are frozen and the duty acts directly
        d_eff, dpade = d_raw, np.zeros_like(d.pade)
    di_b, dv_dc, i_in = dc.dc_electrical_derivatives(d.i_b, d.v_dc, d_eff, v_b, i_out, dcp, wb)

    parts = [de_g.real, de_g.imag, di_g.real, di_g.imag, di_s.real, di_s.imag,
             dxi.real, dxi.imag, dgamma.real, dgamma.imag, dtheta, dp, dq]
    if order:
        parts += list(dc.battery_derivatives(order, d, d.i_b, bat, wb))
    parts += [di_b, dv_dc, deta, dzeta]
    dx = np.empty_like(x)
    for k, p in enumerate(parts):
        dx[k] = p
    dx[len(parts):] = dpade
    if not outputs:
        return dx
    v_m_ref_norm = abs(v_m_ref)
    out = dict(v_dc=d.v_dc, v_b=v_b, i_b=d.i_b, i_in=i_in, i_out=i_out, i_ref=i_ref,
               delta_i_out=delta_i_out, d_raw=d_raw, d_eff=d_eff, v_m_ref_norm=v_m_ref_norm,
               v_m_norm=abs(v_m), omega_c=omega_c, p_c=p_c, q_c=q_c,
               saturated=v_m_ref_norm > acp.v_m_limit_scale * d.v_dc)
    return dx, out


def _input_current(i_b, v_dc, v_b, d_eff, dcp):
    if dcp.i_in_model == "averaged":
        if d_eff is None:
            raise ValueError("i_in_model 'averaged' needs the dead-time block (dc.deadtime = duty)")
        return (1.0 - d_eff) * i_b
    return v_b * i_b / v_dc


def system_derivative(x, params: SystemParams, load=None):
    """``dx/dt`` of the full coupled system (1/s)."""
    return evaluate(x, params, load)


# ---------------------------------------------------------------------------
# equilibrium

@dataclass
class Equilibrium:
    x: np.ndarray
    params: SystemParams
    residual: float
    iterations: int

    @property
    def state(self) -> SystemState:
        return SystemState.from_array(self.x, self.params.battery.order)


def _battery_current(p_dc, bat) -> float:
    r = bat.r_steady_state if bat.order else bat.r_b0
    disc = bat.v_oc**2 - 4.0 * r * p_dc
    if r == 0 or disc < 0:
        return p_dc / bat.v_oc
    return (bat.v_oc - math.sqrt(disc)) / (2.0 * r)


def flat_start(params: SystemParams, load=None) -> np.ndarray:
    """Initial guess: 1 pu voltages, currents from the load, duty from the boost ratio."""
    p_l, q_l = params.load if load is None else load
    acp, dcp, bat = params.ac, params.dc, params.battery
    e_g = acp.v_star + 0j
    i_g = (p_l - 1j * q_l) / e_g.conjugate()
    i_s = i_g + 1j * acp.c_f * e_g
    v_m = e_g + (acp.r_f + 1j * acp.l_f) * i_s
    xi = (i_s - 1j * acp.c_f * e_g - acp.kf_i * i_g) / acp.ki_v if acp.ki_v else 0j
    gamma = (v_m - 1j * acp.l_f * i_s - acp.kf_v * e_g) / acp.ki_i if acp.ki_i else 0j
    s = e_g * i_g.conjugate()
    ac_state = AcState(e_g, i_g, i_s, xi, gamma, 0.0, s.real, s.imag)

    p_dc = (v_m * i_s.conjugate()).real
    i_b = _battery_current(p_dc, bat)
    v_dc = dcp.v_dc_star
    r = bat.r_steady_state if bat.order else bat.r_b0
    v_b = bat.v_oc - r * i_b
    duty = min(max(1.0 - v_b / v_dc, 0.0), dcp.d_max)
    pade = []
    for n in dc.PADE_ORDERS:
        A, B, _, _ = dc.pade_realization(n)
        pade.append(-np.linalg.solve(A, B * duty))
    zeta = duty / dcp.ki_ib if dcp.ki_ib else 0.0
    dc_state = DcState(i_b=i_b, v_dc=v_dc, eta=0.0, zeta_i=zeta, pade=np.concatenate(pade),
                       i_l1=i_b, i_l2=i_b, v_cb1=i_b * bat.r_b3, v_cb2=i_b * bat.r_b4)
    return SystemState(ac_state, dc_state, bat.order).to_array()


def _with_p_star(params: SystemParams, p_star: float) -> SystemParams:
    return dataclasses.replace(params, ac=dataclasses.replace(params.ac, p_star=p_star))


def find_equilibrium(params: SystemParams, load=None, x_guess=None, *, dispatch: bool = True,
                     tol: float = 1e-10, max_iter: int = 50) -> Equilibrium:
    """Damped Newton solve of ``f(x) = 0`` with a central-difference Jacobian.

    The converter angle is held at its guess value (it does not feed back).  With
    ``dispatch`` the active-power set point ``p_star`` is solved for as well, so
    that the converter runs at ``omega_star`` at this load, as an operator would
    dispatch it; the returned ``params`` carries that set point.
    """
    load = params.load if load is None else load
    x0 = flat_start(params, load) if x_guess is None else np.array(x_guess, dtype=float)
    n = x0.size
    if n != state_size(params.battery.order):
        raise EquilibriumError(f"guess has {n} states, expected "
                               f"{state_size(params.battery.order)}")
    free = [k for k in range(n) if k != THETA_INDEX]
    use_pstar = dispatch and params.ac.rp != 0
    rows = list(range(n)) if use_pstar else free

    def unpack(z):
        x = x0.copy()
        x[free] = z[:len(free)]
        p = _with_p_star(params, z[-1]) if use_pstar else params
        return x, p

    def residual(z):
        x, p = unpack(z)
        return evaluate(x, p, load)[rows]

    def jac(z):
        x, p = unpack(z)
        J = fd_jacobian(lambda xx: evaluate(xx, p, load), x, vectorized=True)[rows][:, free]
        if use_pstar:
            J = np.column_stack([J, fd_jacobian(residual_pstar(x), z[-1:])])
        return J

    def residual_pstar(x):
        return lambda ps: evaluate(x, _with_p_star(params, ps[0]), load)[rows]

    z = x0[free]
    if use_pstar:
        z = np.append(z, x0[11] if x_guess is None else params.ac.p_star)
    try:
        r = residual(z)
    except ArithmeticError as exc:
        raise EquilibriumError(f"model evaluation failed at the initial guess: {exc}") from None
    norm = np.max(np.abs(r))
    it = 0
    while norm >= tol and it < max_iter:
        it += 1
        try:
            J = jac(z)
        except ArithmeticError as exc:
            raise EquilibriumError(f"Jacobian evaluation failed: {exc}", norm) from None
        if not np.all(np.isfinite(J)) or np.linalg.cond(J) > 1e14:
            raise EquilibriumError("singular Jacobian", norm)
        step = np.linalg.solve(J, -r)
        alpha = 1.0
        while True:
            z_new = z + alpha * step
            try:
                r_new = residual(z_new)
                norm_new = np.max(np.abs(r_new))
            except ArithmeticError:
                norm_new = math.inf
            if norm_new < norm or alpha < 1e-6:
                break
            alpha *= 0.5
        if not math.isfinite(norm_new):
            raise EquilibriumError("damped Newton step left the model domain", norm)
        z, r, norm = z_new, r_new, norm_new
    if norm >= tol:
        raise EquilibriumError(f"no convergence in {max_iter} iterations", norm)
    x, p = unpack(z)
    full = np.max(np.abs(evaluate(x, p, load)))
    if full >= tol:
        raise EquilibriumError("frequency residual remains (omega_c != 1 without dispatch)", full)
    return Equilibrium(x=x, params=p, residual=float(full), iterations=it)


# ---------------------------------------------------------------------------
# scenarios and trajectories

@dataclass(frozen=True)
class Scenario:
    """Load-step experiment.  ``p_l``/``q_l`` default to the params' nominal load."""

    delta_p_l: float = 0.5
    t_step: float = 0.05
    t_end: float = 0.5
    stride: float = 1e-4
    p_l: float | None = None
    q_l: float | None = None
    order: int | None = None
    gains: dict | None = None
    rtol: float = 1e-8
    atol: float = 1e-10

    def __post_init__(self):
        if not (0 <= self.t_step < self.t_end):
            raise ValueError(f"need 0 <= t_step < t_end, got {self.t_step}, {self.t_end}")
        if not math.isfinite(self.delta_p_l):
            raise ValueError("delta_p_l must be finite")
        if not self.stride > 0:
            raise ValueError("stride must be > 0")


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    outputs: dict
    labels: tuple
    params: SystemParams
    scenario: Scenario
    x_eq: np.ndarray
    saturation_evals: int = 0
    saturated_samples: int = 0
    n_rhs_evals: int = 0

    def state(self, k: int) -> SystemState:
        return SystemState.from_array(self.states[k], self.params.battery.order)

    @property
    def v_dc(self) -> np.ndarray:
        return self.outputs["v_dc"]

    def max_deviation(self) -> float:
        return float(np.max(np.abs(self.outputs["v_dc"] - self.params.dc.v_dc_star)))


def apply_scenario(params: SystemParams, scenario: Scenario) -> SystemParams:
    p = params
    if scenario.order is not None:
        p = with_battery_order(p, scenario.order)
    if scenario.gains:
        p = with_gains(p, **scenario.gains)
    load = (scenario.p_l if scenario.p_l is not None else p.p_l,
            scenario.q_l if scenario.q_l is not None else p.q_l)
    return dataclasses.replace(p, p_l=load[0], q_l=load[1])


def _sample_times(scenario: Scenario) -> np.ndarray:
    n = int(math.floor(scenario.t_end / scenario.stride + 1e-9))
    t = np.arange(n + 1) * scenario.stride
    # snap rounding drift (e.g. 1200 * 1e-4 = 0.12000000000000001) onto the segment
    # boundaries so every sample falls inside exactly one integration segment
    tol = 1e-9 * scenario.stride
    for edge in (scenario.t_step, scenario.t_end):
        t[np.abs(t - edge) <= tol] = edge
    t = t[t <= scenario.t_end]
    return np.unique(np.append(t, scenario.t_step))


def _record(params, scenario, times, states, x_eq, **extra) -> Trajectory:
    pre = times <= scenario.t_step
    load0 = params.load
    load1 = (params.p_l + scenario.delta_p_l, params.q_l)
    out = {}
    sat = np.zeros(times.size, dtype=bool)
    for mask, load in ((pre, load0), (~pre, load1)):
        if not np.any(mask):
            continue
        _, o = evaluate(states[mask].T, params, load, outputs=True)
        sat[mask] = o.pop("saturated")
        for k, v in o.items():
            out.setdefault(k, np.empty(times.size))[mask] = v
    return Trajectory(times=times, states=states, outputs=out,
                      labels=state_labels(params.battery.order), params=params,
                      scenario=scenario, x_eq=x_eq, saturated_samples=int(sat.sum()), **extra)


def simulate(params: SystemParams, scenario: Scenario, *, equilibrium: Equilibrium | None = None,
             method: str = "BDF") -> Trajectory:
    """Integrate the load-step scenario from the pre-step equilibrium.

    The solver is restarted at ``t_step`` so the step is an exact discontinuity.
    """
    base = apply_scenario(params, scenario)
    eq = equilibrium if equilibrium is not None else find_equilibrium(base)
    p = eq.params
    load1 = (p.p_l + scenario.delta_p_l, p.q_l)
    times = _sample_times(scenario)
    counter = {"sat": 0}

    def make_rhs(load):
        def rhs(t, y):
            try:
                if y.ndim == 1:
                    dx, o = evaluate(y, p, load, outputs=True)
                    counter["sat"] += int(o["saturated"])
                    return dx
                return evaluate(y, p, load)
            except ModelEvaluationError as exc:
                raise SimulationError(str(exc), t) from None
        return rhs

    states = np.full((times.size, eq.x.size), np.nan)
    y0 = eq.x.copy()
    n_rhs_evals = 0
    segments = ((0.0, scenario.t_step, p.load), (scenario.t_step, scenario.t_end, load1))
    for t0, t1, load in segments:
        mask = (times >= t0) & (times <= t1)
        if t0 > 0:
            mask &= times > t0
        if t1 <= t0:
            continue
        t_eval = times[mask]
        sol = solve_ivp(make_rhs(load), (t0, t1), y0, method=method, t_eval=t_eval,
                        rtol=scenario.rtol, atol=scenario.atol, vectorized=True,
                        dense_output=False)
        if sol.status != 0:
            t_fail = sol.t[-1] if sol.t.size else t0
            raise SimulationError(f"integrator failed: {sol.message}", t_fail)
        if not np.all(np.isfinite(sol.y)):
            raise SimulationError("non-finite state", t1)
        states[mask] = sol.y.T
        n_rhs_evals += sol.nfev
        y0 = _final_state(sol, make_rhs(load), t0, t1, y0, method, scenario)
    if np.isnan(states).any():
        raise SimulationError("sample grid not covered by the integration segments",
                              scenario.t_end)
    return _record(p, scenario, times, states, eq.x, saturation_evals=counter["sat"],
                   n_rhs_evals=n_rhs_evals)


def _final_state(sol, rhs, t0, t1, y0, method, scenario):
    if sol.t.size and sol.t[-1] == t1:
        return sol.y[:, -1].copy()
    end = solve_ivp(rhs, (t0, t1), y0, method=method, rtol=scenario.rtol, atol=scenario.atol,
                    vectorized=True)
    return end.y[:, -1].copy()


# ---------------------------------------------------------------------------
# fixed-step reference

def rk4_integrate(fun, y0, t0: float, t1: float, dt: float, *, record=None, blowup: float = 1e6):
    """Classical 4th-order Runge-Kutta from ``t0`` to ``t1``; last step shortened to land on ``t1``.

    ``record`` is an optional increasing array of times; the state at the nearest
    step at or after each is returned alongside the final state.
    """
    y = np.array(y0, dtype=float)
    n = int(math.ceil((t1 - t0) / dt - 1e-9))
    rec_times = np.asarray(record if record is not None else [], dtype=float)
    rec = np.empty((rec_times.size, y.size))
    j = 0
    t = t0
    while j < rec_times.size and rec_times[j] <= t + 1e-12:
        rec[j] = y
        j += 1
    for k in range(n):
        h = min(dt, t1 - t)
        k1 = fun(t, y)
        k2 = fun(t + h / 2, y + h / 2 * k1)
        k3 = fun(t + h / 2, y + h / 2 * k2)
        k4 = fun(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t = t0 + (k + 1) * dt if k < n - 1 else t1
        if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > blowup:
            raise SimulationError(f"fixed-step integration unstable with dt = {dt:g} s", t)
        while j < rec_times.size and rec_times[j] <= t + 1e-12:
            rec[j] = y
            j += 1
    return y, rec


def reference_integrate(params: SystemParams, scenario: Scenario, dt: float) -> Trajectory:
    """Fixed-step RK4 counterpart of :func:`simulate`, for verification only.

    ``dt`` must resolve the fastest mode; with the 4th-order battery that is the
    first RL branch, ``tau = l_b1 / (omega_b r_b1)``.
    """
    base = apply_scenario(params, scenario)
    eq = find_equilibrium(base)
    p = eq.params
    load1 = (p.p_l + scenario.delta_p_l, p.q_l)
    times = _sample_times(scenario)
    states = np.full((times.size, eq.x.size), np.nan)
    y = eq.x.copy()
    for t0, t1, load in ((0.0, scenario.t_step, p.load), (scenario.t_step, scenario.t_end, load1)):
        mask = (times >= t0) & (times <= t1)
        if t0 > 0:
            mask &= times > t0
        if t1 <= t0:
            continue

        def rhs(t, yy, load=load):
            return evaluate(yy, p, load)

        y, rec = rk4_integrate(rhs, y, t0, t1, dt, record=times[mask])
        states[mask] = rec
    return _record(p, scenario, times, states, eq.x)


# ---------------------------------------------------------------------------
# battery-order comparison

def max_pairwise_gap(trajectories) -> float:
    """Sup-norm of the pairwise ``v_dc`` differences; all time grids must match."""
    trajs = list(trajectories)
    if not trajs:
        raise ValueError("no trajectories to compare")
    ref = trajs[0].times
    for tr in trajs[1:]:
        if tr.times.shape != ref.shape or not np.array_equal(tr.times, ref):
            raise ValueError("trajectories have mismatched time grids (horizon or stride differ)")
    gap = 0.0
    for i in range(len(trajs)):
        for j in range(i + 1, len(trajs)):
            gap = max(gap, float(np.max(np.abs(trajs[i].v_dc - trajs[j].v_dc))))
    return gap


def compare_orders(params: SystemParams, scenario: Scenario, orders=(0, 2, 4), *,
                   lump_order0: bool = True):
    """Simulate ``scenario`` once per battery order; returns ``(trajectories, gap)``.

    With ``lump_order0`` the order-0 run uses the steady-state resistance so the
    three models share the same DC operating point.
    """
    trajs = {}
    for order in orders:
        p = with_battery_order(params, order, lump=lump_order0)
        trajs[order] = simulate(p, dataclasses.replace(scenario, order=None))
    return trajs, max_pairwise_gap(trajs.values())
