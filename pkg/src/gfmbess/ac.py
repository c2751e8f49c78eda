"""Grid-forming VSC: droop, virtual impedance, cascaded dq loops and the LCL filter.

All dq quantities are complex (``d + jq``) and every function accepts either
Python scalars or NumPy arrays, so the same code serves a single derivative
evaluation and a batch of perturbed states.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import AcParams

__all__ = [
    "AcState",
    "AcOutputs",
    "SingularLoadError",
    "LOAD_CURRENT_GUARD",
    "compute_power",
    "outer_droop",
    "power_filter_derivatives",
    "virtual_impedance",
    "inner_loops",
    "saturate_modulation",
    "load_bus_voltage",
    "impedance_load_voltage",
    "ac_derivatives",
]

LOAD_CURRENT_GUARD = 1e-3


class SingularLoadError(ArithmeticError):
    pass


@dataclass
class AcState:
    """The 13 AC states: five dq pairs, the converter angle and two filtered powers."""

    e_g: complex
    i_g: complex
    i_s: complex
    xi: complex
    gamma: complex
    theta_c: float
    p_tilde: float
    q_tilde: float

    N_STATES = 13
    LABELS = ("e_g_d", "e_g_q", "i_g_d", "i_g_q", "i_s_d", "i_s_q", "xi_d", "xi_q",
              "gamma_d", "gamma_q", "theta_c", "p_tilde", "q_tilde")

    @classmethod
    def from_array(cls, x) -> "AcState":
        if isinstance(x, np.ndarray) and x.ndim == 1:
            x = x.tolist()
        return cls(e_g=x[0] + 1j * x[1], i_g=x[2] + 1j * x[3], i_s=x[4] + 1j * x[5],
                   xi=x[6] + 1j * x[7], gamma=x[8] + 1j * x[9], theta_c=x[10],
                   p_tilde=x[11], q_tilde=x[12])

    def to_array(self) -> np.ndarray:
        c = (self.e_g, self.i_g, self.i_s, self.xi, self.gamma)
        out = []
        for z in c:
            out += [np.real(z), np.imag(z)]
        out += [self.theta_c, self.p_tilde, self.q_tilde]
        return np.array(out, dtype=float)


@dataclass
class AcOutputs:
    omega_c: float
    v_m: complex
    v_m_ref: complex
    p_c: float
    q_c: float
    v_l: complex


def compute_power(e_g, i_g):
    """Instantaneous (p, q) from ``e_g * conj(i_g)``."""
    s = e_g * i_g.conjugate()
    return s.real, s.imag


def outer_droop(p_tilde, q_tilde, params: AcParams):
    omega_c = params.omega_star + params.rp * (params.p_star - p_tilde)
    v_c = params.v_star + params.rq * (params.q_star - q_tilde)
    return omega_c, v_c


def power_filter_derivatives(p_c, q_c, p_tilde, q_tilde, omega_z):
    if not omega_z > 0:
        raise ValueError(f"power filter cutoff must be > 0, got {omega_z}")
    return omega_z * (p_c - p_tilde), omega_z * (q_c - q_tilde)


def virtual_impedance(v_c, i_g, omega_c, r_v, l_v):
    """Voltage reference after the virtual impedance; ``v_c`` is a d-axis magnitude."""
    return v_c - (r_v + 1j * omega_c * l_v) * i_g


def inner_loops(v_bar, state: AcState, omega_c, params: AcParams):
    """Cascaded voltage and current PI loops with dq decoupling and feed-forward.

    Returns the current reference and the (unsaturated) modulation voltage reference.
    """
    e_g, i_g, i_s = state.e_g, state.i_g, state.i_s
    i_s_ref = (params.kp_v * (v_bar - e_g) + params.ki_v * state.xi
               + 1j * omega_c * params.c_f * e_g + params.kf_i * i_g)
    v_m_ref = (params.kp_i * (i_s_ref - i_s) + params.ki_i * state.gamma
               + 1j * omega_c * params.l_f * i_s + params.kf_v * e_g)
    return i_s_ref, v_m_ref


def saturate_modulation(v_m_ref, v_dc, limit_scale: float = 1.0):
    """Scale ``v_m_ref`` back onto the disc of radius ``limit_scale * v_dc``.

    The direction is preserved; a zero reference maps to zero.
    """
    limit = limit_scale * v_dc
    norm = abs(v_m_ref)
    if np.ndim(norm) == 0:
        if v_dc <= 0:
            raise ValueError("v_dc must be > 0 for modulation saturation")
        if norm <= limit:
            return v_m_ref
        return v_m_ref * (limit / norm)
    if np.any(np.asarray(v_dc) <= 0):
        raise ValueError("v_dc must be > 0 for modulation saturation")
    scale = np.where(norm > limit, limit / np.where(norm > 0, norm, 1.0), 1.0)
    return v_m_ref * scale


def load_bus_voltage(i_g, p_l, q_l):
    """Voltage of a constant-power load drawing exactly ``p_l + j q_l`` at current ``i_g``."""
    mag = abs(i_g)
    if np.any(mag < LOAD_CURRENT_GUARD):
        raise SingularLoadError(
            f"|i_g| = {np.min(mag):.3g} pu below load guard {LOAD_CURRENT_GUARD} pu")
    return (p_l + 1j * q_l) / np.conj(i_g)


def impedance_load_voltage(i_g, p_l, q_l):
    """Voltage of a constant-admittance load that draws ``p_l + j q_l`` at 1 pu voltage.

    A zero admittance (open circuit) has no finite bus voltage and is rejected.
    """
    y = p_l - 1j * q_l
    if y == 0:
        raise SingularLoadError("load admittance is zero (open circuit)")
    return i_g / y


def ac_derivatives(state: AcState, v_m, v_l, omega_c, v_bar, i_s_ref, params: AcParams,
                   omega_b: float, p_c=None, q_c=None):
    """Time derivatives of the AC states, in the order of :attr:`AcState.LABELS`.

    Returns ``(de_g, di_g, di_s, dxi, dgamma, dtheta_c, dp_tilde, dq_tilde)`` with
    complex entries for the dq pairs.  ``p_c``/``q_c`` are recomputed when omitted.
    """
    e_g, i_g, i_s = state.e_g, state.i_g, state.i_s
    wb = omega_b
    di_s = (wb / params.l_f) * (v_m - e_g) - (params.r_f / params.l_f * wb + 1j * wb * omega_c) * i_s
    di_g = (wb / params.l_g) * (e_g - v_l) - (params.r_g / params.l_g * wb + 1j * wb * omega_c) * i_g
    de_g = (wb / params.c_f) * (i_s - i_g) - 1j * omega_c * wb * e_g
    dxi = v_bar - e_g
    dgamma = i_s_ref - i_s
    dtheta = wb * (omega_c - 1.0)
    if p_c is None:
        p_c, q_c = compute_power(e_g, i_g)
    dp, dq = power_filter_derivatives(p_c, q_c, state.p_tilde, state.q_tilde, params.omega_z)
    return de_g, di_g, di_s, dxi, dgamma, dtheta, dp, dq
