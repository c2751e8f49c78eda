"""Battery equivalent circuits, averaged boost converter, DC/DC control and dead time.

Per-unit averaged model in boost (discharging) mode.  Time derivatives are in
1/s; the ``omega_b`` factors carry the per-unit reactances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .config import BatteryParams, DcParams

__all__ = [
    "DcState",
    "DcOutputs",
    "DcDomainError",
    "PADE_ORDERS",
    "N_PADE",
    "battery_voltage",
    "battery_derivatives",
    "dcdc_control",
    "predictor",
    "pade_coefficients",
    "pade_realization",
    "deadtime_output",
    "deadtime_derivatives",
    "dc_electrical_derivatives",
    "converter_output_current",
]

PADE_ORDERS = (2, 3)
N_PADE = sum(PADE_ORDERS)


class DcDomainError(ArithmeticError):
    """DC-link voltage left the physical domain (v_dc <= 0)."""


_BRANCHES = {0: (), 2: ("v_cb1", "v_cb2"), 4: ("i_l1", "i_l2", "v_cb1", "v_cb2")}


@dataclass
class DcState:
    i_b: float
    v_dc: float
    eta: float
    zeta_i: float
    pade: np.ndarray
    i_l1: float = 0.0
    i_l2: float = 0.0
    v_cb1: float = 0.0
    v_cb2: float = 0.0

    @staticmethod
    def labels(order: int) -> tuple[str, ...]:
        pade = tuple(f"pade{n}_{k}" for n in PADE_ORDERS for k in range(1, n + 1))
        return _BRANCHES[order] + ("i_b", "v_dc", "eta", "zeta_i") + pade

    @staticmethod
    def size(order: int) -> int:
        return len(_BRANCHES[order]) + 4 + N_PADE

    @classmethod
    def from_array(cls, x, order: int) -> "DcState":
        nb = len(_BRANCHES[order])
        pade = x[nb + 4:nb + 4 + N_PADE]
        if isinstance(x, np.ndarray) and x.ndim == 1:
            x = x[:nb + 4].tolist()
        branches = dict(zip(_BRANCHES[order], x[:nb]))
        return cls(i_b=x[nb], v_dc=x[nb + 1], eta=x[nb + 2], zeta_i=x[nb + 3],
                   pade=pade, **branches)

    def to_array(self, order: int) -> np.ndarray:
        vals = [getattr(self, name) for name in _BRANCHES[order]]
        vals += [self.i_b, self.v_dc, self.eta, self.zeta_i]
        return np.concatenate([np.asarray(vals, dtype=float), np.asarray(self.pade, dtype=float)])


@dataclass
class DcOutputs:
    v_b: float
    d_raw: float
    d_eff: float
    i_in: float
    i_out: float
    i_ref: float
    delta_i_out: float


def battery_voltage(order: int, state: DcState, i_b, params: BatteryParams):
    """Terminal voltage of the battery for equivalent-circuit order 0, 2 or 4."""
    v_b = params.v_oc - i_b * params.r_b0
    if order == 0:
        return v_b
    v_b = v_b - state.v_cb1 - state.v_cb2
    if order == 2:
        return v_b
    if order == 4:
        return v_b - params.r_b1 * (i_b - state.i_l1) - params.r_b2 * (i_b - state.i_l2)
    raise ValueError(f"battery order must be 0, 2 or 4, got {order}")


def battery_derivatives(order: int, state: DcState, i_b, params: BatteryParams, omega_b: float):
    """Branch-state derivatives: ``(dv_cb1, dv_cb2)`` for order 2,
    ``(di_l1, di_l2, dv_cb1, dv_cb2)`` for order 4.
    """
    if order not in (2, 4):
        raise ValueError(f"battery branches exist only for order 2 or 4, got {order}")
    if params.c_b1 <= 0 or params.c_b2 <= 0 or params.r_b3 <= 0 or params.r_b4 <= 0:
        raise ValueError("RC branch elements must be > 0")
    dv1 = omega_b / params.c_b1 * (i_b - state.v_cb1 / params.r_b3)
    dv2 = omega_b / params.c_b2 * (i_b - state.v_cb2 / params.r_b4)
    if order == 2:
        return dv1, dv2
    if params.l_b1 <= 0 or params.l_b2 <= 0:
        raise ValueError("RL branch inductances must be > 0")
    di1 = omega_b / params.l_b1 * params.r_b1 * (i_b - state.i_l1)
    di2 = omega_b / params.l_b2 * params.r_b2 * (i_b - state.i_l2)
    return di1, di2, dv1, dv2


def _any_nonpositive(v) -> bool:
    if isinstance(v, float):
        return v <= 0
    return bool(np.any(np.asarray(v) <= 0))


def _clip(x, lo, hi):
    if np.ndim(x) == 0:
        return min(max(x, lo), hi)
    return np.clip(x, lo, hi)


def dcdc_control(v_dc_star, v_dc, i_in, i_out, eta, zeta_i, delta_i_out, gains: DcParams):
    """Dual-loop PI with output-current feed-forward and the predictor term.

    Returns ``(d_raw, i_ref, d_eta, d_zeta)``; ``d_raw`` is clamped to ``[0, d_max]``.
    """
    err_v = v_dc_star - v_dc
    i_ref = gains.kp_vdc * err_v + gains.ki_vdc * eta
    err_i = i_ref + i_out - i_in
    d = gains.kp_ib * err_i + gains.ki_ib * zeta_i + gains.k_pred * delta_i_out
    return _clip(d, 0.0, gains.d_max), i_ref, err_v, err_i


def predictor(v_m, di_s, v_dc, t_s: float):
    """One-step forward-Euler estimate of the change in converter output current.

    ``di_s`` is the switching-current derivative in pu/s.
    """
    if _any_nonpositive(v_dc):
        raise DcDomainError("v_dc must be > 0 in predictor")
    return t_s * (v_m.real * di_s.real + v_m.imag * di_s.imag) / v_dc


@lru_cache(maxsize=None)
def pade_coefficients(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Numerator and denominator of the (n, n) Pade approximant of ``exp(-sigma)``.

    Ascending powers of ``sigma = s * T``; both have constant term 1.
    """
    num = np.zeros(n + 1)
    den = np.zeros(n + 1)
    for k in range(n + 1):
        c = math.factorial(2 * n - k) * math.factorial(n) / (
            math.factorial(2 * n) * math.factorial(k) * math.factorial(n - k))
        num[k] = c * (-1) ** k
        den[k] = c
    return num, den


@lru_cache(maxsize=None)
def pade_realization(n: int):
    """Controllable canonical form ``(A, B, C, D)`` of the (n, n) Pade delay in scaled time.

    With ``sigma = s T`` the physical block is ``x' = (A x + B u) / T``, ``y = C x + D u``.
    """
    num, den = pade_coefficients(n)
    a = den / den[n]
    b = num / den[n]
    d = b[n]
    c = b[:n] - d * a[:n]
    A = np.zeros((n, n))
    A[:-1, 1:] = np.eye(n - 1)
    A[-1, :] = -a[:n]
    B = np.zeros(n)
    B[-1] = 1.0
    for arr in (A, B, c):
        arr.setflags(write=False)
    return A, B, c, float(d)


def deadtime_output(pade, d_max: float = 1.0):
    """Averaged Pade output from the block states alone.

    The feed-through terms of the 2/2 (+1) and 3/3 (-1) blocks cancel in the average.
    """
    pade = np.asarray(pade)
    y = 0.0
    start = 0
    for n in PADE_ORDERS:
        _, _, C, _ = pade_realization(n)
        y = y + C @ pade[start:start + n]
        start += n
    return _clip(y / len(PADE_ORDERS), 0.0, d_max)


def deadtime_derivatives(pade, d_raw, t_dead: float, d_max: float = 1.0):
    """Average of the 2/2 and 3/3 Pade delays driven by ``d_raw``.

    ``pade`` holds the 5 block states (2nd-order block first).  Returns
    ``(d_eff, dpade)`` with ``d_eff`` clamped to ``[0, d_max]``.
    """
    if not t_dead > 0:
        raise ValueError(f"dead time must be > 0, got {t_dead}")
    pade = np.asarray(pade)
    y = 0.0
    parts = []
    start = 0
    for n in PADE_ORDERS:
        A, B, C, D = pade_realization(n)
        x = pade[start:start + n]
        start += n
        y = y + C @ x + D * d_raw
        parts.append((A @ x + np.multiply.outer(B, d_raw)) / t_dead)
    d_eff = _clip(y / len(PADE_ORDERS), 0.0, d_max)
    return d_eff, np.concatenate(parts)


def dc_electrical_derivatives(i_b, v_dc, d_eff, v_b, i_out, dc: DcParams, omega_b: float):
    """Inductor current and DC-link voltage derivatives of the averaged boost stage.

    Returns ``(di_b, dv_dc, i_in)``.  With ``dc.i_in_model == "power_balance"`` the
    converter input current follows ``v_dc * i_in = v_b * i_b``; ``"averaged"``
    uses ``i_in = (1 - d) i_b``.
    """
    if _any_nonpositive(v_dc):
        raise DcDomainError(f"v_dc = {np.min(v_dc):.6g} pu <= 0")
    di_b = omega_b / dc.l_dc * (v_b - (1.0 - d_eff) * v_dc)
    if dc.i_in_model == "averaged":
        i_in = (1.0 - d_eff) * i_b
    else:
        i_in = v_b * i_b / v_dc
    dv_dc = omega_b / dc.c_dc * (i_in - i_out)
    return di_b, dv_dc, i_in


def converter_output_current(v_m, i_s, v_dc):
    """DC current drawn by the VSC, ``p_inv / v_dc``."""
    if _any_nonpositive(v_dc):
        raise DcDomainError("v_dc must be > 0")
    return (v_m.real * i_s.real + v_m.imag * i_s.imag) / v_dc
