"""Linearization at an equilibrium, modal analysis and the eigenvalue/damping screen."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .config import SystemParams
from .numdiff import fd_jacobian, fd_step
from .simcore import (THETA_INDEX, Equilibrium, ModelEvaluationError, evaluate, find_equilibrium,
                      state_labels)

__all__ = [
    "LinearModel",
    "ModeReport",
    "Feasibility",
    "ZERO_MODE_THRESHOLD",
    "TABLE_I_CRITERIA",
    "fd_step",
    "fd_jacobian",
    "jacobian",
    "linearize",
    "eigen_analysis",
    "check_feasibility",
    "format_mode_report",
]

ZERO_MODE_THRESHOLD = 1e-6
TABLE_I_CRITERIA = (-3.0, 0.35)


@dataclass
class LinearModel:
    A: np.ndarray
    B: np.ndarray
    x_eq: np.ndarray
    labels: tuple
    params: SystemParams | None = None


@dataclass
class ModeReport:
    eigenvalues: np.ndarray
    damping: np.ndarray
    zero_modes: np.ndarray
    dominant: tuple = ()

    @property
    def nonzero(self) -> np.ndarray:
        mask = np.ones(self.eigenvalues.size, dtype=bool)
        mask[self.zero_modes] = False
        return mask


@dataclass
class Feasibility:
    feasible: bool
    criteria: tuple
    max_real: float
    min_damping: float
    offenders: list = field(default_factory=list)

    def __bool__(self):
        return self.feasible


def jacobian(params: SystemParams, load=None, x_eq=None, h=None) -> LinearModel:
    """``A = df/dx`` and ``B = df/dw`` (``w = (p_l, q_l)``) by central differences.

    ``params`` must be the (dispatched) parameters that make ``x_eq`` an equilibrium.
    """
    load = params.load if load is None else tuple(load)
    if x_eq is None:
        eq = find_equilibrium(params, load)
        params, x_eq = eq.params, eq.x
    x_eq = np.asarray(x_eq, dtype=float)

    def f(x):
        try:
            return evaluate(x, params, load)
        except ModelEvaluationError as exc:
            raise ModelEvaluationError(exc.stage, f"during Jacobian evaluation: {exc}") from None

    A = fd_jacobian(f, x_eq, h, vectorized=True, extended=True)
    if not np.all(np.isfinite(A)):
        bad = np.nonzero(~np.all(np.isfinite(A), axis=0))[0]
        labels = state_labels(params.battery.order)
        raise ModelEvaluationError("jacobian", f"non-finite column for state {labels[bad[0]]}")
    w = np.asarray(load, dtype=float)
    B = fd_jacobian(lambda ww: evaluate(x_eq, params, tuple(ww)), w)
    return LinearModel(A=A, B=B, x_eq=x_eq, labels=state_labels(params.battery.order),
                       params=params)


def linearize(eq: Equilibrium, load=None) -> LinearModel:
    return jacobian(eq.params, load, eq.x)


def eigen_analysis(A, labels=None) -> ModeReport:
    """Eigenvalues, damping ``-Re(l)/|l|`` and zero modes (``|l| < 1e-6``).

    ``labels`` enables the dominant-state tag (largest participation factor).
    """
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise ValueError("A contains non-finite entries")
    try:
        if labels is None:
            lam = scipy.linalg.eigvals(A)
            V = None
        else:
            lam, V = scipy.linalg.eig(A)
    except scipy.linalg.LinAlgError as exc:
        raise ArithmeticError(f"eigenvalue computation failed: {exc}") from None
    _check_conjugate_pairs(lam)
    order = np.lexsort((lam.imag, lam.real))
    lam = lam[order]
    mag = np.abs(lam)
    zero = mag < ZERO_MODE_THRESHOLD
    with np.errstate(invalid="ignore", divide="ignore"):
        zeta = np.where(zero, 0.0, -lam.real / np.where(zero, 1.0, mag))
    dominant = ()
    if V is not None:
        V = V[:, order]
        try:
            W = np.linalg.inv(V)
            part = np.abs(V * W.T)
        except np.linalg.LinAlgError:
            part = np.abs(V)
        dominant = tuple(labels[int(np.argmax(part[:, k]))] for k in range(lam.size))
    return ModeReport(eigenvalues=lam, damping=zeta, zero_modes=np.nonzero(zero)[0],
                      dominant=dominant)


def _check_conjugate_pairs(lam, rtol: float = 1e-8) -> None:
    """A real matrix has a spectrum closed under conjugation; anything else is a numerical failure."""
    scale = max(1.0, float(np.max(np.abs(lam)))) if lam.size else 1.0
    a = np.sort_complex(lam)
    b = np.sort_complex(np.conj(lam))
    if a.size and np.max(np.abs(a - b)) > rtol * scale:
        raise ArithmeticError("eigenvalues are not closed under conjugation")


def check_feasibility(report: ModeReport, criteria=TABLE_I_CRITERIA) -> Feasibility:
    """All non-zero modes need ``Re(l) <= lambda_crit`` and ``zeta >= zeta_crit``."""
    lam_crit, zeta_crit = criteria
    mask = report.nonzero
    lam = report.eigenvalues[mask]
    zeta = report.damping[mask]
    if lam.size == 0:
        return Feasibility(True, tuple(criteria), -math.inf, math.inf, [])
    bad = (lam.real > lam_crit) | (zeta < zeta_crit)
    offenders = [complex(v) for v in lam[bad]]
    offenders.sort(key=lambda z: (-z.real, z.imag))
    return Feasibility(feasible=not bool(np.any(bad)), criteria=tuple(criteria),
                       max_real=float(lam.real.max()), min_damping=float(zeta.min()),
                       offenders=offenders)


def format_mode_report(report: ModeReport, verdict: Feasibility | None = None) -> str:
    lines = []
    if verdict is not None:
        lam_crit, zeta_crit = verdict.criteria
        lines.append(f"criteria lambda_crit={lam_crit:g} zeta_crit={zeta_crit:g}")
        lines.append(f"verdict {'feasible' if verdict.feasible else 'infeasible'}")
        lines.append(f"max_real {verdict.max_real:.9g}")
        lines.append(f"min_damping {verdict.min_damping:.9g}")
    lines.append(f"zero_modes {len(report.zero_modes)}")
    lines.append("# index real imag damping zero dominant_state")
    for k, lam in enumerate(report.eigenvalues):
        dom = report.dominant[k] if report.dominant else "-"
        is_zero = "yes" if k in set(report.zero_modes.tolist()) else "no"
        lines.append(f"{k} {lam.real:.12e} {lam.imag:.12e} {report.damping[k]:.12f} "
                     f"{is_zero} {dom}")
    return "\n".join(lines) + "\n"


# the converter angle never feeds back, so its column of A is structurally zero
STRUCTURAL_ZERO_STATE = THETA_INDEX
