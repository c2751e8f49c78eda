"""DC-side gain tuning: grid enumeration, small-signal screen, L2 optimization and sweeps.

The search runs in two phases.  First the four PI gains are screened with the
predictor gain at zero, keeping only candidates whose linearization meets the
eigenvalue and damping criteria (the feasible set, Gamma).  Every member of
Gamma is then simulated through the load step and the one with the smallest
integrated squared DC-voltage error wins.  The predictor gain and the DC-link
capacitance are explored afterwards by separate sweeps.

Work is split into fixed-size blocks that are independent of the worker count,
and results are reduced in grid order, so ``workers`` only changes wall time.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import product
from typing import Iterable, Sequence

import numpy as np

from .config import SystemParams, with_dc_capacitance, with_gains
from .simcore import (EquilibriumError, ModelEvaluationError, Scenario, SimulationError,
                      Trajectory, apply_scenario, find_equilibrium, simulate)
from .smallsignal import (TABLE_I_CRITERIA, check_feasibility, eigen_analysis, jacobian)

__all__ = [
    "GAIN_NAMES",
    "GainGrid",
    "GainCandidate",
    "CandidateRecord",
    "TuningReport",
    "TuningError",
    "enumerate_gains",
    "screen_small_signal",
    "l2_objective",
    "optimize_gains",
    "tune",
    "sweep_kpred",
    "sweep_capacitance",
    "KpredRow",
    "CapacitanceRow",
]

GAIN_NAMES = ("kp_vdc", "ki_vdc", "kp_ib", "ki_ib")
BLOCK_SIZE = 32


class TuningError(RuntimeError):
    """Raised when no candidate survives the search."""


@dataclass(frozen=True)
class GainGrid:
    """Regular grid over the DC-side PI gains.

    Parameters
    ----------
    bounds : ((min, max), ...)
        One pair per entry of ``dims``; a single pair is broadcast to all dims.
    step : float
        Spacing shared by every dimension.
    dims : tuple of str
        Gain names, in enumeration order (the last one varies fastest).
    """

    bounds: tuple = ((0.0, 10.0),)
    step: float = 0.5
    dims: tuple = GAIN_NAMES

    def __post_init__(self):
        b = tuple(tuple(float(v) for v in pair) for pair in self.bounds)
        if len(b) == 1:
            b = b * len(self.dims)
        if len(b) != len(self.dims):
            raise ValueError(f"need {len(self.dims)} bound pairs, got {len(b)}")
        for name, (lo, hi) in zip(self.dims, b):
            if not lo <= hi:
                raise ValueError(f"bounds for {name}: min {lo} > max {hi}")
        if not self.step > 0:
            raise ValueError(f"grid step must be > 0, got {self.step}")
        unknown = set(self.dims) - set(GAIN_NAMES)
        if unknown:
            raise ValueError(f"unknown gain names {sorted(unknown)}")
        object.__setattr__(self, "bounds", b)

    def axis(self, k: int) -> np.ndarray:
        lo, hi = self.bounds[k]
        n = int(math.floor((hi - lo) / self.step + 1e-9)) + 1
        return lo + self.step * np.arange(n)

    @property
    def size(self) -> int:
        return math.prod(self.axis(k).size for k in range(len(self.dims)))


@dataclass(frozen=True)
class GainCandidate:
    index: int
    kp_vdc: float
    ki_vdc: float
    kp_ib: float
    ki_ib: float
    k_pred: float = 0.0

    def gains(self) -> dict:
        return dict(kp_vdc=self.kp_vdc, ki_vdc=self.ki_vdc, kp_ib=self.kp_ib, ki_ib=self.ki_ib,
                    k_pred=self.k_pred)

    def apply(self, params: SystemParams) -> SystemParams:
        return with_gains(params, **self.gains())


@dataclass
class CandidateRecord:
    candidate: GainCandidate
    feasible: bool = False
    reason: str = ""
    max_real: float = math.nan
    min_damping: float = math.nan
    objective: float = math.nan
    max_deviation: float = math.nan
    simulated: bool = False


@dataclass
class TuningReport:
    records: list
    best: CandidateRecord | None = None
    grid: GainGrid | None = None
    scenario: Scenario | None = None

    @property
    def feasible_count(self) -> int:
        return sum(r.feasible for r in self.records)

    @property
    def best_gains(self) -> GainCandidate | None:
        return None if self.best is None else self.best.candidate

    @property
    def best_objective(self) -> float:
        return math.nan if self.best is None else self.best.objective

    CSV_COLUMNS = ("index", *GAIN_NAMES, "k_pred", "feasible", "max_real", "min_damping",
                   "objective", "max_deviation", "reason")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_COLUMNS)
        for r in self.records:
            c = r.candidate
            w.writerow([c.index, *(_fmt(getattr(c, g)) for g in GAIN_NAMES), _fmt(c.k_pred),
                        int(r.feasible), _fmt(r.max_real), _fmt(r.min_damping),
                        _fmt(r.objective), _fmt(r.max_deviation), r.reason])
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"candidates {len(self.records)}", f"feasible {self.feasible_count}",
                 f"simulated {sum(r.simulated for r in self.records)}"]
        if self.best is None:
            lines.append("best none")
        else:
            c = self.best.candidate
            lines.append(f"best_index {c.index}")
            lines += [f"{g} {_fmt(getattr(c, g))}" for g in GAIN_NAMES]
            lines += [f"objective {_fmt(self.best.objective)}",
                      f"max_deviation {_fmt(self.best.max_deviation)}",
                      f"max_real {_fmt(self.best.max_real)}",
                      f"min_damping {_fmt(self.best.min_damping)}"]
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, float) and math.isnan(v):
        return ""
    return repr(float(v))


# ---------------------------------------------------------------------------
# enumeration and screen

def enumerate_gains(grid: GainGrid) -> list[GainCandidate]:
    """Lexicographic enumeration of ``grid`` with ``k_pred = 0``."""
    axes = [grid.axis(k).tolist() for k in range(len(grid.dims))]
    out = []
    for i, combo in enumerate(product(*axes)):
        g = dict(zip(grid.dims, combo))
        out.append(GainCandidate(index=i, **{n: g.get(n, 0.0) for n in GAIN_NAMES}))
    return out


def _blocks(seq: Sequence, size: int = BLOCK_SIZE):
    return [list(seq[i:i + size]) for i in range(0, len(seq), size)]


def _map_blocks(func, blocks, workers: int):
    if workers is None or workers <= 1 or len(blocks) <= 1:
        return [func(b) for b in blocks]
    with ProcessPoolExecutor(max_workers=min(workers, len(blocks))) as pool:
        return list(pool.map(func, blocks))


def screen_candidate(candidate: GainCandidate, params: SystemParams, criteria=TABLE_I_CRITERIA,
                     x_guess=None):
    """Equilibrium, Jacobian and eigenvalue check for one candidate.

    Returns ``(record, x_eq)``; ``x_eq`` is ``None`` when the equilibrium failed.
    """
    rec = CandidateRecord(candidate)
    p = candidate.apply(params)
    try:
        eq = find_equilibrium(p, x_guess=x_guess)
    except (EquilibriumError, ModelEvaluationError, ArithmeticError, ValueError) as exc:
        if x_guess is None:
            rec.reason = f"equilibrium: {exc}"
            return rec, None
        # a poor warm start must not change membership, so retry cold
        return screen_candidate(candidate, params, criteria, None)
    try:
        model = jacobian(eq.params, x_eq=eq.x)
        verdict = check_feasibility(eigen_analysis(model.A), criteria)
    except (ModelEvaluationError, ArithmeticError, ValueError) as exc:
        rec.reason = f"linearization: {exc}"
        return rec, eq.x
    rec.feasible = verdict.feasible
    rec.max_real = verdict.max_real
    rec.min_damping = verdict.min_damping
    if not verdict.feasible:
        worst = verdict.offenders[0]
        rec.reason = f"eigenvalue {worst.real:.6g}{worst.imag:+.6g}j violates criteria"
    return rec, eq.x


class _ScreenBlock:
    def __init__(self, params, criteria):
        self.params = params
        self.criteria = tuple(criteria)

    def __call__(self, block):
        out = []
        x_prev = None
        for cand in block:
            rec, x_eq = screen_candidate(cand, self.params, self.criteria, x_prev)
            if x_eq is not None:
                x_prev = x_eq
            out.append(rec)
        return out


def screen_records(candidates: Sequence[GainCandidate], params: SystemParams,
                   criteria=TABLE_I_CRITERIA, *, workers: int = 1) -> list[CandidateRecord]:
    """Screen every candidate; one record each, in input order."""
    blocks = _blocks(list(candidates))
    results = _map_blocks(_ScreenBlock(params, criteria), blocks, workers)
    return [r for block in results for r in block]


def screen_small_signal(candidates: Sequence[GainCandidate], params: SystemParams,
                        criteria=TABLE_I_CRITERIA, *, workers: int = 1) -> list[GainCandidate]:
    """The feasible subset Gamma, in enumeration order."""
    recs = screen_records(candidates, params, criteria, workers=workers)
    return [r.candidate for r in recs if r.feasible]


# ---------------------------------------------------------------------------
# large-signal objective

def l2_objective(traj: Trajectory, v_dc_star: float | None = None) -> float:
    """Trapezoidal integral of ``(v_dc_star - v_dc)**2`` from the load step to the end (pu^2 s)."""
    if traj.times.size == 0:
        raise ValueError("empty trajectory")
    v_star = traj.params.dc.v_dc_star if v_dc_star is None else v_dc_star
    mask = traj.times >= traj.scenario.t_step
    t = traj.times[mask]
    e2 = (v_star - traj.v_dc[mask]) ** 2
    if t.size < 2:
        return 0.0
    return float(np.trapezoid(e2, t))


def _simulate_record(rec: CandidateRecord, params: SystemParams, scenario: Scenario):
    p = rec.candidate.apply(params)
    try:
        traj = simulate(p, scenario)
    except (SimulationError, EquilibriumError, ModelEvaluationError, ArithmeticError) as exc:
        return replace(rec, simulated=False, feasible=False, reason=f"simulation: {exc}")
    obj = l2_objective(traj)
    if not math.isfinite(obj):
        return replace(rec, simulated=False, feasible=False, reason="simulation: non-finite objective")
    return replace(rec, simulated=True, objective=obj, max_deviation=traj.max_deviation())


class _SimBlock:
    def __init__(self, params, scenario):
        self.params = params
        self.scenario = scenario

    def __call__(self, block):
        return [_simulate_record(r, self.params, self.scenario) for r in block]


def _pick_best(records: Iterable[CandidateRecord]) -> CandidateRecord | None:
    best = None
    for r in records:
        if r.simulated and (best is None or r.objective < best.objective):
            best = r
    return best


def optimize_gains(gamma, params: SystemParams, scenario: Scenario | None = None, *,
                   workers: int = 1) -> TuningReport:
    """Simulate every candidate in ``gamma`` and return the L2 argmin.

    ``gamma`` may hold :class:`GainCandidate` or screened :class:`CandidateRecord`
    entries.  Ties go to the earlier entry; failed simulations are recorded and
    excluded.
    """
    scenario = Scenario() if scenario is None else scenario
    recs = [g if isinstance(g, CandidateRecord) else CandidateRecord(g, feasible=True)
            for g in gamma]
    if not recs:
        raise TuningError("the feasible set is empty")
    out = [r for block in _map_blocks(_SimBlock(params, scenario), _blocks(recs), workers)
           for r in block]
    best = _pick_best(out)
    if best is None:
        raise TuningError("every candidate simulation failed")
    return TuningReport(records=out, best=best, scenario=scenario)


def tune(grid: GainGrid, params: SystemParams, scenario: Scenario | None = None, *,
         criteria=TABLE_I_CRITERIA, workers: int = 1, coarse_to_fine: bool = False) -> TuningReport:
    """Full pipeline: enumerate, screen, simulate Gamma, pick the argmin.

    With ``coarse_to_fine`` the screen first runs at twice the grid step and the
    fine grid is then restricted to the neighbours of coarse survivors.
    """
    scenario = Scenario() if scenario is None else scenario
    candidates = enumerate_gains(grid)
    if coarse_to_fine:
        candidates = _refine(grid, params, criteria, workers)
    screened = screen_records(candidates, params, criteria, workers=workers)
    gamma = [r for r in screened if r.feasible]
    report = TuningReport(records=screened, grid=grid, scenario=scenario)
    if not gamma:
        return report
    simulated = optimize_gains(gamma, params, scenario, workers=workers).records
    by_index = {r.candidate.index: r for r in simulated}
    report.records = [by_index.get(r.candidate.index, r) for r in screened]
    report.best = _pick_best(report.records)
    return report


def _refine(grid: GainGrid, params, criteria, workers) -> list[GainCandidate]:
    coarse = GainGrid(grid.bounds, 2 * grid.step, grid.dims)
    survivors = screen_small_signal(enumerate_gains(coarse), params, criteria, workers=workers)
    keep = set()
    for c in survivors:
        keep.add(tuple(getattr(c, g) for g in grid.dims))
    fine = enumerate_gains(grid)
    out = []
    for c in fine:
        point = tuple(getattr(c, g) for g in grid.dims)
        if any(all(abs(a - b) <= grid.step + 1e-12 for a, b in zip(point, s)) for s in keep):
            out.append(c)
    return out


# ---------------------------------------------------------------------------
# sweeps

@dataclass
class KpredRow:
    k_pred: float
    max_deviation: float
    objective: float
    reduction: float
    feasible: bool
    max_d: float = math.nan


@dataclass
class CapacitanceRow:
    c_dc: float
    max_deviation_base: float
    max_deviation_pred: float
    k_pred: float


def _small_signal_ok(params: SystemParams, criteria=TABLE_I_CRITERIA) -> bool:
    try:
        eq = find_equilibrium(params)
        model = jacobian(eq.params, x_eq=eq.x)
        return check_feasibility(eigen_analysis(model.A), criteria).feasible
    except (EquilibriumError, ModelEvaluationError, ArithmeticError, ValueError):
        return False


def _kpred_row(args):
    params, scenario, k = args
    p = with_gains(params, k_pred=k)
    traj = simulate(p, scenario)
    return (k, traj.max_deviation(), l2_objective(traj), _small_signal_ok(p),
            float(np.max(traj.outputs["d_eff"])))


def sweep_kpred(best_gains: GainCandidate | dict | None, kpred_values: Sequence[float],
                params: SystemParams, scenario: Scenario | None = None, *,
                workers: int = 1) -> list[KpredRow]:
    """Simulate each predictor gain; ``reduction`` is relative to ``k_pred = 0``."""
    values = [float(v) for v in kpred_values]
    if 0.0 not in values:
        raise ValueError("kpred_values must include 0 (the baseline)")
    scenario = Scenario() if scenario is None else scenario
    p = _apply_gains(params, best_gains)
    jobs = [(p, scenario, k) for k in values]
    if workers and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            rows = list(pool.map(_kpred_row, jobs))
    else:
        rows = [_kpred_row(j) for j in jobs]
    base = rows[values.index(0.0)][1]
    return [KpredRow(k_pred=k, max_deviation=dev, objective=obj,
                     reduction=(base - dev) / base if base > 0 else 0.0, feasible=ok, max_d=dmax)
            for k, dev, obj, ok, dmax in rows]


def best_kpred(rows: Sequence[KpredRow]) -> KpredRow:
    """Row with the largest reduction; ties go to the smaller gain listed first."""
    best = rows[0]
    for r in rows[1:]:
        if r.reduction > best.reduction:
            best = r
    return best


def _cdc_row(args):
    params, scenario, c, k = args
    p = with_dc_capacitance(params, c)
    base = simulate(with_gains(p, k_pred=0.0), scenario).max_deviation()
    pred = simulate(with_gains(p, k_pred=k), scenario).max_deviation()
    return CapacitanceRow(c_dc=c, max_deviation_base=base, max_deviation_pred=pred, k_pred=k)


def sweep_capacitance(gains: GainCandidate | dict | None, c_values: Sequence[float],
                      params: SystemParams, scenario: Scenario | None = None, *,
                      k_pred: float = 1.0, workers: int = 1) -> list[CapacitanceRow]:
    """Max DC-voltage deviation per capacitance (F), without and with the predictor."""
    values = [float(c) for c in c_values]
    if any(not c > 0 for c in values):
        raise ValueError("capacitances must be > 0")
    scenario = Scenario() if scenario is None else scenario
    p = _apply_gains(params, gains)
    jobs = [(p, scenario, c, float(k_pred)) for c in values]
    if workers and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            return list(pool.map(_cdc_row, jobs))
    return [_cdc_row(j) for j in jobs]


def _apply_gains(params: SystemParams, gains) -> SystemParams:
    if gains is None:
        return params
    if isinstance(gains, GainCandidate):
        g = gains.gains()
        g.pop("k_pred")
        return with_gains(params, **g)
    return with_gains(params, **gains)


def default_workers() -> int:
    return max(1, (os.cpu_count() or 1))


def rows_to_csv(rows, columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(getattr(r, c)) for c in columns])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return _fmt(v)
    return v
