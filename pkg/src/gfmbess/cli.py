"""Command-line entry point: ``gfmbess <command> [options]``.

Every command writes plain-text artifacts into ``--out`` (created if needed):
CSV tables with a header row, a ``key value`` summary and a manifest naming the
command, the resolved-config digest, the scenario and the tool version.  No
timestamps are written, so identical runs give byte-identical files.

Exit codes: 0 success, 1 usage or configuration error, 2 model, convergence or
simulation failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import math
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, SystemParams, config_digest, default_params, load_config, with_gains
from .simcore import (OUTPUT_NAMES, EquilibriumError, ModelEvaluationError, Scenario, SimulationError,
                      Trajectory, apply_scenario, compare_orders, find_equilibrium, simulate)
from .smallsignal import check_feasibility, eigen_analysis, format_mode_report, jacobian
from .tuner import (GAIN_NAMES, GainGrid, TuningError, best_kpred, l2_objective, rows_to_csv,
                    sweep_capacitance, sweep_kpred, tune)

EXIT_OK, EXIT_USAGE, EXIT_MODEL = 0, 1, 2

TRAJECTORY_COLUMNS_VERSION = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# argument helpers

_UNITS = {"f": 1.0, "mf": 1e-3, "uf": 1e-6, "µf": 1e-6, "nf": 1e-9}


def parse_capacitance(text: str) -> float:
    """``'0.5mF'`` -> 5e-4; a bare number is read in farads."""
    m = re.fullmatch(r"\s*([-+0-9.eE]+)\s*([a-zA-Zµ]*)\s*", text)
    if not m:
        raise UsageError(f"cannot parse capacitance {text!r}")
    unit = m.group(2).lower() or "f"
    if unit not in _UNITS:
        raise UsageError(f"unknown capacitance unit {m.group(2)!r} (use F, mF, uF or nF)")
    try:
        value = float(m.group(1)) * _UNITS[unit]
    except ValueError:
        raise UsageError(f"cannot parse capacitance {text!r}") from None
    if not value > 0:
        raise UsageError(f"capacitance must be > 0, got {text!r}")
    return value


def parse_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _add_config(p):
    p.add_argument("--config", help="config file (default: the shipped defaults)")
    p.add_argument("--out", default="out", help="output directory (default: ./out)")


def _add_scenario(p):
    g = p.add_argument_group("scenario")
    g.add_argument("--dp", type=float, default=0.5, help="load step delta p_l in pu (default 0.5)")
    g.add_argument("--p-load", type=float, help="pre-step load p_l in pu (default: config)")
    g.add_argument("--t-step", type=float, default=0.05, help="step time in s (default 0.05)")
    g.add_argument("--t-end", type=float, default=0.5, help="horizon in s (default 0.5)")
    g.add_argument("--stride", type=float, default=1e-4, help="record stride in s (default 1e-4)")
    g.add_argument("--kpred", type=float, help="predictor gain K_pred (default: config)")
    g.add_argument("--gains", help="kp_vdc,ki_vdc,kp_ib,ki_ib override")


def _add_criteria(p):
    p.add_argument("--lambda-crit", type=float, default=-3.0,
                   help="max real part of non-zero modes in 1/s (default -3)")
    p.add_argument("--zeta-crit", type=float, default=0.35, help="min damping ratio (default 0.35)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gfmbess", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"gfmbess {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="load-step simulation; writes trajectory.csv")
    _add_config(p)
    _add_scenario(p)
    p.add_argument("--order", type=int, choices=(0, 2, 4), help="battery model order")
    p.add_argument("--method", default="BDF", help="solve_ivp method (default BDF)")

    p = sub.add_parser("compare-orders", help="v_dc for battery orders 0, 2 and 4")
    _add_config(p)
    _add_scenario(p)
    p.add_argument("--orders", default="0,2,4", help="comma-separated orders (default 0,2,4)")
    p.add_argument("--no-lump", action="store_true",
                   help="keep the table r_b0 for order 0 instead of the steady-state preset")

    p = sub.add_parser("linearize", help="eigenvalues, damping and feasibility verdict")
    _add_config(p)
    _add_criteria(p)
    p.add_argument("--order", type=int, choices=(0, 2, 4), help="battery model order")
    p.add_argument("--kpred", type=float, help="predictor gain K_pred (default: config)")
    p.add_argument("--gains", help="kp_vdc,ki_vdc,kp_ib,ki_ib override")

    p = sub.add_parser("tune", help="grid search over the DC-side PI gains")
    _add_config(p)
    _add_scenario(p)
    _add_criteria(p)
    p.add_argument("--step", type=float, default=0.5, help="grid step (default 0.5)")
    p.add_argument("--kmin", type=float, default=0.0, help="lower gain bound (default 0)")
    p.add_argument("--kmax", type=float, default=10.0, help="upper gain bound (default 10)")
    p.add_argument("--workers", type=int, default=1, help="worker processes (default 1)")
    p.add_argument("--coarse-to-fine", action="store_true",
                   help="screen at twice the step first, then refine around survivors")

    p = sub.add_parser("sweep", help="K_pred or DC-link capacitance sweep")
    p.add_argument("kind", choices=("kpred", "cdc"))
    _add_config(p)
    _add_scenario(p)
    p.add_argument("--values", required=True,
                   help="kpred: gains, e.g. 0,1,2; cdc: capacitances, e.g. 0.5mF,1mF,2mF")
    p.add_argument("--sweep-kpred", type=float, default=1.0,
                   help="K_pred used for the second cdc curve (default 1)")
    p.add_argument("--workers", type=int, default=1, help="worker processes (default 1)")
    return parser


# ---------------------------------------------------------------------------
# shared plumbing

def _load(args) -> tuple[SystemParams, str]:
    if args.config is None:
        return default_params(), "<default>"
    return load_config(args.config), str(args.config)


def _override_gains(params: SystemParams, args) -> SystemParams:
    if getattr(args, "gains", None):
        vals = parse_floats(args.gains)
        if len(vals) != 4:
            raise UsageError("--gains needs four values: kp_vdc,ki_vdc,kp_ib,ki_ib")
        params = with_gains(params, **dict(zip(GAIN_NAMES, vals)))
    if getattr(args, "kpred", None) is not None:
        params = with_gains(params, k_pred=args.kpred)
    return params


def _scenario(args) -> Scenario:
    try:
        return Scenario(delta_p_l=args.dp, t_step=args.t_step, t_end=args.t_end, stride=args.stride,
                        p_l=args.p_load)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else repr(float(v))
    return str(v)


def _write_kv(path: Path, items) -> None:
    path.write_text("".join(f"{k} {_fmt(v)}\n" for k, v in items))


def _write_manifest(out: Path, command: str, params: SystemParams, source: str, scenario,
                    files) -> None:
    items = [("command", command), ("version", __version__), ("config", source),
             ("config_digest", config_digest(params))]
    if scenario is not None:
        items += [(f"scenario.{f.name}", getattr(scenario, f.name))
                  for f in dataclasses.fields(scenario) if getattr(scenario, f.name) is not None]
    items += [("output", name) for name in files]
    _write_kv(out / "manifest.txt", items)


def write_trajectory_csv(path: Path, traj: Trajectory) -> None:
    """Columns: ``time``, every state label, then the outputs in ``OUTPUT_NAMES`` order.

    Outputs that are themselves states (``v_dc``, ``i_b``) are not repeated.
    """
    names = [n for n in OUTPUT_NAMES if n in traj.outputs and n not in traj.labels]
    cols = [traj.times, *traj.states.T, *(np.asarray(traj.outputs[n], dtype=float) for n in names)]
    data = np.column_stack(cols)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", *traj.labels, *names])
        for row in data:
            w.writerow([f"{v:.12e}" for v in row])


def trajectory_summary(traj: Trajectory) -> list:
    d = traj.outputs["d_eff"]
    return [("order", traj.params.battery.order),
            ("samples", traj.times.size),
            ("v_dc_star", traj.params.dc.v_dc_star),
            ("max_deviation", traj.max_deviation()),
            ("l2_objective", l2_objective(traj)),
            ("final_v_dc", float(traj.v_dc[-1])),
            ("min_duty", float(np.min(d))),
            ("max_duty", float(np.max(d))),
            ("min_v_m_norm", float(np.min(traj.outputs["v_m_norm"]))),
            ("max_v_m_norm", float(np.max(traj.outputs["v_m_norm"]))),
            ("max_v_m_ref_over_v_dc", float(np.max(traj.outputs["v_m_ref_norm"] / traj.v_dc))),
            ("saturated_samples", traj.saturated_samples),
            ("saturation_evals", traj.saturation_evals),
            ("p_star_dispatched", traj.params.ac.p_star)]


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(args, out: Path) -> int:
    params, source = _load(args)
    params = _override_gains(params, args)
    scenario = _scenario(args)
    if args.order is not None:
        scenario = dataclasses.replace(scenario, order=args.order)
    traj = simulate(params, scenario, method=args.method)
    write_trajectory_csv(out / "trajectory.csv", traj)
    _write_kv(out / "summary.txt", trajectory_summary(traj))
    _write_manifest(out, "simulate", apply_scenario(params, scenario), source, scenario,
                    ["trajectory.csv", "summary.txt"])
    print(f"max_deviation {traj.max_deviation():.6g} pu -> {out}")
    return EXIT_OK


def cmd_compare_orders(args, out: Path) -> int:
    params, source = _load(args)
    params = _override_gains(params, args)
    scenario = _scenario(args)
    orders = [int(o) for o in parse_floats(args.orders)]
    if not orders or any(o not in (0, 2, 4) for o in orders):
        raise UsageError("--orders must list values from 0, 2, 4")
    trajs, gap = compare_orders(params, scenario, orders, lump_order0=not args.no_lump)
    times = next(iter(trajs.values())).times
    with open(out / "orders.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", *(f"v_dc_order{o}" for o in trajs)])
        for k, t in enumerate(times):
            w.writerow([f"{t:.12e}", *(f"{tr.v_dc[k]:.12e}" for tr in trajs.values())])
    items = [("orders", ",".join(str(o) for o in trajs)), ("max_pairwise_gap", gap),
             ("gap_over_v_dc_star", gap / params.dc.v_dc_star)]
    items += [(f"max_deviation_order{o}", tr.max_deviation()) for o, tr in trajs.items()]
    _write_kv(out / "summary.txt", items)
    _write_manifest(out, "compare-orders", params, source, scenario, ["orders.csv", "summary.txt"])
    print(f"max pairwise v_dc gap {gap:.6g} pu -> {out}")
    return EXIT_OK


def cmd_linearize(args, out: Path) -> int:
    params, source = _load(args)
    params = _override_gains(params, args)
    if args.order is not None:
        params = apply_scenario(params, Scenario(order=args.order))
    eq = find_equilibrium(params)
    model = jacobian(eq.params, x_eq=eq.x)
    report = eigen_analysis(model.A, model.labels)
    verdict = check_feasibility(report, (args.lambda_crit, args.zeta_crit))
    (out / "modes.txt").write_text(format_mode_report(report, verdict))
    _write_manifest(out, "linearize", params, source, None, ["modes.txt"])
    print(f"{'feasible' if verdict.feasible else 'infeasible'}: max Re {verdict.max_real:.6g}, "
          f"min damping {verdict.min_damping:.4g} -> {out}")
    return EXIT_OK


def cmd_tune(args, out: Path) -> int:
    params, source = _load(args)
    params = _override_gains(params, args)
    scenario = _scenario(args)
    try:
        grid = GainGrid(bounds=((args.kmin, args.kmax),), step=args.step)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    report = tune(grid, params, scenario, criteria=(args.lambda_crit, args.zeta_crit),
                  workers=args.workers, coarse_to_fine=args.coarse_to_fine)
    (out / "tuning.csv").write_text(report.to_csv())
    (out / "summary.txt").write_text(report.summary())
    _write_manifest(out, "tune", params, source, scenario, ["tuning.csv", "summary.txt"])
    if report.best is None:
        print(f"feasible set is empty ({len(report.records)} candidates screened) -> {out}")
        return EXIT_OK
    g = report.best.candidate
    print(f"{report.feasible_count} feasible of {len(report.records)}; best "
          + " ".join(f"{n}={getattr(g, n):g}" for n in GAIN_NAMES)
          + f" objective {report.best.objective:.6g} -> {out}")
    return EXIT_OK


def cmd_sweep(args, out: Path) -> int:
    params, source = _load(args)
    params = _override_gains(params, args)
    scenario = _scenario(args)
    if args.kind == "kpred":
        values = parse_floats(args.values)
        if 0.0 not in values:
            raise UsageError("--values for a kpred sweep must include 0")
        rows = sweep_kpred(None, values, params, scenario, workers=args.workers)
        cols = ("k_pred", "max_deviation", "objective", "reduction", "feasible", "max_d")
        (out / "sweep_kpred.csv").write_text(rows_to_csv(rows, cols))
        best = best_kpred(rows)
        _write_kv(out / "summary.txt", [("rows", len(rows)), ("best_k_pred", best.k_pred),
                                        ("best_reduction", best.reduction)])
        files = ["sweep_kpred.csv", "summary.txt"]
        print(f"best K_pred {best.k_pred:g}: {100 * best.reduction:.2f}% lower max deviation -> {out}")
    else:
        values = [parse_capacitance(v) for v in args.values.split(",") if v.strip()]
        rows = sweep_capacitance(None, values, params, scenario, k_pred=args.sweep_kpred,
                                 workers=args.workers)
        cols = ("c_dc", "max_deviation_base", "max_deviation_pred", "k_pred")
        (out / "sweep_cdc.csv").write_text(rows_to_csv(rows, cols))
        base = [r.max_deviation_base for r in rows]
        pred = [r.max_deviation_pred for r in rows]
        order = np.argsort(values, kind="stable")
        mono = all(np.diff(np.asarray(base)[order]) <= 0) and all(np.diff(np.asarray(pred)[order]) <= 0)
        _write_kv(out / "summary.txt", [("rows", len(rows)), ("monotone_nonincreasing", mono),
                                        ("pred_below_base", all(p <= b for p, b in zip(pred, base)))])
        files = ["sweep_cdc.csv", "summary.txt"]
        print(f"{len(rows)} capacitances swept -> {out}")
    _write_manifest(out, f"sweep {args.kind}", params, source, scenario, files)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "compare-orders": cmd_compare_orders,
            "linearize": cmd_linearize, "tune": cmd_tune, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:          # --help, --version and usage errors
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, out)
    except (UsageError, ConfigError) as exc:
        print(f"gfmbess {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EquilibriumError, SimulationError, ModelEvaluationError, TuningError,
            ArithmeticError) as exc:
        print(f"gfmbess {args.command}: model failure: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except OSError as exc:
        print(f"gfmbess {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
