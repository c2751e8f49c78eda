"""Choosing the DC/DC gains: small-signal screen, then large-signal ranking.

Every point of a grid over (kp_vdc, ki_vdc, kp_ib, ki_ib) is linearized and
kept only if it passes the eigenvalue gate.  The survivors are simulated
through the load step and ranked by the integral of (v_dc - v_dc*)^2 after the
step.  The coarse grid here (step 2.5, 625 points) takes seconds.  The step-0.5
grid behind the shipped defaults has 194,481 points and is a long-running job:

    gfmbess tune --step 0.5 --workers 8 --out tune_fine

Usage:  python demos/05_tuning.py [step]
"""

import sys
import time

from gfmbess.config import default_params
from gfmbess.simcore import Scenario
from gfmbess.tuner import GainGrid, tune

step = float(sys.argv[1]) if len(sys.argv) > 1 else 2.5
t0 = time.perf_counter()
report = tune(GainGrid(step=step), default_params(), Scenario(delta_p_l=0.5))
print(report.summary(), end="")
print(f"wall time {time.perf_counter() - t0:.1f} s")

reasons = {}
for r in report.records:
    if not r.feasible:
        key = r.reason.split()[0].rstrip(":") if r.reason else "unknown"
        reasons[key] = reasons.get(key, 0) + 1
print("rejections:", ", ".join(f"{k} {v}" for k, v in sorted(reasons.items())))

ranked = sorted((r for r in report.records if r.simulated), key=lambda r: r.objective)
print("best five:")
for r in ranked[:5]:
    g = r.candidate
    print(f"  ({g.kp_vdc:g}, {g.ki_vdc:g}, {g.kp_ib:g}, {g.ki_ib:g})  objective {r.objective:.4e}  "
          f"max dev {r.max_deviation:.4f} pu")
