"""The one-step predictor and the size of the DC-link capacitor.

The predictor feeds the expected change of the inverter's DC current straight
into the duty cycle, so the DC/DC converter reacts before v_dc has moved.  The
first sweep varies its gain K_pred.  The second sweep varies C_DC with and
without the predictor.  A larger capacitor buffers the step and the predictor
helps at every size, which is what makes a smaller capacitor possible.

Writes demos/out/sweep_kpred.csv and demos/out/sweep_cdc.csv.
"""

from pathlib import Path

import numpy as np

from gfmbess.config import default_params
from gfmbess.simcore import Scenario
from gfmbess.tuner import best_kpred, rows_to_csv, sweep_capacitance, sweep_kpred

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)
params = default_params()
scenario = Scenario(delta_p_l=0.5)

rows = sweep_kpred(None, list(np.arange(0.0, 3.01, 0.5)), params, scenario)
print(" K_pred  max dev (pu)  reduction  small-signal  max duty")
for r in rows:
    print(f"  {r.k_pred:4.1f}   {r.max_deviation:.5f}     {100 * r.reduction:6.2f}%   "
          f"{'feasible  ' if r.feasible else 'infeasible'}    {r.max_d:.3f}")
best = best_kpred(rows)
print(f"best K_pred {best.k_pred:g}: {100 * best.reduction:.1f}% smaller peak error than K_pred = 0")
(out / "sweep_kpred.csv").write_text(
    rows_to_csv(rows, ("k_pred", "max_deviation", "objective", "reduction", "feasible", "max_d")))

c_values = [0.5e-3, 1e-3, 2e-3, 4e-3]
crow = sweep_capacitance(None, c_values, params, scenario, k_pred=1.0)
print("\n C_DC (mF)  K_pred=0   K_pred=1")
for r in crow:
    print(f"   {1e3 * r.c_dc:4.1f}     {r.max_deviation_base:.5f}   {r.max_deviation_pred:.5f}")
(out / "sweep_cdc.csv").write_text(
    rows_to_csv(crow, ("c_dc", "max_deviation_base", "max_deviation_pred", "k_pred")))
