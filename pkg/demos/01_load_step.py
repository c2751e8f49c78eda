"""A 0.5 pu load step on the grid-forming BESS inverter.

The converter starts at its equilibrium with a 0.5 pu impedance load.  At
t = 50 ms another 0.5 pu is switched in.  The DC link supplies the extra power
first, so v_dc dips.  The DC/DC converter then raises the battery current and
the voltage recovers.

Run:  python demos/01_load_step.py   (writes demos/out/load_step.csv)
"""

from pathlib import Path

import numpy as np

from gfmbess.cli import write_trajectory_csv
from gfmbess.config import default_params
from gfmbess.simcore import Scenario, simulate

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

params = default_params()
traj = simulate(params, Scenario(delta_p_l=0.5))
v, t = traj.v_dc, traj.times
star = params.dc.v_dc_star

k_min = int(np.argmin(v))
print(f"v_dc set point            {star:.3f} pu")
print(f"deepest dip               {v[k_min]:.4f} pu at t = {1e3 * t[k_min]:.2f} ms "
      f"({1e3 * (t[k_min] - traj.scenario.t_step):.2f} ms after the step)")
print(f"max |v_dc - v_dc*|        {traj.max_deviation():.4f} pu")

# settling: last time the error leaves a 2% band of the peak error
err = np.abs(v - star)
outside = np.nonzero(err > 0.02 * err.max())[0]
print(f"2% settling time          {1e3 * (t[outside[-1]] - traj.scenario.t_step):.1f} ms")

d = traj.outputs["d_eff"]
print(f"duty range                [{d.min():.3f}, {d.max():.3f}] (ceiling {params.dc.d_max})")
print(f"battery current           {traj.outputs['i_b'][0]:.3f} -> {traj.outputs['i_b'][-1]:.3f} pu")
print(f"modulation headroom       min v_dc - |v_m_ref| = "
      f"{np.min(v - traj.outputs['v_m_ref_norm']):.3f} pu, saturated samples {traj.saturated_samples}")

write_trajectory_csv(out / "load_step.csv", traj)
print(f"trajectory written to {out / 'load_step.csv'}")
