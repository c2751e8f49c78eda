"""Eigenvalues of the linearized system and the feasibility gate.

The full model is linearized at its equilibrium by central finite differences.
A candidate gain set is feasible when every non-zero mode has a real part at
most -3 1/s and a damping ratio of at least 0.35.  The converter angle theta_c
does not feed back into the dynamics, so the spectrum always contains one exact
zero, which the gate ignores.

The second half scans the DC voltage-loop proportional gain to show which mode
limits the feasible range.
"""

import numpy as np

from gfmbess.config import default_params, with_gains
from gfmbess.simcore import EquilibriumError, find_equilibrium
from gfmbess.smallsignal import check_feasibility, eigen_analysis, format_mode_report, jacobian

params = default_params()
eq = find_equilibrium(params)
model = jacobian(eq.params, x_eq=eq.x)
modes = eigen_analysis(model.A, model.labels)
verdict = check_feasibility(modes, (-3.0, 0.35))
print(format_mode_report(modes, verdict))

print("kp_vdc scan (other gains as shipped):")
for kp in np.arange(0.5, 10.01, 1.5):
    p = with_gains(params, kp_vdc=float(kp))
    try:
        e = find_equilibrium(p)
    except EquilibriumError as exc:
        print(f"  kp_vdc {kp:4.1f}: no equilibrium ({exc})")
        continue
    r = eigen_analysis(jacobian(e.params, x_eq=e.x).A, model.labels)
    v = check_feasibility(r, (-3.0, 0.35))
    nz = np.setdiff1d(np.arange(r.eigenvalues.size), r.zero_modes)
    k = nz[np.argmin(r.damping[nz])]
    print(f"  kp_vdc {kp:4.1f}: {'feasible  ' if v.feasible else 'infeasible'} max Re {v.max_real:8.3f}, "
          f"min damping {v.min_damping:.3f} (mode led by {r.dominant[k]})")
