# # Relaxation and comparison with solitons
#
# With phi = 0 and no prescribed curvature a perturbed graph relaxes to a
# constant that meets the cylinder orthogonally.  A perturbed grim reaper
# stays between two translates of the soliton.

# In[1]:

import numpy as np

from killingflow import stationary as sta
from killingflow.config import scenario_from
from killingflow.flow import FlowConfig, contact_angles, run_flow

sc = scenario_from("orthogonal_relax")
res = run_flow(sc.geometry, sc.chart, sc.u0, sc.flow_config())
print("stop", res.stop_reason, "at t =", res.series["t"][-1])
print("max|u_t|", res.series["max_ut"][-1], " max|grad u|", np.abs(res.final.p).max())
print("max|<N,nu>|", max(np.abs(v).max() for v in contact_angles(sc.geometry, res.final).values()))
print("energy nonincreasing", bool(np.all(np.diff(res.series["energy"]) <= 0)))

# In[2]:

sc = scenario_from("grim_reaper")
sol = sta.solve_soliton(sta.SolitonProblem(sc.geometry, sc.chart, 0.0, sc.phi, 1.0))
u0 = sol.v + 0.3 * np.cos(np.pi * sc.chart.axes[0])
res = run_flow(sc.geometry, sc.chart, u0, FlowConfig(dt=1e-2, t_end=5.0, phi=sc.phi,
                                                     snapshot_every=50))
print("sandwich violation", sta.sandwich_check(res, sol))
for t, u in res.snapshots:
    d = u - sol.v - sol.C * t
    print(f"t={t:.1f}  spread of u - v - Ct = {np.ptp(d):.3e}")
