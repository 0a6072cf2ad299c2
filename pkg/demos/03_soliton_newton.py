# # Translating solitons by Newton's method
#
# The soliton equation is solved for the profile v and the speed C together.
# The grim reaper is recovered with second-order accuracy, and the speed
# formula and the flux balance are evaluated on the result.

# In[1]:

import numpy as np

from killingflow import stationary as sta
from killingflow.ambient import EuclideanProduct
from killingflow.flow import closed_state
from killingflow.grid import Chart

E = EuclideanProduct(1)
prev = None
for m in (33, 65, 129, 257):
    ch = Chart((-1.0,), (1.0,), (m,))
    sol = sta.solve_soliton(sta.SolitonProblem(E, ch, 0.0, np.sin(1.0), 1.0))
    exact = -np.log(np.cos(ch.axes[0]))
    err = np.abs(sol.v - (exact - exact.mean())).max()
    rate = "" if prev is None else f"  order {np.log2(prev / err):.2f}"
    print(f"{m:4d}  C={sol.C:.6f}  err={err:.2e}  newton its={sol.iterations}{rate}")
    prev = err

# ## Speed formula and flux balance

# In[2]:

st = closed_state(E, ch, sol.v, np.sin(1.0))
C = sta.soliton_speed(E, st, 0.0, np.sin(1.0))
print("speed formula", C)
print("flux residual at C      ", sta.flux_balance_residual(E, st, 0.0, np.sin(1.0), C))
print("flux residual at C + 0.1", sta.flux_balance_residual(E, st, 0.0, np.sin(1.0), C + 0.1))
print("speed bound", sta.speed_bound(E, ch, 0.0, 1 / np.cos(1.0)))

# ## Pseudo-time gives the same soliton

# In[3]:

ch = Chart((-1.0,), (1.0,), (33,))
prob = sta.SolitonProblem(E, ch, 0.0, np.sin(1.0), 1.0)
a = sta.solve_soliton(prob, "newton", tol=1e-10)
b = sta.solve_soliton(prob, "pseudo_time", tol=1e-10, dt=0.02)
print("max |v_newton - v_pseudo|", np.abs(a.v - b.v).max(), " steps", b.iterations)
