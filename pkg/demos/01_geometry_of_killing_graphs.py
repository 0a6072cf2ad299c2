# # Geometry of Killing graphs
#
# A Killing graph is described by a height function u on a chart of the leaf.
# Here we evaluate W, the normal and the mean curvature for two exact
# profiles and compare the trace and divergence forms of nH.

# In[1]:

import numpy as np

from killingflow import graph_geometry as gg
from killingflow.ambient import EuclideanProduct, Helicoidal
from killingflow.graph_geometry import GraphState
from killingflow.grid import Chart

# ## Grim reaper, product case
#
# For u = -log cos x we have W = sec x and nH = cos x.

# In[2]:

E = EuclideanProduct(1)
ch = Chart((-1.0,), (1.0,), (65,))
x = ch.axes[0]
s = GraphState.from_derivatives(E, ch, -np.log(np.cos(x)), np.tan(x), 1 / np.cos(x) ** 2)
print("max |W - sec x|   ", np.abs(gg.compute_W(E, s) - 1 / np.cos(x)).max())
print("max |nH - cos x|  ", np.abs(gg.mean_curvature(E, s) - np.cos(x)).max())
print("unit normal defect", gg.unit_normal_defect(E, s))

# ## Helicoid, gamma = 1/r^2
#
# In cylindrical coordinates with Y = d/dtheta the helicoid is u = z.  The
# vertical plane through a line at distance p from the axis is u = arcsin(p/r).
# Both are minimal; with finite differences the first is exact and the second
# converges at second order.

# In[3]:

g = Helicoidal()
for m in (17, 33, 65, 129):
    ch = Chart((1.0, 0.0), (2.0, 1.0), (m, m))
    helicoid = GraphState.from_field(g, ch, ch.points[..., 1])
    plane = GraphState.from_field(g, ch, np.arcsin(0.5 / ch.points[..., 0]))
    print(f"{m:4d}  helicoid {np.abs(gg.mean_curvature(g, helicoid)).max():.2e}"
          f"  plane {np.abs(gg.mean_curvature(g, plane)).max():.2e}")

# ## Trace and divergence forms
#
# With exact derivatives both forms agree to roundoff on a random profile.

# In[4]:

rng = np.random.default_rng(0)
a, w = rng.uniform(-0.3, 0.3, 3), rng.uniform(-2, 2, (3, 2))
ch = Chart((1.0, 0.0), (2.0, 1.0), (17, 17))


def u(x):
    return np.sin(x @ w.T) @ a


def grad(x):
    return (np.cos(x @ w.T) * a) @ w


def hess(x):
    return -np.einsum("...k,ki,kj->...ij", np.sin(x @ w.T) * a, w, w)


s = GraphState.from_callables(g, ch, u, grad, hess)
print("trace vs divergence", np.abs(gg.mean_curvature(g, s, "trace")
                                    - gg.mean_curvature(g, s, "divergence")).max())
