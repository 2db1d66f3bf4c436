"""
The delay ODE behind the reaction term
======================================

Without diffusion the scaled equation reduces to v' = f(v(t - tau)) - v.
We check the decay rate towards 1, the semiflow derivative bounds and the
logarithmic generation time.
"""

import math

from slowfront import dde
from slowfront import nonlinearity as nl

f = nl.ricker_normalized(2.0)
tau = 0.5

# 1 - v decays like exp(lam t) with lam the real characteristic root
root = dde.decay_rate(f, tau)
traj = dde.solve_dde(f, tau, dde.HistorySegment.constant(tau, 0.2), 60.0, tau / 32)
print(f"root {root.lam:.10f}, fitted {dde.fitted_decay_slope(traj, 20.0, 50.0):.10f}")

# derivative of the semiflow in the direction of a constant history
f_eta = nl.build_bistable_extension(f, 0.2)
phi = dde.HistorySegment.constant(tau, 0.5)
rep = dde.check_derivative_ratio(f_eta, tau, phi, 10.0, tau / 32)
print(f"bounds hold: {rep.passed}, worst |w2| / envelope = {rep.worst_ratio:.3f}")

# starting at eps|ln eps|, the time to reach 1 - sqrt(eps) grows like |ln eps|
one = dde.HistorySegment.constant(tau, 1.0)
for eps in (0.1, 0.05, 0.02, 0.01):
    t = dde.generation_time(f, tau, eps, one, 0.5)
    print(f"eps={eps:<5} t_gen={t:7.3f}  t_gen/|ln eps|={t / abs(math.log(eps)):.3f}")
