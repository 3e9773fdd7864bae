"""
Closed-form moments against simulation
======================================

The unitary Brownian motion started at the identity has explicit first and
second moments.  This script compares a few of them with a small Monte Carlo
ensemble at n = 8.
"""

from __future__ import annotations

import math

import numpy as np

from ubm.engine import InitialLaw, TimeGrid, mixed_trace_statistic, simulate_ensemble
from ubm.linalg import elementary
from ubm.oracles import mixed_moment, second_moment, second_moment_ode
from ubm.stats import estimate_mean

n = 8
a = math.sqrt(n) * elementary(n, 0, 0)

# %%
# The mean of Tr(AVAV) follows from a linear ODE.  Its exact value at a few
# times:
for t in (0.5, 1.0, 2.0):
    print(f"t={t}:  E Tr(AVAV) = {mixed_moment(a, n, t).real:.6f}")

# %%
# A Monte Carlo estimate with 20 000 paths and step 0.01.  The statistic is
# evaluated on the stored path at each requested time.
times = [0.0, 0.5, 1.0, 2.0]
res = simulate_ensemble(n, InitialLaw.identity(), TimeGrid(times, 0.01), 20_000, seed=1,
                        statistic=mixed_trace_statistic(a))
mean, se = estimate_mean(res.values[:, :, 0])
for j, t in enumerate(times[1:], start=1):
    print(f"t={t}:  simulated {mean[j].real:.4f} +- {abs(se[j]):.4f}   exact {mixed_moment(a, n, t).real:.4f}")
print(f"largest unitarity defect along the paths: {res.max_defect:.1e}")

# %%
# The fourth-order quantity E|Tr(AVAV)|^2 has a closed form built from the
# eigen-decomposition of a small matrix; it agrees with direct integration of
# the moment ODE to near machine precision.
rng = np.random.default_rng(0)
b = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
for t in (0.3, 1.0, 2.5):
    closed, ode = second_moment(b, 5, t), second_moment_ode(b, 5, t)
    print(f"t={t}:  closed {closed:.10g}   ode {ode:.10g}   rel diff {abs(closed - ode) / ode:.1e}")
