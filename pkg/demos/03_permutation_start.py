"""
Starting from a random permutation
==================================

A uniform permutation matrix has a Poisson(1) number of fixed points, so
Tr(U_0) is far from Gaussian.  The increments of the trace process driven
from that start are nevertheless complex Gaussian with variance t.
"""

from __future__ import annotations

import numpy as np

from ubm.oracles import poisson_pmf
from ubm.presets import fixed_point_counts
from ubm.scenario import Scenario, simulate_scenario
from ubm.stats import gaussianity_test, poisson_fit

# %%
# Fixed points of 20 000 permutations of 500 letters.
counts = fixed_point_counts(500, 20_000, seed=3)
fit = poisson_fit(counts)
for k in range(5):
    print(f"P(fix = {k}):  empirical {np.mean(counts == k):.4f}   Poisson {poisson_pmf(k):.4f}")
print(f"total variation distance {fit.tv:.4f}")

# %%
# The uncentered trace process at n = 32.  Subtracting the starting value
# removes the Poisson part.
times = [0.0, 0.5, 1.0]
sc = Scenario.from_dict(dict(n=32, initial_law="permutation", alpha_n=1.0, outer_times=times,
                             observable="identity", centered=False, replications=4000, seed=5))
res, _ = simulate_scenario(sc)
inc = res.values[:, :, 0] - res.values[:, :1, 0]
for j, t in enumerate(times[1:], start=1):
    g = gaussianity_test(inc[:, j])
    print(f"t={t}:  variance {g.variance:.3f}   KS p (re, im) = ({g.p_re:.2f}, {g.p_im:.2f})   "
          f"kurtosis ratio {g.kurtosis_ratio:.3f}")
