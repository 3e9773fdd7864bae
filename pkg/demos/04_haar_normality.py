"""
Entries of a Haar unitary
=========================

After scaling by sqrt(n), an entry of a Haar-distributed unitary is close to
a standard complex Gaussian, and distinct entries are nearly uncorrelated.
"""

from __future__ import annotations

import math

import numpy as np

from ubm.samplers import RngStream, haar_frame
from ubm.stats import estimate_covariance, estimate_pseudo_covariance, gaussianity_test

n = 256

# %%
# Only the first column is needed for u_11 and u_21, so sample an n x 1
# frame instead of a full unitary.
z = np.array([math.sqrt(n) * haar_frame(n, 1, RngStream(11, i))[:2, 0] for i in range(20_000)])

g = gaussianity_test(z[:, 0])
print(f"KS p-values: real {g.p_re:.3f}, imaginary {g.p_im:.3f}")
print(f"kurtosis ratio {g.kurtosis_ratio:.4f}; exact value 2n/(n+1) = {2 * n / (n + 1):.4f}")

c, _ = estimate_covariance(z)
p, _ = estimate_pseudo_covariance(z[:, 0])
print(f"E|z_11|^2 = {c[0, 0].real:.4f},  E z_11^2 = {complex(p[0, 0]):.4f},  E z_11 conj z_21 = {c[0, 1]:.4f}")
