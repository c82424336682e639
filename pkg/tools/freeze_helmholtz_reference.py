#!/usr/bin/env python3
"""Recompute the frozen Monte Carlo reference for the 1-D Helmholtz benchmark.

Uses the exact closed form of the discrete constant-forcing solution (equal
to the tridiagonal solve up to roundoff) so 10^6 fine-grid evaluations stay
cheap.  Paste the printed value into norh.bench.HELMHOLTZ1D_REFERENCE_PF.
"""

import numpy as np

from norh import models, stochastic

SEED = 20250823
M = 10**6
GRID = 2049
THRESHOLD = 6.0

spec = stochastic.RandomVectorSpec.iid(1, 2.5, 0.3)
kappas = stochastic.sample_random_vector(spec, M, SEED).data[:, 0]
u = models.helmholtz_discrete_probe(kappas, GRID)
pf = float(np.mean(u > THRESHOLD))
print(f"HELMHOLTZ1D_REFERENCE_PF = {pf:.4g}")
