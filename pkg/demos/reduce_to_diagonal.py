"""Regularize the linearized operator, reduce it to a diagonal, and print the
corrected eigenvalue asymptotics mu_j = -i(m3 j^3 - m1 j) + r_j.

Run:  python3 demos/reduce_to_diagonal.py
"""

import numpy as np

from qpkdv import kamreduce as km, nonlin, regularize as reg
from qpkdv.spectral import Frequency, Truncation, random_real_field

trunc = Truncation(1, 8, 8)
freq = Frequency.default(1, lam=1.25)
spec = nonlin.parse_nonlinearity("z0^2 * z3 + z1", "raw_f", epsilon=1e-3)
u = random_real_field(trunc, np.random.default_rng(0), decay=4.0, scale=2e-3,
                      parity="X")

rg = reg.regularize_at(spec, freq, u)
print(f"m3 - 1 = {rg.m3 - 1.0:+.3e}   m1 = {rg.m1:+.3e}")

red = km.reduce(rg, freq, km.IterationSchedule(gamma=0.01,
                                               smallness_threshold=1e6))
print(f"{'step':>4} {'N':>4} {'|R|_s0':>12}")
for row in red.trace:
    print(f"{row['step']:>4} {row['N']:>4} {row['R_s0']:>12.4e}")

rep = km.eigenvalue_report(red.eigs, rg.m3, rg.m1, spec.epsilon, "reversible")
print(f"max |Re mu_j|        = {rep['re_mu_max']:.2e}")
print(f"antisymmetry defect  = {rep['antisym_defect']:.2e}")
print(f"sup_j |r_j|          = {rep['sup_rj']:.2e}")
