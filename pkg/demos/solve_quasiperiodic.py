"""Solve a forced KdV equation for a quasi-periodic solution and check it
against a dense Galerkin-Newton reference.

Run:  python3 demos/solve_quasiperiodic.py
"""

import numpy as np

from qpkdv import nonlin, solver as sv
from qpkdv.spectral import Frequency, Truncation, sobolev_norm

trunc = Truncation(1, 8, 8)
freq = Frequency.default(1, lam=1.25)
spec = nonlin.parse_nonlinearity("cos(phi_1) * sin(x) + z0^2 * z3", "raw_f",
                                 epsilon=1e-3)

report = sv.nash_moser(spec, freq, sv.SolverConfig(trunc=trunc))
print(f"lambda = {freq.lam}, epsilon = {spec.epsilon}")
print(f"{'n':>3} {'|u|':>12} {'|F(u)|':>12} {'N':>4}")
for it in report.iterates:
    print(f"{it['n']:>3} {it['u_norm']:>12.4e} {it['res']:>12.4e} {it['N']:>4}")

oracle = sv.galerkin_newton(spec, freq, trunc)
gap = sobolev_norm(report.solution - oracle, trunc.s0)
print(f"converged: {report.converged}")
print(f"dense-Newton agreement: {gap:.2e}")

c = report.solution.c
l, j = np.unravel_index(np.argmax(np.abs(c)), c.shape)
print(f"largest mode (l, j) = ({l - trunc.n_phi}, {j - trunc.n_x}), "
      f"|u_lj| = {np.abs(c[l, j]):.3e}")
