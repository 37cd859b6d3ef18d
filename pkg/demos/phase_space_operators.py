"""Densities, actions and the operator L_A on a phase-space grid.

Run with ``python3 demos/phase_space_operators.py``.
"""
import numpy as np

from hllk.expr import parse
from hllk.field import PhaseGrid, action_from, assemble_classical_state, gaussian_density, \
    transport_density
from hllk.operators import build_L_operator, commutator_residual, eigensolve, expectation_direct, \
    expectation_operator, expectation_spectral

h = parse("(p1^2 + q1^2)/2", 1)

# transport a displaced Gaussian by a quarter turn of the oscillator flow
g = PhaseGrid.uniform(1, (-6, 6), (-6, 6), 96, boundary="truncated")
rho = gaussian_density(g, (2.0, 0.0), (0.3, 0.3))
moved = transport_density(rho, h, np.pi / 2)
q, p = g.mesh()
print("density centre after a quarter turn:",
      f"q={g.integrate(q * moved.values):+.5f}  p={g.integrate(p * moved.values):+.5f}")
print(f"probability drift: {moved.meta['normalization_drift']:.2e}")

# one mean value, three ways
gp = PhaseGrid.uniform(1, (-6, 6), (-6, 6), 24)
rho = gaussian_density(gp, (0.5, -0.3), (1.0, 1.5))
phi = assemble_classical_state(rho, action_from(gp, "0.7*q1 + sin(p1)"))
a = parse("q1*p1^2", 1)
eig = eigensolve(build_L_operator(a, gp))
print(f"\n<{a}> direct   {expectation_direct(rho, a):.12f}")
print(f"<{a}> operator {expectation_operator(phi, a).total:.12f}")
print(f"<{a}> spectral {expectation_spectral(phi, eig, a).total:.12f}")
print(f"eigenvalues real to {eig.report['imag_residue']:.1e}, "
      f"basis orthonormal to {eig.report['gram_residual']:.1e}")

gc = PhaseGrid.uniform(1, (-8, 8), (-8, 8), 64)
res = commutator_residual(parse("q1", 1), parse("p1", 1), gc, stencil="spectral")
print(f"\n[L_q, L_p] - i hbar on smooth fields: {res:.2e}")
