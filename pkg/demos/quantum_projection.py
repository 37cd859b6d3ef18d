"""Projecting to configuration space: levels, Born weights and the classical limit.

Run with ``python3 demos/quantum_projection.py``.
"""
import numpy as np

from hllk.flow import IntegratorConfig
from hllk.quantize import ConfigGrid, born_rule, classical_limit_compare, coherent_state, \
    project_operator, qm_expectation, spectrum

g = ConfigGrid.box(1, (-10, 10), 256)
h = project_operator("(p1^2 + q1^2)/2", g)
vals, _ = spectrum(h, 6)
print("oscillator levels:", np.round(vals, 8))

psi = coherent_state(g, 1.0, 0.5)
born = born_rule(psi, h)
print(f"Born weights sum to {born.total():.12f}; "
      f"mean {born.mean():.10f} vs <H> {qm_expectation(psi, h)[0]:.10f}")
print("first weights:", np.round(born.probabilities[:5], 6))

gw = ConfigGrid.box(1, (-8, 8), 128)
psi0 = coherent_state(gw, 2.0, 0.0)
times = [0.0, np.pi / 4, np.pi, 2 * np.pi]
cfg = IntegratorConfig(h=0.01)
harm = classical_limit_compare("(p1^2 + q1^2)/2", psi0, times, cfg=cfg)
quart = classical_limit_compare("p1^2/2 + q1^4/4", psi0, times, cfg=cfg)
print("\nL1 distance between Wigner and Liouville evolution")
for t, a, b in zip(times, harm.distances, quart.distances):
    print(f"  t={t:6.3f}  harmonic {a:.2e}  quartic {b:.2e}")
