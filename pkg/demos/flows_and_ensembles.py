"""Every observable generates a flow: rotations, volume, actions and clouds.

Run with ``python3 demos/flows_and_ensembles.py``.
"""
import numpy as np

from hllk.ensemble import Gaussian, expectation_eulerian, expectation_lagrangian, push_forward, sample
from hllk.expr import associated_lagrangian, parse, poisson
from hllk.flow import IntegratorConfig, PhaseState, advance, jacobian_determinant, lagrangian_along

l3 = parse("q1*p2 - q2*p1", 2)
h = parse("(p1^2 + p2^2 + q1^2 + q2^2)/2", 2)
print("L3 =", l3, "  H =", h)
print("{L3, H} =", poisson(l3, h), "(the two are in involution)")

start = PhaseState((1.0, 0.0), (0.0, 2.0))
for alpha in (np.pi / 4, np.pi / 2, np.pi):
    end = advance(l3, start, alpha)
    print(f"L3 flow, alpha={alpha:.4f}:  q={np.round(end.q, 10)}  p={np.round(end.p, 10)}")

cubic = parse("q1^2*p1 + sin(q2)*p2^2", 2)
w = PhaseState((0.3, -0.2), (0.5, 0.1))
print(f"\nnonlinear generator {cubic}")
print(f"  det of the flow Jacobian at alpha=0.5: {jacobian_determinant(cubic, w, 0.5):.12f}")

free = parse("p1^2/2", 1)
print(f"\nLagrangian of {free}: {associated_lagrangian(free)}")
_, action = lagrangian_along(free, np.array([[0.0], [1.5]]), 2.0)
print(f"  action accumulated from p=1.5 over alpha=2: {action[0]:.12f} (exact 2.25)")

cfg = IntegratorConfig(h=0.01)
quartic = parse("p1^2/2 + q1^4/4", 1)
cloud = sample(Gaussian([1.0, 0.0], [0.1, 0.1]), 4000, seed=3)
obs = parse("q1", 1)
print("\nmean position of a 4000-point cloud under p^2/2 + q^4/4")
for alpha in (0.0, 0.5, 1.0, 2.0):
    lag = expectation_lagrangian(cloud, obs, quartic, alpha, cfg)
    eul = expectation_eulerian(push_forward(cloud, quartic, alpha, cfg), obs)
    print(f"  alpha={alpha:.1f}  along trajectories {lag:+.6f}  on the moved cloud {eul:+.6f}")
