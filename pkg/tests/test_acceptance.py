"""Acceptance criteria, at their stated tolerances.

Each test carries an ``acceptance`` marker; ``conftest.py`` prints one
pass/fail line per criterion at the end of the run.
"""
import filecmp

import numpy as np
import pytest

from hllk import cli
from hllk.expr import parse, poisson, random_polynomial
from hllk.field import PhaseGrid, action_from, assemble_classical_state, gaussian_density, \
    transport_density
from hllk.flow import IntegratorConfig, PhaseState, integrate, jacobian_determinant
from hllk.operators import born_histogram, build_L_operator, commutator_residual, eigensolve, \
    expectation_direct, expectation_operator, expectation_spectral
from hllk.quantize import ConfigGrid, born_rule, classical_limit_compare, coherent_state, \
    oscillator_eigenstate, project_operator, qm_expectation, spectrum, wigner_marginal_error, \
    wigner_transform

acceptance = pytest.mark.acceptance


@acceptance("L3 flow reproduces the closed-form rotation (20 random starts, h=1e-3, 1e-8)")
def test_l3_flow_matches_rotation():
    rng = np.random.default_rng(2024)
    y0 = rng.uniform(-3, 3, (4, 20))
    alpha = rng.uniform(-np.pi, np.pi, 20)
    y = integrate(parse("q1*p2 - q2*p1", 2), y0, alpha, IntegratorConfig(h=1e-3))
    c, s = np.cos(alpha), np.sin(alpha)
    exact = np.array([c * y0[0] - s * y0[1], s * y0[0] + c * y0[1],
                      c * y0[2] - s * y0[3], s * y0[2] + c * y0[3]])
    assert np.max(np.abs(y - exact)) < 1e-8


@acceptance("flows of 10 random polynomial generators preserve volume (1 +- 1e-5)")
def test_random_flows_preserve_volume():
    rng = np.random.default_rng(11)
    dets = []
    for i in range(10):
        n = 1 + i % 2
        a = random_polynomial(rng, n, degree=3, terms=4, coeff_range=2)
        w = PhaseState(tuple(rng.uniform(-0.5, 0.5, n)), tuple(rng.uniform(-0.5, 0.5, n)))
        dets.append(jacobian_determinant(a, w, 0.2))
    assert np.max(np.abs(np.array(dets) - 1.0)) < 1e-5


@acceptance("product rule and Jacobi identity, 20 random triples at 100 points (1e-9)")
def test_bracket_algebra():
    rng = np.random.default_rng(5)
    worst = 0.0
    for i in range(20):
        n = 1 + i % 2
        a, b, c = (random_polynomial(rng, n) for _ in range(3))
        q, p = list(rng.uniform(-1, 1, (n, 100))), list(rng.uniform(-1, 1, (n, 100)))
        lhs = poisson(a * b, c).compile()(q, p)
        rhs = (a * poisson(b, c) + poisson(a, c) * b).compile()(q, p)
        jac = poisson(poisson(a, b), c) + poisson(poisson(b, c), a) + poisson(poisson(c, a), b)
        worst = max(worst, np.max(np.abs(lhs - rhs)), np.max(np.abs(jac.compile()(q, p))))
    assert worst < 1e-9


@acceptance("rotation-invariant Gaussian is stationary under the L3 flow (64^2 grid, 1e-4)")
def test_invariant_density_is_stationary():
    g = PhaseGrid((-6, -6, -8, -8), (6, 6, 8, 8), (64, 64, 16, 16), "truncated")
    rho0 = gaussian_density(g, 0.0, (1.0, 1.0, 4.0, 4.0))
    out = transport_density(rho0, parse("q1*p2 - q2*p1", 2), 0.7)
    assert np.max(np.abs(out.values - rho0.values)) < 1e-4


@acceptance("[L_q, L_p] = i hbar to 1e-8; (q^2, p^2) commutator converges at order >= 1.8")
def test_operator_algebra():
    g = PhaseGrid.uniform(1, (-8, 8), (-8, 8), 64)
    assert commutator_residual(parse("q1", 1), parse("p1", 1), g, stencil="spectral") < 1e-8
    res = [commutator_residual(parse("q1^2", 1), parse("p1^2", 1),
                               PhaseGrid.uniform(1, (-8, 8), (-8, 8), n)) for n in (32, 64, 128)]
    orders = np.log2(np.array(res[:-1]) / np.array(res[1:]))
    assert np.min(orders) >= 1.8


@acceptance("eigenvalues of L are real and eigenvectors orthonormal (p1 and L3, 1e-10)")
def test_real_spectrum_orthonormal_basis():
    g1 = PhaseGrid.uniform(1, (0, 2 * np.pi), (-4, 4), 32)
    sp1 = eigensolve(build_L_operator(parse("p1", 1), g1, stencil="spectral"), check_general=True)
    g2 = PhaseGrid.uniform(2, (-3, 3), (-3, 3), 6)
    sp2 = eigensolve(build_L_operator(parse("q1*p2 - q2*p1", 2), g2))
    for sp in (sp1, sp2):
        assert sp.report["imag_residue"] < 1e-10
        assert sp.report["gram_residual"] < 1e-10
    assert sp1.report["general_imag"] < 1e-10


TRIANGLE_CASES = [
    (1, (0.5, -0.3), (1.0, 1.5), "0.7*q1 + 0.2*q1*p1 + sin(p1)", "q1"),
    (1, (0.0, 0.8), (0.8, 0.6), "q1^2/3 - p1", "(p1^2 + q1^2)/2"),
    (1, (-0.6, 0.2), (1.2, 0.9), "cos(q1)*p1", "q1*p1^2"),
    (1, (0.3, 0.3), (0.7, 1.1), "q1*p1 + q1^3/5", "p1^2/2 + q1^4/4"),
    (2, (0.3, -0.2, 0.1, 0.4), (1.0, 1.0, 1.0, 1.0), "q1*p2 + sin(q2)", "q1*p2 - q2*p1"),
]


@acceptance("direct, operator and spectral expectations agree (1e-6), independent of S (1e-10)")
def test_expectation_triangle():
    for n, mean, var, action, obs in TRIANGLE_CASES:
        g = PhaseGrid.uniform(n, (-6, 6), (-6, 6), 24 if n == 1 else 6)
        rho = gaussian_density(g, mean, var)
        phi = assemble_classical_state(rho, action_from(g, action))
        moved = assemble_classical_state(rho, action_from(g, f"{action} + cos(q1) + p1^2/5"))
        a = parse(obs, n)
        direct = expectation_direct(rho, a)
        op = expectation_operator(phi, a)
        eig = expectation_spectral(phi, eigensolve(build_L_operator(a, g)), a)
        scale = abs(direct)
        assert abs(op.total - direct) <= 1e-6 * scale
        assert abs(eig.total - direct) <= 1e-6 * scale
        assert abs(expectation_operator(moved, a).total - op.total) <= 1e-10 * scale


@acceptance("mean of the level-set histogram matches the direct expectation (q1 and H, 1e-2)")
def test_born_histogram_mean():
    g = PhaseGrid.uniform(1, (-8, 8), (-8, 8), 96)
    rho = gaussian_density(g, (0.5, 0.0), (1.0, 1.0))
    for obs in ("q1", "(p1^2 + q1^2)/2"):
        hist = born_histogram(rho, obs, bins=400)
        assert abs(hist.mean() - expectation_direct(rho, obs)) <= 1e-2


@acceptance("oscillator levels (k+1/2) hbar omega to 1e-3; Born probabilities sum to 1 +- 1e-8")
def test_quantized_oscillator():
    g = ConfigGrid.box(1, (-10, 10), 256)
    op = project_operator("p1^2/2 + w^2*q1^2/2", g, hbar=0.7, params={"w": 1.3})
    vals, _ = spectrum(op, 6)
    exact = 0.7 * 1.3 * (np.arange(6) + 0.5)
    assert np.max(np.abs(vals - exact) / exact) < 1e-3
    psi = coherent_state(g, 1.0, -0.5, hbar=0.7, omega=1.3)
    born = born_rule(psi, op)
    assert abs(born.total() - 1.0) <= 1e-8
    assert born.mean() == pytest.approx(qm_expectation(psi, op)[0], abs=1e-8)


@acceptance("Wigner dynamics: harmonic within 2x baseline over 3 periods, quartic beyond 10x")
def test_classical_limit():
    g = ConfigGrid.box(1, (-8, 8), 128)
    psi0 = coherent_state(g, 2.0, 0.0)
    period = 2 * np.pi
    times = [0.0, period / 8, period / 4, period / 2, period, 2 * period, 3 * period]
    cfg = IntegratorConfig(h=0.01)
    harm = classical_limit_compare("(p1^2 + q1^2)/2", psi0, times, cfg=cfg)
    quart = classical_limit_compare("p1^2/2 + q1^4/4", psi0, times, cfg=cfg)
    baseline = harm.distances[1]
    assert np.max(harm.distances) <= 2 * baseline
    assert quart.distances[-1] > 10 * baseline


@acceptance("Wigner function of oscillator states 0-2: marginal to 1e-6, real to 1e-10")
def test_wigner_marginals():
    g = ConfigGrid.box(1, (-8, 8), 128)
    for k in range(3):
        psi = oscillator_eigenstate(g, k)
        w = wigner_transform(psi)
        assert wigner_marginal_error(psi, w) < 1e-6
        assert w.meta["imag_residue"] < 1e-10


@acceptance("every bundled scenario reruns to byte-identical manifests and outputs")
def test_bundled_scenarios_are_reproducible(tmp_path):
    for name in cli.bundled():
        a, b = tmp_path / name / "a", tmp_path / name / "b"
        assert cli.run(name, a) == 0
        assert cli.run(name, b) == 0
        files = sorted(p.name for p in a.iterdir())
        assert files == sorted(p.name for p in b.iterdir())
        match, mismatch, errors = filecmp.cmpfiles(a, b, files, shallow=False)
        assert not mismatch and not errors, (name, mismatch, errors)
