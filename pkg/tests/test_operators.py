import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hllk.errors import GridError, SpectralError
from hllk.expr import parse, random_polynomial
from hllk.field import PhaseGrid, action_from, assemble_classical_state, gaussian_density
from hllk.operators import born_histogram, build_L_operator, build_lie_derivative, \
    commutator_residual, delta_operator, eigensolve, expectation_direct, expectation_operator, \
    expectation_spectral, simultaneous_eigenstate_check, spectrum_to_csv
from hllk.stencils import first_derivative, second_derivative

H = parse("(p1^2 + q1^2)/2", 1)
TWO_PI = 2 * np.pi


def grid1(count=32, q=(-6, 6), p=(-6, 6), boundary="periodic"):
    return PhaseGrid.uniform(1, q, p, count, boundary=boundary)


# --- stencils ------------------------------------------------------------------

@pytest.mark.parametrize("stencil", ["central", "spectral"])
def test_first_derivative_is_antisymmetric(stencil):
    g = first_derivative(16, 3.0, stencil).toarray()
    assert np.max(np.abs(g + g.T)) == 0.0
    d2 = second_derivative(16, 3.0, stencil).toarray()
    assert np.max(np.abs(d2 - d2.T)) == 0.0


def test_spectral_derivative_is_exact_on_resolved_modes():
    x = np.arange(32) * TWO_PI / 32
    g = first_derivative(32, TWO_PI, "spectral")
    np.testing.assert_allclose(g @ np.sin(5 * x), 5 * np.cos(5 * x), atol=1e-12)
    d2 = second_derivative(32, TWO_PI, "spectral")
    np.testing.assert_allclose(d2 @ np.cos(7 * x), -49 * np.cos(7 * x), atol=1e-10)


def test_unknown_stencil():
    with pytest.raises(ValueError):
        first_derivative(8, 1.0, "upwind")


# --- Lie derivative and L -----------------------------------------------------

def test_lie_derivative_examples():
    g = grid1(48, (0, TWO_PI), (-4, 4))
    q, p = g.mesh()
    d = build_lie_derivative(parse("p1", 1), g, stencil="spectral")
    # {p1, sin q1} = -cos q1
    np.testing.assert_allclose(d.apply(np.sin(q)), -np.cos(q), atol=1e-12)
    gh = grid1(64, (-8, 8), (-8, 8))
    hf = gh.sample(H)
    dh = build_lie_derivative(H, gh, stencil="spectral")
    env = np.exp(-(gh.mesh()[0] ** 2 + gh.mesh()[1] ** 2) / 2)
    # {H, f(H)} = 0
    assert np.max(np.abs(dh.apply(env))) < 1e-10 * np.max(hf)


def test_lie_derivative_second_order_error():
    errs = []
    for n in (32, 64):
        g = grid1(n, (-4, 4), (-4, 4))
        q, p = g.mesh()
        f = np.exp(-(q ** 2 + p ** 2))
        # {q1, f} = df/dp
        got = build_lie_derivative(parse("q1", 1), g).apply(f)
        errs.append(np.max(np.abs(got - (-2 * p * f))))
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_constant_generator_is_multiple_of_identity():
    g = grid1(8)
    op = build_L_operator(parse("3", 1), g)
    np.testing.assert_allclose(op.dense(), 3 * np.eye(g.size))
    eig = eigensolve(op)
    np.testing.assert_allclose(eig.eigenvalues, 3.0)


def test_momentum_generator_is_derivative_matrix():
    g = grid1(8, (0, TWO_PI), (-2, 2))
    op = build_L_operator(parse("p1", 1), g, hbar=0.7, stencil="spectral")
    gq = first_derivative(8, TWO_PI, "spectral").toarray()
    expected = np.kron(-0.7j * gq, np.eye(8))
    np.testing.assert_allclose(op.dense(), expected, atol=1e-14)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(["central", "spectral"]))
def test_random_generators_give_hermitian_operators(seed, stencil):
    a = random_polynomial(np.random.default_rng(seed), 1, degree=3)
    op = build_L_operator(a, grid1(12, (-2, 2), (-2, 2)), hbar=0.5, stencil=stencil)
    scale = max(1.0, float(abs(op.matrix).max()))
    assert op.hermiticity_error() <= 1e-14 * scale


def test_l_plus_remainder_is_multiplication():
    g = grid1(16, (-3, 3), (-3, 3))
    a = parse("q1*p1^2 + sin(q1)", 1)
    total = build_L_operator(a, g, 0.8).matrix + delta_operator(a, g, 0.8)
    diag = np.diag(g.sample(a).ravel())
    np.testing.assert_allclose(total.toarray(), diag, atol=1e-12)


def test_truncated_grid_rejected():
    with pytest.raises(GridError):
        build_L_operator(H, grid1(8, boundary="truncated"))


# --- spectra ---------------------------------------------------------------

def test_momentum_spectrum_is_plane_wave_numbers():
    g = grid1(16, (0, TWO_PI), (-4, 4))
    eig = eigensolve(build_L_operator(parse("p1", 1), g, hbar=1.0, stencil="spectral"),
                      check_general=True)
    m = np.round(eig.eigenvalues)
    np.testing.assert_allclose(eig.eigenvalues, m, atol=1e-10)
    assert set(np.unique(m).astype(int)) == set(range(-7, 8))
    assert eig.report["general_imag"] < 1e-10
    assert eig.report["gram_residual"] < 1e-10


def test_l3_spectrum_is_real_and_orthonormal():
    g = PhaseGrid.uniform(2, (-2, 2), (-2, 2), 4)
    eig = eigensolve(build_L_operator(parse("q1*p2 - q2*p1", 2), g))
    assert eig.report["imag_residue"] < 1e-10
    assert eig.report["gram_residual"] < 1e-10
    assert eig.complete


def test_partial_spectrum_picks_smallest_magnitudes():
    g = grid1(16, (0, TWO_PI), (-4, 4))
    op = build_L_operator(parse("p1", 1), g, stencil="spectral")
    eig = eigensolve(op, k=48)
    assert np.max(np.abs(eig.eigenvalues)) <= 1.0 + 1e-10
    assert np.all(np.diff(eig.eigenvalues) >= 0)


def test_spectrum_csv(tmp_path):
    eig = eigensolve(build_L_operator(parse("2", 1), grid1(4)))
    spectrum_to_csv(eig, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert len(lines) == 17 and lines[1].split(",")[1] == "2.0"


# --- commutators --------------------------------------------------------------

def test_self_commutator_vanishes():
    g = grid1(16)
    assert commutator_residual(H, H, g) < 1e-12
    assert commutator_residual(H, H, g, mode="matrix") < 1e-12


def test_canonical_commutator_on_smooth_fields():
    g = grid1(64, (-8, 8), (-8, 8))
    assert commutator_residual(parse("q1", 1), parse("p1", 1), g, stencil="spectral") < 1e-8


def test_canonical_commutator_matrix_defect_is_trace_bound():
    g = grid1(16, (-4, 4), (-4, 4))
    r = commutator_residual(parse("q1", 1), parse("p1", 1), g, stencil="spectral", mode="matrix")
    # tr([L_q, L_p]) = 0 but tr(i hbar I) = i hbar N, so some entry is at least hbar
    assert r >= 1.0


def test_quadratic_commutator_converges_at_second_order():
    res = [commutator_residual(parse("q1^2", 1), parse("p1^2", 1), grid1(n, (-8, 8), (-8, 8)))
           for n in (32, 64, 128)]
    orders = np.log2(np.array(res[:-1]) / np.array(res[1:]))
    assert np.all(orders > 1.8)


def test_joint_eigenstates():
    g = PhaseGrid.uniform(2, (0, TWO_PI), (-2, 2), 4)
    rep = simultaneous_eigenstate_check(parse("p1", 2), parse("p2", 2), g, stencil="spectral")
    assert rep.commuting
    assert rep.residual_a < 1e-10 and rep.residual_b < 1e-10
    g1 = grid1(8)
    assert not simultaneous_eigenstate_check(parse("q1", 1), parse("p1", 1), g1).commuting
    assert simultaneous_eigenstate_check(H, H, g1).commuting


# --- expectations --------------------------------------------------------------

@pytest.fixture(scope="module")
def state():
    g = grid1(24)
    rho = gaussian_density(g, (0.5, -0.3), (1.0, 1.5))
    s = action_from(g, "0.7*q1 + 0.2*q1*p1 + sin(p1)")
    return g, rho, assemble_classical_state(rho, s)


def test_direct_expectation_examples():
    g = grid1(64, (-8, 8), (-8, 8))
    rho = gaussian_density(g, 0.0, 1.0)
    assert expectation_direct(rho, "1") == pytest.approx(1.0, abs=1e-12)
    assert abs(expectation_direct(rho, "q1")) < 1e-12
    assert expectation_direct(rho, "q1^2 + p1^2") == pytest.approx(2.0, abs=1e-3)


def test_expectation_triangle(state):
    g, rho, phi = state
    for text in ("q1", "p1", "(p1^2 + q1^2)/2", "q1*p1^2"):
        d = expectation_direct(rho, text)
        op = expectation_operator(phi, text)
        sp = expectation_spectral(phi, eigensolve(build_L_operator(parse(text, 1), g)), text)
        assert op.total == pytest.approx(d, rel=1e-10, abs=1e-12)
        assert sp.total == pytest.approx(op.total, rel=1e-8, abs=1e-12)
        assert sp.sum_term == pytest.approx(op.main, rel=1e-8, abs=1e-10)
        assert sp.captured == pytest.approx(1.0, abs=1e-10)


def test_constant_observable_expectation(state):
    _, _, phi = state
    out = expectation_operator(phi, "3")
    assert out.main == pytest.approx(3.0) and abs(out.delta) < 1e-12


def test_global_phase_leaves_expectation_unchanged(state):
    g, rho, phi = state
    shifted = assemble_classical_state(rho, action_from(g, "0.7*q1 + 0.2*q1*p1 + sin(p1) + 1.3"))
    a = expectation_operator(phi, "q1*p1")
    b = expectation_operator(shifted, "q1*p1")
    assert abs(a.total - b.total) < 1e-12 and abs(a.main - b.main) < 1e-12


def test_eigenvector_expectation_is_its_eigenvalue():
    g = grid1(12)
    eig = eigensolve(build_L_operator(H, g))
    phi = eig.field(30)
    out = expectation_spectral(phi, eig, H)
    assert out.sum_term == pytest.approx(eig.eigenvalues[30], abs=1e-10)


def test_incomplete_spectrum_is_rejected(state):
    g, _, phi = state
    eig = eigensolve(build_L_operator(H, g), k=20)
    with pytest.raises(SpectralError):
        expectation_spectral(phi, eig, H)


# --- level-set histograms -------------------------------------------------------

def test_born_histogram_of_position_is_the_marginal():
    g = grid1(96, (-8, 8), (-8, 8))
    rho = gaussian_density(g, (0.5, 0.0), (1.0, 1.0))
    # one bin centred on each grid node
    hist = born_histogram(rho, "q1", bins=96, value_range=(-8 - 1 / 12, 8 - 1 / 12))
    exact = np.exp(-(hist.centers - 0.5) ** 2 / 2) / np.sqrt(TWO_PI)
    assert np.max(np.abs(hist.density - exact)) < 1e-6
    assert hist.total() == pytest.approx(1.0)
    assert hist.mean() == pytest.approx(expectation_direct(rho, "q1"), abs=1e-2)


def test_born_histogram_of_constant():
    g = grid1(16)
    rho = gaussian_density(g)
    hist = born_histogram(rho, "2.5", bins=10)
    assert np.count_nonzero(hist.density) == 1
    assert hist.mean() == pytest.approx(2.5)
