"""Scenario runner.

A scenario is a YAML document with a ``kind`` naming the experiment, an
``observables`` table of named expressions, and kind-specific settings.
``hllk run FILE`` executes it, writes the requested data files plus a
``manifest.json`` into ``--out-dir``, and exits with

* 0 if every built-in check passed,
* 1 if some check failed,
* 2 if the scenario is invalid (the message names the offending key),
* 3 if a numerical error stopped the run.

Bundled scenarios can be run by name (``hllk run l3_rotation``).
"""
from __future__ import annotations

import argparse
import json
import math
import platform
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .ensemble import Gaussian, Product, UniformBox, expectation_eulerian, expectation_lagrangian, \
    measure_invariance_check, push_forward, sample
from .errors import ExprSyntaxError, HLLKError, ScenarioError
from .expr import ObservableExpr, is_zero, parse, poisson
from .field import GridField, PhaseGrid, action_from, assemble_classical_state, gaussian_density, \
    stationary_action, stationary_density, transport_density
from .flow import IntegratorConfig, PhaseState, conservation_error, integrate, jacobian_determinant
from . import gridio, operators, quantize

KIND_DOCS = {
    "flow": ("Integrate the canonical equations of a generator and compare with known solutions.",
             "dq/dalpha = dA/dp, dp/dalpha = -dA/dq; det(dPhi/dw0) = 1; A constant along its flow"),
    "liouville": ("Transport a density along the flow of a generator on a phase grid.",
                  "d rho/d alpha + {rho, A} = 0, i.e. rho(w, alpha) = rho0(Phi_-alpha(w))"),
    "stationary": ("Build stationary densities and actions of a generator.",
                   "{sqrt(rho), A} = 0 and -a + {S, A} = p dA/dp - A"),
    "spectrum": ("Eigen-decompose the phase-space operator L_A.",
                 "L_A phi = a phi with L_A = -(hbar/i) {A, .} - (p dA/dp - A); a real"),
    "commutator": ("Measure the commutator law of phase-space operators.",
                   "[L_A, L_B] = -(hbar/i) L_{A,B}"),
    "expectation": ("Compare three forms of a classical expectation value.",
                    "int A rho = <phi, L_A phi> + remainder = sum_k a_k |<phi, phi_k>|^2 + remainder"),
    "born": ("Histogram the values of an observable over a density (level-set partition).",
             "W(a) = int over {A = a} of rho;  mean of A = int a W(a) da"),
    "quantize": ("Quantize an observable on configuration space; spectrum and Born probabilities.",
                 "p -> (hbar/i) d/dq;  <A> = sum_k a_k |<psi, phi_k>|^2"),
    "schrodinger": ("Evolve a wave function under a quantized Hamiltonian.",
                    "-(hbar/i) dpsi/dt = H psi"),
    "wigner-compare": ("Compare Wigner-function dynamics with Liouville transport.",
                       "W(Q, P) = (2 pi hbar)^-1 int dr psi*(Q - r/2) psi(Q + r/2) exp(-i P r / hbar)"),
    "ensemble": ("Monte-Carlo ensembles: Lagrangian and Eulerian averages, measure invariance.",
                 "int A(Phi(w0)) rho0(w0) dw0 = int A(w) rho(w) dw;  P(Phi(E)) = P(E)"),
}


# --------------------------------------------------------------------------
# validation helpers

def _get(spec: dict, key: str, path: str, kind=None, default=..., check=None):
    full = f"{path}.{key}" if path else key
    if key not in spec:
        if default is ...:
            raise ScenarioError("required key is missing", full)
        return default
    value = spec[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ScenarioError(f"expected a finite number, got {value!r}", full)
        value = float(value)
    elif kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ScenarioError(f"expected an integer, got {value!r}", full)
    elif kind is str:
        if not isinstance(value, str):
            raise ScenarioError(f"expected a string, got {value!r}", full)
    elif kind is list:
        if not isinstance(value, list):
            raise ScenarioError(f"expected a list, got {value!r}", full)
    elif kind is dict:
        if not isinstance(value, dict):
            raise ScenarioError(f"expected a mapping, got {value!r}", full)
    if check is not None:
        msg = check(value)
        if msg:
            raise ScenarioError(msg, full)
    return value


def _positive(v):
    return None if v > 0 else "must be positive"


def _numbers(spec, key, path, length=None, default=...):
    full = f"{path}.{key}" if path else key
    vals = _get(spec, key, path, default=default)
    if vals is default and default is not ...:
        return vals
    vals = vals if isinstance(vals, list) else [vals]
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)
               for v in vals):
        raise ScenarioError(f"expected finite numbers, got {vals!r}", full)
    if length is not None and len(vals) not in (1, length):
        raise ScenarioError(f"expected {length} numbers, got {len(vals)}", full)
    if length is not None and len(vals) == 1:
        vals = vals * length
    return [float(v) for v in vals]


@dataclass
class Context:
    spec: dict
    n: int
    hbar: float
    seed: int
    params: dict
    observables: dict
    out_dir: Path
    tol_scale: float = 1.0
    checks: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)

    def obs(self, key: str, spec: dict | None = None, path: str = ""):
        spec = self.spec if spec is None else spec
        name = _get(spec, key, path, str)
        if name in self.observables:
            return self.observables[name]
        full = f"{path}.{key}" if path else key
        try:
            expr = parse(name, self.n)
        except ExprSyntaxError:
            raise ScenarioError(f"unknown observable {name!r} (not in observables, not an "
                                "expression)", full) from None
        missing = sorted(expr.params - set(self.params))
        if missing:
            raise ScenarioError(f"unknown observable {name!r} (name {missing[0]!r} is neither an "
                                "observable nor a parameter)", full)
        return expr

    def check(self, name: str, value: float, tolerance: float, mode: str = "max"):
        """Record a check; ``mode`` "max" passes when value <= tol, "min" when value >= tol."""
        tol = tolerance * self.tol_scale if mode == "max" else tolerance
        value = float(value)
        ok = value <= tol if mode == "max" else value >= tol
        self.checks[name] = {"value": value, "tolerance": tol, "mode": mode, "pass": bool(ok)}

    def flag(self, name: str, ok: bool, detail=None):
        self.checks[name] = {"value": detail, "pass": bool(ok)}

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out_dir / name


def _grid(ctx: Context, key="grid") -> PhaseGrid:
    g = _get(ctx.spec, key, "", dict)
    n = ctx.n
    boundary = _get(g, "boundary", key, str, "periodic",
                    lambda v: None if v in ("periodic", "truncated") else "must be periodic or truncated")
    try:
        if "lower" in g:
            return PhaseGrid(_numbers(g, "lower", key, 2 * n), _numbers(g, "upper", key, 2 * n),
                             [int(c) for c in _numbers(g, "counts", key, 2 * n)], boundary)
        q = _numbers(g, "q", key, 2)
        p = _numbers(g, "p", key, 2, default=q)
        qc = _get(g, "q_count", key, int, check=lambda v: None if v >= 4 else "must be >= 4")
        pc = _get(g, "p_count", key, int, qc, check=lambda v: None if v >= 4 else "must be >= 4")
        return PhaseGrid.uniform(n, q, p, qc, pc, boundary)
    except HLLKError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(str(exc), key) from None


def _config_grid(ctx: Context, key="grid") -> quantize.ConfigGrid:
    g = _get(ctx.spec, key, "", dict)
    q = _numbers(g, "q", key, 2)
    count = _get(g, "count", key, int, check=lambda v: None if v >= 4 else "must be >= 4")
    try:
        return quantize.ConfigGrid.box(ctx.n, q, count)
    except HLLKError as exc:
        raise ScenarioError(str(exc), key) from None


def _density(ctx: Context, grid: PhaseGrid, key="density") -> GridField:
    d = _get(ctx.spec, key, "", dict)
    kind = _get(d, "type", key, str, "gaussian")
    if kind == "gaussian":
        mean = _numbers(d, "mean", key, grid.ndim, default=[0.0] * grid.ndim)
        var = _numbers(d, "var", key, grid.ndim, default=[1.0] * grid.ndim)
        if any(v <= 0 for v in var):
            raise ScenarioError("variances must be positive", f"{key}.var")
        return gaussian_density(grid, mean, var)
    raise ScenarioError(f"unknown density type {kind!r}", f"{key}.type")


def _cfg(ctx: Context, default_h=1e-3) -> IntegratorConfig:
    h = _get(ctx.spec, "h", "", float, default_h, _positive)
    order = _get(ctx.spec, "order", "", int, 4, lambda v: None if v in (2, 4) else "must be 2 or 4")
    return IntegratorConfig(h=h, order=order)


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(x)) if not isinstance(x, (int, np.integer)) or
                              isinstance(x, bool) else str(int(x)) for x in row) + "\n")


# --------------------------------------------------------------------------
# experiment kinds

def run_flow(ctx: Context):
    gen = ctx.obs("generator")
    alpha = _get(ctx.spec, "alpha", "", float)
    cfg = _cfg(ctx)
    n = ctx.n
    if "starts" in ctx.spec:
        starts = []
        for i, s in enumerate(_get(ctx.spec, "starts", "", list)):
            path = f"starts[{i}]"
            if not isinstance(s, dict):
                raise ScenarioError("expected a mapping with q and p", path)
            starts.append(_numbers(s, "q", path, n) + _numbers(s, "p", path, n))
        y0 = np.array(starts, dtype=float).T
    else:
        r = _get(ctx.spec, "random_starts", "", dict)
        count = _get(r, "count", "random_starts", int, check=_positive)
        lo, hi = _numbers(r, "range", "random_starts", 2)
        rng = np.random.default_rng(ctx.seed)
        y0 = rng.uniform(lo, hi, size=(2 * n, count))
    alphas = np.full(y0.shape[1], alpha)
    if "random_alpha" in ctx.spec:
        a_lo, a_hi = _numbers(ctx.spec, "random_alpha", "", 2)
        alphas = np.random.default_rng(ctx.seed + 1).uniform(a_lo, a_hi, size=y0.shape[1])
    y = integrate(gen, y0, alphas, cfg, ctx.params)
    back = integrate(gen, y, -alphas, cfg, ctx.params)
    f = gen.compile(ctx.params)
    a0 = f(list(y0[:n]), list(y0[n:]))
    a1 = f(list(y[:n]), list(y[n:]))
    ctx.check("generator_conservation", np.max(np.abs(a1 - a0)), 1e-8)
    ctx.check("inverse_roundtrip", np.max(np.abs(back - y0)), 1e-8)
    dets = [jacobian_determinant(gen, PhaseState.from_array(y0[:, i]), float(alphas[i]), cfg,
                                 ctx.params) for i in range(min(y0.shape[1], 5))]
    ctx.check("volume_preservation", np.max(np.abs(np.array(dets) - 1.0)), 1e-5)
    ref = _get(ctx.spec, "reference", "", str, "none")
    if ref == "l3_rotation":
        if n < 2:
            raise ScenarioError("needs n >= 2", "reference")
        c, s = np.cos(alphas), np.sin(alphas)
        exp = y0.copy()
        exp[0], exp[1] = c * y0[0] - s * y0[1], s * y0[0] + c * y0[1]
        exp[n], exp[n + 1] = c * y0[n] - s * y0[n + 1], s * y0[n] + c * y0[n + 1]
        ctx.check("l3_rotation_match", np.max(np.abs(y - exp)), 1e-8)
    elif ref == "identity":
        ctx.check("returns_to_start", np.max(np.abs(y - y0)), 1e-8)
    elif ref != "none":
        raise ScenarioError(f"unknown reference {ref!r}", "reference")
    if "expect" in ctx.spec:
        exp = []
        for i, s in enumerate(_get(ctx.spec, "expect", "", list)):
            exp.append(_numbers(s, "q", f"expect[{i}]", n) + _numbers(s, "p", f"expect[{i}]", n))
        exp = np.array(exp).T
        if exp.shape != y.shape:
            raise ScenarioError("must list one end point per start", "expect")
        ctx.check("expected_endpoint_match", np.max(np.abs(y - exp)), 1e-8)
    names = [f"q{k}_0" for k in range(1, n + 1)] + [f"p{k}_0" for k in range(1, n + 1)] + \
        ["alpha"] + [f"q{k}" for k in range(1, n + 1)] + [f"p{k}" for k in range(1, n + 1)]
    _write_csv(ctx.path("flow.csv"), names,
               [list(y0[:, i]) + [alphas[i]] + list(y[:, i]) for i in range(y.shape[1])])


def run_liouville(ctx: Context):
    gen = ctx.obs("generator")
    grid = _grid(ctx)
    rho0 = _density(ctx, grid)
    alpha = _get(ctx.spec, "alpha", "", float)
    out = transport_density(rho0, gen, alpha, _cfg(ctx, 0.02), ctx.params)
    ctx.check("normalization_drift", abs(out.meta["normalization_drift"]), 1e-3)
    ref = _get(ctx.spec, "reference", "", str, "none")
    if ref == "invariant":
        ctx.check("stationarity_linf", np.max(np.abs(out.values - rho0.values)), 1e-4)
    elif ref == "l3_half_turn":
        mean = np.array(_numbers(ctx.spec["density"], "mean", "density", grid.ndim))
        centre = [float(grid.integrate(x * out.values)) for x in grid.mesh(sparse=True)]
        expected = mean.copy()
        n = grid.n
        c, s = math.cos(alpha), math.sin(alpha)
        expected[0], expected[1] = c * mean[0] - s * mean[1], s * mean[0] + c * mean[1]
        expected[n], expected[n + 1] = c * mean[n] - s * mean[n + 1], s * mean[n] + c * mean[n + 1]
        ctx.check("rotated_centre", np.max(np.abs(np.array(centre) - expected)), 1e-3)
    elif ref != "none":
        raise ScenarioError(f"unknown reference {ref!r}", "reference")
    gridio.save(out, ctx.path("density.hgf"))
    if grid.n == 1:
        gridio.to_csv(out, ctx.path("density.csv"))


def run_stationary(ctx: Context):
    gen = ctx.obs("generator")
    grid = _grid(ctx)
    if "invariants" in ctx.spec:
        invs = []
        for i, s in enumerate(_get(ctx.spec, "invariants", "", list)):
            try:
                invs.append(ctx.observables.get(s) or parse(s, ctx.n))
            except ExprSyntaxError as exc:
                raise ScenarioError(str(exc), f"invariants[{i}]") from None
        w = _numbers(ctx.spec, "weights", "", len(invs), default=[0.5] * len(invs))
        ok = [is_zero(poisson(inv, gen)) for inv in invs]
        for inv, good in zip(invs, ok):
            ctx.flag(f"invariant[{inv}]", good)
        if not all(ok):
            return
        rho = stationary_density(gen, grid, lambda *a: np.exp(-sum(wi * x for wi, x in zip(w, a))),
                                 invs, ctx.params)
        ctx.check("density_bracket_residual", rho.meta["residual"],
                  _get(ctx.spec, "density_tolerance", "", float, 1e-8))
        gridio.save(rho, ctx.path("density.hgf"))
    if "a" in ctx.spec:
        a = _get(ctx.spec, "a", "", float)
        s = stationary_action(gen, grid, a, params=ctx.params)
        ctx.check("action_equation_residual", s.meta["residual"],
                  _get(ctx.spec, "action_tolerance", "", float, 1e-8))
        gridio.save(s, ctx.path("action.hgf"))
        if grid.n == 1:
            gridio.to_csv(s, ctx.path("action.csv"))


def run_spectrum(ctx: Context):
    gen = ctx.obs("generator")
    grid = _grid(ctx)
    stencil = _get(ctx.spec, "stencil", "", str, "central")
    op = operators.build_L_operator(gen, grid, ctx.hbar, stencil, ctx.params)
    eig = operators.eigensolve(op, _get(ctx.spec, "k", "", int, None),
                               check_general=_get(ctx.spec, "general_check", "", bool, False))
    ctx.check("hermiticity", op.hermiticity_error(), 1e-12)
    ctx.check("imaginary_residue", eig.report["imag_residue"], 1e-10)
    ctx.check("gram_residual", eig.report["gram_residual"], 1e-10)
    ctx.check("eigen_residual", eig.report["residual"], 1e-8)
    ref = _get(ctx.spec, "reference", "", str, "none")
    if ref == "plane_waves":
        # L_{p_k} on a periodic axis of length L: hbar * 2 pi m / L
        length = grid.lengths[0]
        m = np.round(eig.eigenvalues * length / (2 * np.pi * ctx.hbar))
        ctx.check("plane_wave_eigenvalues",
                  np.max(np.abs(eig.eigenvalues - ctx.hbar * 2 * np.pi * m / length)), 1e-9)
    elif ref != "none":
        raise ScenarioError(f"unknown reference {ref!r}", "reference")
    operators.spectrum_to_csv(eig, ctx.path("eigenvalues.csv"))


def run_commutator(ctx: Context):
    a, b = ctx.obs("A"), ctx.obs("B")
    stencil = _get(ctx.spec, "stencil", "", str, "central")
    mode = _get(ctx.spec, "mode", "", str, "domain")
    if "refine" in ctx.spec:
        g = _get(ctx.spec, "grid", "", dict)
        counts = [int(c) for c in _numbers(ctx.spec, "refine", "")]
        rows, res = [], []
        for c in counts:
            grid = PhaseGrid.uniform(ctx.n, _numbers(g, "q", "grid", 2),
                                     _numbers(g, "p", "grid", 2, default=_numbers(g, "q", "grid", 2)), c)
            res.append(operators.commutator_residual(a, b, grid, ctx.hbar, stencil, mode, ctx.params))
            rows.append([c, res[-1]])
        orders = [math.log2(res[i] / res[i + 1]) for i in range(len(res) - 1)]
        ctx.check("observed_order", min(orders[1:] or orders), 1.8, mode="min")
        _write_csv(ctx.path("refinement.csv"), ["count", "residual"], rows)
    else:
        grid = _grid(ctx)
        r = operators.commutator_residual(a, b, grid, ctx.hbar, stencil, mode, ctx.params)
        ctx.check("commutator_residual", r, _get(ctx.spec, "tolerance", "", float, 1e-8))
        _write_csv(ctx.path("residual.csv"), ["residual"], [[r]])


def run_expectation(ctx: Context):
    grid = _grid(ctx)
    rho = _density(ctx, grid)
    s_text = _get(ctx.spec, "action", "", str, "0")
    perturb = _get(ctx.spec, "perturbation", "", str, "sin(q1) + p1^2/3")
    try:
        s0 = action_from(grid, s_text, ctx.params)
        s1 = action_from(grid, f"({s_text}) + ({perturb})", ctx.params)
    except ExprSyntaxError as exc:
        raise ScenarioError(str(exc), "action") from None
    phi = assemble_classical_state(rho, s0, ctx.hbar)
    phi2 = assemble_classical_state(rho, s1, ctx.hbar)
    rows = []
    for i, name in enumerate(_get(ctx.spec, "observables_checked", "", list)):
        a = ctx.observables.get(name) or parse(name, ctx.n)
        d = operators.expectation_direct(rho, a, ctx.params)
        op = operators.expectation_operator(phi, a, ctx.hbar, params=ctx.params)
        sp = operators.expectation_spectral(phi, operators.eigensolve(
            operators.build_L_operator(a, grid, ctx.hbar, params=ctx.params)), a, ctx.hbar,
            params=ctx.params)
        op2 = operators.expectation_operator(phi2, a, ctx.hbar, params=ctx.params)
        scale = max(abs(d), 1e-300)
        ctx.check(f"direct_vs_operator[{name}]", abs(d - op.total) / scale, 1e-6)
        ctx.check(f"operator_vs_spectral[{name}]", abs(op.total - sp.total) / scale, 1e-6)
        ctx.check(f"phase_independence[{name}]", abs(op2.total - op.total) / scale, 1e-10)
        rows.append([i, d, op.main, op.delta, op.total, sp.sum_term, sp.total])
    _write_csv(ctx.path("expectations.csv"),
               ["index", "direct", "main", "delta", "operator_total", "spectral_sum",
                "spectral_total"], rows)


def run_born(ctx: Context):
    grid = _grid(ctx)
    rho = _density(ctx, grid)
    bins = _get(ctx.spec, "bins", "", int, 200, _positive)
    for name in _get(ctx.spec, "observables_checked", "", list):
        a = ctx.observables.get(name) or parse(name, ctx.n)
        h = operators.born_histogram(rho, a, bins, params=ctx.params)
        direct = operators.expectation_direct(rho, a, ctx.params)
        ctx.check(f"histogram_normalization[{name}]", abs(h.total() - 1.0), 1e-6)
        ctx.check(f"histogram_mean[{name}]", abs(h.mean() - direct), 1e-2)
        safe = "".join(ch if ch.isalnum() else "_" for ch in name)
        _write_csv(ctx.path(f"born_{safe}.csv"), ["a", "W"], zip(h.centers, h.density))


def run_quantize(ctx: Context):
    grid = _config_grid(ctx)
    a = ctx.obs("observable")
    op = quantize.project_operator(a, grid, ctx.hbar, params=ctx.params)
    ctx.check("hermiticity", op.hermiticity_error(), 1e-12)
    if "expect_levels" in ctx.spec:
        exp = np.array(_numbers(ctx.spec, "expect_levels", ""))
        vals, _ = quantize.spectrum(op, exp.size)
        ctx.check("levels_relative_error", np.max(np.abs(vals - exp) / np.abs(exp)), 1e-3)
        _write_csv(ctx.path("levels.csv"), ["k", "eigenvalue"], enumerate(vals))
    st = _get(ctx.spec, "state", "", dict, None)
    if st is not None:
        q0 = _numbers(st, "q0", "state", ctx.n)
        p0 = _numbers(st, "p0", "state", ctx.n)
        psi = quantize.coherent_state(grid, q0, p0, ctx.hbar)
        born = quantize.born_rule(psi, op)
        mean, imag = quantize.qm_expectation(psi, op)
        ctx.check("born_probability_sum", abs(born.total() - 1.0), 1e-8)
        ctx.check("born_mean_vs_expectation", abs(born.mean() - mean), 1e-8)
        ctx.check("expectation_imag_residue", imag, 1e-10)
        _write_csv(ctx.path("born.csv"), ["eigenvalue", "probability"],
                   zip(born.eigenvalues, born.probabilities))


def run_schrodinger(ctx: Context):
    grid = _config_grid(ctx)
    h = ctx.obs("hamiltonian")
    st = _get(ctx.spec, "state", "", dict)
    q0 = _numbers(st, "q0", "state", ctx.n)
    p0 = _numbers(st, "p0", "state", ctx.n)
    psi0 = quantize.coherent_state(grid, q0, p0, ctx.hbar, _get(st, "omega", "state", float, 1.0))
    times = _numbers(ctx.spec, "times", "")
    steps = _get(ctx.spec, "steps_per_unit", "", int, 1000, _positive)
    method = _get(ctx.spec, "method", "", str, "auto")
    mass = _get(ctx.spec, "mass", "", float, 1.0, _positive)
    e0, _ = quantize.qm_expectation(psi0, h, params=ctx.params)
    ref = _get(ctx.spec, "reference", "", str, "none")
    rows, psi, t_prev = [], psi0, 0.0
    worst_norm = worst_energy = worst_ref = 0.0
    for t in times:
        if t > t_prev:
            psi = quantize.schrodinger_evolve(psi, h, t - t_prev, max(1, int(round((t - t_prev) * steps))),
                                              ctx.hbar, method, params=ctx.params)
            t_prev = t
        nrm = quantize.norm(psi)
        e, _ = quantize.qm_expectation(psi, h, params=ctx.params)
        mq, _ = quantize.qm_expectation(psi, "q1")
        mp, _ = quantize.qm_expectation(psi, "p1")
        worst_norm = max(worst_norm, abs(nrm - 1.0))
        worst_energy = max(worst_energy, abs(e - e0))
        if ref == "free":
            worst_ref = max(worst_ref, abs(mq - (q0[0] + p0[0] * t / mass)))
        elif ref == "harmonic":
            worst_ref = max(worst_ref, abs(mq - (q0[0] * math.cos(t) + p0[0] * math.sin(t))))
        rows.append([t, nrm, e, mq, mp])
    ctx.check("norm_drift", worst_norm, 1e-10)
    ctx.check("energy_drift", worst_energy, 1e-8 * max(1.0, max(times)))
    if ref in ("free", "harmonic"):
        ctx.check("mean_position_vs_classical", worst_ref, _get(ctx.spec, "tolerance", "", float, 1e-6))
    elif ref != "none":
        raise ScenarioError(f"unknown reference {ref!r}", "reference")
    _write_csv(ctx.path("evolution.csv"), ["t", "norm", "energy", "mean_q", "mean_p"], rows)
    gridio.save(psi, ctx.path("final_state.hgf"))


def run_wigner_compare(ctx: Context):
    grid = _config_grid(ctx)
    st = _get(ctx.spec, "state", "", dict)
    psi0 = quantize.coherent_state(grid, _numbers(st, "q0", "state", 1), _numbers(st, "p0", "state", 1),
                                   ctx.hbar)
    ref_h = ctx.obs("reference_hamiltonian")
    test_h = ctx.obs("hamiltonian")
    times = _numbers(ctx.spec, "times", "")
    if len(times) < 2 or times[0] != 0.0:
        raise ScenarioError("must start at 0 and hold at least two times", "times")
    cfg = _cfg(ctx, 0.01)
    base = quantize.classical_limit_compare(ref_h, psi0, times, ctx.hbar, cfg=cfg, params=ctx.params)
    test = quantize.classical_limit_compare(test_h, psi0, times, ctx.hbar, cfg=cfg, params=ctx.params)
    baseline = base.distances[1]
    ctx.check("initial_distance", max(base.distances[0], test.distances[0]), 0.0)
    ctx.check("reference_within_2x_baseline", float(np.max(base.distances) / baseline), 2.0)
    ctx.check("test_exceeds_10x_baseline", float(test.distances[-1] / baseline), 10.0, mode="min")
    w = quantize.wigner_transform(psi0, hbar=ctx.hbar)
    ctx.check("wigner_marginal", quantize.wigner_marginal_error(psi0, w), 1e-6)
    ctx.check("wigner_imag_residue", w.meta["imag_residue"], 1e-10)
    _write_csv(ctx.path("distances.csv"), ["t", "reference", "test"],
               zip(times, base.distances, test.distances))
    gridio.save(w, ctx.path("wigner_initial.hgf"))


def _density_spec(spec, path, n):
    kind = _get(spec, "type", path, str, "gaussian")
    if kind == "gaussian":
        return Gaussian(_numbers(spec, "mean", path, 2 * n, [0.0] * 2 * n),
                        _numbers(spec, "var", path, 2 * n, [1.0] * 2 * n))
    if kind == "uniform":
        return UniformBox(_numbers(spec, "low", path, 2 * n), _numbers(spec, "high", path, 2 * n))
    if kind == "product":
        parts = _get(spec, "parts", path, list)
        return Product(tuple(_density_spec(p, f"{path}.parts[{i}]", n) for i, p in enumerate(parts)))
    raise ScenarioError(f"unknown density type {kind!r}", f"{path}.type")


def run_ensemble(ctx: Context):
    gen = ctx.obs("generator")
    dens = _density_spec(_get(ctx.spec, "density", "", dict), "density", ctx.n)
    if dens.size != 2 * ctx.n:
        raise ScenarioError(f"must cover {2 * ctx.n} coordinates", "density")
    count = _get(ctx.spec, "count", "", int, check=_positive)
    alphas = _numbers(ctx.spec, "alphas", "")
    cfg = _cfg(ctx, 1e-2)
    cloud = sample(dens, count, ctx.seed)
    rows = []
    worst_gap = worst_energy = 0.0
    a_obs = ctx.obs("observable")
    e0 = expectation_eulerian(cloud, gen, ctx.params)
    for alpha in alphas:
        lag = expectation_lagrangian(cloud, a_obs, gen, alpha, cfg, ctx.params)
        moved = push_forward(cloud, gen, alpha, cfg, ctx.params)
        eul = expectation_eulerian(moved, a_obs, ctx.params)
        worst_gap = max(worst_gap, abs(lag - eul))
        worst_energy = max(worst_energy, abs(expectation_eulerian(moved, gen, ctx.params) - e0))
        rows.append([alpha, lag, eul])
    ctx.check("lagrangian_equals_eulerian", worst_gap, 0.0)
    ctx.check("generator_mean_conserved", worst_energy, 1e-8)
    k = _get(ctx.spec, "event_axis", "", int, 1)
    p0, p1 = measure_invariance_check(dens, lambda q, p: q[k - 1] > 0, gen, alphas[-1], count,
                                      ctx.seed, cfg, ctx.params)
    ctx.check("measure_invariance", abs(p1 - p0), 0.0)
    _write_csv(ctx.path("expectations.csv"), ["alpha", "lagrangian", "eulerian"], rows)
    cloud.to_csv(ctx.path("initial_cloud.csv"))


RUNNERS = {
    "flow": run_flow, "liouville": run_liouville, "stationary": run_stationary,
    "spectrum": run_spectrum, "commutator": run_commutator, "expectation": run_expectation,
    "born": run_born, "quantize": run_quantize, "schrodinger": run_schrodinger,
    "wigner-compare": run_wigner_compare, "ensemble": run_ensemble,
}


# --------------------------------------------------------------------------
# driver

def bundled() -> dict:
    """Bundled scenario name -> path."""
    root = resources.files("hllk") / "scenarios"
    return {p.name[:-len(".scenario")]: p for p in sorted(root.iterdir(), key=lambda p: p.name)
            if p.name.endswith(".scenario")}


def load_scenario(source) -> tuple[str, dict]:
    path = Path(source)
    if not path.exists():
        table = bundled()
        if str(source) not in table:
            raise ScenarioError(f"no such file or bundled scenario: {source}", "file")
        path = table[str(source)]
    try:
        spec = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "file"
        raise ScenarioError(f"YAML syntax error: {getattr(exc, 'problem', exc)}", where) from None
    if not isinstance(spec, dict):
        raise ScenarioError("scenario must be a mapping", "file")
    return path.name.rsplit(".", 1)[0], spec


def build_context(spec: dict, out_dir: Path, seed=None, tol_scale=1.0) -> Context:
    kind = _get(spec, "kind", "", str)
    if kind not in RUNNERS:
        raise ScenarioError(f"unknown kind {kind!r}; expected one of {sorted(RUNNERS)}", "kind")
    n = _get(spec, "n", "", int, 1, lambda v: None if 1 <= v <= 3 else "must be 1, 2 or 3")
    hbar = _get(spec, "hbar", "", float, 1.0, _positive)
    seed = _get(spec, "seed", "", int, 0) if seed is None else int(seed)
    params = {}
    for key, value in _get(spec, "params", "", dict, {}).items():
        params[key] = _get({key: value}, key, "params", float)
    observables = {}
    for key, text in _get(spec, "observables", "", dict, {}).items():
        text = _get({key: text}, key, "observables", str)
        try:
            expr = parse(text, n)
        except ExprSyntaxError as exc:
            raise ScenarioError(str(exc), f"observables.{key}") from None
        missing = sorted(expr.params - set(params))
        if missing:
            raise ScenarioError(f"parameter {missing[0]!r} is not defined under params",
                                f"observables.{key}")
        observables[key] = expr
    return Context(spec, n, hbar, seed, params, observables, out_dir, tol_scale)


def run(source, out_dir=".", seed=None, tolerance_scale=1.0) -> int:
    """Execute one scenario; returns the process exit code."""
    out_dir = Path(out_dir)
    try:
        name, spec = load_scenario(source)
        out_dir.mkdir(parents=True, exist_ok=True)
        ctx = build_context(spec, out_dir, seed, tolerance_scale)
        RUNNERS[spec["kind"]](ctx)
    except ScenarioError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return 2
    except (HLLKError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    passed = all(c["pass"] for c in ctx.checks.values())
    manifest = {
        "scenario": name,
        "kind": spec["kind"],
        "description": spec.get("description", ""),
        "identities": spec.get("identities", [KIND_DOCS[spec["kind"]][1]]),
        "inputs": spec,
        "seed": ctx.seed,
        "hbar": ctx.hbar,
        "tolerance_scale": tolerance_scale,
        "versions": {"hllk": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "checks": ctx.checks,
        "outputs": sorted(ctx.outputs),
        "passed": passed,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    for key, c in sorted(ctx.checks.items()):
        print(f"{key}: {'pass' if c['pass'] else 'FAIL'} (value={c['value']!r})")
    return 0 if passed else 1


def list_scenarios() -> str:
    lines = []
    for name, path in bundled().items():
        spec = yaml.safe_load(path.read_text())
        ident = "; ".join(spec.get("identities", [KIND_DOCS[spec["kind"]][1]]))
        lines.append(f"{name:<28} {spec['kind']:<15} {ident}")
    return "\n".join(lines)


def describe(kind: str) -> str:
    if kind not in KIND_DOCS:
        raise ScenarioError(f"unknown kind; expected one of {sorted(KIND_DOCS)}", kind)
    summary, identity = KIND_DOCS[kind]
    return f"{kind}: {summary}\nchecks: {identity}"


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="hllk", description="Run phase-space scenarios.")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a scenario file or bundled scenario")
    p_run.add_argument("file")
    p_run.add_argument("--out-dir", default=".")
    p_run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p_run.add_argument("--tolerance-scale", type=float, default=1.0,
                       help="multiply every check tolerance")
    sub.add_parser("list", help="list bundled scenarios")
    p_desc = sub.add_parser("describe", help="describe an experiment kind")
    p_desc.add_argument("kind")
    args = parser.parse_args(argv)
    if args.command == "run":
        if not args.tolerance_scale > 0:
            print("invalid scenario: --tolerance-scale: must be positive", file=sys.stderr)
            return 2
        return run(args.file, args.out_dir, args.seed, args.tolerance_scale)
    if args.command == "list":
        print(list_scenarios())
        return 0
    try:
        print(describe(args.kind))
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
