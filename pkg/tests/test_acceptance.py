"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines.  Tolerances are pinned here; the runtime limits are asserted too.
"""

import json
import math
import time

import numpy as np
import pytest

from mixlap.experiments import EXPERIMENTS, run_bracket_audit
from mixlap.grids import GridFunction, gradient, make_grid
from mixlap.measures import (
    Measure,
    dirac,
    riesz_potential,
    wolff_potential,
)
from mixlap.mms import convergence_pair
from mixlap.operators import (
    ParamSet,
    VectorFieldSpec,
    apply_fractional,
    apply_local,
    assemble_kernel_weights,
    local_tangent_matrix,
    residual,
    v_map,
    vector_field_A,
)
from mixlap.solver import SolveConfig, solve_dirichlet


def _report(num, ok, detail):
    print(f"[criterion {num:>2}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


def test_criterion_01_potential_oracles():
    t0 = time.monotonic()
    mu = dirac((0.0, 0.0), 1.0)
    r1 = riesz_potential(mu, (0.1, 0.0), 1.0)
    ok1 = abs(r1 - 9.0) <= 1e-10 * 9.0
    w1 = wolff_potential(mu, (0.1, 0.0), 1.0, beta=1.0, p=2.0)
    ok2 = abs(w1 - math.log(10.0)) <= 1e-10 * math.log(10.0)
    grid = make_grid(2, 1.0, 48, interior="ball", band_cells=3)
    c = 0.8
    uni = Measure(density=GridFunction(grid, np.full(grid.shape, c), far_field=c))
    r2 = riesz_potential(uni, (0.0, 0.0), 0.9)
    ok3 = abs(r2 - c * math.pi * 0.9) <= 1e-6 * c * math.pi * 0.9
    w2 = wolff_potential(uni, (0.0, 0.0), 0.9, beta=1.0, p=2.0)
    ok4 = abs(w2 - c * math.pi * 0.81 / 2) <= 1e-6 * c * math.pi * 0.81 / 2
    dt = time.monotonic() - t0
    _report(
        1,
        ok1 and ok2 and ok3 and ok4 and dt < 1.0,
        f"riesz dirac err {abs(r1-9)/9:.1e}, wolff err "
        f"{abs(w1-math.log(10))/math.log(10):.1e}, uniform errs "
        f"{abs(r2-c*math.pi*0.9)/(c*math.pi*0.9):.1e}/"
        f"{abs(w2-c*math.pi*0.405)/(c*math.pi*0.405):.1e}, {dt:.2f}s < 1s",
    )


def test_criterion_02_linear_anchor():
    t0 = time.monotonic()
    # (a) nonlinear solver vs direct dense linear solve on a 96^2 grid
    par = ParamSet(n=2, s=0.5, p=2.0)
    grid = make_grid(2, 1.2, 96, interior="ball", interior_radius=0.95)
    weights = assemble_kernel_weights(grid, par)
    x = grid.coords()
    g = GridFunction(
        grid, 0.2 + 0.5 * x[..., 0] + 0.3 * np.sin(2 * x[..., 1]), far_field=0.2
    )
    dens = GridFunction(grid, np.exp(-4 * np.sum(x**2, axis=-1)), far_field=0.0)
    mu = Measure(density=dens)
    spec = VectorFieldSpec(p=2.0)
    u, _ = solve_dirichlet(mu, g, par, spec, weights, SolveConfig(tol_rel=1e-12))
    idx = np.flatnonzero(grid.interior.reshape(-1))
    nx, ny = grid.shape
    ix = np.repeat(np.arange(nx), ny)
    iy = np.tile(np.arange(ny), nx)
    rows = weights.stencil[
        ix[idx][:, None] - ix[None, :] + nx - 1,
        iy[idx][:, None] - iy[None, :] + ny - 1,
    ]
    jloc = local_tangent_matrix(GridFunction(grid, np.zeros(grid.shape)), spec)
    a_full = jloc.toarray()[idx] - rows
    a_full[np.arange(idx.size), idx] += weights.rowsums()[idx] + weights.farmass[idx]
    gvals = g.values.reshape(-1)
    b = dens.values.reshape(-1)[idx] + weights.farmass[idx] * g.far()
    fixed = np.ones(grid.size, dtype=bool)
    fixed[idx] = False
    b = b - a_full[:, fixed] @ gvals[fixed]
    sol = np.linalg.solve(a_full[:, idx], b)
    rel = np.linalg.norm(u.values.reshape(-1)[idx] - sol) / np.linalg.norm(sol)
    # (b) mixed operator на sin(kx), 1d, 512 nodes, |k|^{2s} + |k|^2 symbol
    s = 0.5
    par1 = ParamSet(n=1, s=s, p=2.0)
    grid1 = make_grid(1, 2 * math.pi, 512, interior="inset", band_cells=180)
    w1 = assemble_kernel_weights(grid1, par1)
    k = 16.0
    xx = grid1.coords()[:, 0]
    usin = GridFunction(grid1, np.sin(k * xx), far_field=0.0)
    out = apply_fractional(usin, w1, 2.0) + apply_local(usin, VectorFieldSpec(p=2.0))
    symbol = abs(k) ** (2 * s) + k**2
    rel_sym = np.max(
        np.abs(out[grid1.interior] - symbol * np.sin(k * xx)[grid1.interior])
    ) / symbol
    dt = time.monotonic() - t0
    _report(
        2,
        rel < 1e-8 and rel_sym < 0.05 and dt < 120.0,
        f"direct-solve rel {rel:.2e} < 1e-8, symbol rel {rel_sym:.3f} < 0.05, "
        f"{dt:.0f}s < 120s",
    )


def test_criterion_03_manufactured_solutions():
    t0 = time.monotonic()
    details = []
    ok = True
    for p, variant in ((1.95, "regularized"), (2.5, "model"), (3.0, "model")):
        par2 = ParamSet(n=2, s=0.5, p=p)
        spec = (
            VectorFieldSpec(p=p)
            if variant == "model"
            else VectorFieldSpec(p=p, variant="regularized", eps=0.25)
        )
        # same-grid manufactured residual
        grid = make_grid(2, 1.0, 32, interior="ball", band_cells=2)
        weights = assemble_kernel_weights(grid, par2)
        xy = grid.coords()
        ustar = GridFunction(
            grid, np.exp(-3 * np.sum(xy**2, axis=-1)), far_field=0.0
        )
        f = apply_local(ustar, spec) + apply_fractional(ustar, weights, p)
        res = residual(ustar, f, ustar, spec, weights)
        res_ok = np.max(np.abs(res)) <= 1e-12
        # reference-data recovery must improve by >= 1.5 under h -> h/2
        par1 = ParamSet(n=1, s=0.3, p=p)
        coarse, fine, ratio = convergence_pair(par1, spec, 256)
        ok_p = res_ok and ratio >= 1.5
        ok = ok and ok_p
        details.append(f"p={p}: residual {np.max(np.abs(res)):.1e}, ratio {ratio:.2f}")
    dt = time.monotonic() - t0
    _report(3, ok and dt < 600.0, "; ".join(details) + f"; {dt:.0f}s < 600s")


def test_criterion_04_monotonicity_suite():
    t0 = time.monotonic()
    rng = np.random.default_rng(2026)
    constants = []
    for p in (2.0, 2.5, 3.0):
        spec = VectorFieldSpec(p=p)
        z1 = rng.normal(size=(100_000, 2)) * np.exp(rng.uniform(-2, 2, (100_000, 1)))
        z2 = rng.normal(size=(100_000, 2)) * np.exp(rng.uniform(-2, 2, (100_000, 1)))
        mono = np.sum(
            (vector_field_A(z1, spec) - vector_field_A(z2, spec)) * (z1 - z2), axis=1
        )
        vdiff = np.sum((v_map(z1, p) - v_map(z2, p)) ** 2, axis=1)
        ratio = mono / vdiff
        assert np.all(ratio > 0)
        constants.extend([float(np.min(ratio)), float(np.max(ratio))])
    spread = max(constants) / min(constants)
    dt = time.monotonic() - t0
    _report(
        4,
        spread < 5.0 and dt < 5.0,
        f"two-sided constants within [{min(constants):.3f}, {max(constants):.3f}], "
        f"max/min {spread:.2f} < 5, {dt:.1f}s < 5s",
    )


def test_criterion_05_dirac_gradient_exponent():
    t0 = time.monotonic()
    details = []
    ok = True
    for p in (2.0, 3.0):
        par = ParamSet(n=2, s=0.5, p=p)
        rep = EXPERIMENTS["dirac-gradient"](par, None, None, seed=0)
        pred = rep.extras["predicted_exponent"]
        expo_ok = abs(rep.fitted_exponent - pred) <= 0.1 * abs(pred)
        spread = max(rep.ratios) / min(rep.ratios)
        ok = ok and rep.verdict and expo_ok and spread < 10.0
        details.append(
            f"p={p}: exponent {rep.fitted_exponent:.3f} (target {pred}), "
            f"ratio max/min {spread:.2f}"
        )
        # closed-form potential along the probe radii
        big_r = 0.6
        for d in (0.1, 0.05):
            got = riesz_potential(dirac((0.0, 0.0), 1.0), (d, 0.0), big_r)
            exact = 1.0 / d - 1.0 / big_r
            ok = ok and abs(got - exact) <= 1e-10 * exact
    dt = time.monotonic() - t0
    _report(5, ok and dt < 1200.0, "; ".join(details) + f"; {dt:.0f}s < 1200s")


def test_criterion_06_comparison_scaling():
    t0 = time.monotonic()
    rep2 = EXPERIMENTS["comparison-measure"](ParamSet(n=2, s=0.5, p=2.0), None, None, 0)
    rep3 = EXPERIMENTS["comparison-measure"](ParamSet(n=2, s=0.5, p=3.0), None, None, 0)
    ok2 = rep2.verdict and abs(rep2.fitted_exponent - 1.0) <= 0.05
    ok3 = rep3.verdict and abs(rep3.fitted_exponent - 0.5) <= 0.1
    dt = time.monotonic() - t0
    _report(
        6,
        ok2 and ok3 and dt < 900.0,
        f"p=2 exponent {rep2.fitted_exponent:.4f} (1 +- 5%), "
        f"p=3 exponent {rep3.fitted_exponent:.4f} (0.5 +- 20%), {dt:.0f}s < 900s",
    )


def test_criterion_07_mixed_local_comparison():
    t0 = time.monotonic()
    rep = EXPERIMENTS["comparison-mixed-local"](
        ParamSet(n=1, s=0.5, p=2.0), None, None, seed=0
    )
    spread = max(rep.ratios) / min(rep.ratios)
    shift = max(rep.extras["refinement_shift"])
    dt = time.monotonic() - t0
    _report(
        7,
        rep.verdict and spread < 10.0 and shift <= 0.2 and dt < 900.0,
        f"ratio max/min {spread:.2f} < 10, refinement shift {shift:.3f} <= 0.2, "
        f"{dt:.0f}s < 900s",
    )


def test_criterion_08_homogeneous_excess_decay():
    t0 = time.monotonic()
    rep2 = EXPERIMENTS["excess-decay-homogeneous"](
        ParamSet(n=2, s=0.25, p=2.0), None, {"r": 1.1}, seed=0
    )
    rep3 = EXPERIMENTS["excess-decay-homogeneous"](
        ParamSet(n=2, s=0.1, p=3.0), None, {"r": 1.1}, seed=0
    )
    aff = EXPERIMENTS["excess-decay-homogeneous"](
        ParamSet(n=2, s=0.25, p=2.0),
        None,
        {
            "nodes": 96,
            "r": 1.1,
            "levels": 4,
            "exterior": {"kind": "affine", "a": [0.8, -0.3], "b": 0.2},
        },
        seed=0,
    )
    ok = (
        rep2.verdict
        and rep2.fitted_exponent >= 0.5
        and rep3.verdict
        and rep3.fitted_exponent >= 0.1
        and aff.verdict
        and aff.extras["degenerate"]
    )
    dt = time.monotonic() - t0
    _report(
        8,
        ok and dt < 900.0,
        f"p=2 exponent {rep2.fitted_exponent:.3f} >= 0.5, "
        f"p=3 exponent {rep3.fitted_exponent:.3f} >= 0.1, affine scene "
        f"degenerate={aff.extras['degenerate']}, {dt:.0f}s < 900s",
    )


def test_criterion_09_tails_and_energy():
    t0 = time.monotonic()
    par = ParamSet(n=2, s=0.5, p=2.0)
    tails = EXPERIMENTS["tail-decay"](par, None, None, seed=0)
    spread_v = max(tails.ratios) / min(tails.ratios)
    ru = tails.extras["measure_scene"]["ratios"]
    spread_u = max(ru) / min(ru)
    energy = EXPERIMENTS["energy-inequalities"](par, None, None, seed=0)
    fams = energy.extras["families"]
    worst_energy = max(max(v) / min(v) for v in fams.values())
    ok = (
        tails.verdict
        and spread_v < 10.0
        and spread_u < 10.0
        and energy.verdict
        and worst_energy < 5.0
        and energy.extras["alpha_fit"] >= 0.05
    )
    dt = time.monotonic() - t0
    _report(
        9,
        ok and dt < 900.0,
        f"tail spreads {spread_v:.2f}/{spread_u:.2f} < 10, energy stability "
        f"{worst_energy:.2f} < 5, alpha {energy.extras['alpha_fit']:.2f}, "
        f"{dt:.0f}s < 900s",
    )


def test_criterion_10_determinism_and_audit():
    t0 = time.monotonic()
    opts = {"nodes": 48}
    par = ParamSet(n=2, s=0.5, p=2.0)
    a = EXPERIMENTS["tail-decay"](par, None, opts, seed=7)
    b = EXPERIMENTS["tail-decay"](par, None, opts, seed=7)
    identical = json.dumps(a.to_dict(), sort_keys=True) == json.dumps(
        b.to_dict(), sort_keys=True
    )
    c = EXPERIMENTS["comparison-measure"](par, None, {"nodes": 40}, seed=1)
    d = EXPERIMENTS["comparison-measure"](par, None, {"nodes": 40}, seed=1)
    identical = identical and json.dumps(c.to_dict(), sort_keys=True) == json.dumps(
        d.to_dict(), sort_keys=True
    )
    worst = 0.0
    for p in (2.0, 2.5, 1.95):
        out = run_bracket_audit(ParamSet(n=2, s=0.5, p=p), None, {"nodes": 32}, 0)
        worst = max(worst, out["max_discrepancy"])
    dt = time.monotonic() - t0
    _report(
        10,
        identical and worst < 1e-10,
        f"reruns bit-identical={identical}, audit discrepancy {worst:.2e} < 1e-10, "
        f"{dt:.0f}s",
    )
