import math

import numpy as np
import pytest

from mixlap.grids import Ball, GridFunction, constant_function, make_grid
from mixlap.measures import Measure
from mixlap.operators import (
    KernelWeights,
    OperatorError,
    ParamSet,
    VectorFieldSpec,
    apply_fractional,
    apply_local,
    assemble_kernel_weights,
    fractional_jvp,
    inverse_A,
    jacobian_A,
    kernel_constant,
    local_tangent_matrix,
    residual,
    v_map,
    vector_field_A,
)


def test_paramset_validation():
    with pytest.raises(OperatorError, match=r"s in \(0, 1\)"):
        ParamSet(n=2, s=1.2, p=2.0)
    with pytest.raises(OperatorError, match="p > 2 - 1/n"):
        ParamSet(n=2, s=0.5, p=1.4)
    with pytest.raises(OperatorError, match="nu_a"):
        ParamSet(n=2, s=0.5, p=2.0, nu_a=2.0, l_a=1.0)
    par = ParamSet(n=2, s=0.5, p=1.8)
    assert 0 < par.m < 1 - par.s
    assert par.a1bar < par.a2bar
    assert par.q0 == 1.0
    par3 = ParamSet(n=2, s=0.25, p=3.0)
    assert par3.a1bar == pytest.approx(0.375)
    assert par3.a2bar == pytest.approx(0.5)


def test_vector_field_examples():
    spec2 = VectorFieldSpec(p=2.0)
    z = np.array([0.3, -0.7])
    assert np.allclose(vector_field_A(z, spec2), z)
    spec3 = VectorFieldSpec(p=3.0)
    assert np.allclose(vector_field_A(np.array([2.0, 0.0]), spec3), [4.0, 0.0])
    assert np.allclose(vector_field_A(np.zeros(2), spec3), 0.0)
    with pytest.raises(OperatorError, match="degenerate"):
        vector_field_A(np.zeros(2), VectorFieldSpec(p=1.9))
    reg = VectorFieldSpec(p=1.9, variant="regularized", eps=0.1)
    assert np.all(np.isfinite(vector_field_A(np.zeros(2), reg)))


@pytest.mark.parametrize("p", [1.95, 2.5, 3.0])
def test_growth_bounds_sampled(p):
    rng = np.random.default_rng(0)
    z = rng.normal(size=(100_000, 2)) * np.exp(rng.uniform(-3, 3, size=(100_000, 1)))
    spec = VectorFieldSpec(p=p)
    a = vector_field_A(z, spec)
    zn = np.linalg.norm(z, axis=1)
    assert np.all(np.linalg.norm(a, axis=1) <= zn ** (p - 1) * (1 + 1e-12))


@pytest.mark.parametrize("p", [1.95, 2.5, 3.0])
def test_jacobian_consistency_and_ellipticity(p):
    rng = np.random.default_rng(1)
    spec = VectorFieldSpec(p=p)
    z = rng.normal(size=(50, 2))
    jac = jacobian_A(z, spec)
    eps = 1e-7
    for k in range(2):
        dz = np.zeros(2)
        dz[k] = eps
        fd = (vector_field_A(z + dz, spec) - vector_field_A(z - dz, spec)) / (2 * eps)
        assert np.max(np.abs(fd - jac[..., :, k])) < 1e-6
    xi = rng.normal(size=(50, 2))
    quad = np.einsum("ni,nij,nj->n", xi, jac, xi)
    zn = np.linalg.norm(z, axis=1)
    lower = min(1.0, p - 1.0) * zn ** (p - 2) * np.sum(xi * xi, axis=1)
    assert np.all(quad >= lower * (1 - 1e-10))


def test_vmap_and_monotonicity_equivalence():
    assert np.allclose(v_map(np.array([0.4, 0.1]), 2.0), [0.4, 0.1])
    assert np.allclose(v_map(np.array([1.0, 0.0]), 4.0), [1.0, 0.0])
    rng = np.random.default_rng(2)
    for p in (2.0, 2.5, 3.0):
        spec = VectorFieldSpec(p=p)
        z1 = rng.normal(size=(20_000, 2)) * np.exp(rng.uniform(-2, 2, (20_000, 1)))
        z2 = rng.normal(size=(20_000, 2)) * np.exp(rng.uniform(-2, 2, (20_000, 1)))
        mono = np.sum(
            (vector_field_A(z1, spec) - vector_field_A(z2, spec)) * (z1 - z2), axis=1
        )
        vdiff = np.sum((v_map(z1, p) - v_map(z2, p)) ** 2, axis=1)
        ratio = mono / vdiff
        assert np.all(ratio > 0)
        assert np.max(ratio) / np.min(ratio) < 5.0


def test_inverse_A_roundtrip():
    spec = VectorFieldSpec(p=3.0)
    assert np.allclose(inverse_A(np.array([4.0, 0.0]), spec), [2.0, 0.0])
    assert np.allclose(inverse_A(np.array([0.3, -0.1]), VectorFieldSpec(p=2.0)),
                       [0.3, -0.1])
    rng = np.random.default_rng(3)
    w = rng.normal(size=(10_000, 2))
    z = inverse_A(w, spec)
    back = vector_field_A(z, spec)
    assert np.max(np.abs(back - w) / np.maximum(np.abs(w), 1e-12)) < 1e-12
    with pytest.raises(OperatorError, match="model"):
        inverse_A(w, VectorFieldSpec(p=3.0, variant="regularized", eps=0.1))


@pytest.fixture(scope="module")
def setup_1d():
    par = ParamSet(n=1, s=0.25, p=2.0)
    grid = make_grid(1, 2.0, 256, interior="inset", band_cells=32)
    weights = assemble_kernel_weights(grid, par)
    return par, grid, weights


def test_kernel_weight_1d_closed_form(setup_1d):
    par, grid, weights = setup_1d
    sp_ = par.s * par.p
    ck = kernel_constant(1, par.s)
    h = grid.h
    for k in (1, 2, 7):
        d1, d2 = (k - 0.5) * h, (k + 0.5) * h
        exact = ck * (d1 ** (-sp_) - d2 ** (-sp_)) / sp_
        assert weights.weight(10, 10 + k) == pytest.approx(exact, rel=1e-10)
    assert weights.weight(10, 10) == 0.0


def test_kernel_weights_positive_and_symmetric(setup_1d):
    par, grid, weights = setup_1d
    st = weights.stencil
    mid = st.shape[0] // 2
    assert np.all(np.delete(st[:, 0], mid) > 0)
    for i, j in [(3, 9), (40, 8), (100, 101)]:
        assert weights.weight(i, j) == pytest.approx(weights.weight(j, i), rel=0)


def test_bounded_kernel_variant_bounds():
    par = ParamSet(n=2, s=0.5, p=2.0, nu_k=0.5, l_k=2.0)
    grid = make_grid(2, 1.0, 24, interior="ball", band_cells=2)
    model = assemble_kernel_weights(grid, par, "model")
    bounded = assemble_kernel_weights(grid, par, "bounded")
    rng = np.random.default_rng(4)
    for _ in range(200):
        i = tuple(rng.integers(0, 24, 2))
        j = tuple(rng.integers(0, 24, 2))
        if i == j:
            continue
        wm = model.weight(i, j)
        wb = bounded.weight(i, j)
        assert par.nu_k * wm - 1e-15 <= wb <= par.l_k * wm + 1e-15
        ji = bounded.weight(j, i)
        assert wb == pytest.approx(ji, rel=0)


def test_memory_guard():
    par = ParamSet(n=2, s=0.5, p=2.0)
    grid = make_grid(2, 1.0, 160, interior="ball", band_cells=4)
    with pytest.raises(OperatorError, match="dense_ok"):
        assemble_kernel_weights(grid, par)
    assemble_kernel_weights(grid, par, dense_ok=True)


def test_fractional_apply_examples(setup_1d):
    par, grid, weights = setup_1d
    u = constant_function(grid, 5.0)
    assert np.max(np.abs(apply_fractional(u, weights, 2.0))) < 1e-12
    rng = np.random.default_rng(5)
    vals = rng.normal(size=grid.shape)
    f = GridFunction(grid, vals, far_field=0.2)
    neg = GridFunction(grid, -vals, far_field=-0.2)
    p = 2.5
    a = apply_fractional(f, weights, p)
    b = apply_fractional(neg, weights, p)
    assert np.max(np.abs(a + b)) < 1e-10


def test_fractional_symbol_1d():
    s = 0.25
    par = ParamSet(n=1, s=s, p=2.0)
    grid = make_grid(1, 2 * math.pi, 512, interior="inset", band_cells=180)
    weights = assemble_kernel_weights(grid, par)
    k = 6.0
    x = grid.coords()[:, 0]
    u = GridFunction(grid, np.sin(k * x), far_field=0.0)
    out = apply_fractional(u, weights, 2.0)
    target = abs(k) ** (2 * s) * np.sin(k * x)
    sel = grid.interior & (np.abs(np.sin(k * x)) > 0.3)
    rel = np.abs(out[sel] - target[sel]) / abs(k) ** (2 * s)
    assert np.max(rel) < 0.05


def test_fractional_oddness_about_constant():
    par = ParamSet(n=2, s=0.5, p=3.0)
    grid = make_grid(2, 1.0, 24, interior="ball", band_cells=2)
    weights = assemble_kernel_weights(grid, par)
    rng = np.random.default_rng(6)
    c = 0.8
    u = GridFunction(grid, rng.normal(size=grid.shape), far_field=0.3)
    refl = GridFunction(grid, 2 * c - u.values, far_field=2 * c - 0.3)
    a = apply_fractional(u, weights, 3.0)
    b = apply_fractional(refl, weights, 3.0)
    assert np.max(np.abs(a + b)) < 1e-10


def test_fractional_monotone(setup_1d):
    par, grid, weights = setup_1d
    rng = np.random.default_rng(7)
    base = rng.normal(size=grid.shape)
    pert = np.where(grid.interior, rng.normal(size=grid.shape), 0.0)
    u = GridFunction(grid, base + pert, far_field=0.1)
    w = GridFunction(grid, base, far_field=0.1)
    for p in (2.0, 2.5, 3.0):
        du = apply_fractional(u, weights, p) - apply_fractional(w, weights, p)
        pairing = float(np.sum(du * (u.values - w.values)))
        assert pairing >= -1e-10


def test_fractional_jvp_consistency(setup_1d):
    par, grid, weights = setup_1d
    rng = np.random.default_rng(8)
    u = GridFunction(grid, rng.normal(size=grid.shape), far_field=0.0)
    w = rng.normal(size=grid.size)
    p = 2.5
    eps = 1e-6
    up = GridFunction(grid, u.values + eps * w.reshape(grid.shape), far_field=0.0)
    um = GridFunction(grid, u.values - eps * w.reshape(grid.shape), far_field=0.0)
    fd = (apply_fractional(up, weights, p) - apply_fractional(um, weights, p)).reshape(
        -1
    ) / (2 * eps)
    jv = fractional_jvp(u, w, weights, p, delta=0.0)
    assert np.max(np.abs(fd - jv)) < 1e-5 * max(1.0, np.max(np.abs(fd)))


def test_local_apply_examples():
    grid = make_grid(2, 1.0, 48, interior="ball", band_cells=3)
    x = grid.coords()
    aff = GridFunction(grid, 0.3 + 1.2 * x[..., 0] - 0.5 * x[..., 1], far_field=None)
    for p in (2.0, 2.5, 3.0):
        out = apply_local(aff, VectorFieldSpec(p=p))
        assert np.max(np.abs(out[1:-1, 1:-1])) < 1e-11
    quad = GridFunction(grid, np.sum(x**2, axis=-1), far_field=None)
    lap = apply_local(quad, VectorFieldSpec(p=2.0))
    interior = grid.interior
    assert np.max(np.abs(lap[interior] + 4.0)) < 1e-9


def test_local_apply_max_principle_sign():
    # -div A(Du) >= 0 at a strict interior max, for random smooth bumps
    grid = make_grid(2, 1.0, 40, interior="ball", band_cells=3)
    x = grid.coords()
    rng = np.random.default_rng(9)
    for p in (2.0, 3.0):
        for _ in range(20):
            c = rng.uniform(-0.3, 0.3, 2)
            w = rng.uniform(0.4, 0.8)
            vals = np.exp(-np.sum((x - c) ** 2, axis=-1) / w**2)
            u = GridFunction(grid, vals, far_field=0.0)
            out = apply_local(u, VectorFieldSpec(p=p))
            imax = np.unravel_index(
                np.argmax(np.where(grid.interior, vals, -np.inf)), grid.shape
            )
            assert out[imax] >= -1e-12


def test_local_tangent_matches_finite_difference():
    grid = make_grid(2, 1.0, 14, interior="inset", band_cells=2)
    rng = np.random.default_rng(10)
    vals = rng.normal(size=grid.shape)
    u = GridFunction(grid, vals, far_field=None)
    ring = np.zeros(grid.shape, bool)
    ring[0, :] = ring[-1, :] = ring[:, 0] = ring[:, -1] = True
    for p in (2.0, 2.5):
        spec = VectorFieldSpec(p=p)
        jac = local_tangent_matrix(u, spec)
        w = rng.normal(size=grid.shape)
        eps = 1e-7
        fd = (
            apply_local(GridFunction(grid, vals + eps * w, None), spec)
            - apply_local(GridFunction(grid, vals - eps * w, None), spec)
        ) / (2 * eps)
        jw = (jac @ w.reshape(-1)).reshape(grid.shape)
        scale = max(1.0, float(np.max(np.abs(jw))))
        assert np.max(np.abs(fd - jw)[~ring]) < 1e-6 * scale


def test_local_oddness_about_constant():
    grid = make_grid(2, 1.0, 32, interior="ball", band_cells=2)
    rng = np.random.default_rng(11)
    u = GridFunction(grid, rng.normal(size=grid.shape), far_field=None)
    c = -0.4
    refl = GridFunction(grid, 2 * c - u.values, far_field=None)
    for p in (2.0, 3.0):
        a = apply_local(u, VectorFieldSpec(p=p))
        b = apply_local(refl, VectorFieldSpec(p=p))
        assert np.max(np.abs(a + b)) < 1e-10


def test_residual_constants_and_linearity():
    par = ParamSet(n=2, s=0.5, p=2.0)
    grid = make_grid(2, 1.0, 32, interior="ball", band_cells=2)
    weights = assemble_kernel_weights(grid, par)
    spec = VectorFieldSpec(p=2.0)
    c = constant_function(grid, 1.5)
    out = residual(c, None, c, spec, weights)
    assert np.max(np.abs(out)) < 1e-12
    # linearity at p=2 on the unknown set
    rng = np.random.default_rng(12)
    g = constant_function(grid, 0.0)

    def mk(seed):
        vals = np.where(grid.interior, np.random.default_rng(seed).normal(size=grid.shape), 0.0)
        return GridFunction(grid, vals, far_field=0.0)

    u1, u2 = mk(1), mk(2)
    u12 = GridFunction(grid, u1.values + u2.values, far_field=0.0)
    r1 = residual(u1, None, g, spec, weights)
    r2 = residual(u2, None, g, spec, weights)
    r12 = residual(u12, None, g, spec, weights)
    assert np.max(np.abs(r12 - r1 - r2)) < 1e-9


def test_residual_manufactured_zero():
    par = ParamSet(n=2, s=0.5, p=2.5)
    grid = make_grid(2, 1.0, 32, interior="ball", band_cells=2)
    weights = assemble_kernel_weights(grid, par)
    spec = VectorFieldSpec(p=2.5)
    x = grid.coords()
    ustar = GridFunction(grid, np.exp(-3 * np.sum(x**2, axis=-1)), far_field=0.0)
    f = apply_local(ustar, spec) + apply_fractional(ustar, weights, 2.5)
    out = residual(ustar, f, ustar, spec, weights)
    assert np.max(np.abs(out)) < 1e-12


def test_residual_dirichlet_violation():
    par = ParamSet(n=2, s=0.5, p=2.0)
    grid = make_grid(2, 1.0, 24, interior="ball", band_cells=2)
    weights = assemble_kernel_weights(grid, par)
    g = constant_function(grid, 0.0)
    bad = GridFunction(grid, np.ones(grid.shape), far_field=0.0)
    with pytest.raises(OperatorError, match="Dirichlet complement violated"):
        residual(bad, None, g, VectorFieldSpec(p=2.0), weights)


def test_fractional_2d_symbol_refines():
    # plane-wave response approaches |k|^{2s} under h -> h/2 (2d apply);
    # mid-grid nodes keep the scene-truncation floor below the quadrature error
    s, k = 0.25, 6.0
    par = ParamSet(n=2, s=s, p=2.0)
    errs = []
    for nodes in (64, 128):
        grid = make_grid(2, math.pi, nodes, interior="inset", band_cells=nodes // 4)
        weights = assemble_kernel_weights(grid, par, dense_ok=True)
        x = grid.coords()
        u = GridFunction(grid, np.sin(k * x[..., 0]), far_field=0.0)
        out = apply_fractional(u, weights, 2.0)
        target = abs(k) ** (2 * s) * np.sin(k * x[..., 0])
        sel = grid.interior & (np.max(np.abs(x), axis=-1) <= math.pi / 4)
        errs.append(np.max(np.abs(out[sel] - target[sel])) / abs(k) ** (2 * s))
    assert errs[0] < 0.01
    assert errs[0] / errs[1] > 1.3
