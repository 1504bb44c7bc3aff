import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixlap.grids import Ball, GridFunction, make_grid
from mixlap.measures import (
    Measure,
    MeasureError,
    dirac,
    mollify_measure,
    potential_profile,
    riesz_potential,
    tail,
    tv_on_ball,
    wolff_potential,
)


@pytest.fixture(scope="module")
def grid2():
    return make_grid(2, 1.0, 48, interior="ball", band_cells=3)


def test_tv_single_atom():
    mu = dirac((0.2, 0.1), -2.0)
    assert tv_on_ball(mu, Ball((0.0, 0.0), 0.5)) == pytest.approx(2.0)
    assert tv_on_ball(mu, Ball((0.0, 0.0), 0.1)) == 0.0
    assert tv_on_ball(Measure(), Ball((0.0, 0.0), 0.5)) == 0.0


def test_tv_uniform_density(grid2):
    c = 1.7
    dens = GridFunction(grid2, np.full(grid2.shape, c), far_field=c)
    mu = Measure(density=dens)
    for rho in (0.3, 0.8, 2.5):
        assert tv_on_ball(mu, Ball((0.0, 0.0), rho)) == pytest.approx(
            c * math.pi * rho**2, rel=1e-12
        )


def test_riesz_dirac_closed_form():
    mu = dirac((0.0, 0.0), 1.0)
    val = riesz_potential(mu, (0.1, 0.0), 1.0)
    assert val == pytest.approx(9.0, rel=1e-12)
    assert riesz_potential(mu, (0.0, 0.0), 1.0) == math.inf
    assert riesz_potential(Measure(), (0.1, 0.0), 1.0) == 0.0
    with pytest.raises(MeasureError, match="R > 0"):
        riesz_potential(mu, (0.1, 0.0), -1.0)


def test_riesz_uniform_density(grid2):
    c = 0.8
    mu = Measure(density=GridFunction(grid2, np.full(grid2.shape, c), far_field=c))
    big_r = 0.9
    assert riesz_potential(mu, (0.0, 0.0), big_r) == pytest.approx(
        c * math.pi * big_r, rel=1e-6
    )


def test_wolff_dirac_log_form():
    mu = dirac((0.0, 0.0), 1.0)
    d, big_r = 0.1, 1.0
    val = wolff_potential(mu, (d, 0.0), big_r, beta=1.0, p=2.0)
    assert val == pytest.approx(math.log(big_r / d), rel=1e-12)
    assert wolff_potential(Measure(), (d, 0.0), big_r, 1.0, 2.0) == 0.0
    with pytest.raises(MeasureError, match="p > 1"):
        wolff_potential(mu, (d, 0.0), big_r, 1.0, 1.0)


def test_wolff_uniform_density(grid2):
    c = 0.8
    mu = Measure(density=GridFunction(grid2, np.full(grid2.shape, c), far_field=c))
    big_r = 0.9
    assert wolff_potential(mu, (0.0, 0.0), big_r, 1.0, 2.0) == pytest.approx(
        c * math.pi * big_r**2 / 2.0, rel=1e-6
    )


def test_potential_monotone_in_radius():
    rng = np.random.default_rng(0)
    atoms = tuple(
        (tuple(rng.uniform(-0.4, 0.4, 2)), float(rng.uniform(0.1, 1.0)))
        for _ in range(6)
    )
    mu = Measure(atoms=atoms)
    prof_r = potential_profile(mu, (0.05, 0.0), np.linspace(0.1, 1.0, 12), "riesz")
    assert np.all(np.diff(prof_r.values) >= -1e-14)
    prof_w = potential_profile(
        mu, (0.05, 0.0), np.linspace(0.1, 1.0, 12), "wolff", beta=0.4, p=2.5
    )
    assert np.all(np.diff(prof_w.values) >= -1e-14)


def test_potential_mass_scaling():
    rng = np.random.default_rng(1)
    atoms = tuple(
        (tuple(rng.uniform(-0.4, 0.4, 2)), float(rng.uniform(0.1, 1.0)))
        for _ in range(5)
    )
    mu = Measure(atoms=atoms)
    x0, big_r, t = (0.03, 0.02), 1.0, 3.7
    assert riesz_potential(mu.scaled(t), x0, big_r) == pytest.approx(
        t * riesz_potential(mu, x0, big_r), rel=1e-12
    )
    p, beta = 3.0, 0.5
    assert wolff_potential(mu.scaled(t), x0, big_r, beta, p) == pytest.approx(
        t ** (1.0 / (p - 1.0)) * wolff_potential(mu, x0, big_r, beta, p), rel=1e-12
    )


def test_potential_additivity_nonnegative():
    a = Measure(atoms=(((0.3, 0.0), 0.8),))
    b = Measure(atoms=(((-0.2, 0.1), 0.5),))
    both = Measure(atoms=a.atoms + b.atoms)
    x0, big_r = (0.01, 0.0), 1.0
    assert riesz_potential(both, x0, big_r) == pytest.approx(
        riesz_potential(a, x0, big_r) + riesz_potential(b, x0, big_r), rel=1e-12
    )
    # subadditive for p >= 2 (concave (.)^{1/(p-1)} of an additive mass)
    p, beta = 2.5, 0.6
    assert wolff_potential(both, x0, big_r, beta, p) <= (
        wolff_potential(a, x0, big_r, beta, p)
        + wolff_potential(b, x0, big_r, beta, p)
    ) * (1 + 1e-12)


@pytest.mark.parametrize("p", [2.0, 2.5, 3.0])
def test_riesz_below_wolff_relation(p):
    # [I_1(R)]^{1/(p-1)} <= C W_{1/p,p}(2R): bounded fitted C across 100
    # random atomic measures (atoms kept inside B_{R/2} of the probe)
    rng = np.random.default_rng(42)
    big_r = 1.0
    cs = []
    for _ in range(100):
        k = int(rng.integers(1, 5))
        atoms = tuple(
            (tuple(rng.uniform(-0.35, 0.35, 2)), float(rng.uniform(0.1, 1.0)))
            for _ in range(k)
        )
        mu = Measure(atoms=atoms)
        x0 = (0.0, 0.0)
        lhs = riesz_potential(mu, x0, big_r) ** (1.0 / (p - 1.0))
        rhs = wolff_potential(mu, x0, 2.0 * big_r, beta=1.0 / p, p=p)
        cs.append(lhs / rhs)
    assert max(cs) / min(cs) < 10.0


def test_tail_examples(grid2):
    k = 2.3
    f = GridFunction(grid2, np.full(grid2.shape, k), far_field=k)
    zero = GridFunction(grid2, f.values - k, far_field=0.0)
    assert tail(zero, (0.0, 0.0), 0.3, 2.0, 0.5) == 0.0
    with pytest.raises(MeasureError):
        tail(f, (0.0, 0.0), -0.1, 2.0, 0.5)


@settings(deadline=None, max_examples=15)
@given(st.floats(0.1, 10.0), st.floats(1.5, 3.5))
def test_tail_homogeneity(lam, p):
    g = make_grid(2, 1.0, 24, interior="ball", band_cells=2)
    rng = np.random.default_rng(4)
    f = GridFunction(g, rng.normal(size=g.shape), far_field=0.4)
    a = tail(GridFunction(g, lam * f.values, far_field=lam * 0.4), (0.0, 0.0), 0.3, p, 0.5)
    b = lam * tail(f, (0.0, 0.0), 0.3, p, 0.5)
    assert a == pytest.approx(b, rel=1e-10)


def test_tail_annulus_vs_quadrature_oracle():
    # indicator of 2r<|x|<3r in 1d, p=2, s=0.5, against adaptive quadrature
    from scipy.integrate import quad

    r, p, s = 0.25, 2.0, 0.5
    g = make_grid(1, 1.0, 4096, interior="inset", band_cells=16)
    x = g.coords()[:, 0]
    vals = ((np.abs(x) > 2 * r) & (np.abs(x) < 3 * r)).astype(float)
    f = GridFunction(g, vals, far_field=0.0)
    got = tail(f, (0.0,), r, p, s)

    def integrand(t):
        return 1.0 / abs(t) ** (1 + s * p)

    per_side, _ = quad(integrand, 2 * r, 3 * r, limit=200)
    oracle = (r**p * 2.0 * per_side) ** (1.0 / (p - 1.0))
    assert got == pytest.approx(oracle, rel=0.01)


def test_tail_finite_for_constant_farfield(grid2):
    f = GridFunction(grid2, np.ones(grid2.shape), far_field=1.0)
    v = tail(f, (0.0, 0.0), 0.4, 2.5, 0.6)
    assert math.isfinite(v) and v > 0
    with pytest.raises(MeasureError, match="far_field"):
        tail(
            GridFunction(grid2, f.values, None),
            (0.0, 0.0),
            grid2.ext_radius + 0.1,
            2.0,
            0.5,
        )


def test_mollify_mass_conservation(grid2):
    mu = Measure(atoms=(((0.2, 0.1), 1.3), ((-0.3, 0.0), -0.4)))
    delta = 4 * grid2.h
    sm = mollify_measure(mu, delta, grid2)
    whole = Ball((0.0, 0.0), 3.0)
    assert tv_on_ball(sm, whole) == pytest.approx(1.7, rel=1e-12)
    # dirac -> nonnegative bump around the atom
    one = mollify_measure(dirac((0.2, 0.1), 1.0), delta, grid2)
    assert np.all(one.density.values >= 0)
    d = grid2.distances((0.2, 0.1))
    assert np.all(one.density.values[d > delta + grid2.h] == 0.0)
    with pytest.raises(MeasureError, match="resolution"):
        mollify_measure(mu, grid2.h / 2, grid2)


def test_mollified_riesz_matches_atomic():
    g = make_grid(2, 1.0, 96, interior="ball", band_cells=3)
    mu = dirac((0.0, 0.0), 1.0)
    sm = mollify_measure(mu, 2.5 * g.h, g)
    d = 0.4  # d >> delta
    atomic = riesz_potential(mu, (d, 0.0), 1.0)
    smooth = riesz_potential(sm, (d, 0.0), 1.0)
    assert smooth == pytest.approx(atomic, rel=0.02)


def test_mollify_alternate_shape(grid2):
    mu = dirac((0.0, 0.0), 1.0)
    a = mollify_measure(mu, 4 * grid2.h, grid2, shape="poly")
    b = mollify_measure(mu, 4 * grid2.h, grid2, shape="cos")
    assert not np.allclose(a.density.values, b.density.values)
    assert tv_on_ball(b, Ball((0.0, 0.0), 2.0)) == pytest.approx(1.0, rel=1e-12)
