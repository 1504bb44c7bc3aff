"""Constant-free right-hand-side brackets and their audit twins.

Every empirical inequality check assembles its right-hand side from named
terms with all unknown constants set to one.  Each bracket exists twice:
the primary version composes the library operations (ball averages, tails,
potentials), the ``_sl`` twin recomputes every term from raw arrays in
straight-line numpy.  The two paths share the quadrature conventions but no
code, so a wiring or exponent mistake in either shows up as a discrepancy
far above floating-point noise.
"""

from __future__ import annotations

import math

import numpy as np

from .grids import Ball, GridFunction, ball_average, excess, gradient
from .measures import (
    Measure,
    QUAD_NODES_PER_DECADE,
    RHO_MIN_FRACTION,
    riesz_potential,
    tail,
    tv_on_ball,
)
from .operators import ParamSet


# ---------------------------------------------------------------------------
# straight-line ingredients (no calls into grids/measures)


def _sl_dist(grid, x0):
    pts = grid.coords()
    acc = np.zeros(grid.shape)
    for a in range(grid.dim):
        acc = acc + (pts[..., a] - x0[a]) ** 2
    return np.power(acc, 0.5)


def _sl_mean(vals, mask):
    return float(np.add.reduce(vals[mask].ravel()) / np.count_nonzero(mask))


def _sl_mean_vec_norm_pow(field, mask, power):
    sample = field[mask]
    norms = np.power(np.add.reduce(sample * sample, axis=-1), 0.5)
    return float(np.add.reduce(np.power(norms, power)) / sample.shape[0])


def _sl_excess_vec(field, mask):
    sample = field[mask]
    mean = np.add.reduce(sample, axis=0) / sample.shape[0]
    diff = sample - mean
    norms = np.power(np.add.reduce(diff * diff, axis=-1), 0.5)
    return float(np.add.reduce(norms) / sample.shape[0])


def _sl_excess_scalar(vals, mask):
    sample = vals[mask]
    mean = np.add.reduce(sample) / sample.size
    return float(np.add.reduce(np.abs(sample - mean)) / sample.size)


def _sl_gradient(u: GridFunction):
    g = np.gradient(u.values, u.grid.h, edge_order=1)
    if u.grid.dim == 1:
        return np.stack([g], axis=-1)
    return np.stack(g, axis=-1)


def _sl_complement_mass(g, x0, expo):
    dists = []
    for a in range(g.dim):
        dists.append(x0[a] - g.lo[a])
        dists.append(g.hi[a] - x0[a])
    if g.dim == 1:
        sp_ = expo - 1.0
        return (dists[0] ** (-sp_) + dists[1] ** (-sp_)) / sp_
    from scipy.special import gamma

    c_half = math.sqrt(math.pi) * gamma((expo - 1.0) / 2.0) / gamma(expo / 2.0)
    total = sum(c_half * d ** (2.0 - expo) / (expo - 2.0) for d in dists)
    xg, wg = np.polynomial.legendre.leggauss(48)
    dl, dr, db, dt = dists

    def corner(a, b):
        tstar = math.atan2(b, a)
        acc = 0.0
        for t0, t1, fn in (
            (1e-12, tstar, lambda t: b / np.sin(t)),
            (tstar, math.pi / 2 - 1e-12, lambda t: a / np.cos(t)),
        ):
            mid, half = 0.5 * (t0 + t1), 0.5 * (t1 - t0)
            t = mid + half * xg
            acc += half / (expo - 2.0) * float(np.dot(wg, fn(t) ** (2.0 - expo)))
        return acc

    for a, b in ((dr, dt), (dr, db), (dl, dt), (dl, db)):
        total -= corner(a, b)
    return total


def _sl_tail(f: GridFunction, x0, r, p, s):
    g = f.grid
    n = g.dim
    d = _sl_dist(g, x0)
    m = d > r
    vals = np.abs(f.values[m]) ** (p - 1.0)
    total = float(np.dot(vals, d[m] ** (-(n + s * p)))) * g.h**n
    far = 0.0 if f.far_field is None else abs(float(f.far_field))
    face = min(min(x0[a] - g.lo[a], g.hi[a] - x0[a]) for a in range(n))
    if r <= face:
        far_mass = _sl_complement_mass(g, x0, n + s * p)
    else:
        cen = g.center()
        off = math.sqrt(sum((a - b) ** 2 for a, b in zip(x0, cen)))
        rstart = max(g.ext_radius + off, r)
        area = 2.0 if n == 1 else 2.0 * math.pi
        far_mass = area * rstart ** (-s * p) / (s * p)
    total += far ** (p - 1.0) * far_mass
    return (r**p * total) ** (1.0 / (p - 1.0))


def _sl_tv(mu: Measure, x0, r):
    total = 0.0
    for loc, w in mu.atoms:
        d = math.sqrt(sum((a - b) ** 2 for a, b in zip(loc, x0)))
        if d <= r:
            total += abs(w)
    if mu.density is not None:
        g = mu.density.grid
        sub = 4
        offs = (np.arange(sub) + 0.5) / sub - 0.5
        ax = g.axes()
        if g.dim == 1:
            pts = (ax[0][:, None] + offs[None, :] * g.h).ravel()
            dist = np.abs(pts - x0[0])
            w = np.repeat(np.abs(mu.density.values), sub) * (g.h / sub)
            vol = np.full(dist.shape, g.h / sub)
        else:
            xs = (ax[0][:, None] + offs[None, :] * g.h).ravel()
            ys = (ax[1][:, None] + offs[None, :] * g.h).ravel()
            dist = np.sqrt(
                ((xs - x0[0]) ** 2)[:, None] + ((ys - x0[1]) ** 2)[None, :]
            ).ravel()
            cw = np.abs(mu.density.values) * (g.h / sub) ** 2
            w = np.repeat(np.repeat(cw, sub, axis=0), sub, axis=1).ravel()
            vol = np.full(dist.shape, (g.h / sub) ** 2)
        inside = dist <= r
        total += float(np.dot(w, inside.astype(float)))
        vball = 2.0 * r if g.dim == 1 else math.pi * r**2
        far = abs(mu.density.far())
        total += far * (vball - float(np.dot(vol, inside.astype(float))))
    return total


def _sl_riesz(mu: Measure, x0, R):
    n = len(x0)
    total = 0.0
    for loc, w in mu.atoms:
        d = math.sqrt(sum((a - b) ** 2 for a, b in zip(loc, x0)))
        if d >= R:
            continue
        if d == 0.0 and w != 0.0:
            return math.inf
        if n == 1:
            total += abs(w) * math.log(R / d)
        else:
            total += abs(w) * (d ** (1 - n) - R ** (1 - n)) / (n - 1)
    if mu.density is not None:
        dens_only = Measure(atoms=(), density=mu.density)
        rho_min = R * RHO_MIN_FRACTION
        decades = max(math.log10(R / rho_min), 1.0)
        count = max(int(math.ceil(decades * QUAD_NODES_PER_DECADE)), 64) + 1
        nodes = np.exp(np.linspace(math.log(rho_min), math.log(R), count))
        vals = np.array([_sl_tv(dens_only, x0, rho) for rho in nodes])
        integrand = vals / nodes**n
        total += float(
            np.dot(0.5 * (integrand[1:] + integrand[:-1]), np.diff(nodes))
        )
        total += float(integrand[0]) * rho_min
    return total


# ---------------------------------------------------------------------------
# brackets: homogeneous gradient excess decay (same-scale form)


def homog_excess_bracket(v: GridFunction, dv, x0, rho, params: ParamSet, eps1):
    b = Ball(x0, rho)
    g = v.grid
    q0 = params.q0
    grad_mean = ball_average(
        np.sqrt(np.sum(dv * dv, axis=-1)) ** q0, g, b
    ) ** (1.0 / q0)
    centered = v.with_values(v.values - ball_average(v.values, g, b))
    if v.far_field is not None:
        centered = GridFunction(
            g, centered.values, v.far_field - ball_average(v.values, g, b)
        )
    tl = tail(centered, x0, rho, params.p, params.s) / rho**params.pprime
    return {
        "excess": excess(dv, g, b),
        "gradient_term": rho ** (params.a1bar - eps1) * grad_mean,
        "tail_term": rho ** (params.a2bar - eps1) * tl,
    }


def homog_excess_bracket_sl(v: GridFunction, dv, x0, rho, params: ParamSet, eps1):
    g = v.grid
    mask = _sl_dist(g, x0) <= rho
    q0 = params.q0
    grad_mean = _sl_mean_vec_norm_pow(dv, mask, q0) ** (1.0 / q0)
    vmean = _sl_mean(v.values, mask)
    far = None if v.far_field is None else v.far_field - vmean
    centered = GridFunction(g, v.values - vmean, far)
    tl = _sl_tail(centered, x0, rho, params.p, params.s) / rho**params.pprime
    return {
        "excess": _sl_excess_vec(dv, mask),
        "gradient_term": rho ** (params.a1bar - eps1) * grad_mean,
        "tail_term": rho ** (params.a2bar - eps1) * tl,
    }


# ---------------------------------------------------------------------------
# brackets: mixed-vs-local comparison


def mixed_local_rhs(v: GridFunction, dv, x0, r, params: ParamSet):
    g = v.grid
    b = Ball(x0, r)
    q0 = params.q0
    p = params.p
    grad_mean = ball_average(np.sqrt(np.sum(dv * dv, axis=-1)) ** q0, g, b)
    vmean = ball_average(v.values, g, b)
    centered = GridFunction(
        g, v.values - vmean, None if v.far_field is None else v.far_field - vmean
    )
    tl = tail(centered, x0, r, p, params.s) / r**params.pprime
    return {
        "gradient_term": r ** (params.a1bar * p) * grad_mean ** (p / q0),
        "tail_term": r ** (params.a2bar * p) * tl**p,
    }


def mixed_local_rhs_sl(v: GridFunction, dv, x0, r, params: ParamSet):
    g = v.grid
    mask = _sl_dist(g, x0) <= r
    q0 = params.q0
    p = params.p
    grad_mean = _sl_mean_vec_norm_pow(dv, mask, q0)
    vmean = _sl_mean(v.values, mask)
    far = None if v.far_field is None else v.far_field - vmean
    centered = GridFunction(g, v.values - vmean, far)
    tl = _sl_tail(centered, x0, r, p, params.s) / r**params.pprime
    return {
        "gradient_term": r ** (params.a1bar * p) * grad_mean ** (p / q0),
        "tail_term": r ** (params.a2bar * p) * tl**p,
    }


# ---------------------------------------------------------------------------
# brackets: measure comparison (gradient difference vs measure density)


def measure_comparison_rhs(mu: Measure, du, grid, x0, r, params: ParamSet, q):
    b = Ball(x0, r)
    dens = tv_on_ball(mu, b) / r ** (params.n - 1)
    terms = {"measure_term": dens ** (q / (params.p - 1.0))}
    if params.p < 2.0:
        du_mean = ball_average(np.sqrt(np.sum(du * du, axis=-1)) ** q, grid, b)
        terms["subquadratic_term"] = dens**q * du_mean ** (2.0 - params.p)
    return terms


def measure_comparison_rhs_sl(mu: Measure, du, grid, x0, r, params: ParamSet, q):
    dens = _sl_tv(mu, x0, r) / r ** (params.n - 1)
    terms = {"measure_term": dens ** (q / (params.p - 1.0))}
    if params.p < 2.0:
        mask = _sl_dist(grid, x0) <= r
        du_mean = _sl_mean_vec_norm_pow(du, mask, q)
        terms["subquadratic_term"] = dens**q * du_mean ** (2.0 - params.p)
    return terms


# ---------------------------------------------------------------------------
# brackets: tail decay


def _centered(f: GridFunction, mean):
    return GridFunction(
        f.grid, f.values - mean, None if f.far_field is None else f.far_field - mean
    )


def tail_decay_rhs(
    f: GridFunction, df, x0, rho, r, params: ParamSet, alpha, mu: Measure = None
):
    """(tail decay) bracket mapping scale r to rho; with mu adds the measure
    and q0-power form used for inhomogeneous solutions."""
    g = f.grid
    p, s, q0 = params.p, params.s, params.q0
    b = Ball(x0, r)
    fmean = ball_average(f.values, g, b)
    tl_r = tail(_centered(f, fmean), x0, r, p, s) / r**params.pprime
    grad_mean = ball_average(np.sqrt(np.sum(df * df, axis=-1)) ** q0, g, b) ** (
        1.0 / q0
    )
    blowup = (1.0 - alpha) * (p - 1.0) + 1.0
    if mu is None:
        fac = (1.0 + r ** ((1 - s) * p) * (r / rho) ** blowup) ** (1.0 / (p - 1.0))
        return {
            "tail_term": fac * tl_r,
            "gradient_term": r ** (((1 - s) * p - 1.0) / (p - 1.0))
            * (r / rho) ** (blowup / (p - 1.0))
            * grad_mean,
        }
    dens = tv_on_ball(mu, b) / r ** (params.n - 1)
    fac = (1.0 + r ** ((1 - s) * p) * (r / rho) ** blowup) ** (q0 / (p - 1.0))
    lead = (r ** ((1 - s) * p - 1.0) * (r / rho) ** (params.n + p)) ** (
        q0 / (p - 1.0)
    )
    return {
        "tail_term": fac * tl_r**q0,
        "gradient_term": lead * grad_mean**q0,
        "measure_term": lead * dens ** (q0 / (p - 1.0)),
    }


def tail_decay_rhs_sl(
    f: GridFunction, df, x0, rho, r, params: ParamSet, alpha, mu: Measure = None
):
    g = f.grid
    p, s, q0 = params.p, params.s, params.q0
    mask = _sl_dist(g, x0) <= r
    fmean = _sl_mean(f.values, mask)
    far = None if f.far_field is None else f.far_field - fmean
    tl_r = _sl_tail(GridFunction(g, f.values - fmean, far), x0, r, p, s) / (
        r**params.pprime
    )
    grad_mean = _sl_mean_vec_norm_pow(df, mask, q0) ** (1.0 / q0)
    blowup = (1.0 - alpha) * (p - 1.0) + 1.0
    if mu is None:
        fac = (1.0 + r ** ((1 - s) * p) * (r / rho) ** blowup) ** (1.0 / (p - 1.0))
        return {
            "tail_term": fac * tl_r,
            "gradient_term": r ** (((1 - s) * p - 1.0) / (p - 1.0))
            * (r / rho) ** (blowup / (p - 1.0))
            * grad_mean,
        }
    dens = _sl_tv(mu, x0, r) / r ** (params.n - 1)
    fac = (1.0 + r ** ((1 - s) * p) * (r / rho) ** blowup) ** (q0 / (p - 1.0))
    lead = (r ** ((1 - s) * p - 1.0) * (r / rho) ** (params.n + p)) ** (
        q0 / (p - 1.0)
    )
    return {
        "tail_term": fac * tl_r**q0,
        "gradient_term": lead * grad_mean**q0,
        "measure_term": lead * dens ** (q0 / (p - 1.0)),
    }


# ---------------------------------------------------------------------------
# brackets: flux excess decay under measure data (p >= 2)


def flux_excess_rhs(
    u: GridFunction,
    flux,
    mu: Measure,
    x0,
    rho,
    big_r,
    params: ParamSet,
    eps1,
    beta_v,
    eta,
):
    g = u.grid
    p = params.p
    b = Ball(x0, big_r)
    ex = excess(flux, g, b)
    flux_mean = ball_average(np.sqrt(np.sum(flux * flux, axis=-1)), g, b)
    umean = ball_average(u.values, g, b)
    tl = tail(_centered(u, umean), x0, big_r, p, params.s) / big_r**params.pprime
    dens = tv_on_ball(mu, b) / big_r ** (params.n - 1)
    return {
        "excess_term": (rho / big_r) ** beta_v * (ex + big_r**eps1 * flux_mean),
        "tail_term": (big_r / rho) ** params.n
        * big_r ** (1.0 - (p - 1.0) * eps1)
        * tl ** (p - 1.0),
        "measure_term": (big_r / rho) ** eta * dens,
    }


def flux_excess_rhs_sl(
    u: GridFunction,
    flux,
    mu: Measure,
    x0,
    rho,
    big_r,
    params: ParamSet,
    eps1,
    beta_v,
    eta,
):
    g = u.grid
    p = params.p
    mask = _sl_dist(g, x0) <= big_r
    ex = _sl_excess_vec(flux, mask)
    flux_mean = _sl_mean_vec_norm_pow(flux, mask, 1.0)
    umean = _sl_mean(u.values, mask)
    far = None if u.far_field is None else u.far_field - umean
    tl = _sl_tail(GridFunction(g, u.values - umean, far), x0, big_r, p, params.s) / (
        big_r**params.pprime
    )
    dens = _sl_tv(mu, x0, big_r) / big_r ** (params.n - 1)
    return {
        "excess_term": (rho / big_r) ** beta_v * (ex + big_r**eps1 * flux_mean),
        "tail_term": (big_r / rho) ** params.n
        * big_r ** (1.0 - (p - 1.0) * eps1)
        * tl ** (p - 1.0),
        "measure_term": (big_r / rho) ** eta * dens,
    }


# ---------------------------------------------------------------------------
# brackets: pointwise estimates at a probe point


def pointwise_rhs(
    u: GridFunction,
    du,
    flux,
    mu: Measure,
    x0,
    big_r,
    params: ParamSet,
    sigma,
    kappa,
):
    g = u.grid
    p = params.p
    b = Ball(x0, big_r)
    pot = riesz_potential(mu, x0, big_r)
    umean = ball_average(u.values, g, b)
    tail_int = tail(_centered(u, umean), x0, big_r, p, params.s) ** (p - 1.0) / (
        big_r**p
    )
    if p >= 2.0:
        return {
            "potential_term": pot,
            "excess_term": excess(flux, g, b),
            "mean_term": big_r**kappa
            * ball_average(np.sqrt(np.sum(flux * flux, axis=-1)), g, b),
            "tail_term": big_r**sigma * tail_int,
        }
    du_mean = ball_average(np.sqrt(np.sum(du * du, axis=-1)), g, b)
    return {
        "potential_term": pot ** (1.0 / (p - 1.0)),
        "potential_degenerate_term": pot * du_mean ** (2.0 - p),
        "excess_term": excess(du, g, b),
        "mean_term": big_r**kappa * du_mean,
        "tail_term": (big_r**sigma * tail_int) ** (1.0 / (p - 1.0)),
    }


def pointwise_rhs_sl(
    u: GridFunction,
    du,
    flux,
    mu: Measure,
    x0,
    big_r,
    params: ParamSet,
    sigma,
    kappa,
):
    g = u.grid
    p = params.p
    mask = _sl_dist(g, x0) <= big_r
    pot = _sl_riesz(mu, x0, big_r)
    umean = _sl_mean(u.values, mask)
    far = None if u.far_field is None else u.far_field - umean
    tail_int = _sl_tail(
        GridFunction(g, u.values - umean, far), x0, big_r, p, params.s
    ) ** (p - 1.0) / big_r**p
    if p >= 2.0:
        return {
            "potential_term": pot,
            "excess_term": _sl_excess_vec(flux, mask),
            "mean_term": big_r**kappa * _sl_mean_vec_norm_pow(flux, mask, 1.0),
            "tail_term": big_r**sigma * tail_int,
        }
    du_mean = _sl_mean_vec_norm_pow(du, mask, 1.0)
    return {
        "potential_term": pot ** (1.0 / (p - 1.0)),
        "potential_degenerate_term": pot * du_mean ** (2.0 - p),
        "excess_term": _sl_excess_vec(du, mask),
        "mean_term": big_r**kappa * du_mean,
        "tail_term": (big_r**sigma * tail_int) ** (1.0 / (p - 1.0)),
    }


# ---------------------------------------------------------------------------
# brackets: gradient potential estimate at a probe (Lebesgue-point form)


def gradient_potential_rhs(
    u: GridFunction, du, mu: Measure, x0, big_r, params: ParamSet, sigma
):
    g = u.grid
    p = params.p
    q0 = params.q0
    b = Ball(x0, big_r)
    pot = riesz_potential(mu, x0, big_r)
    du_mean = ball_average(np.sqrt(np.sum(du * du, axis=-1)) ** q0, g, b) ** (1.0 / q0)
    umean = ball_average(u.values, g, b)
    tail_int = tail(_centered(u, umean), x0, big_r, p, params.s) ** (p - 1.0) / (
        big_r**p
    )
    return {
        "potential_term": pot ** (1.0 / (p - 1.0)),
        "mean_term": du_mean,
        "tail_term": (big_r**sigma * tail_int) ** (1.0 / (p - 1.0)),
    }


def gradient_potential_rhs_sl(
    u: GridFunction, du, mu: Measure, x0, big_r, params: ParamSet, sigma
):
    g = u.grid
    p = params.p
    q0 = params.q0
    mask = _sl_dist(g, x0) <= big_r
    pot = _sl_riesz(mu, x0, big_r)
    du_mean = _sl_mean_vec_norm_pow(du, mask, q0) ** (1.0 / q0)
    umean = _sl_mean(u.values, mask)
    far = None if u.far_field is None else u.far_field - umean
    tail_int = _sl_tail(
        GridFunction(g, u.values - umean, far), x0, big_r, p, params.s
    ) ** (p - 1.0) / big_r**p
    return {
        "potential_term": pot ** (1.0 / (p - 1.0)),
        "mean_term": du_mean,
        "tail_term": (big_r**sigma * tail_int) ** (1.0 / (p - 1.0)),
    }


# ---------------------------------------------------------------------------
# audit driver


def discrepancy(terms_a: dict, terms_b: dict) -> float:
    keys = set(terms_a) | set(terms_b)
    worst = 0.0
    for k in keys:
        a = float(terms_a.get(k, math.nan))
        b = float(terms_b.get(k, math.nan))
        if math.isinf(a) and math.isinf(b):
            continue
        worst = max(worst, abs(a - b) / (1.0 + abs(a) + abs(b)))
    return worst


BRACKET_PAIRS = {
    "homog_excess": (homog_excess_bracket, homog_excess_bracket_sl),
    "mixed_local": (mixed_local_rhs, mixed_local_rhs_sl),
    "measure_comparison": (measure_comparison_rhs, measure_comparison_rhs_sl),
    "tail_decay": (tail_decay_rhs, tail_decay_rhs_sl),
    "flux_excess": (flux_excess_rhs, flux_excess_rhs_sl),
    "pointwise": (pointwise_rhs, pointwise_rhs_sl),
    "gradient_potential": (gradient_potential_rhs, gradient_potential_rhs_sl),
}


def audit_bracket(name: str, *args, **kwargs):
    main, twin = BRACKET_PAIRS[name]
    ta = main(*args, **kwargs)
    tb = twin(*args, **kwargs)
    return ta, tb, discrepancy(ta, tb)
