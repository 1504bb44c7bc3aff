"""Falsifiable desk-scale checks: scaling-exponent fits and bounded ratios.

Every experiment is a pure function of (parameters, exponents, options,
seed); reruns are bit-identical.  Unknown constants in the underlying
estimates are treated as fitted empirical quantities with stability
criteria, never as pass/fail absolutes.  Exponent fits are log-log least
squares with the residual reported; a fit with log10 residual above 0.2
fails regardless of slope.

Ratio conventions: right-hand brackets are evaluated at the same scale as
the left-hand side (same-scale form), so bounded ratios probe that no term
of the bracket collapses relative to the measured quantity.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import brackets
from .grids import (
    Ball,
    GridFunction,
    ball_average,
    ball_mask,
    excess,
    gagliardo_seminorm,
    gradient,
    oscillation,
)
from .measures import Measure, riesz_potential, tail, tv_on_ball
from .operators import (
    ParamSet,
    VectorFieldSpec,
    assemble_kernel_weights,
    vector_field_A,
)
from .scenes import build_exterior, build_measure, grid_from_dict
from .solver import (
    SolveConfig,
    sola_solve,
    solve_dirichlet,
    solve_homogeneous_local,
    solve_homogeneous_mixed,
)

FIT_RESIDUAL_LIMIT = 0.2
RATIO_BOUND = 10.0
STABILITY_FACTOR = 5.0
ZERO_FLOOR = 1e-11


class ExperimentError(ValueError):
    pass


@dataclass(frozen=True)
class DecayExponents:
    """Free exponent parameters of the decay estimates."""

    sigma: float = 0.9
    eps1: float = 0.0125
    m: Optional[float] = None

    def __post_init__(self):
        if not (0.0 < self.sigma < 1.0):
            raise ExperimentError("requires sigma in (0, 1)")

    @classmethod
    def defaults(cls, params: ParamSet, sigma: float = 0.9) -> "DecayExponents":
        eps1 = min(1.0 - sigma, 1.0 - params.s) / (4.0 * params.p)
        m = None
        if params.p < 2.0:
            m = (1.0 - sigma) / 4.0 * min(
                1.0 / (2.0 - params.p), 1.0 / (params.p - 1.0), 1.0 - params.s
            )
        return cls(sigma=sigma, eps1=eps1, m=m)

    def validate(self, params: ParamSet) -> None:
        if not (0.0 < self.eps1 < (1.0 - params.s) / params.p):
            raise ExperimentError("requires eps1 in (0, (1-s)/p)")
        if params.p < 2.0:
            if self.m is None or not (0.0 < self.m < 1.0 - params.s):
                raise ExperimentError("requires m in (0, 1-s)")

    def apply_to(self, params: ParamSet) -> ParamSet:
        if params.p < 2.0 and self.m is not None:
            return params.with_m(self.m)
        return params


@dataclass
class ExperimentReport:
    name: str
    params: dict
    exponents: dict
    scales: list
    lhs: list
    rhs: list
    ratios: list
    fitted_exponent: Optional[float]
    fit_residual: Optional[float]
    verdict: bool
    provenance: dict
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "params": self.params,
            "exponents": self.exponents,
            "scales": [float(x) for x in self.scales],
            "lhs": [float(x) for x in self.lhs],
            "rhs": [float(x) for x in self.rhs],
            "ratios": [float(x) for x in self.ratios],
            "fitted_exponent": None
            if self.fitted_exponent is None
            else float(self.fitted_exponent),
            "fit_residual": None
            if self.fit_residual is None
            else float(self.fit_residual),
            "verdict": "pass" if self.verdict else "fail",
            "provenance": self.provenance,
            "extras": _plain(self.extras),
        }


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    return obj


def config_hash(payload: dict) -> str:
    canon = json.dumps(_plain(payload), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def fit_exponent(scales, values):
    """Log-log least squares; returns (slope, rms log10 residual)."""
    x, y = [], []
    for sc, val in zip(scales, values):
        if val > 0.0 and math.isfinite(val):
            x.append(math.log10(sc))
            y.append(math.log10(val))
    if len(x) < 2:
        return None, None
    x = np.asarray(x)
    y = np.asarray(y)
    slope, intercept = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return float(slope), resid


def _ratio(lhs, rhs):
    if rhs == 0.0:
        return 1.0 if lhs == 0.0 else lhs / 1e-300
    return lhs / rhs


def _ratio_spread(ratios):
    pos = [r for r in ratios if r > 0.0 and math.isfinite(r)]
    if not pos:
        return 1.0
    return max(pos) / min(pos)


def _provenance(name, params, expo, options, seed):
    payload = {
        "experiment": name,
        "params": asdict(params),
        "exponents": asdict(expo),
        "options": options,
        "seed": seed,
    }
    return {"config_hash": config_hash(payload), "seed": seed}


def _merge(defaults: dict, options: Optional[dict]) -> dict:
    out = dict(defaults)
    if options:
        out.update(options)
    return out


def _solve_cfg(opts: dict) -> SolveConfig:
    return SolveConfig(tol_rel=float(opts.get("tol_rel", 1e-10)))


def _flag_n1(params: ParamSet, extras: dict) -> None:
    if params.n == 1:
        extras["n1_regime"] = True


def _grid_and_exterior(params, opts):
    gspec = {
        "dim": params.n,
        "half_width": opts["half_width"],
        "nodes_per_axis": opts["nodes"],
        "interior": opts.get("interior", "ball"),
        "interior_radius": opts.get("omega_radius"),
        "band_cells": opts.get("band_cells", 4),
    }
    grid = grid_from_dict(gspec)
    g = build_exterior(grid, opts["exterior"])
    weights = assemble_kernel_weights(
        grid, params, opts.get("kernel_variant", "model"), dense_ok=True
    )
    return grid, g, weights


def _field_spec(params: ParamSet, opts: dict) -> VectorFieldSpec:
    variant = opts.get("field_variant", "model")
    if variant == "regularized":
        return VectorFieldSpec(
            p=params.p, variant="regularized", eps=float(opts.get("field_eps", 1e-4))
        )
    return VectorFieldSpec(p=params.p)


# ---------------------------------------------------------------------------
# homogeneous gradient excess decay


def exp_excess_decay_homogeneous(
    params: ParamSet,
    expo: Optional[DecayExponents] = None,
    options: Optional[dict] = None,
    seed: int = 0,
) -> ExperimentReport:
    expo = expo or DecayExponents.defaults(params)
    expo.validate(params)
    params = expo.apply_to(params)
    if params.n == 2:
        base = {
            "half_width": 1.5,
            "nodes": 192 if params.p == 2.0 else 160,
            "omega_radius": 1.38,
            "r": 1.25,
            "levels": 6,
            "exterior": {
                "kind": "sum",
                "terms": [
                    {"kind": "affine", "a": [0.8, -0.3], "b": 0.2},
                    {"kind": "sinusoid", "amp": 0.3, "k": [2.0, 1.2], "phase": 0.7},
                    {"kind": "bump", "amp": 0.8, "center": [1.7, 0.6], "width": 0.8},
                ],
            },
        }
    else:
        base = {
            "half_width": 2.5,
            "nodes": 768,
            "omega_radius": 1.1,
            "r": 0.9,
            "levels": 6,
            "exterior": {
                "kind": "sum",
                "terms": [
                    {"kind": "affine", "a": [0.8], "b": 0.2},
                    {"kind": "sinusoid", "amp": 0.3, "k": [2.0], "phase": 0.9},
                    {"kind": "bump", "amp": 0.7, "center": [1.6], "width": 0.8},
                ],
            },
        }
    opts = _merge(base, options)
    grid, g, weights = _grid_and_exterior(params, opts)
    spec = _field_spec(params, opts)
    cfg = _solve_cfg(opts)
    v, _ = solve_dirichlet(None, g, params, spec, weights, cfg)
    dv = gradient(v)
    x0 = grid.center()
    r = float(opts["r"])
    scales = [r * 2.0**-k for k in range(int(opts["levels"]))]
    lhs, rhs, ratios = [], [], []
    gscale = float(np.max(np.sqrt(np.sum(dv * dv, axis=-1)))) or 1.0
    for rho in scales:
        terms = brackets.homog_excess_bracket(v, dv, x0, rho, params, expo.eps1)
        lhs.append(terms["excess"])
        rhs.append(sum(terms.values()))
        ratios.append(_ratio(lhs[-1], rhs[-1]))
    degenerate = all(val <= ZERO_FLOOR * gscale for val in lhs)
    extras = {"degenerate": degenerate}
    _flag_n1(params, extras)
    if degenerate:
        slope, resid = None, None
        verdict = True
    else:
        slope, resid = fit_exponent(scales, lhs)
        verdict = (
            slope is not None
            and slope >= float(opts.get("exponent_min", 0.1))
            and resid <= FIT_RESIDUAL_LIMIT
            and _ratio_spread(ratios) < float(opts.get("ratio_bound", RATIO_BOUND))
        )
    return ExperimentReport(
        name="excess-decay-homogeneous",
        params=asdict(params),
        exponents=asdict(expo),
        scales=scales,
        lhs=lhs,
        rhs=rhs,
        ratios=ratios,
        fitted_exponent=slope,
        fit_residual=resid,
        verdict=bool(verdict),
        provenance=_provenance("excess-decay-homogeneous", params, expo, opts, seed),
        extras=extras,
    )


# ---------------------------------------------------------------------------
# mixed-vs-local comparison


def _comparison_pass(params, expo, opts, nodes, shrink=None):
    opts = dict(opts, nodes=nodes)
    grid, g, weights = _grid_and_exterior(params, opts)
    spec = _field_spec(params, opts)
    cfg = _solve_cfg(opts)
    v, _ = solve_dirichlet(None, g, params, spec, weights, cfg)
    dv = gradient(v)
    x0 = tuple(opts.get("x0") or grid.center())
    lhs, rhs = [], []
    for r in opts["radii"]:
        w, _ = solve_homogeneous_local(
            v, Ball(x0, r / 4.0), params, spec, cfg, shrink=shrink
        )
        dw = gradient(w)
        b = Ball(x0, r / 4.0)
        diff = np.sqrt(np.sum((dv - dw) ** 2, axis=-1))
        lhs.append(ball_average(diff**params.p, grid, b))
        rhs.append(sum(brackets.mixed_local_rhs(v, dv, x0, r, params).values()))
    return lhs, rhs


def exp_comparison_mixed_local(
    params: ParamSet,
    expo: Optional[DecayExponents] = None,
    options: Optional[dict] = None,
    seed: int = 0,
) -> ExperimentReport:
    expo = expo or DecayExponents.defaults(params)
    expo.validate(params)
    params = expo.apply_to(params)
    base = {
        "half_width": 2.75,
        "nodes": 1024,
        "omega_radius": 1.3,
        "radii": [0.8, 0.4, 0.2],
        "x0": [0.4] * params.n,
        "refine_check": True,
        "exterior": {
            "kind": "sum",
            "terms": [
                {"kind": "affine", "a": [0.7] * params.n, "b": 0.1},
                {"kind": "sinusoid", "amp": 0.2, "k": [1.5] * params.n, "phase": 0.6},
                {"kind": "bump", "amp": 1.2, "center": [1.9] * params.n, "width": 0.9},
            ],
        },
    }
    if params.n == 2:
        base.update(
            {
                "half_width": 1.6,
                "nodes": 104,
                "omega_radius": 1.35,
                "x0": [0.25, 0.25],
                "refine_check": False,
            }
        )
    opts = _merge(base, options)
    lhs, rhs = _comparison_pass(params, expo, opts, opts["nodes"])
    ratios = [_ratio(a, b) for a, b in zip(lhs, rhs)]
    scales = [float(r) for r in opts["radii"]]
    slope, resid = fit_exponent(scales, lhs)
    rate_floor = 0.8 * params.a1bar * params.p
    verdict = (
        _ratio_spread(ratios) < float(opts.get("ratio_bound", RATIO_BOUND))
        and slope is not None
        and slope >= rate_floor
        and resid <= FIT_RESIDUAL_LIMIT
    )
    extras = {"rate_floor": rate_floor}
    _flag_n1(params, extras)
    if opts.get("refine_check"):
        # the refined pass keeps the coarse boundary-layer geometry so both
        # resolutions discretize the same local comparison problem
        h_coarse = 2.0 * float(opts["half_width"]) / float(opts["nodes"])
        lhs2, rhs2 = _comparison_pass(
            params, expo, opts, 2 * opts["nodes"], shrink=h_coarse
        )
        ratios2 = [_ratio(a, b) for a, b in zip(lhs2, rhs2)]
        rel = [
            abs(a - b) / max(abs(b), 1e-300) for a, b in zip(ratios, ratios2)
        ]
        extras["refined_ratios"] = ratios2
        extras["refinement_shift"] = rel
        verdict = verdict and max(rel) <= float(opts.get("refine_tol", 0.2))
    if opts.get("p_sweep"):
        sweep = {}
        for p_probe in opts["p_sweep"]:
            pp = ParamSet(
                n=params.n, s=params.s, p=p_probe,
                nu_a=params.nu_a, l_a=params.l_a, nu_k=params.nu_k, l_k=params.l_k,
            )
            ee = DecayExponents.defaults(pp, sigma=expo.sigma)
            pl, pr = _comparison_pass(ee.apply_to(pp), ee, opts, opts["nodes"])
            sweep[str(p_probe)] = [_ratio(a, b) for a, b in zip(pl, pr)]
        extras["p_sweep_ratios"] = sweep
    return ExperimentReport(
        name="comparison-mixed-local",
        params=asdict(params),
        exponents=asdict(expo),
        scales=scales,
        lhs=lhs,
        rhs=rhs,
        ratios=ratios,
        fitted_exponent=slope,
        fit_residual=resid,
        verdict=bool(verdict),
        provenance=_provenance("comparison-mixed-local", params, expo, opts, seed),
        extras=extras,
    )


# ---------------------------------------------------------------------------
# measure-data comparison scaling


def exp_comparison_measure(
    params: ParamSet,
    expo: Optional[DecayExponents] = None,
    options: Optional[dict] = None,
    seed: int = 0,
) -> ExperimentReport:
    expo = expo or DecayExponents.defaults(params)
    expo.validate(params)
    params = expo.apply_to(params)
    base = {
        "half_width": 1.2,
        "nodes": 96 if params.n == 2 else 512,
        "omega_radius": 0.95,
        "r": 0.5,
        "t_scales": [1.0, 2.0, 4.0, 8.0],
        "q": 1.0,
        "measure": {"kind": "bump", "width": 0.25, "mass": 1.0},
        "exterior": {"kind": "affine", "a": [0.0] * params.n, "b": 0.0},
    }
    opts = _merge(base, options)
    q = float(opts["q"])
    grid, g, weights = _grid_and_exterior(params, opts)
    spec = _field_spec(params, opts)
    cfg = _solve_cfg(opts)
    mu_base = build_measure(grid, opts["measure"])
    x0 = grid.center()
    b = Ball(x0, float(opts["r"]))
    lhs, rhs = [], []
    u_prev = None
    t_prev = None
    for t in opts["t_scales"]:
        mu_t = mu_base.scaled(float(t))
        warm = None
        if u_prev is not None and t_prev > 0.0 and t > 0.0:
            # the whole operator is (p-1)-homogeneous: scale the previous state
            fac = (t / t_prev) ** (1.0 / (params.p - 1.0))
            warm = GridFunction(
                grid,
                np.where(grid.interior, fac * u_prev.values, g.values),
                g.far_field,
                g.far_slope,
            )
        u_t, _ = solve_dirichlet(mu_t, g, params, spec, weights, cfg, u0=warm)
        v_t, _ = solve_homogeneous_mixed(u_t, b, params, spec, weights, cfg, u0=u_t)
        du = gradient(u_t)
        dv = gradient(v_t)
        diff = np.sqrt(np.sum((du - dv) ** 2, axis=-1))
        lhs.append(ball_average(diff**q, grid, b))
        rhs.append(
            sum(
                brackets.measure_comparison_rhs(
                    mu_t, du, grid, x0, float(opts["r"]), params, q
                ).values()
            )
        )
        u_prev, t_prev = u_t, t
    ratios = [_ratio(a, c) for a, c in zip(lhs, rhs)]
    slope, resid = fit_exponent(opts["t_scales"], lhs)
    expected = q / (params.p - 1.0)
    extras = {"expected_exponent": expected}
    _flag_n1(params, extras)
    if params.p >= 2.0:
        tol = float(opts.get("exponent_tol", 0.05 if params.p == 2.0 else 0.2))
        verdict = (
            slope is not None
            and abs(slope / expected - 1.0) <= tol
            and resid <= FIT_RESIDUAL_LIMIT
        )
        extras["exponent_tol"] = tol
    else:
        verdict = _ratio_spread(ratios) < RATIO_BOUND
    return ExperimentReport(
        name="comparison-measure",
        params=asdict(params),
        exponents=asdict(expo),
        scales=[float(t) for t in opts["t_scales"]],
        lhs=lhs,
        rhs=rhs,
        ratios=ratios,
        fitted_exponent=slope,
        fit_residual=resid,
        verdict=bool(verdict),
        provenance=_provenance("comparison-measure", params, expo, opts, seed),
        extras=extras,
    )


# ---------------------------------------------------------------------------
# point-mass gradient exponent


def exp_dirac_gradient(
    params: ParamSet,
    expo: Optional[DecayExponents] = None,
    options: Optional[dict] = None,
    seed: int = 0,
) -> ExperimentReport:
    expo = expo or DecayExponents.defaults(params)
    expo.validate(params)
    params = expo.apply_to(params)
    base = {
        "half_width": 1.0,
        "nodes": 128,
        "omega_radius": 0.9,
        "R": 0.6,
        "annuli": 6,
        "weight": 1.0,
        "exterior": {"kind": "affine", "a": [0.0] * params.n, "b": 0.0},
        "j_max": 4,
    }
    opts = _merge(base, options)
    grid, g, weights = _grid_and_exterior(params, opts)
    spec = _field_spec(params, opts)
    cfg = _solve_cfg(opts)
    x0 = grid.center()
    weight = float(opts["weight"])
    mu = Measure(atoms=((tuple(x0), weight),)) if weight != 0.0 else Measure()
    if weight == 0.0:
        u, _ = solve_dirichlet(None, g, params, spec, weights, cfg)
        sola_converged = True
    else:
        res = sola_solve(mu, g, params, spec, weights, cfg, j_max=int(opts["j_max"]))
        u = res.limit
        sola_converged = res.converged
    du = gradient(u)
    du_norm = np.sqrt(np.sum(du * du, axis=-1))
    dist = grid.distances(x0)
    big_r = float(opts["R"])
    d_lo, d_hi = 4.0 * grid.h, big_r / 4.0
    edges = np.exp(np.linspace(math.log(d_lo), math.log(d_hi), int(opts["annuli"]) + 1))
    scales, lhs, rhs, ratios = [], [], [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        m = (dist >= lo) & (dist < hi)
        if not np.any(m):
            continue
        d_mid = math.sqrt(lo * hi)
        scales.append(d_mid)
        lhs.append(float(np.mean(du_norm[m])))
        # deterministic probe: the annulus node nearest to the +x axis ray
        cand = np.argwhere(m)
        coords = grid.coords()[m]
        target = np.asarray(x0) + np.array([d_mid] + [0.0] * (grid.dim - 1))
        probe_idx = int(np.argmin(np.sum((coords - target) ** 2, axis=-1)))
        probe = tuple(coords[probe_idx])
        terms = brackets.gradient_potential_rhs(
            u, du, mu, probe, big_r, params, expo.sigma
        )
        rhs_val = sum(terms.values())
        probe_flat = tuple(cand[probe_idx])
        lhs_point = float(du_norm[probe_flat])
        rhs.append(rhs_val)
        ratios.append(_ratio(lhs_point, rhs_val))
    degenerate = all(val <= ZERO_FLOOR for val in lhs)
    extras = {
        "sola_converged": sola_converged,
        "predicted_exponent": (1.0 - params.n) / (params.p - 1.0),
        "degenerate": degenerate,
    }
    _flag_n1(params, extras)
    if degenerate:
        slope, resid, verdict = None, None, True
    else:
        slope, resid = fit_exponent(scales, lhs)
        pred = extras["predicted_exponent"]
        tol = float(opts.get("exponent_tol", 0.1))
        verdict = (
            slope is not None
            and abs(slope - pred) <= tol * abs(pred)
            and resid <= FIT_RESIDUAL_LIMIT
            and _ratio_spread(ratios) < RATIO_BOUND
        )
    return ExperimentReport(
        name="dirac-gradient",
        params=asdict(params),
        exponents=asdict(expo),
        scales=scales,
        lhs=lhs,
        rhs=rhs,
        ratios=ratios,
        fitted_exponent=slope,
        fit_residual=resid,
        verdict=bool(verdict),
        provenance=_provenance("dirac-gradient", params, expo, opts, seed),
        extras=extras,
    )


# ---------------------------------------------------------------------------
# tail decay


def _fit_alpha(v: GridFunction, x0, r_base: float) -> float:
    """Empirical oscillation-decay exponent on sub-balls (clipped)."""
    rhos = [r_base * 2.0**-k for k in range(4)]
    oscs = [oscillation(v.values, v.grid, Ball(x0, rho)) for rho in rhos]
    slope, _ = fit_exponent(rhos, oscs)
    if slope is None:
        return 0.5
    return float(min(max(slope, 0.05), 0.95))


def exp_tail_decay(
    params: ParamSet,
    expo: Optional[DecayExponents] = None,
    options: Optional[dict] = None,
    seed: int = 0,
) -> ExperimentReport:
    expo = expo or DecayExponents.defaults(params)
    expo.validate(params)
    params = expo.apply_to(params)
    base = {
        "half_width": 1.2 if params.n == 2 else 2.0,
        "nodes": 96 if params.n == 2 else 768,
        "omega_radius": 0.95 if params.n == 2 else 1.5,
        "r": 0.8 if params.n == 2 else 1.2,
        "rho_levels": 4,
        "measure": {"kind": "bump", "width": 0.25, "mass": 1.0},
        "exterior": {
            "kind": "sum",
            "terms": [
                {"kind": "affine", "a": [0.5] * params.n, "b": 0.1},
                {"kind": "bump", "amp": 0.4, "center": [0.3] * params.n, "width": 0.7},
            ],
        },
    }
    opts = _merge(base, options)
    grid, g, weights = _grid_and_exterior(params, opts)
    spec = _field_spec(params, opts)
    cfg = _solve_cfg(opts)
    x0 = grid.center()
    r = float(opts["r"])
    v, _ = solve_dirichlet(None, g, params, spec, weights, cfg)
    dv = gradient(v)
    mu = build_measure(grid, opts["measure"])
    u, _ = solve_dirichlet(mu, g, params, spec, weights, cfg)
    du = gradient(u)
    alpha = _fit_alpha(v, x0, r / 2.0)
    q0 = params.q0
    # consecutive dyadic mapping: the bracket at scale 2*rho controls rho
    scales = [r * 2.0 ** -(k + 1) for k in range(int(opts["rho_levels"]))]
    lhs, rhs, ratios = [], [], []
    lhs_u, rhs_u, ratios_u = [], [], []
    for rho in scales:
        r_base = 2.0 * rho
        vmean = ball_average(v.values, grid, Ball(x0, rho))
        cent_v = GridFunction(
            grid, v.values - vmean,
            None if v.far_field is None else v.far_field - vmean,
        )
        t_v = tail(cent_v, x0, rho, params.p, params.s) / rho**params.pprime
        br_v = sum(
            brackets.tail_decay_rhs(v, dv, x0, rho, r_base, params, alpha).values()
        )
        lhs.append(t_v)
        rhs.append(br_v)
        ratios.append(_ratio(t_v, br_v))
        umean = ball_average(u.values, grid, Ball(x0, rho))
        cent_u = GridFunction(
            grid, u.values - umean,
            None if u.far_field is None else u.far_field - umean,
        )
        t_u = tail(cent_u, x0, rho, params.p, params.s) / rho**params.pprime
        br_u = sum(
            brackets.tail_decay_rhs(
                u, du, x0, rho, r_base, params, alpha, mu=mu
            ).values()
        ) ** (1.0 / q0)
        lhs_u.append(t_u)
        rhs_u.append(br_u)
        ratios_u.append(_ratio(t_u, br_u))
    tail_slope, tail_resid = fit_exponent(scales, lhs)
    bound = float(opts.get("ratio_bound", RATIO_BOUND))
    verdict = _ratio_spread(ratios) < bound and _ratio_spread(ratios_u) < bound
    extras = {
        "alpha_fit": alpha,
        "measure_scene": {"lhs": lhs_u, "rhs": rhs_u, "ratios": ratios_u},
        "tail_exponent_vs_a2bar": {
            "fitted": tail_slope,
            "a2bar": params.a2bar,
            "note": "recorded only; no criterion on the gap",
        },
    }
    _flag_n1(params, extras)
    return ExperimentReport(
        name="tail-decay",
        params=asdict(params),
        exponents=asdict(expo),
        scales=scales,
        lhs=lhs,
        rhs=rhs,
        ratios=ratios,
        fitted_exponent=tail_slope,
        fit_residual=tail_resid,
        verdict=bool(verdict),
        provenance=_provenance("tail-decay", params, expo, opts, seed),
        extras=extras,
    )


# ---------------------------------------------------------------------------
# energy inequalities


def exp_energy_inequalities(
    params: ParamSet,
    expo: Optional[DecayExponents] = None,
    options: Optional[dict] = None,
    seed: int = 0,
) -> ExperimentReport:
    expo = expo or DecayExponents.defaults(params)
    expo.validate(params)
    params = expo.apply_to(params)
    base = {
        "half_width": 1.2 if params.n == 2 else 2.0,
        "nodes": 96 if params.n == 2 else 640,
        "omega_radius": 1.0 if params.n == 2 else 1.5,
        "scales": [0.6, 0.3, 0.15],
        "holder_r": 0.45,
        "exterior": {
            "kind": "sum",
            "terms": [
                {"kind": "affine", "a": [0.6] * params.n, "b": 0.2},
                {"kind": "bump", "amp": 0.5, "center": [0.2] * params.n, "width": 0.7},
            ],
        },
    }
    opts = _merge(base, options)
    grid, g, weights = _grid_and_exterior(params, opts)
    spec = _field_spec(params, opts)
    cfg = _solve_cfg(opts)
    x0 = grid.center()
    p, s = params.p, params.s
    v, _ = solve_dirichlet(None, g, params, spec, weights, cfg)
    dv = gradient(v)
    dv_norm = np.sqrt(np.sum(dv * dv, axis=-1))
    hn = grid.cell_measure()
    dist = grid.distances(x0)
    sup_c, ccp_c, sob_c = [], [], []
    scales = [float(r) for r in opts["scales"]]
    for r in scales:
        k = ball_average(v.values, grid, Ball(x0, r))
        centered = GridFunction(
            grid, v.values - k, None if v.far_field is None else v.far_field - k
        )
        half = Ball(x0, r / 2.0)
        sup_lhs = float(np.max(np.abs(centered.values[ball_mask(grid, half)])))
        sup_rhs = ball_average(np.abs(centered.values), grid, Ball(x0, r)) + tail(
            centered, x0, r / 2.0, p, s
        )
        sup_c.append(_ratio(sup_lhs, sup_rhs))
        count_half = int(np.count_nonzero(ball_mask(grid, half)))
        gag = gagliardo_seminorm(centered, half, s, p) / (count_half * hn)
        ccp_lhs = ball_average(dv_norm**p, grid, half) + gag
        ccp_rhs = (
            ball_average(np.abs(centered.values), grid, Ball(x0, r)) / r
            + tail(centered, x0, r / 2.0, p, s) / r
        ) ** p
        ccp_c.append(_ratio(ccp_lhs, ccp_rhs))
        cutoff = np.maximum(0.0, 1.0 - (dist / r) ** 2) ** 2
        h_fn = GridFunction(grid, centered.values * cutoff, 0.0)
        dh = gradient(h_fn)
        dh_norm_p = np.sum(dh * dh, axis=-1) ** (p / 2.0)
        count_r = int(np.count_nonzero(ball_mask(grid, Ball(x0, r))))
        sob_lhs = (gagliardo_seminorm(h_fn, Ball(x0, r), s, p) / (count_r * hn)) ** (
            1.0 / p
        )
        sob_rhs = r ** (1.0 - s) * ball_average(dh_norm_p, grid, Ball(x0, r)) ** (
            1.0 / p
        )
        sob_c.append(_ratio(sob_lhs, sob_rhs))
    r_hol = float(opts["holder_r"])
    k_hol = ball_average(v.values, grid, Ball(x0, r_hol))
    rhos = [r_hol * 2.0**-j for j in range(4)]
    oscs = [oscillation(v.values, grid, Ball(x0, rho)) for rho in rhos]
    alpha_fit, alpha_resid = fit_exponent(rhos, oscs)
    alpha_fit = 0.0 if alpha_fit is None else float(alpha_fit)
    cent_hol = GridFunction(
        grid, v.values - k_hol,
        None if v.far_field is None else v.far_field - k_hol,
    )
    hol_base = ball_average(np.abs(cent_hol.values), grid, Ball(x0, 2 * r_hol)) + tail(
        cent_hol, x0, r_hol, p, s
    )
    hol_c = [
        _ratio(osc, (rho / r_hol) ** alpha_fit * hol_base)
        for rho, osc in zip(rhos, oscs)
    ]
    families = {
        "sup_bound": sup_c,
        "caccioppoli": ccp_c,
        "sobolev_embedding": sob_c,
        "holder": hol_c,
    }
    stable = all(
        _ratio_spread(c) < STABILITY_FACTOR for c in families.values()
    )
    verdict = stable and alpha_fit >= 0.05
    extras = {
        "families": families,
        "alpha_fit": alpha_fit,
        "alpha_fit_residual": alpha_resid,
    }
    _flag_n1(params, extras)
    return ExperimentReport(
        name="energy-inequalities",
        params=asdict(params),
        exponents=asdict(expo),
        scales=scales,
        lhs=ccp_c,
        rhs=[1.0] * len(ccp_c),
        ratios=ccp_c,
        fitted_exponent=alpha_fit,
        fit_residual=alpha_resid,
        verdict=bool(verdict),
        provenance=_provenance("energy-inequalities", params, expo, opts, seed),
        extras=extras,
    )


# ---------------------------------------------------------------------------
# flux excess decay under measure data (p >= 2)


def exp_flux_excess_measure(
    params: ParamSet,
    expo: Optional[DecayExponents] = None,
    options: Optional[dict] = None,
    seed: int = 0,
) -> ExperimentReport:
    if params.p < 2.0:
        raise ExperimentError("requires p >= 2")
    expo = expo or DecayExponents.defaults(params)
    expo.validate(params)
    params = expo.apply_to(params)
    base = {
        "half_width": 1.2,
        "nodes": 128 if params.n == 2 else 768,
        "omega_radius": 0.95 if params.n == 2 else 1.6,
        "M": 8.0,
        "r": 0.1,
        "levels": 6,
        "measure": {"kind": "bump", "center": [0.4] * params.n, "width": 0.3, "mass": 1.0},
        "exterior": {
            "kind": "sum",
            "terms": [
                {"kind": "affine", "a": [0.5] * params.n, "b": 0.0},
                {"kind": "sinusoid", "amp": 0.2, "k": [1.5] * params.n, "phase": 0.4},
            ],
        },
        "eta": None,
    }
    opts = _merge(base, options)
    grid, g, weights = _grid_and_exterior(params, opts)
    spec = _field_spec(params, opts)
    cfg = _solve_cfg(opts)
    x0 = grid.center()
    big_m = float(opts["M"])
    big_r = big_m * float(opts["r"])
    mu = build_measure(grid, opts["measure"])
    u, _ = solve_dirichlet(mu if mu.density is not None else None, g, params, spec, weights, cfg)
    du = gradient(u)
    flux = vector_field_A(du, spec if spec.variant != "model" else VectorFieldSpec(p=params.p))
    floor = 3.0 * grid.h
    scales = []
    for k in range(int(opts["levels"])):
        rho = max(big_r * 2.0**-k, floor)
        if scales and rho >= scales[-1]:
            break
        scales.append(rho)
    lhs = [excess(flux, grid, Ball(x0, rho)) for rho in scales]
    degenerate = all(val <= ZERO_FLOOR for val in lhs)
    kappa_fit, resid = (None, None) if degenerate else fit_exponent(scales, lhs)
    beta_v = max(kappa_fit or 0.05, 0.05)
    eta = float(opts["eta"]) if opts.get("eta") is not None else float(params.n)
    rhs, ratios = [], []
    for rho, val in zip(scales, lhs):
        terms = brackets.flux_excess_rhs(
            u, flux, mu, x0, rho, big_r, params, expo.eps1, beta_v, eta
        )
        rhs.append(sum(terms.values()))
        ratios.append(_ratio(val, rhs[-1]))
    if degenerate:
        verdict = True
    else:
        noise = float(opts.get("noise_factor", 1.2))
        monotone = all(
            lhs[k + 1] <= noise * lhs[k] + ZERO_FLOOR for k in range(len(lhs) - 1)
        )
        bounded_sum = sum(lhs) <= 10.0 * lhs[0] + ZERO_FLOOR
        verdict = monotone and bounded_sum
    extras = {
        "kappa_fit": kappa_fit,
        "beta_v_used": beta_v,
        "eta_used": eta,
        "degenerate": degenerate,
        "M": big_m,
    }
    _flag_n1(params, extras)
    return ExperimentReport(
        name="flux-excess-measure",
        params=asdict(params),
        exponents=asdict(expo),
        scales=scales,
        lhs=lhs,
        rhs=rhs,
        ratios=ratios,
        fitted_exponent=kappa_fit,
        fit_residual=resid,
        verdict=bool(verdict),
        provenance=_provenance("flux-excess-measure", params, expo, opts, seed),
        extras=extras,
    )


# ---------------------------------------------------------------------------
# pointwise bound over a scene family


def _default_family(params: ParamSet, rng: np.random.Generator, count: int):
    fam = []
    for _ in range(count):
        c = rng.uniform(-0.25, 0.25, size=params.n)
        fam.append(
            {
                "measure": {
                    "kind": "bump",
                    "center": [float(x) for x in c],
                    "width": float(rng.uniform(0.2, 0.35)),
                    "mass": float(rng.uniform(0.5, 2.0)),
                },
                "exterior": {
                    "kind": "sum",
                    "terms": [
                        {
                            "kind": "affine",
                            "a": [float(a) for a in rng.uniform(-0.6, 0.6, params.n)],
                            "b": float(rng.uniform(-0.3, 0.3)),
                        },
                        {
                            "kind": "bump",
                            "amp": float(rng.uniform(-0.4, 0.4)),
                            "center": [float(x) for x in rng.uniform(-0.3, 0.3, params.n)],
                            "width": float(rng.uniform(0.5, 0.9)),
                        },
                    ],
                },
            }
        )
    return fam


def exp_pointwise_bound(
    params: ParamSet,
    expo: Optional[DecayExponents] = None,
    options: Optional[dict] = None,
    seed: int = 0,
) -> ExperimentReport:
    expo = expo or DecayExponents.defaults(params)
    expo.validate(params)
    params = expo.apply_to(params)
    small = params.p < 2.0
    base = {
        "half_width": 1.2,
        "nodes_coarse": 32 if small else 48,
        "nodes_fine": 64 if small else 96,
        "omega_radius": 0.95,
        "R": 0.45,
        "family_size": 5,
        "probes": 10,
        "kappa": 0.1,
    }
    opts = _merge(base, options)
    rng = np.random.default_rng(seed)
    family = opts.get("family") or _default_family(params, rng, int(opts["family_size"]))
    if len(family) < 5:
        raise ExperimentError("requires a family of at least 5 data configurations")
    angles = rng.uniform(0.0, 2.0 * math.pi, size=int(opts["probes"]))
    sup_ratios = {}
    per_scale = {}
    for label, nodes in (("coarse", opts["nodes_coarse"]), ("fine", opts["nodes_fine"])):
        worst = 0.0
        all_ratios = []
        for scene in family:
            sopts = dict(opts, nodes=nodes, exterior=scene["exterior"])
            grid, g, weights = _grid_and_exterior(params, sopts)
            spec = _field_spec(params, sopts)
            cfg = _solve_cfg(sopts)
            mu = build_measure(grid, scene["measure"])
            u, _ = solve_dirichlet(mu, g, params, spec, weights, cfg)
            du = gradient(u)
            flux = vector_field_A(
                du, spec if spec.variant != "model" else VectorFieldSpec(p=params.p)
            ) if params.p >= 2.0 else None
            big_r = float(opts["R"])
            cen = np.asarray(grid.center())
            for ang in angles:
                probe_pt = cen + 0.2 * np.array(
                    [math.cos(ang), math.sin(ang)][: grid.dim]
                )
                dist = grid.distances(tuple(probe_pt))
                ij = np.unravel_index(int(np.argmin(dist)), grid.shape)
                x_probe = tuple(grid.coords()[ij])
                b = Ball(x_probe, big_r)
                if params.p >= 2.0:
                    mean_flux = ball_average(flux, grid, b)
                    lhs = float(np.linalg.norm(flux[ij] - mean_flux))
                else:
                    mean_du = ball_average(du, grid, b)
                    lhs = float(np.linalg.norm(du[ij] - mean_du))
                terms = brackets.pointwise_rhs(
                    u, du, flux, mu, x_probe, big_r, params, expo.sigma,
                    float(opts["kappa"]),
                )
                rhs_val = sum(terms.values())
                ratio = _ratio(lhs, rhs_val)
                all_ratios.append(ratio)
                worst = max(worst, ratio)
        sup_ratios[label] = worst
        per_scale[label] = all_ratios
    shift = abs(sup_ratios["fine"] - sup_ratios["coarse"]) / max(
        sup_ratios["coarse"], 1e-300
    )
    verdict = (
        math.isfinite(sup_ratios["fine"])
        and math.isfinite(sup_ratios["coarse"])
        and shift <= float(opts.get("refine_tol", 0.2))
    )
    extras = {
        "sup_ratio_coarse": sup_ratios["coarse"],
        "sup_ratio_fine": sup_ratios["fine"],
        "refinement_shift": shift,
        "kappa": float(opts["kappa"]),
    }
    _flag_n1(params, extras)
    return ExperimentReport(
        name="pointwise-bound",
        params=asdict(params),
        exponents=asdict(expo),
        scales=[0, 1],
        lhs=[sup_ratios["coarse"], sup_ratios["fine"]],
        rhs=[1.0, 1.0],
        ratios=[sup_ratios["coarse"], sup_ratios["fine"]],
        fitted_exponent=None,
        fit_residual=None,
        verdict=bool(verdict),
        provenance=_provenance("pointwise-bound", params, expo, opts, seed),
        extras=extras,
    )


# ---------------------------------------------------------------------------
# bracket audit over a compact scene


def run_bracket_audit(
    params: ParamSet,
    expo: Optional[DecayExponents] = None,
    options: Optional[dict] = None,
    seed: int = 0,
) -> dict:
    """Evaluate every bracket through both code paths on a small scene."""
    expo = expo or DecayExponents.defaults(params)
    expo.validate(params)
    params = expo.apply_to(params)
    base = {
        "half_width": 1.2,
        "nodes": 40 if params.n == 2 else 256,
        "omega_radius": 0.95 if params.n == 2 else 1.5,
        "r": 0.6,
        "rho": 0.3,
        "measure": {"kind": "bump", "width": 0.3, "mass": 1.0},
        "exterior": {
            "kind": "sum",
            "terms": [
                {"kind": "affine", "a": [0.5] * params.n, "b": 0.1},
                {"kind": "bump", "amp": 0.4, "center": [0.2] * params.n, "width": 0.7},
            ],
        },
    }
    opts = _merge(base, options)
    grid, g, weights = _grid_and_exterior(params, opts)
    spec = _field_spec(params, opts)
    cfg = _solve_cfg(opts)
    x0 = grid.center()
    r, rho = float(opts["r"]), float(opts["rho"])
    v, _ = solve_dirichlet(None, g, params, spec, weights, cfg)
    dv = gradient(v)
    mu = build_measure(grid, opts["measure"])
    u, _ = solve_dirichlet(mu, g, params, spec, weights, cfg)
    du = gradient(u)
    flux = vector_field_A(du, VectorFieldSpec(p=params.p)) if params.p >= 2.0 else du
    checks = {}
    checks["homog_excess"] = brackets.audit_bracket(
        "homog_excess", v, dv, x0, rho, params, expo.eps1
    )[2]
    checks["mixed_local"] = brackets.audit_bracket(
        "mixed_local", v, dv, x0, r, params
    )[2]
    checks["measure_comparison"] = brackets.audit_bracket(
        "measure_comparison", mu, du, grid, x0, r, params, 1.0
    )[2]
    checks["tail_decay_v"] = brackets.audit_bracket(
        "tail_decay", v, dv, x0, rho, r, params, 0.5
    )[2]
    checks["tail_decay_u"] = brackets.audit_bracket(
        "tail_decay", u, du, x0, rho, r, params, 0.5, mu
    )[2]
    if params.p >= 2.0:
        checks["flux_excess"] = brackets.audit_bracket(
            "flux_excess", u, flux, mu, x0, rho, r, params, expo.eps1, 0.25,
            float(params.n),
        )[2]
    checks["pointwise"] = brackets.audit_bracket(
        "pointwise", u, du, flux, mu, x0, r, params, expo.sigma, 0.1
    )[2]
    checks["gradient_potential"] = brackets.audit_bracket(
        "gradient_potential", u, du, mu, x0, r, params, expo.sigma
    )[2]
    return {
        "checks": checks,
        "max_discrepancy": max(checks.values()),
        "config_hash": _provenance("bracket-audit", params, expo, opts, seed)[
            "config_hash"
        ],
    }


EXPERIMENTS: dict[str, Callable] = {
    "excess-decay-homogeneous": exp_excess_decay_homogeneous,
    "comparison-mixed-local": exp_comparison_mixed_local,
    "comparison-measure": exp_comparison_measure,
    "dirac-gradient": exp_dirac_gradient,
    "tail-decay": exp_tail_decay,
    "energy-inequalities": exp_energy_inequalities,
    "flux-excess-measure": exp_flux_excess_measure,
    "pointwise-bound": exp_pointwise_bound,
}
