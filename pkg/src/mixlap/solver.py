"""Damped inexact Newton solves for the mixed Dirichlet problem, plus the
approximation driver for genuine measure data.

The nonlinear system is the collocation residual on the unknown nodes with
the Dirichlet complement held fixed.  Each Newton step solves the symmetric
tangent (sparse local part plus dense nonlocal part) by preconditioned
conjugate gradients, preconditioned by the local tangent plus the nonlocal
diagonal; steps are Armijo-damped on the squared residual.  Degenerate
fields are handled by epsilon-continuation: the local field is regularized
and the regularization is halved down to the floor, warm-starting each
stage.

Measure data enters through mollification: the driver solves a sequence of
smoothed problems with shrinking mollification radius (floored at one cell,
which is the honest resolution limit of the grid) and records Cauchy
distances of the iterates in the W^{1,q} metric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grids import Ball, GridDomain, GridError, GridFunction, gradient, w1q_distance
from .measures import Measure, measure_density_values, mollify_measure
from .operators import (
    KernelWeights,
    OperatorError,
    ParamSet,
    VectorFieldSpec,
    apply_fractional,
    apply_local,
    fractional_jvp,
    fractional_tangent_diag,
    local_tangent_matrix,
)


class SolverError(RuntimeError):
    def __init__(self, message, best=None, history=None):
        super().__init__(message)
        self.best = best
        self.history = history or []


@dataclass(frozen=True)
class SolveConfig:
    tol_rel: float = 1e-10
    max_newton: int = 200
    armijo_slope: float = 1e-4
    backtrack: float = 0.5
    min_step: float = 2.0**-20
    eps0_scale: float = 1e-4
    eps_floor: float = 1e-8
    eps_factor: float = 0.5
    picard_fallback: bool = True
    cg_rtol: float = 1e-2
    cg_maxiter: int = 500

    def __post_init__(self):
        if not self.tol_rel > 0:
            raise ValueError("tol_rel must be positive")
        if self.max_newton <= 0 or self.cg_maxiter <= 0:
            raise ValueError("iteration caps must be positive")


@dataclass
class SolveInfo:
    residual: float = math.nan
    scale: float = math.nan
    eps_final: float = 0.0
    newton_iterations: int = 0
    history: list = field(default_factory=list)


def _pcg(matvec, b, msolve, rtol, maxiter):
    x = np.zeros_like(b)
    r = b.copy()
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return x, r
    z = msolve(r)
    p = z.copy()
    rz = float(r @ z)
    for _ in range(maxiter):
        ap = matvec(p)
        denom = float(p @ ap)
        if denom <= 0.0 or not math.isfinite(denom):
            break
        alpha = rz / denom
        x += alpha * p
        r -= alpha * ap
        if np.linalg.norm(r) <= rtol * bnorm:
            break
        z = msolve(r)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, r


class _Problem:
    """Residual/tangent bundle for one (possibly regularized) stage."""

    def __init__(self, grid, mask, f_values, g, spec, weights, params):
        self.grid = grid
        self.mask = mask
        self.mask_flat = mask.reshape(-1)
        self.idx = np.flatnonzero(self.mask_flat)
        self.f = f_values
        self.g = g
        self.spec = spec
        self.weights = weights
        self.params = params

    def full_from_unknowns(self, x):
        vals = self.g.values.copy().reshape(-1)
        vals[self.idx] = x
        return GridFunction(
            self.grid,
            vals.reshape(self.grid.shape),
            self.g.far_field,
            self.g.far_slope,
        )

    def residual_vec(self, u: GridFunction):
        out = apply_local(u, self.spec)
        if self.weights is not None:
            out = out + apply_fractional(u, self.weights, self.spec.p)
        if self.f is not None:
            out = out - self.f
        return out.reshape(-1)[self.idx]

    def tangent(self, u: GridFunction, delta):
        jloc = local_tangent_matrix(u, self.spec, delta=delta)
        jloc = jloc[self.idx][:, self.idx].tocsr()
        if self.weights is not None:
            diag_nl = fractional_tangent_diag(u, self.weights, self.spec.p, delta)[
                self.idx
            ]
        else:
            diag_nl = np.zeros(self.idx.size)
        # tiny ridge keeps splu away from exact zero pivots at flat states
        pre = (jloc + sp.diags(diag_nl + 1e-30)).tocsc()
        lu = spla.splu(pre)

        def matvec(w):
            out = jloc @ w
            if self.weights is not None:
                wfull = np.zeros(self.grid.size)
                wfull[self.idx] = w
                out = out + fractional_jvp(
                    u, wfull, self.weights, self.spec.p, delta
                )[self.idx]
            return out

        return matvec, lu.solve


def _newton_stage(problem, x0, cfg: SolveConfig, scale, delta, info: SolveInfo, tol_abs=0.0):
    x = x0.copy()
    u = problem.full_from_unknowns(x)
    f_vec = problem.residual_vec(u)
    phi = 0.5 * float(f_vec @ f_vec)
    tol = cfg.tol_rel * scale + tol_abs
    for _ in range(cfg.max_newton):
        res = float(np.linalg.norm(f_vec))
        if res <= tol:
            return x, res
        matvec, msolve = problem.tangent(u, delta)
        d, cg_res = _pcg(matvec, -f_vec, msolve, cfg.cg_rtol, cfg.cg_maxiter)
        # slope F.(J d) comes free from the CG residual: J d = -F - cg_res
        slope = -float(f_vec @ f_vec) - float(f_vec @ cg_res)
        # cap pathological steps from nearly singular tangents at flat states
        cap = 1e3 * max(1.0, float(np.linalg.norm(x)))
        dnorm = float(np.linalg.norm(d))
        if dnorm > cap:
            d *= cap / dnorm
            slope *= cap / dnorm
        tried_fallback = False
        while True:
            t = 1.0
            accepted = False
            while t >= cfg.min_step:
                x_try = x + t * d
                u_try = problem.full_from_unknowns(x_try)
                f_try = problem.residual_vec(u_try)
                phi_try = 0.5 * float(f_try @ f_try)
                if phi_try <= phi + cfg.armijo_slope * t * slope:
                    accepted = True
                    break
                t *= cfg.backtrack
            if accepted or tried_fallback or not cfg.picard_fallback:
                break
            # fall back to the preconditioned descent direction
            d = msolve(-f_vec)
            slope = float(f_vec @ matvec(d)) * (-1.0)
            slope = -abs(slope)
            tried_fallback = True
        if not accepted:
            raise SolverError(
                "newton line search stalled",
                best=problem.full_from_unknowns(x),
                history=info.history,
            )
        x, u, f_vec, phi = x_try, u_try, f_try, phi_try
        info.newton_iterations += 1
        info.history.append(
            {
                "iter": info.newton_iterations,
                "residual": float(np.linalg.norm(f_vec)),
                "step": t,
                "eps": problem.spec.eps if problem.spec.variant == "regularized" else 0.0,
            }
        )
    res = float(np.linalg.norm(f_vec))
    if res <= tol:
        return x, res
    raise SolverError(
        f"newton did not converge: residual {res:.3e} > {tol:.3e}",
        best=problem.full_from_unknowns(x),
        history=info.history,
    )


def _linear_probe(g: GridFunction, f_values, unknown_mask, spec):
    """Scale estimate and cold-start seed from one local linear solve.

    The probe w solves the p=2 local problem with the same data; the
    p-Laplacian response has |Du|^(p-1) ~ |Dw|, which sets both the ladder
    scale and a sanely shaped initial increment.
    """
    gscale = float(np.max(np.sqrt(np.sum(gradient(g) ** 2, axis=-1))))
    seed = None
    if f_values is not None and np.any(f_values):
        grid = g.grid
        flat0 = GridFunction(grid, np.zeros(grid.shape))
        lap = local_tangent_matrix(flat0, VectorFieldSpec(p=2.0))
        idx = np.flatnonzero(unknown_mask.reshape(-1))
        mat = (lap[idx][:, idx] + sp.eye(idx.size) * 1e-12).tocsc()
        w = spla.splu(mat).solve(f_values.reshape(-1)[idx])
        wfull = np.zeros(grid.size)
        wfull[idx] = w
        wg = gradient(GridFunction(grid, wfull.reshape(grid.shape)))
        probe = float(np.max(np.sqrt(np.sum(wg * wg, axis=-1))))
        if probe > 0.0:
            du_target = probe ** (1.0 / (spec.p - 1.0))
            gscale = max(gscale, du_target)
            seed = wfull * (du_target / probe)
    return max(gscale, 1e-3), seed


def _eps_schedule(spec: VectorFieldSpec, gscale: float, cfg: SolveConfig):
    """Regularization ladder; empty means solve the given field directly."""
    if spec.p == 2.0 or spec.variant == "regularized":
        return []
    eps = cfg.eps0_scale * gscale
    ladder = []
    while eps > cfg.eps_floor:
        ladder.append(eps)
        eps *= cfg.eps_factor
    ladder.append(cfg.eps_floor)
    return ladder


def _final_spec(spec: VectorFieldSpec, cfg: SolveConfig) -> VectorFieldSpec:
    if spec.p < 2.0 and spec.variant == "model":
        # the model field is undefined at vanishing gradients; stay at the floor
        return spec.regularize(cfg.eps_floor)
    return spec


def solve_dirichlet(
    mu: Optional[Measure],
    g: GridFunction,
    params: ParamSet,
    spec: VectorFieldSpec,
    weights: Optional[KernelWeights],
    cfg: SolveConfig = SolveConfig(),
    unknown_mask: Optional[np.ndarray] = None,
    u0: Optional[GridFunction] = None,
):
    """Solve -div A(Du) + Lu = mu on the unknown nodes with u = g elsewhere.

    Returns (u, SolveInfo).  ``mu`` must be density-only (mollify first) or
    None for the homogeneous problem.  A warm start ``u0`` skips the
    continuation ladder; on failure the full ladder is retried.
    """
    grid = g.grid
    if unknown_mask is None:
        unknown_mask = grid.interior
    if not np.any(unknown_mask):
        raise GridError("no unknown nodes")
    f_values = None
    if mu is not None:
        f_values = measure_density_values(mu, grid)
    info = SolveInfo()
    final_spec = _final_spec(spec, cfg)
    base = _Problem(grid, unknown_mask, f_values, g, final_spec, weights, params)
    # problem scale from the data and the trivial extension of g
    x_init = g.values.reshape(-1)[base.idx].copy()
    scale_probe = base.residual_vec(base.full_from_unknowns(x_init))
    scale = max(float(np.linalg.norm(scale_probe)), 1e-30)
    if f_values is not None:
        scale = max(scale, float(np.linalg.norm(f_values.reshape(-1)[base.idx])))
    info.scale = scale
    # the residual cannot be driven below the fp noise of its own evaluation
    op_mag = 4.0 * grid.dim / grid.h**2
    if weights is not None:
        op_mag += float(np.max(weights.rowsums()) + np.max(weights.farmass))
    umag = max(1.0, float(np.max(np.abs(g.values))))
    tol_abs = 50.0 * np.finfo(float).eps * op_mag * umag * math.sqrt(base.idx.size)

    gscale, seed = _linear_probe(g, f_values, unknown_mask, spec)

    def run(x_start, use_ladder):
        x = x_start.copy()
        if use_ladder:
            for eps in _eps_schedule(spec, gscale, cfg):
                stage_spec = spec.regularize(eps)
                prob = _Problem(
                    grid, unknown_mask, f_values, g, stage_spec, weights, params
                )
                stage_cfg = replace(cfg, tol_rel=max(cfg.tol_rel, 1e-6))
                x, _ = _newton_stage(
                    prob, x, stage_cfg, scale, max(eps, cfg.eps_floor), info, tol_abs
                )
        delta = cfg.eps_floor
        if final_spec.variant == "regularized":
            delta = max(delta, final_spec.eps)
        return _newton_stage(base, x, cfg, scale, delta, info, tol_abs)

    x_cold = x_init
    if seed is not None and spec.p != 2.0:
        x_cold = x_init + seed[base.idx]
    if u0 is not None:
        x_warm = u0.values.reshape(-1)[base.idx].copy()
        try:
            x, res = run(x_warm, use_ladder=False)
        except SolverError:
            x, res = run(x_cold, use_ladder=True)
    else:
        x, res = run(x_cold, use_ladder=True)
    info.residual = res
    info.eps_final = final_spec.eps if final_spec.variant == "regularized" else 0.0
    return base.full_from_unknowns(x), info


def ball_unknown_mask(grid: GridDomain, ball: Ball, shrink: float = 0.0) -> np.ndarray:
    return grid.distances(ball.center) < ball.radius - shrink


def solve_homogeneous_mixed(
    exterior: GridFunction,
    ball: Ball,
    params: ParamSet,
    spec: VectorFieldSpec,
    weights: KernelWeights,
    cfg: SolveConfig = SolveConfig(),
    u0: Optional[GridFunction] = None,
):
    """Homogeneous mixed solve inside a ball with full complement data."""
    grid = exterior.grid
    mask = ball_unknown_mask(grid, ball)
    if np.any(mask & ~grid.interior):
        raise GridError("ball must sit inside the grid interior")
    return solve_dirichlet(
        None, exterior, params, spec, weights, cfg, unknown_mask=mask, u0=u0
    )


def solve_homogeneous_local(
    boundary_source: GridFunction,
    ball: Ball,
    params: ParamSet,
    spec: VectorFieldSpec,
    cfg: SolveConfig = SolveConfig(),
    shrink: Optional[float] = None,
):
    """Local Dirichlet solve in a ball; a one-cell boundary layer carries data.

    ``shrink`` overrides the layer thickness (default one cell); refinement
    studies pass the coarse-grid value so both resolutions discretize the
    same geometric problem.
    """
    grid = boundary_source.grid
    mask = ball_unknown_mask(grid, ball, shrink=grid.h if shrink is None else shrink)
    if not np.any(mask):
        raise GridError("ball below grid resolution")
    if np.any(mask & ~grid.interior):
        raise GridError("ball must sit inside the grid interior")
    return solve_dirichlet(
        None, boundary_source, params, spec, None, cfg, unknown_mask=mask
    )


def dirichlet_energy(u: GridFunction, mask: np.ndarray, p: float) -> float:
    dg = gradient(u)
    dn = np.sqrt(np.sum(dg * dg, axis=-1))[mask]
    return float(np.sum(dn**p) * u.grid.cell_measure())


def sola_q_range(params: ParamSet):
    q0 = params.q0
    if params.n == 1:
        qmax = params.p
    else:
        qmax = min(params.n * (params.p - 1.0) / (params.n - 1.0), params.p)
    return q0, qmax


@dataclass
class SolaResult:
    iterates: list
    distances: list
    limit: GridFunction
    q_used: float
    deltas: list
    infos: list
    converged: bool


def sola_solve(
    mu: Measure,
    g: GridFunction,
    params: ParamSet,
    spec: VectorFieldSpec,
    weights: KernelWeights,
    cfg: SolveConfig = SolveConfig(),
    j_max: int = 4,
    delta0: Optional[float] = None,
    mollifier_shape: str = "poly",
    q: Optional[float] = None,
) -> SolaResult:
    """Approximation driver: solve with mollified data at shrinking radii.

    The radius floors at one cell width: the grid cannot represent a limit
    object below its own resolution, and the recorded distances make the
    floor visible instead of hiding it.
    """
    grid = g.grid
    if delta0 is None:
        delta0 = 8.0 * grid.h
    if q is None:
        q0, qmax = sola_q_range(params)
        q = 0.5 * (q0 + qmax)
    iterates = []
    infos = []
    deltas = []
    distances = []
    u_prev = None
    for j in range(j_max + 1):
        delta_j = max(grid.h, delta0 * 2.0**-j)
        deltas.append(delta_j)
        mu_j = mollify_measure(mu, delta_j, grid, shape=mollifier_shape)
        u_j, info_j = solve_dirichlet(
            mu_j, g, params, spec, weights, cfg, u0=u_prev
        )
        iterates.append(u_j)
        infos.append(info_j)
        if u_prev is not None:
            distances.append(w1q_distance(u_prev, u_j, q))
        u_prev = u_j
    tail3 = distances[-3:]
    converged = len(tail3) < 3 or (tail3[0] >= tail3[1] >= tail3[2]) or tail3[-1] < 1e-12
    return SolaResult(
        iterates=iterates,
        distances=distances,
        limit=iterates[-1],
        q_used=q,
        deltas=deltas,
        infos=infos,
        converged=converged,
    )
