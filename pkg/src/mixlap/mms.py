"""Manufactured-solution convergence studies in one dimension.

The manufactured state is the compact quartic bump (1-x^2)^4, which is C^3
across its support boundary.  Its data splits into

  * the local part, evaluated from the closed-form derivative
    -A'(u') u'' of the chosen vector field, and
  * the nonlocal part, evaluated on a much finer reference lattice with the
    same truncation geometry (box, far radius, symmetric principal-value
    window), so the reference is independent of the test resolution and
    the recovery error isolates pure discretization error.

Subquadratic exponents use the regularized field: the model field's data
-(p-1)|u'|^{p-2} u'' is singular at critical points of the bump when p < 2,
so no grid sequence could converge to it pointwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grids import GridFunction, make_grid
from .measures import Measure
from .operators import (
    ParamSet,
    VectorFieldSpec,
    assemble_kernel_weights,
    kernel_constant,
)
from .solver import SolveConfig, solve_dirichlet


def bump(x: np.ndarray) -> np.ndarray:
    t = np.maximum(0.0, 1.0 - x * x)
    return t**4


def bump_d1(x: np.ndarray) -> np.ndarray:
    t = np.maximum(0.0, 1.0 - x * x)
    return -8.0 * x * t**3


def bump_d2(x: np.ndarray) -> np.ndarray:
    t = np.maximum(0.0, 1.0 - x * x)
    return -8.0 * t**3 + 48.0 * x * x * t**2


def field_derivative(t: np.ndarray, spec: VectorFieldSpec) -> np.ndarray:
    """A'(t) for the scalar field, model or regularized."""
    p = spec.p
    if spec.variant == "regularized":
        q = spec.eps**2 + t * t
        return q ** ((p - 2.0) / 2.0) + (p - 2.0) * t * t * q ** ((p - 4.0) / 2.0)
    out = np.zeros_like(t)
    nz = t != 0.0
    out[nz] = (p - 1.0) * np.abs(t[nz]) ** (p - 2.0)
    if p == 2.0:
        out[~nz] = 1.0
    return out


def local_rhs(x: np.ndarray, spec: VectorFieldSpec) -> np.ndarray:
    """-d/dx A(u*') = -A'(u*') u*'' in closed form."""
    return -field_derivative(bump_d1(x), spec) * bump_d2(x)


def _phi_scalar(t: np.ndarray, p: float) -> np.ndarray:
    out = np.zeros_like(t)
    nz = t != 0.0
    out[nz] = np.abs(t[nz]) ** (p - 2.0) * t[nz]
    return out


def nonlocal_rhs_reference(
    xs: np.ndarray,
    half_width: float,
    ext_radius: float,
    s: float,
    p: float,
    fine_cells: int = 8192,
) -> np.ndarray:
    """Reference nonlocal data at arbitrary points.

    Integrates the kernel exactly over fine cells clipped away from the
    symmetric window [x - h_f/2, x + h_f/2], with the same constant
    far-field closure as the production stencil.
    """
    sp_ = s * p
    ck = kernel_constant(1, s)
    h_f = 2.0 * half_width / fine_cells
    centers = -half_width + (np.arange(fine_cells) + 0.5) * h_f
    ustar_f = bump(centers)
    lo = centers - 0.5 * h_f
    hi = centers + 0.5 * h_f
    out = np.empty(xs.shape)
    for k, x in enumerate(xs):
        a = np.maximum(lo, np.minimum(hi, x - 0.5 * h_f))
        b = np.maximum(lo, np.minimum(hi, x + 0.5 * h_f))
        # kernel mass of each cell outside the symmetric window
        left_lo = np.minimum(lo, x)
        left_hi = np.minimum(a, x)
        right_lo = np.maximum(b, x)
        right_hi = np.maximum(hi, x)

        def mass(t0, t1):
            d0 = np.abs(x - t0)
            d1 = np.abs(x - t1)
            dmin = np.minimum(d0, d1)
            dmax = np.maximum(d0, d1)
            out_ = np.zeros_like(d0)
            ok = t1 > t0
            out_[ok] = (dmin[ok] ** (-sp_) - dmax[ok] ** (-sp_)) / sp_
            return out_

        w = ck * (mass(left_lo, left_hi) + mass(right_lo, right_hi))
        diff = _phi_scalar(bump(np.array([x]))[0] - ustar_f, p)
        val = float(np.dot(w, diff))
        # exact two-ray complement mass, matching the production convention
        a_l, a_r = x + half_width, half_width - x
        farmass = ck * (a_l ** (-sp_) + a_r ** (-sp_)) / sp_
        val += farmass * _phi_scalar(np.array([bump(np.array([x]))[0]]), p)[0]
        out[k] = val
    return out


@dataclass
class MmsResult:
    nodes: int
    error: float
    residual: float
    newton_iterations: int


def mms_solve(
    params: ParamSet,
    spec: VectorFieldSpec,
    nodes: int,
    half_width: float = 2.0,
    omega_radius: float = 1.4,
    fine_cells: int = 8192,
    cfg: SolveConfig = SolveConfig(),
) -> MmsResult:
    """Solve against the reference manufactured data; error is max-norm."""
    grid = make_grid(1, half_width, nodes, interior="ball", interior_radius=omega_radius)
    x = grid.coords()[:, 0]
    weights = assemble_kernel_weights(grid, params, dense_ok=True)
    f_vals = local_rhs(x, spec) + nonlocal_rhs_reference(
        x, half_width, grid.ext_radius, params.s, params.p, fine_cells
    )
    mu = Measure(density=GridFunction(grid, f_vals, far_field=0.0))
    g = GridFunction(grid, bump(x), far_field=0.0)
    u, info = solve_dirichlet(mu, g, params, spec, weights, cfg)
    err = float(np.max(np.abs(u.values - bump(x))[grid.interior]))
    return MmsResult(
        nodes=nodes,
        error=err,
        residual=info.residual,
        newton_iterations=info.newton_iterations,
    )


def convergence_pair(
    params: ParamSet, spec: VectorFieldSpec, nodes: int, **kw
) -> tuple:
    coarse = mms_solve(params, spec, nodes, **kw)
    fine = mms_solve(params, spec, 2 * nodes, **kw)
    return coarse, fine, coarse.error / fine.error
