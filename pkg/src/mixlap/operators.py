"""The structured local vector field, the nonlocal kernel, and both operator halves.

The local operator -div A(Du) is discretized by edge fluxes: on each cell
edge the full gradient is reconstructed (direct difference along the edge
axis, averaged centered differences transverse) and fed to A; the node value
is the discrete flux divergence.  At p = 2 this reduces to the standard
3/5-point Laplacian.

The nonlocal operator is a collocation sum with cell-integrated kernel
weights.  On a uniform grid the model-kernel weights depend only on the
node offset, so they are stored as a stencil:

  * 1d cells use the exact antiderivative of |x-y|^{-1-sp};
  * 2d cells within 3h use dyadically refined midpoint quadrature (3 levels,
    an 8x8 subcell rule) and a single midpoint beyond;
  * the self cell gets weight zero (symmetric principal-value cancellation);
  * beyond ext_radius the constant far-field model integrates in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.signal import fftconvolve
import scipy.sparse as sp

from . import _kernels
from .grids import GridDomain, GridError, GridFunction

DENSE_NODE_BUDGET = 20_000


class OperatorError(ValueError):
    pass


@dataclass(frozen=True)
class ParamSet:
    """Problem parameters (n, s, p) and the ellipticity/kernel constants."""

    n: int
    s: float
    p: float
    nu_a: float = 1.0
    l_a: float = 1.0
    nu_k: float = 1.0
    l_k: float = 1.0
    m: Optional[float] = None  # free exponent parameter, used when p < 2

    def __post_init__(self):
        if self.n not in (1, 2):
            raise OperatorError("requires n in {1, 2} (desk scale)")
        if not (0.0 < self.s < 1.0):
            raise OperatorError("requires s in (0, 1)")
        if not (self.p > 2.0 - 1.0 / self.n):
            raise OperatorError(f"requires p > 2 - 1/n = {2.0 - 1.0 / self.n}")
        if not (0 < self.nu_a <= self.l_a):
            raise OperatorError("requires 0 < nu_a <= l_a")
        if not (0 < self.nu_k <= self.l_k):
            raise OperatorError("requires 0 < nu_k <= l_k")
        if self.p < 2.0:
            m = self.m if self.m is not None else (1.0 - self.s) / 2.0
            if not (0.0 < m < 1.0 - self.s):
                raise OperatorError("requires m in (0, 1-s)")
            object.__setattr__(self, "m", float(m))
        a1, a2 = self.a1bar, self.a2bar
        if not a1 < a2:
            raise OperatorError("derived exponents must satisfy a1 < a2")

    @property
    def q0(self) -> float:
        return max(self.p - 1.0, 1.0)

    @property
    def pprime(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def a1bar(self) -> float:
        if self.p >= 2.0:
            return (1.0 - self.s) / (self.p - 1.0)
        return self.m

    @property
    def a2bar(self) -> float:
        if self.p >= 2.0:
            return 1.0 / (self.p - 1.0)
        return (1.0 - self.m * (2.0 - self.p)) / (self.p - 1.0)

    def with_m(self, m: float) -> "ParamSet":
        return replace(self, m=m)


@dataclass(frozen=True)
class VectorFieldSpec:
    """Choice of local vector field: model |z|^{p-2}z, its regularization,
    or a bounded scalar coefficient times the model field."""

    p: float
    variant: str = "model"
    eps: float = 0.0
    coeff: Optional[Callable] = None

    def __post_init__(self):
        if self.variant not in ("model", "regularized", "coefficient"):
            raise OperatorError(f"unknown vector field variant {self.variant!r}")
        if self.variant == "regularized" and not self.eps > 0:
            raise OperatorError("regularized variant needs eps > 0")
        if self.variant == "coefficient" and self.coeff is None:
            raise OperatorError("coefficient variant needs a coefficient callable")

    def regularize(self, eps: float) -> "VectorFieldSpec":
        if self.variant == "coefficient":
            return self
        if eps <= 0:
            return VectorFieldSpec(p=self.p, variant="model")
        return VectorFieldSpec(p=self.p, variant="regularized", eps=eps)


def _coeff_values(spec: VectorFieldSpec, x: Optional[np.ndarray], shape) -> np.ndarray:
    if spec.variant != "coefficient":
        return np.ones(shape)
    if x is None:
        raise OperatorError("coefficient variant needs evaluation points")
    return np.asarray(spec.coeff(x), dtype=float)


def vector_field_A(z, spec: VectorFieldSpec, x=None) -> np.ndarray:
    """A(z) for z of shape (..., dim); returns the same shape."""
    z = np.asarray(z, dtype=float)
    p = spec.p
    zn = np.sqrt(np.sum(z * z, axis=-1))
    if spec.variant == "regularized":
        fac = (spec.eps**2 + zn**2) ** ((p - 2.0) / 2.0)
        return fac[..., None] * z
    if p < 2.0 and np.any(zn == 0.0):
        raise OperatorError("degenerate evaluation: model field at z = 0 for p < 2")
    fac = np.zeros_like(zn)
    nz = zn > 0.0
    fac[nz] = zn[nz] ** (p - 2.0)
    out = fac[..., None] * z
    if spec.variant == "coefficient":
        out = _coeff_values(spec, x, zn.shape)[..., None] * out
    return out


def jacobian_A(z, spec: VectorFieldSpec, x=None) -> np.ndarray:
    """Exact Jacobian of A, shape (..., dim, dim); symmetric PSD."""
    z = np.asarray(z, dtype=float)
    p = spec.p
    d = z.shape[-1]
    zn2 = np.sum(z * z, axis=-1)
    eye = np.eye(d)
    if spec.variant == "regularized":
        q = spec.eps**2 + zn2
        base = q ** ((p - 2.0) / 2.0)
        outer = z[..., :, None] * z[..., None, :]
        return base[..., None, None] * (
            eye + (p - 2.0) * outer / q[..., None, None]
        )
    if p < 2.0 and np.any(zn2 == 0.0):
        raise OperatorError("degenerate evaluation: model field at z = 0 for p < 2")
    nz = zn2 > 0.0
    if p == 2.0:
        base = np.ones_like(zn2)
    else:
        base = np.zeros_like(zn2)
        base[nz] = zn2[nz] ** ((p - 2.0) / 2.0)
    outer = z[..., :, None] * z[..., None, :]
    ratio = np.zeros_like(outer)
    ratio[nz] = outer[nz] / zn2[nz][..., None, None]
    out = base[..., None, None] * (eye + (p - 2.0) * ratio)
    if spec.variant == "coefficient":
        out = _coeff_values(spec, x, zn2.shape)[..., None, None] * out
    return out


def v_map(z, p: float) -> np.ndarray:
    """V(z) = |z|^{(p-2)/2} z, the monotonicity-linearizing map."""
    z = np.asarray(z, dtype=float)
    zn = np.sqrt(np.sum(z * z, axis=-1))
    fac = np.zeros_like(zn)
    nz = zn > 0.0
    fac[nz] = zn[nz] ** ((p - 2.0) / 2.0)
    return fac[..., None] * z


def inverse_A(w, spec: VectorFieldSpec) -> np.ndarray:
    """Closed-form inverse of the model field: |w|^{(2-p)/(p-1)} w."""
    if spec.variant != "model":
        raise OperatorError("inverse_A supports the model field only")
    w = np.asarray(w, dtype=float)
    wn = np.sqrt(np.sum(w * w, axis=-1))
    fac = np.zeros_like(wn)
    nz = wn > 0.0
    fac[nz] = wn[nz] ** ((2.0 - spec.p) / (spec.p - 1.0))
    return fac[..., None] * w


# ---------------------------------------------------------------------------
# kernel weights


def kernel_constant(n: int, s: float) -> float:
    """Normalization of the model kernel.

    Chosen so that at p = 2 the nonlocal operator is the spectral fractional
    Laplacian with Fourier symbol |k|^{2s}; for other p it is an admissible
    constant multiple of the bare kernel.
    """
    from scipy.special import gamma

    return float(4.0**s * s * gamma(n / 2.0 + s) / (math.pi ** (n / 2.0) * gamma(1.0 - s)))


def _stencil_1d(n_nodes: int, h: float, sp_: float) -> np.ndarray:
    ks = np.arange(-(n_nodes - 1), n_nodes)
    st = np.zeros(ks.shape)
    nz = ks != 0
    d1 = (np.abs(ks[nz]) - 0.5) * h
    d2 = (np.abs(ks[nz]) + 0.5) * h
    st[nz] = (d1 ** (-sp_) - d2 ** (-sp_)) / sp_
    return st[:, None]  # uniform (2N-1, 1) layout


def _stencil_2d(nx: int, ny: int, h: float, sp_: float) -> np.ndarray:
    di = np.arange(-(nx - 1), nx)[:, None]
    dj = np.arange(-(ny - 1), ny)[None, :]
    r2 = (di**2 + dj**2).astype(float)
    st = np.zeros(r2.shape)
    far = r2 > 9.0
    st[far] = (np.sqrt(r2[far]) * h) ** (-2.0 - sp_) * h * h
    near = (~far) & (r2 > 0.0)
    sub = 8  # 3 dyadic refinement levels
    offs = (np.arange(sub) + 0.5) / sub - 0.5
    ox, oy = np.meshgrid(offs, offs, indexing="ij")
    for di_, dj_ in zip(*np.nonzero(near)):
        cx = (di_ - (nx - 1)) + ox
        cy = (dj_ - (ny - 1)) + oy
        rr = np.sqrt(cx**2 + cy**2) * h
        st[di_, dj_] = float(np.sum(rr ** (-2.0 - sp_))) * (h / sub) ** 2
    return st


def _coefficient_field(grid: GridDomain, params: ParamSet, variant: str) -> np.ndarray:
    if variant == "model":
        return np.ones(grid.size)
    if variant == "bounded":
        # smooth symmetric multiplier with range [nu_k, l_k]
        mid = 0.5 * (params.nu_k + params.l_k)
        amp = 0.5 * (params.l_k - params.nu_k)
        x = grid.coords().reshape(-1, grid.dim)
        phase = np.sum(x, axis=1)
        return mid + amp * np.cos(3.0 * phase)
    raise OperatorError(f"unknown kernel variant {variant!r}")


@dataclass(frozen=True)
class KernelWeights:
    """Cell-integrated kernel weights as an offset stencil.

    ``weight(i, j) = stencil[di + Nx - 1, dj + Ny - 1] * (coef_i + coef_j)/2``
    with zero self weight, plus a per-node scalar for the far-field region.
    """

    grid: GridDomain
    s: float
    p: float
    variant: str
    stencil: np.ndarray = field(repr=False, compare=False)
    farmass: np.ndarray = field(repr=False, compare=False)
    coef: np.ndarray = field(repr=False, compare=False)

    def shape_xy(self):
        nx = self.grid.shape[0]
        ny = self.grid.shape[1] if self.grid.dim == 2 else 1
        return nx, ny

    def node_index_arrays(self):
        nx, ny = self.shape_xy()
        ix = np.repeat(np.arange(nx), ny).astype(np.int64)
        iy = np.tile(np.arange(ny), nx).astype(np.int64)
        return ix, iy

    def weight(self, i, j) -> float:
        """Single pair weight by node index (int in 1d, (ix, iy) in 2d)."""
        nx, ny = self.shape_xy()
        i = (int(i), 0) if np.isscalar(i) else (tuple(i) + (0,))[:2]
        j = (int(j), 0) if np.isscalar(j) else (tuple(j) + (0,))[:2]
        w = self.stencil[i[0] - j[0] + nx - 1, i[1] - j[1] + ny - 1]
        ci = self.coef[i[0] * ny + i[1]]
        cj = self.coef[j[0] * ny + j[1]]
        return float(w * 0.5 * (ci + cj))

    def rowsums(self) -> np.ndarray:
        ones = np.ones(self.grid.shape if self.grid.dim == 2 else self.grid.shape[0])
        st = self.stencil if self.grid.dim == 2 else self.stencil[:, 0]
        out = fftconvolve(ones, st, mode="valid")
        return out.reshape(-1)


def assemble_kernel_weights(
    grid: GridDomain,
    params: ParamSet,
    kernel_variant: str = "model",
    dense_ok: bool = False,
) -> KernelWeights:
    if grid.size > DENSE_NODE_BUDGET and not dense_ok:
        raise OperatorError(
            f"grid has {grid.size} nodes; dense pair budget exceeds "
            f"{DENSE_NODE_BUDGET}^2, pass dense_ok to proceed"
        )
    sp_ = params.s * params.p
    ck = kernel_constant(grid.dim, params.s)
    if grid.dim == 1:
        st = ck * _stencil_1d(grid.shape[0], grid.h, sp_)
    else:
        st = ck * _stencil_2d(grid.shape[0], grid.shape[1], grid.h, sp_)
    # exact kernel mass of the box complement: grid cells plus the far model
    # tile the whole space with neither gap nor double counting
    from .measures import complement_kernel_mass_nodes

    farmass = ck * complement_kernel_mass_nodes(grid, grid.dim + sp_)
    coef = _coefficient_field(grid, params, kernel_variant)
    return KernelWeights(
        grid=grid,
        s=params.s,
        p=params.p,
        variant=kernel_variant,
        stencil=st,
        farmass=farmass,
        coef=coef,
    )


def _phi_np(t: np.ndarray, p: float) -> np.ndarray:
    if p == 2.0:
        return t
    a = np.abs(t)
    out = np.zeros_like(t)
    nz = a > 0.0
    out[nz] = a[nz] ** (p - 2.0) * t[nz]
    return out


def affine_background(weights: KernelWeights, u: GridFunction, p: float) -> np.ndarray:
    """Stencil response to the affine far model, subtracted from the sum.

    The principal value of the operator applied to an affine function
    vanishes, so the truncated stencil's nonzero response to it is a pure
    quadrature asymmetry; subtracting it makes affine complements exact.
    """
    g = weights.grid
    if u.far_slope is None:
        return np.zeros(g.size)
    a = np.asarray(u.far_slope, dtype=float)
    nx, ny = weights.shape_xy()
    di = np.arange(-(nx - 1), nx) * g.h
    if g.dim == 1:
        disp = a[0] * di[:, None]
    else:
        dj = np.arange(-(ny - 1), ny) * g.h
        disp = a[0] * di[:, None] + a[1] * dj[None, :]
    t_st = weights.stencil * _phi_np(disp, p)
    t_use = t_st if g.dim == 2 else t_st[:, 0]
    ones = np.ones(g.shape)
    conv_one = fftconvolve(ones, t_use, mode="valid").reshape(-1)
    if weights.variant == "model":
        return conv_one
    cgrid = weights.coef.reshape(g.shape)
    conv_c = fftconvolve(cgrid, t_use, mode="valid").reshape(-1)
    return 0.5 * weights.coef * conv_one + 0.5 * conv_c


def apply_fractional(u: GridFunction, weights: KernelWeights, p: float) -> np.ndarray:
    """Collocation values of the discrete fractional p-Laplacian at all nodes.

    The far region is modelled by the function's far model; the affine part
    of the model enters through an exact background subtraction.
    """
    g = u.grid
    if not g.same_layout(weights.grid):
        raise OperatorError("weights assembled on a different grid")
    flat = np.ascontiguousarray(u.values.reshape(-1), dtype=float)
    mvals = np.ascontiguousarray(u.far_model_values().reshape(-1))
    nx, ny = weights.shape_xy()
    if p == 2.0 and weights.variant == "model":
        # linear case: apply the convolution form to u minus the far model
        st = weights.stencil if g.dim == 2 else weights.stencil[:, 0]
        w = u.values - mvals.reshape(g.shape)
        conv = fftconvolve(w, st, mode="valid").reshape(-1)
        out = weights.rowsums() * (flat - mvals) - conv
        out += weights.farmass * (flat - mvals)
        return out.reshape(g.shape)
    ix, iy = weights.node_index_arrays()
    out = _kernels.nl_apply(
        flat,
        ix,
        iy,
        nx,
        ny,
        weights.stencil,
        weights.farmass,
        weights.coef,
        mvals,
        float(p),
    )
    if u.far_slope is not None:
        out = out - affine_background(weights, u, p)
    return out.reshape(g.shape)


def fractional_jvp(
    u: GridFunction,
    w: np.ndarray,
    weights: KernelWeights,
    p: float,
    delta: float,
) -> np.ndarray:
    """Smoothed tangent of apply_fractional at u, applied to w (flat node array)."""
    g = u.grid
    flat = np.ascontiguousarray(u.values.reshape(-1), dtype=float)
    wfl = np.ascontiguousarray(np.asarray(w, dtype=float).reshape(-1))
    nx, ny = weights.shape_xy()
    if p == 2.0 and weights.variant == "model":
        st = weights.stencil if g.dim == 2 else weights.stencil[:, 0]
        conv = fftconvolve(wfl.reshape(g.shape), st, mode="valid").reshape(-1)
        out = weights.rowsums() * wfl - conv + weights.farmass * wfl
        return out
    mvals = np.ascontiguousarray(u.far_model_values().reshape(-1))
    ix, iy = weights.node_index_arrays()
    return _kernels.nl_jvp(
        flat,
        wfl,
        ix,
        iy,
        nx,
        ny,
        weights.stencil,
        weights.farmass,
        weights.coef,
        mvals,
        float(p),
        float(delta),
    )


def fractional_tangent_diag(
    u: GridFunction, weights: KernelWeights, p: float, delta: float
) -> np.ndarray:
    g = u.grid
    flat = np.ascontiguousarray(u.values.reshape(-1), dtype=float)
    nx, ny = weights.shape_xy()
    if p == 2.0 and weights.variant == "model":
        return weights.rowsums() + weights.farmass
    mvals = np.ascontiguousarray(u.far_model_values().reshape(-1))
    ix, iy = weights.node_index_arrays()
    return _kernels.nl_diag(
        flat,
        ix,
        iy,
        nx,
        ny,
        weights.stencil,
        weights.farmass,
        weights.coef,
        mvals,
        float(p),
        float(delta),
    )


# ---------------------------------------------------------------------------
# local operator


def _edge_gradients(u: np.ndarray, h: float, axis: int):
    """Full gradient reconstructed at the half-integer edges along ``axis``."""
    if u.ndim == 1:
        return ((u[1:] - u[:-1]) / h)[:, None]
    if axis == 0:
        d_ax = (u[1:, :] - u[:-1, :]) / h
        cd = np.empty_like(u)
        cd[:, 1:-1] = (u[:, 2:] - u[:, :-2]) / (2 * h)
        cd[:, 0] = (u[:, 1] - u[:, 0]) / h
        cd[:, -1] = (u[:, -1] - u[:, -2]) / h
        d_tr = 0.5 * (cd[1:, :] + cd[:-1, :])
        return np.stack([d_ax, d_tr], axis=-1)
    d_ax = (u[:, 1:] - u[:, :-1]) / h
    cd = np.empty_like(u)
    cd[1:-1, :] = (u[2:, :] - u[:-2, :]) / (2 * h)
    cd[0, :] = (u[1, :] - u[0, :]) / h
    cd[-1, :] = (u[-1, :] - u[-2, :]) / h
    d_tr = 0.5 * (cd[:, 1:] + cd[:, :-1])
    return np.stack([d_tr, d_ax], axis=-1)


def _edge_midpoints(grid: GridDomain, axis: int) -> np.ndarray:
    ax = grid.axes()
    if grid.dim == 1:
        return (0.5 * (ax[0][1:] + ax[0][:-1]))[:, None]
    if axis == 0:
        xs = 0.5 * (ax[0][1:] + ax[0][:-1])
        xx, yy = np.meshgrid(xs, ax[1], indexing="ij")
    else:
        ys = 0.5 * (ax[1][1:] + ax[1][:-1])
        xx, yy = np.meshgrid(ax[0], ys, indexing="ij")
    return np.stack([xx, yy], axis=-1)


def apply_local(u: GridFunction, spec: VectorFieldSpec) -> np.ndarray:
    """-div A(Du) by edge-flux differencing; zero on the outermost node ring."""
    g = u.grid
    h = g.h
    vals = u.values
    out = np.zeros(g.shape)
    if g.dim == 1:
        dg = _edge_gradients(vals, h, 0)
        flux = vector_field_A(dg, spec, x=_edge_midpoints(g, 0))[:, 0]
        out[1:-1] = -(flux[1:] - flux[:-1]) / h
        return out
    dgx = _edge_gradients(vals, h, 0)
    fx = vector_field_A(dgx, spec, x=_edge_midpoints(g, 0))[..., 0]
    dgy = _edge_gradients(vals, h, 1)
    fy = vector_field_A(dgy, spec, x=_edge_midpoints(g, 1))[..., 1]
    out[1:-1, :] -= (fx[1:, :] - fx[:-1, :]) / h
    out[:, 1:-1] -= (fy[:, 1:] - fy[:, :-1]) / h
    return out


def local_tangent_matrix(
    u: GridFunction, spec: VectorFieldSpec, delta: float = 0.0
) -> sp.csr_matrix:
    """Exact sparse Jacobian of apply_local at u (all nodes, flat indexing).

    ``delta`` regularizes the model field for p < 2 so the tangent stays
    finite at degenerate edges; it does not alter apply_local itself.
    Rows on the outermost node ring are zero, matching apply_local.
    """
    g = u.grid
    h = g.h
    tangent_spec = spec
    if spec.variant == "model" and (spec.p < 2.0 or delta > 0.0):
        tangent_spec = spec.regularize(max(delta, 1e-300))
    if g.dim == 1:
        n = g.shape[0]
        dg = _edge_gradients(u.values, h, 0)
        jac = jacobian_A(dg, tangent_spec, x=_edge_midpoints(g, 0))[:, 0, 0]
        i = np.arange(1, n - 1)
        # out[i] = -(F[i] - F[i-1]) / h,  dF[e]/du = jac[e] * (+1/h at e+1, -1/h at e)
        rows = np.concatenate([i, i, i, i])
        cols = np.concatenate([i + 1, i, i, i - 1])
        vals = np.concatenate(
            [-jac[i] / h**2, jac[i] / h**2, jac[i - 1] / h**2, -jac[i - 1] / h**2]
        )
        return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    nx, ny = g.shape
    n = nx * ny

    def flat(i, j):
        return i * ny + j

    entries_r, entries_c, entries_v = [], [], []

    def add(r, c, v):
        entries_r.append(np.asarray(r).ravel())
        entries_c.append(np.asarray(c).ravel())
        entries_v.append(np.asarray(v).ravel())

    for axis in (0, 1):
        dg = _edge_gradients(u.values, h, axis)
        jac = jacobian_A(dg, tangent_spec, x=_edge_midpoints(g, axis))
        if axis == 0:
            j_ax = jac[..., 0, 0]
            j_tr = jac[..., 0, 1]
            ei, ej = np.meshgrid(np.arange(nx - 1), np.arange(ny), indexing="ij")
            node_a = flat(ei, ej)
            node_b = flat(ei + 1, ej)
            stencil_nodes = (flat(ei, ej), flat(ei + 1, ej))
            plus_of = lambda base_i: (
                flat(base_i, np.clip(ej + 1, 0, ny - 1)),
                flat(base_i, np.clip(ej - 1, 0, ny - 1)),
            )
            trans_pairs = [plus_of(ei), plus_of(ei + 1)]
            interior_tr = (ej >= 1) & (ej <= ny - 2)
        else:
            j_ax = jac[..., 1, 1]
            j_tr = jac[..., 1, 0]
            ei, ej = np.meshgrid(np.arange(nx), np.arange(ny - 1), indexing="ij")
            node_a = flat(ei, ej)
            node_b = flat(ei, ej + 1)
            plus_of = lambda base_j: (
                flat(np.clip(ei + 1, 0, nx - 1), base_j),
                flat(np.clip(ei - 1, 0, nx - 1), base_j),
            )
            trans_pairs = [plus_of(ej), plus_of(ej + 1)]
            interior_tr = (ei >= 1) & (ei <= nx - 2)
        # 1/(4h) per node from averaged centered differences, 1/(2h) one-sided
        w_tr = np.where(interior_tr, 1.0 / (4.0 * h), 1.0 / (2.0 * h))
        # edge e adds -F_e/h to its first node and +F_e/h to its second node
        for target, sgn in ((node_a, -1.0), (node_b, 1.0)):
            add(target, node_b, sgn * j_ax / h**2)
            add(target, node_a, -sgn * j_ax / h**2)
            for plus, minus in trans_pairs:
                coeff = sgn * j_tr / h * w_tr
                add(target, plus, coeff)
                add(target, minus, -coeff)
    rows = np.concatenate(entries_r)
    cols = np.concatenate(entries_c)
    vals = np.concatenate(entries_v)
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    ring = np.zeros(g.shape, dtype=bool)
    ring[0, :] = ring[-1, :] = True
    ring[:, 0] = ring[:, -1] = True
    keep = sp.diags((~ring).reshape(-1).astype(float))
    return (keep @ mat).tocsr()


def residual(
    u: GridFunction,
    mu_values: Optional[np.ndarray],
    g: GridFunction,
    spec: VectorFieldSpec,
    weights: KernelWeights,
    unknown_mask: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Collocation residual -div A(Du) + Lu - mu on the unknown nodes.

    Exterior nodes must carry exactly the Dirichlet complement data g; the
    residual is zero there by convention.
    """
    grid = u.grid
    if unknown_mask is None:
        unknown_mask = grid.interior
    if not np.array_equal(u.values[~unknown_mask], g.values[~unknown_mask]):
        raise OperatorError("Dirichlet complement violated")
    if u.far_field != g.far_field or u.far_slope != g.far_slope:
        raise OperatorError("Dirichlet complement violated (far field)")
    out = apply_local(u, spec) + apply_fractional(u, weights, spec.p)
    if mu_values is not None:
        out = out - mu_values
    result = np.zeros(grid.shape)
    result[unknown_mask] = out[unknown_mask]
    return result
