"""Low-level kernels for the dense nonlocal sums and pair sums.

These are the only O(N^2) hot paths in the package.  They are compiled with
numba when it is importable and fall back to chunked numpy otherwise.  All
reductions run in a fixed serial order so repeated runs are bit-identical.

Grids are addressed uniformly: every node carries integer coordinates
(ix, iy) and cell-integrated kernel weights live in a stencil array indexed
by the coordinate offset, ``S[ix_i - ix_j + Nx - 1, iy_i - iy_j + Ny - 1]``.
One-dimensional grids use Ny = 1 with iy = 0.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        if args and callable(args[0]):
            return args[0]
        return wrap


_CHUNK = 256  # rows per block in the numpy fallback


@njit(cache=True)
def _phi(t, p):
    # |t|^{p-2} t, continuous through 0 for every p > 1
    if t == 0.0:
        return 0.0
    if p == 2.0:
        return t
    if p == 3.0:
        return abs(t) * t
    if p == 2.5:
        return np.sqrt(abs(t)) * t
    return abs(t) ** (p - 2.0) * t


@njit(cache=True)
def _dphi(t, p, delta):
    # (p-1) (delta^2 + t^2)^{(p-2)/2}, smoothed tangent of _phi
    if p == 2.0:
        return 1.0
    q = delta * delta + t * t
    if q == 0.0:
        return 0.0
    if p == 3.0:
        return 2.0 * np.sqrt(q)
    return (p - 1.0) * q ** ((p - 2.0) / 2.0)


@njit(cache=True)
def _nl_apply_nb(u, ix, iy, nx, ny, s, far, coef, mv, p):
    m = u.shape[0]
    out = np.empty(m)
    for i in range(m):
        oi = ix[i] + nx - 1
        oj = iy[i] + ny - 1
        ui = u[i]
        ci = coef[i]
        acc = 0.0
        for j in range(m):
            w = s[oi - ix[j], oj - iy[j]]
            if w != 0.0:
                acc += w * 0.5 * (ci + coef[j]) * _phi(ui - u[j], p)
        acc += far[i] * _phi(ui - mv[i], p)
        out[i] = acc
    return out


@njit(cache=True)
def _nl_jvp_nb(u, w, ix, iy, nx, ny, s, far, coef, mv, p, delta):
    m = u.shape[0]
    out = np.empty(m)
    for i in range(m):
        oi = ix[i] + nx - 1
        oj = iy[i] + ny - 1
        ui = u[i]
        wi = w[i]
        ci = coef[i]
        acc = 0.0
        for j in range(m):
            ker = s[oi - ix[j], oj - iy[j]]
            if ker != 0.0:
                acc += (
                    ker
                    * 0.5
                    * (ci + coef[j])
                    * _dphi(ui - u[j], p, delta)
                    * (wi - w[j])
                )
        acc += far[i] * _dphi(ui - mv[i], p, delta) * wi
        out[i] = acc
    return out


@njit(cache=True)
def _nl_diag_nb(u, ix, iy, nx, ny, s, far, coef, mv, p, delta):
    m = u.shape[0]
    out = np.empty(m)
    for i in range(m):
        oi = ix[i] + nx - 1
        oj = iy[i] + ny - 1
        ui = u[i]
        ci = coef[i]
        acc = 0.0
        for j in range(m):
            ker = s[oi - ix[j], oj - iy[j]]
            if ker != 0.0:
                acc += ker * 0.5 * (ci + coef[j]) * _dphi(ui - u[j], p, delta)
        acc += far[i] * _dphi(ui - mv[i], p, delta)
        out[i] = acc
    return out


@njit(cache=True)
def _pair_sum_nb(coords, vals, p, expo):
    m = vals.shape[0]
    d = coords.shape[1]
    acc = 0.0
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            r2 = 0.0
            for k in range(d):
                t = coords[i, k] - coords[j, k]
                r2 += t * t
            dv = abs(vals[i] - vals[j])
            if dv != 0.0:
                acc += dv**p / r2 ** (expo / 2.0)
    return acc


def _phi_np(t, p):
    if p == 2.0:
        return t
    a = np.abs(t)
    if p == 3.0:
        return a * t
    out = np.zeros_like(t)
    nz = a > 0.0
    out[nz] = a[nz] ** (p - 2.0) * t[nz]
    return out


def _dphi_np(t, p, delta):
    if p == 2.0:
        return np.ones_like(t)
    q = delta * delta + t * t
    out = np.zeros_like(t)
    nz = q > 0.0
    out[nz] = (p - 1.0) * q[nz] ** ((p - 2.0) / 2.0)
    return out


def _rows(ix, iy, nx, ny, s, lo, hi):
    oi = ix[lo:hi, None] - ix[None, :] + nx - 1
    oj = iy[lo:hi, None] - iy[None, :] + ny - 1
    return s[oi, oj]


def _nl_apply_np(u, ix, iy, nx, ny, s, far, coef, mv, p):
    m = u.shape[0]
    out = np.empty(m)
    for lo in range(0, m, _CHUNK):
        hi = min(lo + _CHUNK, m)
        w = _rows(ix, iy, nx, ny, s, lo, hi)
        w *= 0.5 * (coef[lo:hi, None] + coef[None, :])
        t = u[lo:hi, None] - u[None, :]
        out[lo:hi] = np.sum(w * _phi_np(t, p), axis=1)
    out += far * _phi_np(u - mv, p)
    return out


def _nl_jvp_np(u, w, ix, iy, nx, ny, s, far, coef, mv, p, delta):
    m = u.shape[0]
    out = np.empty(m)
    for lo in range(0, m, _CHUNK):
        hi = min(lo + _CHUNK, m)
        ker = _rows(ix, iy, nx, ny, s, lo, hi)
        ker *= 0.5 * (coef[lo:hi, None] + coef[None, :])
        t = u[lo:hi, None] - u[None, :]
        g = ker * _dphi_np(t, p, delta)
        out[lo:hi] = np.sum(g * (w[lo:hi, None] - w[None, :]), axis=1)
    out += far * _dphi_np(u - mv, p, delta) * w
    return out


def _nl_diag_np(u, ix, iy, nx, ny, s, far, coef, mv, p, delta):
    m = u.shape[0]
    out = np.empty(m)
    for lo in range(0, m, _CHUNK):
        hi = min(lo + _CHUNK, m)
        ker = _rows(ix, iy, nx, ny, s, lo, hi)
        ker *= 0.5 * (coef[lo:hi, None] + coef[None, :])
        t = u[lo:hi, None] - u[None, :]
        out[lo:hi] = np.sum(ker * _dphi_np(t, p, delta), axis=1)
    out += far * _dphi_np(u - mv, p, delta)
    return out


def _pair_sum_np(coords, vals, p, expo):
    m = vals.shape[0]
    acc = 0.0
    for lo in range(0, m, _CHUNK):
        hi = min(lo + _CHUNK, m)
        d2 = np.sum(
            (coords[lo:hi, None, :] - coords[None, :, :]) ** 2, axis=2
        )
        dv = np.abs(vals[lo:hi, None] - vals[None, :])
        block = np.zeros_like(d2)
        nz = d2 > 0.0
        block[nz] = dv[nz] ** p / d2[nz] ** (expo / 2.0)
        acc += float(np.sum(block))
    return acc


if HAVE_NUMBA:
    nl_apply = _nl_apply_nb
    nl_jvp = _nl_jvp_nb
    nl_diag = _nl_diag_nb
    pair_sum = _pair_sum_nb
else:  # pragma: no cover
    nl_apply = _nl_apply_np
    nl_jvp = _nl_jvp_np
    nl_diag = _nl_diag_np
    pair_sum = _pair_sum_np
