"""Uniform cell-centered grids, balls, and the averaging functionals.

A grid covers an axis-aligned box with cells of width h; node i sits at the
center of cell i and owns measure h^n.  Nodes flagged by ``interior`` form
the domain where equations are solved; the remaining nodes are the exterior
band carrying Dirichlet complement data.  Beyond ``ext_radius`` every
function is modelled by its constant far-field value.

Supported dimensions are 1 and 2.  The one-dimensional regime is an
engineering extra and is flagged as such in experiment reports.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._kernels import pair_sum


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Ball:
    """Closed ball (interval for dim 1) with positive radius."""

    center: tuple
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise GridError("ball radius must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))


@dataclass(frozen=True)
class GridDomain:
    dim: int
    lo: tuple
    hi: tuple
    shape: tuple
    h: float
    ext_radius: float
    interior: np.ndarray = field(repr=False, compare=False)

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise GridError("dim must be 1 or 2")
        for a in range(self.dim):
            length = self.hi[a] - self.lo[a]
            if abs(length / self.h - round(length / self.h)) > 1e-9:
                raise GridError("box edge lengths must be integer multiples of h")
            if round(length / self.h) != self.shape[a]:
                raise GridError("shape inconsistent with box and h")
        if self.interior.shape != self.shape:
            raise GridError("interior mask shape mismatch")
        # interior nodes must keep at least one cell of exterior band
        edge = np.zeros(self.shape, dtype=bool)
        if self.dim == 1:
            edge[0] = edge[-1] = True
        else:
            edge[0, :] = edge[-1, :] = True
            edge[:, 0] = edge[:, -1] = True
        if np.any(self.interior & edge):
            raise GridError("interior nodes must be strictly inside the box")
        if self.ext_radius < self.circumradius() - 1e-12:
            raise GridError("ext_radius must cover the circumscribed radius of the box")
        self.interior.setflags(write=False)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def center(self) -> tuple:
        return tuple(0.5 * (l + u) for l, u in zip(self.lo, self.hi))

    def circumradius(self) -> float:
        c = self.center()
        return float(np.sqrt(sum((u - cc) ** 2 for u, cc in zip(self.hi, c))))

    def axes(self):
        return tuple(
            self.lo[a] + (np.arange(self.shape[a]) + 0.5) * self.h
            for a in range(self.dim)
        )

    def coords(self) -> np.ndarray:
        """Node coordinates, shape (*shape, dim)."""
        ax = self.axes()
        if self.dim == 1:
            return ax[0][:, None]
        xx, yy = np.meshgrid(ax[0], ax[1], indexing="ij")
        return np.stack([xx, yy], axis=-1)

    def distances(self, x0) -> np.ndarray:
        d = self.coords() - np.asarray(x0, dtype=float)
        return np.sqrt(np.sum(d * d, axis=-1))

    def cell_measure(self) -> float:
        return self.h**self.dim

    def far_radius(self, x0) -> float:
        """Radius beyond which, seen from x0, everything is far field.

        Shifted by the offset of x0 from the box center so the far region
        never overlaps grid cells.
        """
        c = self.center()
        off = float(np.sqrt(sum((a - b) ** 2 for a, b in zip(x0, c))))
        return self.ext_radius + off

    def same_layout(self, other: "GridDomain") -> bool:
        return (
            self.dim == other.dim
            and self.shape == other.shape
            and abs(self.h - other.h) < 1e-14
            and all(abs(a - b) < 1e-12 for a, b in zip(self.lo, other.lo))
        )


def make_grid(
    dim: int,
    half_width: float,
    nodes_per_axis: int,
    interior: str = "inset",
    interior_radius: Optional[float] = None,
    band_cells: int = 4,
    ext_radius: Optional[float] = None,
    center=None,
) -> GridDomain:
    """Build a symmetric box grid with an inset-box or ball interior."""
    if center is None:
        center = (0.0,) * dim
    lo = tuple(c - half_width for c in center)
    hi = tuple(c + half_width for c in center)
    h = 2.0 * half_width / nodes_per_axis
    shape = (nodes_per_axis,) * dim
    ax = tuple(lo[a] + (np.arange(nodes_per_axis) + 0.5) * h for a in range(dim))
    if dim == 1:
        x = ax[0][:, None]
    else:
        xx, yy = np.meshgrid(ax[0], ax[1], indexing="ij")
        x = np.stack([xx, yy], axis=-1)
    if interior == "inset":
        m = np.ones(shape, dtype=bool)
        for a in range(dim):
            c = x[..., a]
            m &= (c > lo[a] + band_cells * h) & (c < hi[a] - band_cells * h)
    elif interior == "ball":
        if interior_radius is None:
            interior_radius = half_width - band_cells * h
        d = np.sqrt(np.sum((x - np.asarray(center)) ** 2, axis=-1))
        m = d < interior_radius
    else:
        raise GridError(f"unknown interior kind {interior!r}")
    circum = float(np.sqrt(dim)) * half_width
    if ext_radius is None:
        ext_radius = circum
    return GridDomain(
        dim=dim, lo=lo, hi=hi, shape=shape, h=h, ext_radius=ext_radius, interior=m
    )


@dataclass(frozen=True)
class GridFunction:
    """Node-sampled scalar function plus a far-field model.

    Beyond the extended grid the function is modelled as
    ``far_field + far_slope . (x - box_center)``; the slope part exists so
    that affine Dirichlet complements are represented exactly by the
    nonlocal operator (integral quantities like tails truncate to the
    constant part).
    """

    grid: GridDomain
    values: np.ndarray = field(repr=False, compare=False)
    far_field: Optional[float] = None
    far_slope: Optional[tuple] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise GridError("values shape does not match grid")
        if not np.all(np.isfinite(v)):
            raise GridError("grid function values must be finite")
        object.__setattr__(self, "values", v)
        if self.far_slope is not None:
            sl = tuple(float(a) for a in self.far_slope)
            if len(sl) != self.grid.dim:
                raise GridError("far_slope dimension mismatch")
            object.__setattr__(self, "far_slope", None if all(a == 0.0 for a in sl) else sl)

    def with_values(self, values) -> "GridFunction":
        return GridFunction(
            self.grid, np.asarray(values, dtype=float), self.far_field, self.far_slope
        )

    def far(self) -> float:
        return 0.0 if self.far_field is None else float(self.far_field)

    def far_model_values(self) -> np.ndarray:
        """Far model evaluated at the grid nodes."""
        base = np.full(self.grid.shape, self.far())
        if self.far_slope is not None:
            x = self.grid.coords() - np.asarray(self.grid.center())
            base = base + np.sum(np.asarray(self.far_slope) * x, axis=-1)
        return base


def constant_function(grid: GridDomain, value: float) -> GridFunction:
    return GridFunction(grid, np.full(grid.shape, float(value)), far_field=value)


def ball_mask(grid: GridDomain, ball: Ball) -> np.ndarray:
    return grid.distances(ball.center) <= ball.radius


def _nonempty(mask: np.ndarray):
    if not np.any(mask):
        raise GridError("ball below grid resolution")


def ball_average(f, grid: GridDomain, ball: Ball):
    """Mean over grid cells whose centers lie in the ball.

    ``f`` is an array of node values, scalar (*shape) or vector
    (*shape, k); returns a scalar or a length-k vector.
    """
    mask = ball_mask(grid, ball)
    _nonempty(mask)
    v = np.asarray(f, dtype=float)
    if v.shape == grid.shape:
        return float(np.mean(v[mask]))
    return np.mean(v[mask], axis=0)


def excess(f, grid: GridDomain, ball: Ball) -> float:
    """Mean of |f - (f)_B| over the ball, Euclidean norm for vector fields."""
    mask = ball_mask(grid, ball)
    _nonempty(mask)
    v = np.asarray(f, dtype=float)
    if v.shape == grid.shape:
        sample = v[mask]
        return float(np.mean(np.abs(sample - np.mean(sample))))
    sample = v[mask]
    mean = np.mean(sample, axis=0)
    return float(np.mean(np.sqrt(np.sum((sample - mean) ** 2, axis=-1))))


def oscillation(f, grid: GridDomain, ball: Ball) -> float:
    mask = ball_mask(grid, ball)
    _nonempty(mask)
    v = np.asarray(f, dtype=float)[mask]
    return float(np.max(v) - np.min(v))


def gradient(f: GridFunction) -> np.ndarray:
    """Node gradient, centered inside, one-sided on the box faces.

    Returns shape (*shape, dim).
    """
    u = f.values
    h = f.grid.h
    out = np.empty(f.grid.shape + (f.grid.dim,))
    for a in range(f.grid.dim):
        g = np.empty_like(u)
        sl = [slice(None)] * f.grid.dim

        def ax(idx):
            s = list(sl)
            s[a] = idx
            return tuple(s)

        g[ax(slice(1, -1))] = (u[ax(slice(2, None))] - u[ax(slice(0, -2))]) / (2 * h)
        g[ax(0)] = (u[ax(1)] - u[ax(0)]) / h
        g[ax(-1)] = (u[ax(-1)] - u[ax(-2)]) / h
        out[..., a] = g
    return out


@dataclass(frozen=True)
class Rearrangement:
    """Nonincreasing rearrangement as a right-continuous step function.

    ``heights[k]`` holds on [k*cell_measure, (k+1)*cell_measure); zero after.
    """

    heights: np.ndarray
    cell_measure: float

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.floor(t / self.cell_measure).astype(int)
        out = np.zeros_like(t)
        ok = (idx >= 0) & (idx < self.heights.size)
        out[ok] = self.heights[idx[ok]]
        return out

    def level_measure(self, thr: float) -> float:
        """Measure of the superlevel set {f* > thr}."""
        return float(np.sum(self.heights > thr) * self.cell_measure)


def decreasing_rearrangement(
    f: GridFunction, mask: Optional[np.ndarray] = None
) -> Rearrangement:
    if mask is None:
        mask = f.grid.interior
    vals = np.abs(f.values[mask])
    # ties broken by node order via stable sort; the rearrangement is unaffected
    order = np.argsort(-vals, kind="stable")
    return Rearrangement(heights=vals[order], cell_measure=f.grid.cell_measure())


def lorentz_quasinorm(
    f: GridFunction, gamma: float, q: float, mask: Optional[np.ndarray] = None
) -> float:
    """Discrete || t^{1/gamma - 1/q} f*(t) ||_{L^q(0, inf)} via the step f*."""
    if gamma <= 0 or q <= 0:
        raise GridError("lorentz exponents must be positive")
    r = decreasing_rearrangement(f, mask)
    hts = r.heights
    if hts.size == 0 or hts[0] == 0.0:
        return 0.0
    edges = np.arange(hts.size + 1) * r.cell_measure
    if np.isinf(gamma) and np.isinf(q):
        return float(hts[0])
    if np.isinf(q):
        # sup_t t^{1/gamma} f*(t); supremum per step sits at the right edge
        return float(np.max(hts * edges[1:] ** (1.0 / gamma)))
    if np.isinf(gamma):
        expo = -1.0 / q
    else:
        expo = 1.0 / gamma - 1.0 / q
    a = q * expo + 1.0
    if a <= 0:
        raise GridError("lorentz step integral diverges at t=0 for these exponents")
    pieces = (edges[1:] ** a - edges[:-1] ** a) / a
    return float(np.sum(hts**q * pieces) ** (1.0 / q))


def gagliardo_seminorm(f: GridFunction, ball: Ball, s: float, p: float) -> float:
    """Cell-pair double sum of |f(x)-f(y)|^p |x-y|^{-(n+sp)} h^{2n}.

    Returns the p-th power of the seminorm.  The diagonal pair is excluded;
    for grid-Lipschitz functions its omitted mass vanishes as h -> 0.
    """
    if not (0 < s < 1) or p < 1:
        raise GridError("requires s in (0,1) and p >= 1")
    g = f.grid
    mask = ball_mask(g, ball)
    _nonempty(mask)
    coords = g.coords()[mask]
    vals = f.values[mask]
    expo = g.dim + s * p
    raw = pair_sum(
        np.ascontiguousarray(coords, dtype=float),
        np.ascontiguousarray(vals, dtype=float),
        float(p),
        float(expo),
    )
    return float(raw) * g.cell_measure() ** 2


def w1q_distance(u1: GridFunction, u2: GridFunction, q: float) -> float:
    """(sum |u1-u2|^q h^n)^(1/q) + (sum |D u1 - D u2|^q h^n)^(1/q) on the interior."""
    if not u1.grid.same_layout(u2.grid):
        raise GridError("mismatched grids")
    g = u1.grid
    mask = g.interior
    hn = g.cell_measure()
    dv = np.abs(u1.values - u2.values)[mask]
    part0 = float(np.sum(dv**q) * hn) ** (1.0 / q)
    dg = gradient(u1) - gradient(u2)
    dn = np.sqrt(np.sum(dg * dg, axis=-1))[mask]
    part1 = float(np.sum(dn**q) * hn) ** (1.0 / q)
    return part0 + part1
