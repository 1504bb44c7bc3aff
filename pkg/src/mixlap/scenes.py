"""Scene construction: whitelisted exterior-data expressions and measures.

Exterior data comes from a closed whitelist (affine, bump, sinusoid, and
sums of those) so configurations stay auditable.  Unbounded expressions
(affine, sinusoid) are truncated by the constant far-field model beyond the
extended grid; the constant is the expression's value at the box center for
affine data and zero for oscillatory data.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .grids import GridDomain, GridFunction
from .measures import Measure, dirac


class SceneError(ValueError):
    pass


def _eval_component(kind: str, d: dict, x: np.ndarray, center) -> tuple:
    """Returns (values, far_field_constant, far_slope)."""
    dim = x.shape[-1]
    if kind == "affine":
        a = np.asarray(d.get("a", [0.0] * dim), dtype=float)
        b = float(d.get("b", 0.0))
        vals = b + np.sum(a * x, axis=-1)
        far = b + float(np.dot(a, np.asarray(center)))
        return vals, far, a
    if kind == "bump":
        amp = float(d.get("amp", 1.0))
        c = np.asarray(d.get("center", [0.0] * dim), dtype=float)
        w = float(d.get("width", 0.5))
        r2 = np.sum((x - c) ** 2, axis=-1) / w**2
        vals = amp * np.maximum(0.0, 1.0 - r2) ** 3
        return vals, 0.0, np.zeros(dim)
    if kind == "sinusoid":
        amp = float(d.get("amp", 1.0))
        k = np.asarray(d.get("k", [1.0] * dim), dtype=float)
        phase = float(d.get("phase", 0.0))
        vals = amp * np.sin(np.sum(k * x, axis=-1) + phase)
        return vals, 0.0, np.zeros(dim)
    raise SceneError(f"exterior data kind {kind!r} is not in the whitelist")


def build_exterior(grid: GridDomain, spec: dict) -> GridFunction:
    """Evaluate a whitelisted data expression on the grid.

    Affine components carry their slope into the far model so they are
    represented exactly beyond the truncation radius.
    """
    x = grid.coords()
    center = grid.center()
    kind = spec.get("kind")
    if kind == "sum":
        vals = np.zeros(grid.shape)
        far = 0.0
        slope = np.zeros(grid.dim)
        for comp in spec.get("terms", []):
            v, f, a = _eval_component(comp.get("kind"), comp, x, center)
            vals += v
            far += f
            slope += a
        return GridFunction(grid, vals, far_field=far, far_slope=tuple(slope))
    vals, far, slope = _eval_component(kind, spec, x, center)
    return GridFunction(grid, vals, far_field=far, far_slope=tuple(slope))


def build_measure(grid: GridDomain, spec: Optional[dict]) -> Measure:
    """Measure from a config dict: zero, dirac atoms, or a bump density."""
    if spec is None or spec.get("kind", "zero") == "zero":
        return Measure()
    kind = spec["kind"]
    if kind == "dirac":
        locs = spec.get("atoms")
        if locs is None:
            locs = [
                {"x": spec.get("location", list(grid.center())), "w": spec.get("weight", 1.0)}
            ]
        atoms = tuple((tuple(a["x"]), float(a["w"])) for a in locs)
        return Measure(atoms=atoms)
    if kind == "bump":
        c = np.asarray(spec.get("center", list(grid.center())), dtype=float)
        w = float(spec.get("width", 0.3))
        mass = float(spec.get("mass", 1.0))
        x = grid.coords()
        r2 = np.sum((x - c) ** 2, axis=-1) / w**2
        vals = np.maximum(0.0, 1.0 - r2) ** 3
        tot = float(np.sum(vals)) * grid.cell_measure()
        if tot == 0.0:
            raise SceneError("bump density support misses the grid")
        vals *= mass / tot
        return Measure(density=GridFunction(grid, vals, far_field=0.0))
    raise SceneError(f"measure kind {kind!r} is not supported")


def grid_from_dict(spec: dict) -> GridDomain:
    from .grids import make_grid

    return make_grid(
        dim=int(spec.get("dim", 2)),
        half_width=float(spec.get("half_width", 1.0)),
        nodes_per_axis=int(spec.get("nodes_per_axis", 64)),
        interior=spec.get("interior", "ball"),
        interior_radius=spec.get("interior_radius"),
        band_cells=int(spec.get("band_cells", 4)),
        ext_radius=spec.get("ext_radius"),
    )
