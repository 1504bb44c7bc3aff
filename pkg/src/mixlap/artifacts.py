"""Serialization of grid functions, measures, reports, and the weight cache.

All files are written atomically (temp + rename).  Reports and artifacts
carry the configuration hash they were produced under; loading against a
different hash is refused.  Cached kernel weights are checksummed so a
corrupted cache is detected instead of silently reused.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from typing import Optional

import numpy as np

from .grids import GridDomain, GridFunction
from .measures import Measure
from .operators import KernelWeights


class ArtifactError(RuntimeError):
    pass


class CacheError(ArtifactError):
    pass


def _atomic_write(path: str, data: bytes) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text(path: str, text: str) -> None:
    _atomic_write(path, text.encode())


def write_json(path: str, payload: dict) -> None:
    write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _default_interior(dim: int, shape) -> np.ndarray:
    m = np.zeros(shape, dtype=bool)
    if dim == 1:
        m[1:-1] = True
    else:
        m[1:-1, 1:-1] = True
    return m


def save_grid_function(basepath: str, f: GridFunction) -> None:
    """Write <base>.json (header) and <base>.csv (node values, row-major)."""
    g = f.grid
    header = {
        "dim": g.dim,
        "box": [[g.lo[a], g.hi[a]] for a in range(g.dim)],
        "h": g.h,
        "ext_radius": g.ext_radius,
        "far_field": f.far_field,
    }
    if f.far_slope is not None:
        header["far_slope"] = list(f.far_slope)
    write_json(basepath + ".json", header)
    rows = "\n".join("%.17g" % v for v in f.values.reshape(-1)) + "\n"
    write_text(basepath + ".csv", rows)


def load_grid_function(basepath: str) -> GridFunction:
    """Rebuild from header + CSV; the interior mask is not part of the
    serialized schema and is reconstructed as the maximal legal mask."""
    with open(basepath + ".json") as fh:
        header = json.load(fh)
    vals = np.loadtxt(basepath + ".csv", dtype=float, ndmin=1)
    dim = int(header["dim"])
    lo = tuple(b[0] for b in header["box"])
    hi = tuple(b[1] for b in header["box"])
    h = float(header["h"])
    shape = tuple(int(round((u - l) / h)) for l, u in zip(lo, hi))
    grid = GridDomain(
        dim=dim,
        lo=lo,
        hi=hi,
        shape=shape,
        h=h,
        ext_radius=float(header["ext_radius"]),
        interior=_default_interior(dim, shape),
    )
    slope = header.get("far_slope")
    return GridFunction(
        grid,
        vals.reshape(shape),
        header.get("far_field"),
        None if slope is None else tuple(slope),
    )


def save_measure(path: str, mu: Measure, density_basepath: Optional[str] = None):
    payload = {"atoms": [{"x": list(loc), "w": w} for loc, w in mu.atoms]}
    if mu.density is not None:
        if density_basepath is None:
            density_basepath = os.path.splitext(path)[0] + "_density"
        save_grid_function(density_basepath, mu.density)
        payload["density_file"] = os.path.basename(density_basepath)
    write_json(path, payload)


def load_measure(path: str) -> Measure:
    with open(path) as fh:
        payload = json.load(fh)
    atoms = tuple((tuple(a["x"]), float(a["w"])) for a in payload.get("atoms", []))
    dens = None
    if payload.get("density_file"):
        base = os.path.join(os.path.dirname(path), payload["density_file"])
        dens = load_grid_function(base)
    return Measure(atoms=atoms, density=dens)


def save_report(out_dir: str, report) -> str:
    payload = report.to_dict()
    path = os.path.join(out_dir, f"{report.name}-report.json")
    write_json(path, payload)
    lines = ["scale,lhs,rhs,ratio"]
    for sc, lh, rh, ra in zip(
        payload["scales"], payload["lhs"], payload["rhs"], payload["ratios"]
    ):
        lines.append("%.17g,%.17g,%.17g,%.17g" % (sc, lh, rh, ra))
    write_text(os.path.join(out_dir, f"{report.name}-scales.csv"), "\n".join(lines) + "\n")
    return path


def load_report(path: str, expect_hash: Optional[str] = None) -> dict:
    with open(path) as fh:
        payload = json.load(fh)
    if expect_hash is not None:
        got = payload.get("provenance", {}).get("config_hash")
        if got != expect_hash:
            raise ArtifactError(
                f"artifact config hash {got} does not match expected {expect_hash}"
            )
    return payload


def save_potential_profile(path: str, profile) -> None:
    lines = ["rho,value"]
    for r, v in zip(profile.radii, profile.values):
        lines.append("%.17g,%.17g" % (r, v))
    write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# kernel weight cache


def weights_cache_key(grid: GridDomain, s: float, p: float, variant: str) -> str:
    payload = {
        "dim": grid.dim,
        "lo": list(grid.lo),
        "hi": list(grid.hi),
        "shape": list(grid.shape),
        "h": grid.h,
        "ext_radius": grid.ext_radius,
        "s": s,
        "p": p,
        "variant": variant,
    }
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:24]


def save_weights_cache(cache_dir: str, weights: KernelWeights) -> str:
    os.makedirs(cache_dir, exist_ok=True)
    key = weights_cache_key(weights.grid, weights.s, weights.p, weights.variant)
    path = os.path.join(cache_dir, f"weights-{key}.npz")
    fd, tmp = tempfile.mkstemp(dir=cache_dir, prefix=".tmp-", suffix=".npz")
    os.close(fd)
    try:
        np.savez(
            tmp,
            stencil=weights.stencil,
            farmass=weights.farmass,
            coef=weights.coef,
        )
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    digest = hashlib.sha256(open(path, "rb").read()).hexdigest()
    write_text(path + ".sha256", digest + "\n")
    return path


def load_weights_cache(
    cache_dir: str, grid: GridDomain, s: float, p: float, variant: str
) -> Optional[KernelWeights]:
    key = weights_cache_key(grid, s, p, variant)
    path = os.path.join(cache_dir, f"weights-{key}.npz")
    if not os.path.exists(path):
        return None
    sumpath = path + ".sha256"
    if not os.path.exists(sumpath):
        raise CacheError(f"cache checksum missing for {path}")
    digest = hashlib.sha256(open(path, "rb").read()).hexdigest()
    recorded = open(sumpath).read().strip()
    if digest != recorded:
        raise CacheError(f"cache checksum mismatch for {path}")
    data = np.load(path)
    return KernelWeights(
        grid=grid,
        s=s,
        p=p,
        variant=variant,
        stencil=data["stencil"],
        farmass=data["farmass"],
        coef=data["coef"],
    )


def cached_kernel_weights(
    cache_dir: Optional[str], grid: GridDomain, params, variant: str = "model",
    dense_ok: bool = False,
):
    from .operators import assemble_kernel_weights

    if cache_dir:
        found = load_weights_cache(cache_dir, grid, params.s, params.p, variant)
        if found is not None:
            return found
    weights = assemble_kernel_weights(grid, params, variant, dense_ok=dense_ok)
    if cache_dir:
        save_weights_cache(cache_dir, weights)
    return weights
