"""Command-line surface: potential, solve, sola, experiment, audit.

Configurations are JSON files; parsing, normalizing, and re-serializing a
config is an identity on its canonical form.  Exit codes: 0 on success or
pass, 2 on a failed verdict or audit, 1 on configuration or runtime errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from . import artifacts
from .experiments import (
    EXPERIMENTS,
    DecayExponents,
    config_hash,
    run_bracket_audit,
)
from .grids import GridFunction
from .measures import (
    Measure,
    mollify_measure,
    potential_profile,
)
from .operators import OperatorError, ParamSet, VectorFieldSpec
from .scenes import SceneError, build_exterior, build_measure, grid_from_dict
from .solver import SolveConfig, SolverError, sola_solve, solve_dirichlet

AUDIT_LIMIT = 1e-10


class ConfigError(ValueError):
    pass


def load_config(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def normalize_config(cfg: dict) -> dict:
    """Canonical form: sorted keys, plain types; parse -> serialize -> parse
    is an identity on this form."""
    return json.loads(json.dumps(cfg, sort_keys=True))


def params_from_config(cfg: dict) -> ParamSet:
    spec = cfg.get("params")
    if not spec:
        raise ConfigError("config must carry a 'params' table")
    try:
        return ParamSet(
            n=int(spec.get("n", 2)),
            s=float(spec.get("s", 0.5)),
            p=float(spec.get("p", 2.0)),
            nu_a=float(spec.get("nu_a", 1.0)),
            l_a=float(spec.get("l_a", 1.0)),
            nu_k=float(spec.get("nu_k", 1.0)),
            l_k=float(spec.get("l_k", 1.0)),
            m=spec.get("m"),
        )
    except OperatorError as exc:
        raise ConfigError(str(exc)) from exc


def exponents_from_config(cfg: dict, params: ParamSet) -> DecayExponents:
    spec = cfg.get("exponents") or {}
    base = DecayExponents.defaults(params, sigma=float(spec.get("sigma", 0.9)))
    expo = DecayExponents(
        sigma=base.sigma,
        eps1=float(spec.get("eps1", base.eps1)),
        m=spec.get("m", base.m),
    )
    expo.validate(params)
    return expo


def solve_config_from(cfg: dict) -> SolveConfig:
    spec = cfg.get("solve") or {}
    return SolveConfig(
        tol_rel=float(spec.get("tol_rel", 1e-10)),
        max_newton=int(spec.get("max_newton", 200)),
    )


def _load_scene_measure(cfg: dict, grid) -> Measure:
    scene = cfg.get("scene") or {}
    mspec = scene.get("measure")
    if isinstance(mspec, str):
        return artifacts.load_measure(mspec)
    return build_measure(grid, mspec)


def _weights(cfg: dict, grid, params, dense_ok):
    return artifacts.cached_kernel_weights(
        cfg.get("cache_dir"),
        grid,
        params,
        cfg.get("kernel_variant", "model"),
        dense_ok=dense_ok,
    )


def cmd_potential(cfg: dict, out_dir: str, dense_ok: bool) -> int:
    params = params_from_config(cfg)
    pot = cfg.get("potential") or {}
    center = tuple(pot.get("center", [0.1] + [0.0] * (params.n - 1)))
    big_r = float(pot.get("R", 1.0))
    count = int(pot.get("radii_count", 32))
    radii = np.exp(np.linspace(np.log(big_r / 64.0), np.log(big_r), count))
    grid = grid_from_dict(cfg["grid"]) if cfg.get("grid") else None
    scene = cfg.get("scene") or {}
    if grid is not None and scene.get("measure"):
        mu = _load_scene_measure(cfg, grid)
    else:
        atoms = tuple(
            (tuple(a["x"]), float(a["w"]))
            for a in (scene.get("measure") or {}).get("atoms", [])
        ) or (((0.0,) * params.n, 1.0),)
        mu = Measure(atoms=atoms)
    os.makedirs(out_dir, exist_ok=True)
    for kind in pot.get("kinds", ["riesz", "wolff"]):
        prof = potential_profile(
            mu,
            center,
            radii,
            kind=kind,
            beta=float(pot.get("beta", 1.0)),
            p=params.p,
        )
        artifacts.save_potential_profile(
            os.path.join(out_dir, f"potential-{kind}.csv"), prof
        )
        print(f"potential {kind}: R={big_r} value={prof.values[-1]:.12g}")
    return 0


def _common_scene(cfg, params, dense_ok):
    if not cfg.get("grid"):
        raise ConfigError("config must carry a 'grid' table")
    grid = grid_from_dict(cfg["grid"])
    if grid.dim != params.n:
        raise ConfigError("grid dimension must match params.n")
    scene = cfg.get("scene") or {}
    g = build_exterior(grid, scene.get("exterior", {"kind": "affine", "b": 0.0}))
    weights = _weights(cfg, grid, params, dense_ok)
    return grid, g, weights


def cmd_solve(cfg: dict, out_dir: str, dense_ok: bool) -> int:
    params = params_from_config(cfg)
    grid, g, weights = _common_scene(cfg, params, dense_ok)
    mu = _load_scene_measure(cfg, grid)
    if mu.atoms:
        raise ConfigError(
            "'solve' needs density data (mollified); use 'sola' for atomic measures"
        )
    spec = VectorFieldSpec(p=params.p)
    scfg = solve_config_from(cfg)
    u, info = solve_dirichlet(
        mu if mu.density is not None else None, g, params, spec, weights, scfg
    )
    os.makedirs(out_dir, exist_ok=True)
    artifacts.save_grid_function(os.path.join(out_dir, "solution"), u)
    artifacts.write_json(
        os.path.join(out_dir, "solve-log.json"),
        {
            "residual": info.residual,
            "scale": info.scale,
            "eps_final": info.eps_final,
            "newton_iterations": info.newton_iterations,
            "history": info.history,
            "config_hash": config_hash(normalize_config(cfg)),
        },
    )
    print(
        f"solve: residual={info.residual:.3e} iters={info.newton_iterations} "
        f"eps={info.eps_final:.1e}"
    )
    return 0


def cmd_sola(cfg: dict, out_dir: str, dense_ok: bool) -> int:
    params = params_from_config(cfg)
    grid, g, weights = _common_scene(cfg, params, dense_ok)
    mu = _load_scene_measure(cfg, grid)
    spec = VectorFieldSpec(p=params.p)
    scfg = solve_config_from(cfg)
    drv = cfg.get("sola") or {}
    result = sola_solve(
        mu,
        g,
        params,
        spec,
        weights,
        scfg,
        j_max=int(drv.get("j_max", 4)),
        delta0=drv.get("delta0"),
        mollifier_shape=drv.get("mollifier_shape", "poly"),
        q=drv.get("q"),
    )
    os.makedirs(out_dir, exist_ok=True)
    artifacts.save_grid_function(os.path.join(out_dir, "sola-limit"), result.limit)
    artifacts.write_json(
        os.path.join(out_dir, "sola-log.json"),
        {
            "deltas": result.deltas,
            "distances": result.distances,
            "q_used": result.q_used,
            "converged": result.converged,
            "stage_logs": [
                {
                    "residual": inf.residual,
                    "newton_iterations": inf.newton_iterations,
                    "eps_final": inf.eps_final,
                    "history": inf.history,
                }
                for inf in result.infos
            ],
            "config_hash": config_hash(normalize_config(cfg)),
        },
    )
    print(
        f"sola: stages={len(result.deltas)} q={result.q_used:.3g} "
        f"converged={result.converged} last_distance="
        f"{result.distances[-1] if result.distances else 0.0:.3e}"
    )
    return 0


def cmd_experiment(cfg: dict, name: str, out_dir: str, seed: int) -> int:
    params = params_from_config(cfg)
    expo = exponents_from_config(cfg, params)
    exp_cfg = cfg.get("experiment") or {}
    names = [name] if name else exp_cfg.get("names", [])
    if not names and exp_cfg.get("name"):
        names = [exp_cfg["name"]]
    if not names:
        print("no experiments configured")
        return 0
    status = 0
    os.makedirs(out_dir, exist_ok=True)
    for nm in names:
        if nm not in EXPERIMENTS:
            raise ConfigError(
                f"unknown experiment {nm!r}; known: {sorted(EXPERIMENTS)}"
            )
        report = EXPERIMENTS[nm](params, expo, exp_cfg.get("options"), seed=seed)
        artifacts.save_report(out_dir, report)
        expo_str = (
            "n/a" if report.fitted_exponent is None else f"{report.fitted_exponent:.3f}"
        )
        print(
            f"{nm}: fitted_exponent={expo_str} "
            f"verdict={'PASS' if report.verdict else 'FAIL'}"
        )
        if not report.verdict:
            status = 2
    return status


def cmd_audit(cfg: dict, out_dir: str, seed: int) -> int:
    params = params_from_config(cfg)
    expo = exponents_from_config(cfg, params)
    exp_cfg = cfg.get("experiment") or {}
    result = run_bracket_audit(params, expo, exp_cfg.get("options"), seed=seed)
    os.makedirs(out_dir, exist_ok=True)
    artifacts.write_json(os.path.join(out_dir, "audit.json"), result)
    print(f"audit: max_discrepancy={result['max_discrepancy']:.3e}")
    return 0 if result["max_discrepancy"] <= AUDIT_LIMIT else 2


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="mixlap",
        description="numerical laboratory for mixed local-nonlocal p-Laplace problems",
    )
    sub = ap.add_subparsers(dest="command", required=True)
    for cmd in ("potential", "solve", "sola", "audit"):
        sp = sub.add_parser(cmd)
        sp.add_argument("--config", required=True)
        sp.add_argument("--out", default="out")
        sp.add_argument("--cache", default=None)
        sp.add_argument("--threads", type=int, default=None)
        sp.add_argument("--dense-ok", action="store_true")
    sp = sub.add_parser("experiment")
    sp.add_argument("name", nargs="?", default=None)
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", default="out")
    sp.add_argument("--cache", default=None)
    sp.add_argument("--threads", type=int, default=None)
    sp.add_argument("--dense-ok", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads:
        os.environ.setdefault("OMP_NUM_THREADS", str(args.threads))
        os.environ.setdefault("NUMBA_NUM_THREADS", str(args.threads))
    try:
        cfg = normalize_config(load_config(args.config))
        if args.cache:
            cfg["cache_dir"] = args.cache
        if args.dense_ok:
            cfg["dense_ok"] = True
        seed = int(cfg.get("seed", 0))
        dense_ok = bool(cfg.get("dense_ok", False))
        if args.command == "potential":
            return cmd_potential(cfg, args.out, dense_ok)
        if args.command == "solve":
            return cmd_solve(cfg, args.out, dense_ok)
        if args.command == "sola":
            return cmd_sola(cfg, args.out, dense_ok)
        if args.command == "experiment":
            return cmd_experiment(cfg, args.name, args.out, seed)
        if args.command == "audit":
            return cmd_audit(cfg, args.out, seed)
        raise ConfigError(f"unknown command {args.command!r}")
    except (
        ConfigError,
        SceneError,
        OperatorError,
        artifacts.ArtifactError,
        SolverError,
        FileNotFoundError,
        json.JSONDecodeError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
