"""Command line front door.

Every subcommand reads an optional JSON config file (``--config``) whose keys
are the long option names with dashes replaced by underscores; flags given on
the command line win over the file, and the file wins over the built-in
defaults. The merged config is written to ``config.json`` in the output
directory so that ``--config <outdir>/config.json`` reproduces the run.

The output directory is ``--out`` if given, otherwise
``$RANDFORCE_OUT/<subcommand>``, otherwise ``./randforce-out/<subcommand>``.

Exit codes: 0 success, 1 invalid input, 2 threshold breach in ``--check`` mode.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .field import BumpFamily, BumpProfile, FieldInstance
from .io import write_json, write_renewal_csv, write_trajectory_csv, _write_rows

OUT_ENV = "RANDFORCE_OUT"

FIELD_DEFAULTS = {"family": "uniform", "R": 1.0, "A": 0.5, "m": 1.0, "p": 0.5, "cell": None}

DEFAULTS = {
    "field-stats": {**FIELD_DEFAULTS, "dim": 4, "seed": 0, "points": 20000, "box": 20.0},
    "simulate": {**FIELD_DEFAULTS, "model": "X", "dim": 4, "v0": 10.0, "t_max": 1000.0, "seed": 0,
                 "n": 1, "h0": 0.05, "v_min": 1.0, "patience": 100.0, "capsule_length": 64.0,
                 "capsule_margin": 0.5, "track_spacing": None, "sigma": None, "lam": None},
    "limit": {"mode": "exact", "dim": 4, "sigma": 1.0, "lam": None, "t": 1.0, "n": 10000,
              "seed": 0, "process": "E", "h": 1e-4, "h_max": 2e-3, "kappa": 3e-2, "eps": 1e-6,
              "E0": 1e-6, "x_max": 50.0, "points": 2001, "steps": 10},
    "covariance": {**FIELD_DEFAULTS, "dim": 4, "budget": 10000, "method": "monte-carlo",
                   "seed": 0, "n_bases": 8},
    "compare": {**FIELD_DEFAULTS, "model": "X", "dim": 4, "v0": 10.0, "t_max": 4096.0, "seed": 0,
                "n": 50, "h0": 0.05, "v_min": 1.0, "patience": 100.0, "capsule_length": 64.0,
                "capsule_margin": 0.5, "track_spacing": None, "limit_method": "quadrature",
                "budget": 10000, "c": None, "ks_max": 0.1},
    "verify": {"suite": "all", "budget": "full", "family": "uniform"},
}


class ConfigError(ValueError):
    """Invalid run configuration (exit code 1)."""


# --------------------------------------------------------------------------- #
# parsing
# --------------------------------------------------------------------------- #
def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file; flags override its entries")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<subcommand>)")
    p.add_argument("--workers", type=int, help="worker processes (default: all cores)")
    p.add_argument("--check", action="store_true",
                   help="exit with code 2 when a threshold is breached")


def _add_field(p: argparse.ArgumentParser):
    p.add_argument("--family", choices=["uniform", "radial", "mixture"])
    p.add_argument("--R", type=float, help="bump support radius")
    p.add_argument("--A", type=float, help="bump amplitude (capped by the C^2 bound m)")
    p.add_argument("--m", type=float, help="C^2 bound on a single bump")
    p.add_argument("--p", type=float, help="radial weight of the mixture family")
    p.add_argument("--cell", type=float, help="generator lattice spacing")
    p.add_argument("--dim", type=int, help="space dimension d")


def _add_dynamics(p: argparse.ArgumentParser):
    p.add_argument("--model", choices=["X", "Y", "Z"])
    p.add_argument("--v0", type=float, help="initial speed |v0|")
    p.add_argument("--t-max", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int, help="number of trajectories")
    p.add_argument("--h0", type=float, help="spatial step; time step is h0/|V|")
    p.add_argument("--v-min", type=float)
    p.add_argument("--patience", type=float)
    p.add_argument("--capsule-length", type=float)
    p.add_argument("--capsule-margin", type=float)
    p.add_argument("--track-spacing", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="randforce", argument_default=argparse.SUPPRESS,
                                 description="Particles in a random Poisson force field.")
    sub = ap.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("field-stats", argument_default=argparse.SUPPRESS,
                       help="sample a field and report force statistics")
    _add_common(p)
    _add_field(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--points", type=int, help="number of random evaluation points")
    p.add_argument("--box", type=float, help="side of the sampling box")

    p = sub.add_parser("simulate", argument_default=argparse.SUPPRESS,
                       help="integrate particle trajectories")
    _add_common(p)
    _add_field(p)
    _add_dynamics(p)
    p.add_argument("--sigma", type=float, help="limit sigma for KS columns (ensembles)")
    p.add_argument("--lam", type=float, help="limit lambda for KS columns (ensembles)")

    p = sub.add_parser("limit", argument_default=argparse.SUPPRESS,
                       help="limit law: exact sampler, density table or Euler-Maruyama paths")
    _add_common(p)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--exact", dest="mode", action="store_const", const="exact")
    g.add_argument("--density", dest="mode", action="store_const", const="density")
    g.add_argument("--em", dest="mode", action="store_const", const="em")
    p.add_argument("--dim", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--lam", "--lambda", dest="lam", type=float)
    p.add_argument("--t", type=float, help="observation time")
    p.add_argument("--n", type=int, help="number of samples or paths")
    p.add_argument("--seed", type=int)
    p.add_argument("--process", choices=["E", "V"], help="EM process: energy or vector")
    p.add_argument("--h", type=float, help="EM step for the energy process")
    p.add_argument("--h-max", type=float, help="largest EM step for the vector process")
    p.add_argument("--kappa", type=float, help="vector EM step factor, h = kappa |V|^3")
    p.add_argument("--eps", type=float, help="starting speed of the vector process")
    p.add_argument("--E0", type=float, help="starting energy of the energy process")
    p.add_argument("--x-max", type=float, help="upper end of the density table")
    p.add_argument("--points", type=int, help="rows of the density table")
    p.add_argument("--steps", type=int, help="EM output times per path")

    p = sub.add_parser("covariance", argument_default=argparse.SUPPRESS,
                       help="estimate sigma^2 and lambda^2")
    _add_common(p)
    _add_field(p)
    p.add_argument("--budget", type=int, help="field draws")
    p.add_argument("--method", choices=["monte-carlo", "quadrature"])
    p.add_argument("--seed", type=int)
    p.add_argument("--n-bases", type=int, help="base points per field draw")

    p = sub.add_parser("compare", argument_default=argparse.SUPPRESS,
                       help="KS distance between particle marginals and the limit law")
    _add_common(p)
    _add_field(p)
    _add_dynamics(p)
    p.add_argument("--limit-method", choices=["monte-carlo", "quadrature"])
    p.add_argument("--budget", type=int, help="covariance draws for --limit-method monte-carlo")
    p.add_argument("--c", type=float, nargs="+", help="scale factors (c^3 must be observed times)")
    p.add_argument("--ks-max", type=float, help="--check threshold on the largest-c KS")

    p = sub.add_parser("verify", argument_default=argparse.SUPPRESS, help="run acceptance suites")
    _add_common(p)
    p.add_argument("--suite", choices=["sde", "covariance", "particle", "engineering", "all"])
    p.add_argument("--budget", choices=["small", "full"])
    p.add_argument("--family", choices=["uniform", "radial", "mixture"],
                   help="family for the covariance suite (radial is the negative control)")
    return ap


def resolve_config(ns: argparse.Namespace) -> dict:
    """Merge defaults, the config file and explicit flags (in increasing priority)."""
    flags = vars(ns).copy()
    sub = flags.pop("subcommand")
    cfg = dict(DEFAULTS[sub])
    path = flags.pop("config", None)
    if path is not None:
        try:
            block = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(block, dict):
            raise ConfigError("config file must hold a JSON object")
        block.pop("subcommand", None)
        for k, v in block.items():
            k = k.replace("-", "_")
            if k not in cfg and k not in ("out", "workers", "check"):
                raise ConfigError(f"unknown config key {k!r} for {sub}")
            cfg[k] = v
    cfg.update(flags)
    cfg.setdefault("check", False)
    cfg["check"] = bool(cfg["check"])
    cfg["subcommand"] = sub
    return cfg


def output_dir(cfg: dict) -> Path:
    if cfg.get("out"):
        return Path(cfg["out"])
    root = os.environ.get(OUT_ENV)
    return Path(root if root else "randforce-out") / cfg["subcommand"]


def _workers(cfg: dict) -> int:
    w = cfg.get("workers")
    if w is None:
        return os.cpu_count() or 1
    if int(w) < 1:
        raise ConfigError("--workers must be at least 1")
    return int(w)


def _echo(cfg: dict, outdir: Path):
    keep = {k: v for k, v in cfg.items() if k not in ("workers", "out")}
    write_json(outdir / "config.json", keep)


def _require_dim(d) -> int:
    if int(d) != d or d < 4:
        raise ConfigError("the limit theory requires dimension d >= 4")
    return int(d)


def _family(cfg: dict) -> BumpFamily:
    try:
        return BumpFamily(cfg["family"], BumpProfile(float(cfg["R"]), float(cfg["m"]), float(cfg["A"])),
                          d=int(cfg["dim"]), p=float(cfg["p"]),
                          cell=None if cfg.get("cell") is None else float(cfg["cell"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# --------------------------------------------------------------------------- #
# subcommands
# --------------------------------------------------------------------------- #
def cmd_field_stats(cfg: dict, outdir: Path) -> int:
    from .covariance import zero_lag_variance
    fam = _family(cfg)
    inst = FieldInstance(int(cfg["seed"]), fam)
    rng = np.random.default_rng(int(cfg["seed"]))
    pts = rng.uniform(-0.5, 0.5, (int(cfg["points"]), fam.d)) * float(cfg["box"])
    F = np.array([inst.force_at(x) for x in pts])
    nz = np.any(F != 0.0, axis=1)
    stats = {
        "family": fam.kind, "d": fam.d, "R": fam.R, "effective_A": fam.amplitude,
        "points": int(len(pts)), "fraction_nonzero": float(nz.mean()),
        "mean_force": F.mean(axis=0).tolist(),
        "component_variance": F.var(axis=0, ddof=1).tolist(),
        "component_variance_oracle": zero_lag_variance(fam, 1),
        "max_norm": float(np.linalg.norm(F, axis=1).max()),
        "gap_fraction": float(np.mean([inst.gap_condition(x) for x in pts[:min(len(pts), 2000)]])),
    }
    write_json(outdir / "field_stats.json", stats)
    print(json.dumps(stats, indent=2))
    return 0


def _integrator(cfg: dict):
    from .dynamics import IntegratorConfig
    return IntegratorConfig(h0=float(cfg["h0"]), v_min=float(cfg["v_min"]),
                            t_max=float(cfg["t_max"]), patience=float(cfg["patience"]),
                            capsule_length=float(cfg["capsule_length"]),
                            capsule_margin=float(cfg["capsule_margin"]),
                            track_spacing=float(cfg["track_spacing"] or 0.0))


def _ensemble(cfg: dict, workers: int, sigma=None, lam=None):
    from .harness import EnsembleConfig
    fam = _family(cfg)
    return EnsembleConfig(model=f"particle-{cfg['model']}", n=int(cfg["n"]), seed_base=int(cfg["seed"]),
                          t_max=float(cfg["t_max"]), d=int(cfg["dim"]), v0=float(cfg["v0"]),
                          family=fam, integrator=_integrator(cfg), sigma=sigma, lam=lam,
                          track_spacing=cfg.get("track_spacing"), workers=workers)


def cmd_simulate(cfg: dict, outdir: Path) -> int:
    from .dynamics import near_self_intersection_scan, simulate_X, simulate_renewal
    from .harness import run_ensemble
    d = _require_dim(cfg["dim"])
    if not float(cfg["v0"]) > 0 or not float(cfg["t_max"]) > 0:
        raise ConfigError("--v0 and --t-max must be positive")
    if int(cfg["n"]) > 1:
        rep = run_ensemble(_ensemble(cfg, _workers(cfg), cfg.get("sigma"), cfg.get("lam")))
        rep.write(outdir)
        print(json.dumps({"n_kept": rep.n_kept, "excluded": rep.excluded, "fits": rep.fits,
                          "rates": rep.rates}, indent=2))
        return 0
    fam = _family(cfg)
    integ = _integrator(cfg)
    v0 = np.zeros(d)
    v0[0] = float(cfg["v0"])
    if cfg["model"] == "X":
        tr = simulate_X(v0, int(cfg["seed"]), fam, integ)
    else:
        if integ.track_spacing == 0.0:
            integ.track_spacing = fam.R
        tr = simulate_renewal(v0, int(cfg["seed"]), fam, integ, variant=cfg["model"])
        scan = near_self_intersection_scan(tr.track, tr.track_t, tr.renewal.tau, tr.renewal.Y,
                                           tr.renewal.v, R=fam.R)
        write_renewal_csv(outdir / "renewal.csv", tr, scan)
    write_trajectory_csv(outdir / "trajectory.csv", tr)
    meta = {"model": tr.model, "trapped": tr.trapped, "truncated": tr.truncated, "steps": tr.steps,
            "t_end": tr.t_end, "final_speed": float(tr.speed[-1])}
    write_json(outdir / "run.json", meta)
    print(json.dumps(meta, indent=2))
    return 0


def cmd_limit(cfg: dict, outdir: Path) -> int:
    from .limit_sde import (DiffusionParams, LimitLaw, exact_energy_sample, limit_cdf,
                            limit_density, simulate_energy_paths, simulate_v_paths)
    d = _require_dim(cfg["dim"])
    mode = cfg["mode"]
    if mode == "density":
        x = np.linspace(0.0, float(cfg["x_max"]), int(cfg["points"]))
        p, c = limit_density(x, d), limit_cdf(x, d)
        _write_rows(outdir / "density.csv", ["x", "p", "cdf"], zip(x, p, c))
        out = {"d": d, "x_max": float(x[-1]), "cdf_at_x_max": float(c[-1]),
               "tail_at_x_max": float(1.0 - c[-1])}
        write_json(outdir / "summary.json", out)
        print(json.dumps(out, indent=2))
        return 0
    lam = cfg["sigma"] if cfg.get("lam") is None else cfg["lam"]
    try:
        P = DiffusionParams(d, float(cfg["sigma"]), float(lam))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    t, n, seed = float(cfg["t"]), int(cfg["n"]), int(cfg["seed"])
    if not t > 0 or n < 1:
        raise ConfigError("--t must be positive and --n at least 1")
    law = LimitLaw(d, P.sigma)
    if mode == "exact":
        E = exact_energy_sample(t, P, n, seed=seed)
        _write_rows(outdir / "samples.csv", ["t", "E"], ((t, e) for e in E))
        g = E ** 1.5 / (2.0 * law.a2 * t)
        out = {"t": t, "n": n, "mean_E": float(E.mean()),
               "mean_E32_over_2a2t": float(g.mean()), "expected": d / 3.0}
    elif mode == "em":
        times = np.linspace(t / int(cfg["steps"]), t, int(cfg["steps"]))
        if cfg["process"] == "E":
            E = simulate_energy_paths(P, times, n, seed=seed, h=float(cfg["h"]), E0=float(cfg["E0"]))
            rows = ((i, times[k], E[i, k]) for i in range(n) for k in range(len(times)))
            _write_rows(outdir / "paths.csv", ["path", "t", "E"], rows)
            fin = E[:, -1]
        else:
            V = simulate_v_paths(P, times, n, seed=seed, eps=float(cfg["eps"]),
                                 h_max=float(cfg["h_max"]), kappa=float(cfg["kappa"]))
            rows = ((i, times[k], *V[i, k]) for i in range(n) for k in range(len(times)))
            _write_rows(outdir / "paths.csv", ["path", "t"] + [f"V{j + 1}" for j in range(d)], rows)
            fin = 0.5 * np.sum(V[:, -1] ** 2, axis=1)
        exact = (2.0 * law.a2 * t) ** (2.0 / 3.0) * math.gamma(d / 3.0 + 2.0 / 3.0) / math.gamma(d / 3.0)
        out = {"t": t, "n": n, "process": cfg["process"], "mean_E": float(fin.mean()),
               "exact_mean_E": exact}
    else:
        raise ConfigError(f"unknown limit mode {mode!r}")
    write_json(outdir / "summary.json", out)
    print(json.dumps(out, indent=2))
    return 0


def cmd_covariance(cfg: dict, outdir: Path) -> int:
    from .covariance import estimate_sigma_lambda
    fam = _family(cfg)
    try:
        est = estimate_sigma_lambda(fam, int(cfg["budget"]), seed=int(cfg["seed"]),
                                    method=cfg["method"], n_bases=int(cfg["n_bases"]),
                                    workers=_workers(cfg))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    (outdir / "covariance.json").write_text(est.to_json() + "\n")
    print(est.to_json())
    if est.csi_violated:
        print("csi_violated: sigma^2 is not resolved above zero", file=sys.stderr)
        return 2 if cfg["check"] else 0
    return 0


def cmd_compare(cfg: dict, outdir: Path) -> int:
    from .covariance import estimate_sigma_lambda
    from .harness import (CsiViolation, compare_particle_to_limit, ks_table_monotone, run_ensemble)
    _require_dim(cfg["dim"])
    fam = _family(cfg)
    workers = _workers(cfg)
    est = estimate_sigma_lambda(fam, int(cfg["budget"]), seed=int(cfg["seed"]),
                                method=cfg["limit_method"], workers=workers)
    if est.csi_violated:
        raise ConfigError("csi_violated: sigma^2 = 0 for this family, no limit law to compare with")
    s, lam = math.sqrt(est.sigma2), math.sqrt(max(est.lambda2, 0.0))
    rep = run_ensemble(_ensemble(cfg, workers, s, lam))
    rep.write(outdir)
    times = rep.times
    c_list = cfg["c"] if cfg.get("c") else [t ** (1.0 / 3.0) for t in times if t >= 8.0]
    try:
        rows = compare_particle_to_limit(rep, est, c_list)
    except (CsiViolation, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    mono = ks_table_monotone(rows, "ks_energy", 2.0)
    out = {"covariance": json.loads(est.to_json()), "rows": rows, "monotone_within_2_floors": mono,
           "ks_max": float(cfg["ks_max"])}
    write_json(outdir / "compare.json", out)
    print(json.dumps(out, indent=2))
    breach = not rows or rows[-1]["ks_energy"] >= float(cfg["ks_max"]) or not mono
    return 2 if (breach and cfg["check"]) else 0


def cmd_verify(cfg: dict, outdir: Path) -> int:
    from . import acceptance
    workers = _workers(cfg)
    budget = cfg["budget"]
    if cfg["family"] != "uniform" and cfg["suite"] != "covariance":
        raise ConfigError("--family only applies to the covariance suite")
    if cfg["suite"] == "covariance":
        results = [acceptance.covariance_family_check(cfg["family"], budget, workers)]
    else:
        results = acceptance.run_suite(cfg["suite"], budget, workers)
    for r in results:
        print(r.line())
    write_json(outdir / "verify.json", {"suite": cfg["suite"], "budget": budget,
                                        "results": [r.as_dict() for r in results]})
    failed = [r for r in results if not r.passed]
    return 2 if (failed and cfg["check"]) else 0


COMMANDS = {"field-stats": cmd_field_stats, "simulate": cmd_simulate, "limit": cmd_limit,
            "covariance": cmd_covariance, "compare": cmd_compare, "verify": cmd_verify}


def main(argv=None) -> int:
    ap = build_parser()
    ns = ap.parse_args(argv)
    try:
        cfg = resolve_config(ns)
        if "dim" in cfg and cfg["subcommand"] in ("simulate", "limit", "compare"):
            _require_dim(cfg["dim"])
        outdir = output_dir(cfg)
        outdir.mkdir(parents=True, exist_ok=True)
        _echo(cfg, outdir)
        return COMMANDS[cfg["subcommand"]](cfg, outdir)
    except (ConfigError, ValueError) as exc:
        print(f"randforce: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
