"""Ensembles and the statistics that tie them to the limit laws.

An ensemble runs ``n`` independent trajectories of a particle model (``X``,
``Y`` or ``Z``) or of a limit model (velocity or energy diffusion). Trajectory
``i`` depends only on ``(seed_base, i)``, and results are merged by index, so
a report does not depend on how work is split across workers.

Particle time ``c^3 t`` is matched with limit time ``t``; speeds are divided
by ``c`` and energies by ``c^2``.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field as dc_field
from typing import Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy import special
from sklearn.base import BaseEstimator, RegressorMixin

from .covariance import CovarianceEstimate, sigma_lambda_quadrature
from .dynamics import (IntegratorConfig, near_self_intersection_scan, simulate_renewal,
                       simulate_X)
from .field import BumpFamily, BumpProfile
from .io import write_marginal_csv
from .limit_sde import DiffusionParams, LimitLaw, simulate_energy_paths, simulate_v_paths

__all__ = [
    "MODELS",
    "SCHEMA_VERSION",
    "EnsembleConfig",
    "EnsembleReport",
    "PowerLawFit",
    "PowerLawRegressor",
    "CsiViolation",
    "run_ensemble",
    "ks_statistic",
    "ks_noise_floor",
    "fit_power_law",
    "compare_particle_to_limit",
    "ks_table_monotone",
    "dyadic_crossing_report",
    "levels_from_path",
    "envelope_violations",
    "default_schedule",
    "limit_params_for",
    "acceptance_family",
]

MODELS = ("particle-X", "particle-Y", "particle-Z", "limit-V", "limit-E")
SCHEMA_VERSION = "1.0"
MAX_TOPUPS = 8  # extra batches run to reach target_kept
# median of the Kolmogorov distribution: sqrt(n) * KS under the null
KS_MEDIAN = 0.8275735551899077


class CsiViolation(ValueError):
    """The longitudinal covariance vanishes; the limit theorem does not apply."""


# --------------------------------------------------------------------------- #
# statistics
# --------------------------------------------------------------------------- #
def ks_statistic(samples, cdf) -> float:
    """``sup |ECDF - CDF|`` for a continuous reference ``cdf``."""
    x = np.sort(np.asarray(samples, dtype=float).reshape(-1))
    n = x.size
    if n == 0:
        raise ValueError("samples must be non-empty")
    F = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    d = max(np.max(i / n - F), np.max(F - (i - 1) / n))
    return float(min(max(d, 0.0), 1.0))


def ks_noise_floor(n: int) -> float:
    """Median KS distance of ``n`` samples from their own law."""
    return KS_MEDIAN / math.sqrt(n)


@dataclass(frozen=True)
class PowerLawFit:
    exponent: float
    intercept: float
    exponent_se: float
    ci_low: float
    ci_high: float
    n: int

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def fit_power_law(times, values) -> PowerLawFit:
    """Least squares of ``ln v`` on ``ln t`` with a 95% normal-approximation CI."""
    t = np.asarray(times, dtype=float).reshape(-1)
    v = np.asarray(values, dtype=float).reshape(-1)
    if t.shape != v.shape:
        raise ValueError("times and values must have the same length")
    if t.size < 3:
        raise ValueError("need at least 3 points")
    if np.any(~np.isfinite(t)) or np.any(~np.isfinite(v)) or np.any(t <= 0) or np.any(v <= 0):
        raise ValueError("times and values must be positive and finite")
    x, y = np.log(t), np.log(v)
    xm = x.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx == 0:
        raise ValueError("times must not all be equal")
    slope = float(np.sum((x - xm) * (y - y.mean())) / sxx)
    icpt = float(y.mean() - slope * xm)
    resid = y - (icpt + slope * x)
    s2 = float(np.sum(resid ** 2) / (t.size - 2))
    se = math.sqrt(s2 / sxx)
    return PowerLawFit(slope, icpt, se, slope - 1.959963984540054 * se,
                       slope + 1.959963984540054 * se, int(t.size))


class PowerLawRegressor(RegressorMixin, BaseEstimator):
    """Estimator wrapper of :func:`fit_power_law`: ``y ~ exp(b) * X^a``."""

    def fit(self, X, y):
        fit = fit_power_law(np.asarray(X, float).reshape(-1), y)
        self.exponent_ = fit.exponent
        self.intercept_ = fit.intercept
        self.exponent_se_ = fit.exponent_se
        self.ci_ = (fit.ci_low, fit.ci_high)
        return self

    def predict(self, X):
        X = np.asarray(X, float).reshape(-1)
        return np.exp(self.intercept_) * X ** self.exponent_


def envelope_violations(t, speed, v0: float, delta: float = 0.2):
    """Boolean mask of ``|V(t)|`` outside ``[b^{1-delta}, b^{1+delta}]``, ``b = |v0| + t^{1/3}``."""
    t = np.asarray(t, float)
    b = abs(v0) + np.cbrt(t)
    s = np.asarray(speed, float)
    return (s < b ** (1.0 - delta)) | (s > b ** (1.0 + delta))


def levels_from_path(t, speed):
    """Dyadic level log of a sampled speed path.

    The initial level is ``round(log2 |V(0)|)``; the level moves to ``m + 1``
    when the speed reaches ``2^{m+1}`` and to ``m - 1`` when it drops to
    ``2^{m-1}`` (the rule used by the particle integrator).
    """
    t = np.asarray(t, float)
    s = np.asarray(speed, float)
    m = int(math.floor(math.log2(s[0]) + 0.5))
    lt, lm = [t[0]], [m]
    for ti, si in zip(t[1:], s[1:]):
        while si >= 2.0 ** (m + 1) or si <= 2.0 ** (m - 1):
            m = m + 1 if si >= 2.0 ** (m + 1) else m - 1
            lt.append(ti)
            lm.append(m)
    return np.array(lt), np.array(lm, np.int64)


def dyadic_crossing_report(diagnostics, min_count: int = 1) -> dict:
    """Up-crossing frequencies per dyadic level.

    ``diagnostics`` is an iterable of ``(levels_t, levels)`` pairs. A crossing
    starts when level ``m`` is entered; it ends at the next level change. The
    first level of each path was not entered by a crossing and is skipped.
    Times are normalised by ``2^{3m}``, the natural time scale at speed ``2^m``.
    """
    up: dict = {}
    tot: dict = {}
    times: dict = {}
    for lt, lm in diagnostics:
        lt = np.asarray(lt, float)
        lm = np.asarray(lm, np.int64)
        for k in range(1, len(lm) - 1):
            m = int(lm[k])
            tot[m] = tot.get(m, 0) + 1
            up[m] = up.get(m, 0) + int(lm[k + 1] > m)
            times.setdefault(m, []).append((lt[k + 1] - lt[k]) / 2.0 ** (3 * m))
    rows = []
    for m in sorted(tot):
        n = tot[m]
        if n < min_count:
            continue
        p = up[m] / n
        rows.append({"level": m, "n": n, "up": up[m], "p_hat": p,
                     "se": math.sqrt(p * (1 - p) / n), "mean_time_norm": float(np.mean(times[m]))})
    n_all = sum(r["n"] for r in rows)
    up_all = sum(r["up"] for r in rows)
    pooled = up_all / n_all if n_all else float("nan")
    return {"levels": rows, "pooled_p_hat": pooled, "pooled_n": n_all,
            "pooled_se": math.sqrt(pooled * (1 - pooled) / n_all) if n_all else float("nan")}


# --------------------------------------------------------------------------- #
# configuration
# --------------------------------------------------------------------------- #
def default_schedule(t_max: float) -> np.ndarray:
    """``1, 2, 4, ...`` up to ``t_max``, with ``t_max`` itself appended."""
    return IntegratorConfig(t_max=t_max).schedule()


def limit_params_for(family: BumpFamily) -> DiffusionParams:
    """Limit coefficients of a family from the quadrature oracle."""
    s2, l2 = sigma_lambda_quadrature(family)
    if not s2 > 0:
        raise CsiViolation("sigma^2 = 0 for this family (gradient field); no limit diffusion")
    return DiffusionParams(family.d, math.sqrt(s2), math.sqrt(l2))


@dataclass
class EnsembleConfig:
    """Everything that determines an ensemble.

    ``workers`` only controls parallelism; results do not depend on it.
    ``sigma``/``lam`` are required for limit models and optional for particle
    models (where they enable KS columns against the limit law).
    With ``target_kept`` set, particle ensembles run further indices past
    ``n`` until that many trajectories survive exclusion.
    """

    model: str = "particle-X"
    n: int = 200
    seed_base: int = 0
    t_max: float = 1e5
    schedule: Optional[Sequence[float]] = None
    d: int = 4
    v0: float = 10.0
    family: BumpFamily = dc_field(default_factory=BumpFamily)
    integrator: IntegratorConfig = dc_field(default_factory=IntegratorConfig)
    sigma: Optional[float] = None
    lam: Optional[float] = None
    empty: bool = False
    envelope_points: int = 200
    envelope_delta: float = 0.2
    fit_window: Optional[Sequence[float]] = None
    scan_intersections: bool = True
    track_spacing: Optional[float] = None
    em_h: float = 1e-4
    em_h_max: float = 2e-3
    em_kappa: float = 3e-2
    eps: float = 1e-6
    E0: float = 1e-6
    target_kept: Optional[int] = None
    workers: int = 1

    def times(self) -> np.ndarray:
        if self.schedule is None:
            return default_schedule(self.t_max)
        t = np.asarray(self.schedule, float)
        if t.ndim != 1 or t.size == 0 or np.any(t <= 0) or np.any(np.diff(t) <= 0):
            raise ValueError("observation schedule must be positive and strictly increasing")
        return t

    def validate(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if int(self.d) != self.d or self.d < 4:
            raise ValueError("the limit theory requires dimension d >= 4")
        if int(self.n) < 1:
            raise ValueError("trajectory count must be at least 1")
        if self.target_kept is not None and int(self.target_kept) < 1:
            raise ValueError("target_kept must be at least 1")
        self.times()
        if self.model.startswith("particle"):
            if self.family.d != self.d:
                raise ValueError("family dimension does not match d")
            if not self.v0 > 0:
                raise ValueError("|v0| must be positive")
            self.integrator.validate()
        else:
            if self.sigma is None or self.lam is None:
                raise ValueError("limit models need sigma and lambda")
            DiffusionParams(self.d, self.sigma, self.lam)
        return self

    def to_dict(self) -> dict:
        fam = self.family
        integ = dataclasses.asdict(self.integrator)
        integ.pop("t_obs", None)
        out = {
            "model": self.model, "n": int(self.n), "seed_base": int(self.seed_base),
            "t_max": float(self.t_max), "schedule": self.times().tolist(), "d": int(self.d),
            "v0": float(self.v0),
            "family": {"family": fam.kind, "R": fam.R, "A": fam.profile.amplitude, "m": fam.profile.m,
                       "d": fam.d, "p": fam.p, "cell": fam.cell, "effective_A": fam.amplitude},
            "integrator": integ, "sigma": self.sigma, "lam": self.lam, "empty": self.empty,
            "envelope_points": self.envelope_points, "envelope_delta": self.envelope_delta,
            "fit_window": None if self.fit_window is None else list(self.fit_window),
            "scan_intersections": self.scan_intersections, "track_spacing": self.track_spacing,
            "em_h": self.em_h, "em_h_max": self.em_h_max, "em_kappa": self.em_kappa,
            "eps": self.eps, "E0": self.E0, "target_kept": self.target_kept,
        }
        return out

    @classmethod
    def from_dict(cls, block: dict) -> "EnsembleConfig":
        block = dict(block)
        fam = block.pop("family", None)
        integ = block.pop("integrator", None)
        block.pop("workers", None)
        cfg = cls(**{k: v for k, v in block.items() if k in {f.name for f in dataclasses.fields(cls)}})
        if fam is not None:
            fam = dict(fam)
            fam.setdefault("d", cfg.d)
            cfg.family = BumpFamily.from_config(fam)
        if integ is not None:
            names = {f.name for f in dataclasses.fields(IntegratorConfig)}
            cfg.integrator = IntegratorConfig(**{k: v for k, v in integ.items() if k in names})
        return cfg


# --------------------------------------------------------------------------- #
# workers
# --------------------------------------------------------------------------- #
def _index_seeds(seed_base: int, i: int):
    st = np.random.SeedSequence([int(seed_base) & 0xFFFFFFFFFFFFFFFF, int(i)]).generate_state(2, np.uint64)
    return int(st[0]), int(st[1])


def _particle_one(cfg: EnsembleConfig, i: int, obs: np.ndarray, sched_idx: np.ndarray,
                  env_idx: np.ndarray) -> dict:
    fseed, dseed = _index_seeds(cfg.seed_base, i)
    direction = np.random.default_rng(dseed).standard_normal(cfg.d)
    v0 = cfg.v0 * direction / np.linalg.norm(direction)
    renewal = cfg.model in ("particle-Y", "particle-Z")
    scan = renewal and cfg.scan_intersections
    integ = dataclasses.replace(cfg.integrator, t_obs=obs, t_max=float(obs[-1]),
                                track_spacing=(cfg.track_spacing or cfg.family.R) if scan else 0.0)
    try:
        if renewal:
            tr = simulate_renewal(v0, fseed, cfg.family, integ, variant=cfg.model[-1], empty=cfg.empty)
        else:
            tr = simulate_X(v0, fseed, cfg.family, integ, empty=cfg.empty)
    except Exception as exc:  # recorded and excluded, never silently dropped
        return {"index": i, "failed": repr(exc)}
    T = len(obs)
    speed = np.full(T, np.nan)
    energy = np.full(T, np.nan)
    xnorm = np.full(T, np.nan)
    # observations are emitted in order, starting with t = 0
    pos = np.searchsorted(obs, tr.t[1:])
    ok = (pos < T)
    ok[ok] &= obs[pos[ok]] == tr.t[1:][ok]
    pos = pos[ok]
    speed[pos] = tr.speed[1:][ok]
    energy[pos] = tr.E[1:][ok]
    xnorm[pos] = np.linalg.norm(tr.X[1:][ok], axis=1)
    res = {"index": i, "failed": None, "trapped": tr.trapped, "truncated": tr.truncated,
           "speed": speed[sched_idx], "energy": energy[sched_idx], "xnorm": xnorm[sched_idx],
           "env_t": obs[env_idx], "env_speed": speed[env_idx], "levels_t": tr.levels_t,
           "levels": tr.levels, "steps": tr.steps, "n_segments": 0, "n_flagged": 0,
           "any_flag": False}
    if renewal:
        res["n_segments"] = len(tr.renewal.tau)
        if scan:
            sc = near_self_intersection_scan(tr.track, tr.track_t, tr.renewal.tau, tr.renewal.Y,
                                             tr.renewal.v, R=cfg.family.R)
            res["n_flagged"] = int(sc["any"].sum())
            res["any_flag"] = bool(sc["any"].any())
    return res


def _is_kept(r) -> bool:
    return r["failed"] is None and not (r["trapped"] or r["truncated"] or r["any_flag"])


def _particle_chunk(cfg, idx, obs, sched_idx, env_idx):
    return [_particle_one(cfg, i, obs, sched_idx, env_idx) for i in idx]


def _limit_chunk(cfg, start, stop, times):
    params = DiffusionParams(cfg.d, cfg.sigma, cfg.lam)
    if cfg.model == "limit-V":
        V = simulate_v_paths(params, times, stop - start, seed=cfg.seed_base, eps=cfg.eps,
                             h_max=cfg.em_h_max, kappa=cfg.em_kappa, offset=start)
        sp = np.linalg.norm(V, axis=2)
        return sp, 0.5 * sp ** 2
    E = simulate_energy_paths(params, times, stop - start, seed=cfg.seed_base, h=cfg.em_h,
                              E0=cfg.E0, offset=start)
    return np.sqrt(2.0 * E), E


def _chunks(n: int, workers: int):
    parts = max(1, min(n, 4 * max(int(workers), 1)))
    edges = np.linspace(0, n, parts + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


# --------------------------------------------------------------------------- #
# report
# --------------------------------------------------------------------------- #
@dataclass
class EnsembleReport:
    config: dict
    times: np.ndarray
    speed: np.ndarray
    energy: np.ndarray
    xnorm: Optional[np.ndarray]
    n_total: int
    excluded: dict
    failures: list
    ks: list = dc_field(default_factory=list)
    fits: dict = dc_field(default_factory=dict)
    rates: dict = dc_field(default_factory=dict)
    cbar_fit: Optional[float] = None
    cbar_derived: Optional[float] = None
    levels: list = dc_field(default_factory=list)

    @property
    def n_kept(self) -> int:
        return int(self.speed.shape[0])

    def summary(self) -> dict:
        q = [0.05, 0.25, 0.5, 0.75, 0.95]
        marg = []
        for k, t in enumerate(self.times):
            row = {"t": float(t)}
            for name, arr in (("speed", self.speed), ("energy", self.energy)):
                col = arr[:, k]
                row[name] = {"mean": float(np.mean(col)) if col.size else None,
                             "quantiles": dict(zip(map(str, q), np.quantile(col, q).tolist()))
                             if col.size else None}
            marg.append(row)
        return {
            "schema_version": SCHEMA_VERSION,
            "config": self.config,
            "n_total": self.n_total,
            "n_kept": self.n_kept,
            "excluded": self.excluded,
            "failures": self.failures,
            "marginals": marg,
            "ks": self.ks,
            "fits": self.fits,
            "rates": self.rates,
            "cbar_fit": self.cbar_fit,
            "cbar_derived": self.cbar_derived,
        }

    def to_json(self) -> str:
        from .io import _default
        return json.dumps(self.summary(), indent=2, sort_keys=True, default=_default) + "\n"

    def write(self, outdir, marginals: bool = True):
        """``report.json`` plus ``x,ecdf`` CSVs for every speed and energy marginal."""
        from pathlib import Path
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "report.json").write_text(self.to_json())
        if marginals and self.n_kept:
            for k, t in enumerate(self.times):
                write_marginal_csv(outdir / "marginals" / f"speed_t{t:g}.csv", self.speed[:, k])
                write_marginal_csv(outdir / "marginals" / f"energy_t{t:g}.csv", self.energy[:, k])
        return outdir


def _mean_E_X(d: int) -> float:
    """``E[X]`` for ``X`` with density :func:`randforce.limit_sde.limit_density`."""
    return float(special.gamma(d / 3.0 + 2.0 / 3.0) / special.gamma(d / 3.0))


def _fit_or_none(t, v):
    try:
        return fit_power_law(t, v).as_dict()
    except ValueError:
        return None


def run_ensemble(config: EnsembleConfig) -> EnsembleReport:
    """Run an ensemble and compute its statistics (see :class:`EnsembleReport`)."""
    cfg = config.validate()
    times = cfg.times()
    workers = max(1, int(cfg.workers))
    params = None
    if cfg.sigma is not None and cfg.lam is not None:
        params = DiffusionParams(cfg.d, cfg.sigma, cfg.lam)
    levels = []
    failures = []
    excluded = {"trapped": 0, "truncated": 0, "flagged": 0, "failed": 0}
    rates = {}
    xnorm = None
    if cfg.model.startswith("particle"):
        env_t = (np.linspace(0.0, cfg.t_max, cfg.envelope_points + 1)[1:]
                 if cfg.envelope_points > 0 else np.empty(0))
        obs = np.union1d(times, env_t)
        sched_idx = np.searchsorted(obs, times)
        env_idx = np.searchsorted(obs, env_t)
        results = []
        start, count = 0, int(cfg.n)
        for _ in range(MAX_TOPUPS + 1):
            parts = Parallel(n_jobs=workers)(
                delayed(_particle_chunk)(cfg, list(range(start + a, start + b)), obs, sched_idx,
                                         env_idx)
                for a, b in _chunks(count, workers))
            results += sorted((r for p in parts for r in p), key=lambda r: r["index"])
            if cfg.target_kept is None:
                break
            good = np.cumsum([_is_kept(r) for r in results])
            if good[-1] >= cfg.target_kept:
                # drop the indices beyond the one that completes the target
                results = results[:int(np.searchsorted(good, cfg.target_kept)) + 1]
                break
            deficit = int(cfg.target_kept - good[-1])
            start += count
            count = deficit + max(4, deficit // 2)
        kept = []
        seg_tot = seg_flag = 0
        env_viol = env_n = 0
        for r in results:
            if r["failed"] is not None:
                excluded["failed"] += 1
                failures.append({"index": r["index"], "error": r["failed"]})
                continue
            seg_tot += r["n_segments"]
            seg_flag += r["n_flagged"]
            if r["trapped"]:
                excluded["trapped"] += 1
            elif r["truncated"]:
                excluded["truncated"] += 1
            elif r["any_flag"]:
                excluded["flagged"] += 1
            else:
                kept.append(r)
                if r["env_t"].size:
                    m = envelope_violations(r["env_t"], r["env_speed"], cfg.v0, cfg.envelope_delta)
                    env_viol += int(m.sum())
                    env_n += m.size
        T = times.size
        speed = np.array([r["speed"] for r in kept]).reshape(-1, T)
        energy = np.array([r["energy"] for r in kept]).reshape(-1, T)
        xnorm = np.array([r["xnorm"] for r in kept]).reshape(-1, T)
        levels = [(r["levels_t"], r["levels"]) for r in kept]
        n_done = len(results) - excluded["failed"]
        rates = {
            "trapping": excluded["trapped"] / n_done if n_done else float("nan"),
            "excluded_fraction": (len(results) - len(kept)) / len(results),
            "segment_flag_rate": seg_flag / seg_tot if seg_tot else 0.0,
            "trajectory_flag_rate": sum(r["any_flag"] for r in results if r["failed"] is None)
            / n_done if n_done else float("nan"),
            "envelope_violation": env_viol / env_n if env_n else float("nan"),
            "segments": seg_tot,
        }
    else:
        parts = Parallel(n_jobs=workers)(
            delayed(_limit_chunk)(cfg, a, b, times) for a, b in _chunks(int(cfg.n), workers))
        speed = np.concatenate([p[0] for p in parts])
        energy = np.concatenate([p[1] for p in parts])

    n_total = len(results) if cfg.model.startswith("particle") else int(cfg.n)
    report = EnsembleReport(cfg.to_dict(), times, speed, energy, xnorm, n_total, excluded,
                            failures, levels=levels, rates=rates)
    n_kept = speed.shape[0]
    if n_kept == 0:
        return report

    # power laws over the fit window (the last decade by default)
    lo, hi = cfg.fit_window if cfg.fit_window is not None else (times[-1] / 10.0, times[-1])
    w = (times >= lo) & (times <= hi)
    report.fits = {
        "window": [float(lo), float(hi)],
        "energy": _fit_or_none(times[w], energy[:, w].mean(axis=0)),
        "speed": _fit_or_none(times[w], speed[:, w].mean(axis=0)),
    }
    if xnorm is not None:
        report.fits["position"] = _fit_or_none(times[w], xnorm[:, w].mean(axis=0))
    report.cbar_fit = float(energy[:, -1].mean() / (times[-1] ** (2.0 / 3.0) * _mean_E_X(cfg.d)))

    if params is not None:
        law = LimitLaw(cfg.d, params.sigma)
        report.cbar_derived = law.cbar
        rows = []
        for k, t in enumerate(times):
            if cfg.model.startswith("particle"):
                c = t ** (1.0 / 3.0)
                ks_s = ks_statistic(speed[:, k] / c, lambda x: law.speed_cdf(x, 1.0))
                ks_e = ks_statistic(energy[:, k] / c ** 2, lambda x: law.energy_cdf(x, 1.0))
            else:
                ks_s = ks_statistic(speed[:, k], lambda x: law.speed_cdf(x, t))
                ks_e = ks_statistic(energy[:, k], lambda x: law.energy_cdf(x, t))
            rows.append({"t": float(t), "ks_speed": ks_s, "ks_energy": ks_e,
                         "noise_floor": ks_noise_floor(n_kept)})
        report.ks = rows
    return report


# --------------------------------------------------------------------------- #
# particle vs limit
# --------------------------------------------------------------------------- #
def compare_particle_to_limit(report: EnsembleReport, limit, c_list, t: float = 1.0) -> list:
    """KS distance of ``|V(c^3 t)|/c`` and ``E(c^3 t)/c^2`` from the exact limit marginals.

    ``limit`` is a :class:`DiffusionParams` or a :class:`CovarianceEstimate`;
    the latter is refused when it flags a vanishing ``sigma^2``. Every
    ``c^3 t`` must be an observation time of ``report``.
    """
    if isinstance(limit, CovarianceEstimate):
        if limit.csi_violated or not limit.sigma2 > 0:
            raise CsiViolation("csi_violated: longitudinal covariance sigma^2 is not positive; "
                               "the limit diffusion is not defined for this family")
        limit = DiffusionParams(int(limit.family.get("d", report.config.get("d", 4))),
                                math.sqrt(limit.sigma2), math.sqrt(max(limit.lambda2, 0.0)))
    law = LimitLaw(limit.d, limit.sigma)
    times = np.asarray(report.times, float)
    n = report.n_kept
    rows = []
    for c in c_list:
        tp = float(c) ** 3 * t
        k = np.flatnonzero(np.isclose(times, tp, rtol=1e-9, atol=0.0))
        if k.size == 0:
            raise ValueError(f"mismatched schedules: time {tp:g} is not in the report")
        k = int(k[0])
        rows.append({
            "c": float(c), "t_particle": float(times[k]), "t_limit": float(t), "n": n,
            "ks_speed": ks_statistic(report.speed[:, k] / c, lambda x: law.speed_cdf(x, t)),
            "ks_energy": ks_statistic(report.energy[:, k] / c ** 2, lambda x: law.energy_cdf(x, t)),
            "noise_floor": ks_noise_floor(n),
        })
    return rows


def ks_table_monotone(rows, key: str = "ks_energy", floors: float = 2.0) -> bool:
    """True when the column never rises by more than ``floors`` noise floors."""
    vals = [r[key] for r in rows]
    tol = [floors * r["noise_floor"] for r in rows]
    return all(vals[i + 1] <= vals[i] + tol[i] for i in range(len(vals) - 1))


def acceptance_family(R: float = 0.25, sigma2: float = 0.8, d: int = 4, kind: str = "uniform",
                      cell: Optional[float] = None) -> BumpFamily:
    """Uniform-direction family whose amplitude gives the requested ``sigma^2``.

    The C^2 cap is lifted (``m`` is set far above the profile norm).
    """
    unit = BumpFamily(kind, BumpProfile(R, 1e300, 1.0), d=d)
    s2 = sigma_lambda_quadrature(unit)[0]
    if not s2 > 0:
        raise CsiViolation("family has sigma^2 = 0")
    A = math.sqrt(sigma2 / s2)
    return BumpFamily(kind, BumpProfile(R, 1e300, A), d=d, cell=cell)
