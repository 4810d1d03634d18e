"""Limit diffusion of the particle velocity and its exact marginals.

The velocity limit solves

    dV = |V|^{-1/2} (lam dW + (sigma - lam) u (u . dW)) + ((d-2) sigma^2 - (d-1) lam^2) V / (2 |V|^3) dt

with ``u = V / |V|``. Its energy ``E = |V|^2 / 2`` is autonomous,

    dE = sigma (2E)^{1/4} dB + sigma^2 (d-1) / (2 sqrt(2E)) dt,

and ``E^{3/4}`` is a Bessel process of dimension ``2d/3`` run at speed
``a^2 = 9 sqrt(2) sigma^2 / 16``. Started from the origin this gives the exact
marginal ``E(t) = (2 a^2 t G)^{2/3}`` with ``G ~ Gamma(d/3)``.

Euler-Maruyama paths draw their Gaussian noise from the same counter-based
hash stream as the field generator, keyed by ``(seed, path index)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import special
from scipy.integrate import cumulative_trapezoid

from .field import _field_key, _mix64, _uniform

__all__ = [
    "DiffusionParams",
    "LimitLaw",
    "em_step_v",
    "em_step_energy",
    "exact_energy_sample",
    "limit_density",
    "limit_cdf",
    "self_similarity_transform",
    "integrate_position",
    "simulate_v_paths",
    "simulate_energy_paths",
    "halfline_hit_probability_check",
    "hit_probability_oracle",
    "V_FLOOR",
]

V_FLOOR = 1e-8


@dataclass(frozen=True)
class DiffusionParams:
    """Coefficients of the limit diffusion.

    ``sigma`` and ``lam`` carry units of (force^2 time)^{1/2}.
    """

    d: int = 4
    sigma: float = 1.0
    lam: float = 1.0

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 4:
            raise ValueError("the limit theory requires an integer dimension d >= 4")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError("sigma must be positive (longitudinal covariance condition)")
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ValueError("lambda must be non-negative")

    @property
    def drift_coefficient(self) -> float:
        return (self.d - 2) * self.sigma ** 2 - (self.d - 1) * self.lam ** 2


@dataclass(frozen=True)
class LimitLaw:
    """Derived constants of the energy law for given ``d`` and ``sigma``."""

    d: int = 4
    sigma: float = 1.0

    @property
    def bessel_dimension(self) -> float:
        return 2.0 * self.d / 3.0

    @property
    def a(self) -> float:
        """Diffusion coefficient of ``E^{3/4}``: ``3 sigma 2^{1/4} / 4``."""
        return 3.0 * self.sigma * 2.0 ** 0.25 / 4.0

    @property
    def a2(self) -> float:
        return 9.0 * math.sqrt(2.0) * self.sigma ** 2 / 16.0

    @property
    def cbar(self) -> float:
        """Energy scale with ``E(t) ~ cbar t^{2/3} X`` and ``X`` of density :func:`limit_density`."""
        return (9.0 * self.sigma ** 2 / (4.0 * math.sqrt(2.0))) ** (2.0 / 3.0)

    def energy_cdf(self, x, t: float = 1.0):
        """CDF of ``E(t)`` for the process started at the origin."""
        x = np.asarray(x, dtype=float)
        return limit_cdf(x / (self.cbar * t ** (2.0 / 3.0)), self.d)

    def speed_cdf(self, x, t: float = 1.0):
        """CDF of ``|V(t)|`` for the process started at the origin."""
        x = np.asarray(x, dtype=float)
        return self.energy_cdf(np.where(x > 0, 0.5 * x * x, 0.0), t)


# --------------------------------------------------------------------------- #
# density and exact sampler
# --------------------------------------------------------------------------- #
def limit_density(x, d: int):
    """``p(x) = 3 / (2 Gamma(d/3)) x^{d/2-1} exp(-x^{3/2})`` for ``x >= 0`` and 0 otherwise."""
    x = np.asarray(x, dtype=float)
    xp = np.where(x > 0, x, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = 1.5 / special.gamma(d / 3.0) * xp ** (d / 2.0 - 1.0) * np.exp(-xp ** 1.5)
    return np.where(x > 0, val, 0.0)[()]


def limit_cdf(x, d: int):
    """Regularized lower incomplete gamma ``P(d/3, x^{3/2})``; 0 for ``x <= 0``."""
    x = np.asarray(x, dtype=float)
    xp = np.where(x > 0, x, 0.0)
    return np.where(x > 0, special.gammainc(d / 3.0, xp ** 1.5), 0.0)[()]


def exact_energy_sample(t: float, params, count: int, seed=None) -> np.ndarray:
    """Exact draws of ``E(t)`` for the energy diffusion started at 0.

    ``params`` may be a :class:`DiffusionParams` or a :class:`LimitLaw`.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    law = LimitLaw(params.d, params.sigma)
    rng = np.random.default_rng(seed)
    g = rng.gamma(params.d / 3.0, 1.0, size=int(count))
    return (2.0 * law.a2 * t * g) ** (2.0 / 3.0)


# --------------------------------------------------------------------------- #
# Euler-Maruyama steps
# --------------------------------------------------------------------------- #
@njit(cache=True)
def _em_v(state, d, sigma, lam, h, noise, v_floor, out):
    v2 = 0.0
    for j in range(d):
        v2 += state[j] * state[j]
    v = math.sqrt(v2)
    sh = math.sqrt(h)
    proj = 0.0
    for j in range(d):
        proj += state[j] * noise[j]
    proj /= v
    c = ((d - 2) * sigma * sigma - (d - 1) * lam * lam) / (2.0 * v2 * v)
    rs = 1.0 / math.sqrt(v)
    n2 = 0.0
    for j in range(d):
        u = state[j] / v
        out[j] = state[j] + rs * sh * (lam * noise[j] + (sigma - lam) * u * proj) + c * state[j] * h
        n2 += out[j] * out[j]
    n = math.sqrt(n2)
    if n < v_floor:
        # reflect the radial coordinate about the floor
        if n > 0:
            f = (2.0 * v_floor - n) / n
            for j in range(d):
                out[j] *= f
        else:
            for j in range(d):
                out[j] = state[j] / v * v_floor


@njit(cache=True)
def _em_e(E, d, sigma, h, z):
    c = sigma * sigma * (d - 1) / 2.0
    if c * h >= E * math.sqrt(2.0 * E):
        # the explicit drift step would exceed E itself (the drift is singular at 0):
        # move along the exact drift flow dE/dt = c / sqrt(2E) instead
        En = (E * math.sqrt(E) + 3.0 * c * h / (2.0 * math.sqrt(2.0))) ** (2.0 / 3.0) \
            + sigma * (2.0 * E) ** 0.25 * math.sqrt(h) * z
    else:
        En = E + sigma * (2.0 * E) ** 0.25 * math.sqrt(h) * z + c / math.sqrt(2.0 * E) * h
    return abs(En)


def _finite_vector(x, d):
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != d:
        raise ValueError(f"expected a vector of dimension {d}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    return x


def em_step_v(state, params: DiffusionParams, h: float, noise, v_floor: float = V_FLOOR):
    """One Euler-Maruyama step of the velocity diffusion.

    ``noise`` is a standard normal vector (the Brownian increment is
    ``sqrt(h) * noise``). A result below ``v_floor`` in norm is reflected
    radially about ``v_floor``.
    """
    d = params.d
    state = _finite_vector(state, d)
    noise = _finite_vector(noise, d)
    if not (math.isfinite(h) and h > 0):
        raise ValueError("step must be positive and finite")
    if not np.linalg.norm(state) >= v_floor:
        raise ValueError("state norm must be at least v_floor")
    out = np.empty(d)
    _em_v(state, d, float(params.sigma), float(params.lam), float(h), noise, float(v_floor), out)
    return out


def em_step_energy(E: float, params: DiffusionParams, h: float, noise: float) -> float:
    """One Euler-Maruyama step of the energy diffusion (Ito drift, reflection at 0).

    Where the explicit drift increment would exceed ``E`` (only for
    ``E^{3/2} <= c h / sqrt(2)``, ``c = sigma^2 (d-1)/2``) the drift part follows
    its exact flow ``E^{3/2} -> E^{3/2} + 3 c h / (2 sqrt 2)``.
    """
    E = float(E)
    noise = float(noise)
    if not (math.isfinite(E) and math.isfinite(noise) and math.isfinite(h)):
        raise ValueError("non-finite input")
    if E < 0:
        raise ValueError("energy must be non-negative")
    if not h > 0:
        raise ValueError("step must be positive")
    return float(_em_e(E, params.d, float(params.sigma), float(h), noise))


# --------------------------------------------------------------------------- #
# path ensembles
# --------------------------------------------------------------------------- #
@njit(cache=True, inline="always")
def _normal_pair(key, k):
    u1 = 1.0 - _uniform(key, 2 * k)
    u2 = _uniform(key, 2 * k + 1)
    r = math.sqrt(-2.0 * math.log(u1))
    return r * math.cos(2.0 * math.pi * u2), r * math.sin(2.0 * math.pi * u2)


@njit(cache=True)
def _path_key(fkey, i):
    return _mix64(fkey + np.uint64(i) * np.uint64(0x9E3779B97F4A7C15))


@njit(cache=True)
def _v_paths(seed, offset, n, d, sigma, lam, t_obs, eps, h_max, kappa, out, steps_out):
    fkey = _field_key(seed, 0)
    state = np.empty(d)
    nxt = np.empty(d)
    noise = np.empty(d)
    for i in range(n):
        key = _path_key(fkey, offset + i)
        ctr = 0
        # uniformly random start direction at radius eps
        nrm = 0.0
        for j in range(0, d, 2):
            z1, z2 = _normal_pair(key, ctr)
            ctr += 1
            state[j] = z1
            if j + 1 < d:
                state[j + 1] = z2
        for j in range(d):
            nrm += state[j] * state[j]
        nrm = math.sqrt(nrm)
        for j in range(d):
            state[j] *= eps / nrm
        t = 0.0
        k = 0
        steps = 0
        while k < t_obs.shape[0]:
            v2 = 0.0
            for j in range(d):
                v2 += state[j] * state[j]
            v = math.sqrt(v2)
            h = min(h_max, kappa * v2 * v)
            hit = False
            if t + h >= t_obs[k]:
                h = t_obs[k] - t
                hit = True
            if h > 0:
                for j in range(0, d, 2):
                    z1, z2 = _normal_pair(key, ctr)
                    ctr += 1
                    noise[j] = z1
                    if j + 1 < d:
                        noise[j + 1] = z2
                _em_v(state, d, sigma, lam, h, noise, 1e-8, nxt)
                for j in range(d):
                    state[j] = nxt[j]
                steps += 1
                t = t_obs[k] if hit else t + h
            if hit:
                for j in range(d):
                    out[i, k, j] = state[j]
                k += 1
        steps_out[i] = steps


@njit(cache=True)
def _e_paths(seed, offset, n, d, sigma, t_obs, E0, h, out):
    fkey = _field_key(seed, 1)
    for i in range(n):
        key = _path_key(fkey, offset + i)
        ctr = 0
        E = E0
        t = 0.0
        k = 0
        z2 = 0.0
        have = False
        while k < t_obs.shape[0]:
            hs = h
            hit = False
            if t + hs >= t_obs[k]:
                hs = t_obs[k] - t
                hit = True
            if hs > 0:
                if have:
                    z = z2
                    have = False
                else:
                    z, z2 = _normal_pair(key, ctr)
                    ctr += 1
                    have = True
                E = _em_e(E, d, sigma, hs, z)
                t = t_obs[k] if hit else t + hs
            if hit:
                out[i, k] = E
                k += 1


def _seed64(seed) -> np.uint64:
    return np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)


def _schedule(t_obs):
    t = np.atleast_1d(np.asarray(t_obs, dtype=float))
    if t.ndim != 1 or t.size == 0 or np.any(t <= 0) or np.any(np.diff(t) <= 0):
        raise ValueError("observation times must be positive and strictly increasing")
    return t


def simulate_v_paths(params: DiffusionParams, t_obs, n: int, seed: int = 0, eps: float = 1e-6,
                     h_max: float = 2e-3, kappa: float = 3e-2, return_steps: bool = False,
                     offset: int = 0):
    """Euler-Maruyama ensemble of the velocity diffusion started at radius ``eps``.

    The step is ``min(h_max, kappa |V|^3)``: the natural time scale of the
    self-similar process near speed ``v`` is ``v^3``, so a fixed step would
    overshoot badly right after the start.

    Path ``i`` uses the noise stream of index ``offset + i``, so an ensemble
    split into chunks reproduces the unsplit one exactly.

    Returns an array of shape ``(n, len(t_obs), d)``.
    """
    t = _schedule(t_obs)
    if not (eps > 0 and h_max > 0 and kappa > 0):
        raise ValueError("eps, h_max and kappa must be positive")
    out = np.empty((int(n), t.size, params.d))
    steps = np.zeros(int(n), np.int64)
    _v_paths(_seed64(seed), int(offset), int(n), params.d, float(params.sigma), float(params.lam), t,
             float(eps), float(h_max), float(kappa), out, steps)
    return (out, steps) if return_steps else out


def simulate_energy_paths(params: DiffusionParams, t_obs, n: int, seed: int = 0,
                          h: float = 1e-4, E0: float = 1e-6, offset: int = 0) -> np.ndarray:
    """Euler-Maruyama ensemble of the energy diffusion; shape ``(n, len(t_obs))``."""
    t = _schedule(t_obs)
    if not (h > 0 and E0 >= 0):
        raise ValueError("h must be positive and E0 non-negative")
    out = np.empty((int(n), t.size))
    _e_paths(_seed64(seed), int(offset), int(n), params.d, float(params.sigma), t, float(E0), float(h),
             out)
    return out


# --------------------------------------------------------------------------- #
# transforms
# --------------------------------------------------------------------------- #
def self_similarity_transform(t, v, c: float):
    """Map samples ``(t, v)`` to ``(t / c^3, v / c)``."""
    if not c > 0:
        raise ValueError("c must be positive")
    return np.asarray(t, dtype=float) / c ** 3, np.asarray(v, dtype=float) / c


def integrate_position(t, V) -> np.ndarray:
    """Cumulative trapezoid ``X(t) = int_0^t V``; ``X(t[0]) = 0``."""
    t = np.asarray(t, dtype=float)
    V = np.asarray(V, dtype=float)
    if t.ndim != 1 or np.any(np.diff(t) <= 0):
        raise ValueError("time grid must be strictly increasing")
    return cumulative_trapezoid(V, t, axis=0, initial=0.0)


# --------------------------------------------------------------------------- #
# first passage of the speed
# --------------------------------------------------------------------------- #
def hit_probability_oracle(d: int, ratio: float = 2.0) -> float:
    """P(|V| reaches ``ratio*v0`` before ``v0/ratio``) from the scale function.

    The speed solves ``dv = sigma v^{-1/2} dB + (d-2) sigma^2 / (2 v^2) dt`` whose
    scale function is ``s(v) = -v^{-(d-3)}``; the answer is independent of
    ``v0`` and ``sigma``.
    """
    if d <= 3:
        raise ValueError("requires d > 3")
    if ratio == 1.0:
        return 1.0
    k = d - 3.0
    return (ratio ** k - 1.0) / (ratio ** k - ratio ** -k)


@njit(cache=True)
def _radial_first_passage(seed, n, d, sigma, v0, lo, hi, h_rel, t_cap, result, tau):
    fkey = _field_key(seed, 2)
    for i in range(n):
        key = _path_key(fkey, i)
        v = v0
        t = 0.0
        ctr = 0
        result[i] = -1
        have = False
        z2 = 0.0
        while t < t_cap:
            if v >= hi:
                result[i] = 1
                break
            if v <= lo:
                result[i] = 0
                break
            h = h_rel * v * v * v
            if have:
                z = z2
                have = False
            else:
                z, z2 = _normal_pair(key, ctr)
                ctr += 1
                have = True
            v = v + sigma / math.sqrt(v) * math.sqrt(h) * z + (d - 2) * sigma * sigma / (2.0 * v * v) * h
            if v < 1e-8:
                v = 2e-8 - v
            t += h
        tau[i] = t


def halfline_hit_probability_check(params: DiffusionParams, n: int = 10000, v0: float = 1.0,
                                   seed: int = 0, h_rel: float = 2e-5, t_cap: float = None,
                                   ratio: float = 2.0) -> dict:
    """Monte Carlo estimate of P(reach ``ratio*v0`` before ``v0/ratio``).

    Paths follow the Euler-Maruyama scheme of the speed ``|V|`` (obtained from
    the velocity diffusion by the Ito formula) with step ``h_rel * v^3``. Paths
    that hit neither barrier before ``t_cap`` are discarded and counted.
    """
    if params.d <= 3:
        raise ValueError("requires d > 3")
    if not v0 > 0:
        raise ValueError("v0 must be positive")
    oracle = hit_probability_oracle(params.d, ratio)
    if ratio == 1.0:
        return {"estimate": 1.0, "se": 0.0, "n_used": int(n), "n_discarded": 0,
                "oracle": oracle, "z_vs_oracle": 0.0, "lower_99": 1.0}
    if t_cap is None:
        t_cap = 1e3 * v0 ** 3 / params.sigma ** 2
    res = np.empty(int(n), np.int64)
    tau = np.empty(int(n))
    _radial_first_passage(np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF), int(n), params.d,
                          float(params.sigma), float(v0), v0 / ratio, v0 * ratio,
                          float(h_rel), float(t_cap), res, tau)
    used = res >= 0
    m = int(used.sum())
    p = float(res[used].mean()) if m else float("nan")
    se = math.sqrt(p * (1 - p) / m) if m else float("nan")
    return {
        "estimate": p,
        "se": se,
        "n_used": m,
        "n_discarded": int((~used).sum()),
        "oracle": oracle,
        "z_vs_oracle": (p - oracle) / se if se > 0 else 0.0,
        "lower_99": p - 2.3263478740408408 * se,
    }
