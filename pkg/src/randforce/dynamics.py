"""Particle dynamics ``X'' = F(X)`` and the renewal processes ``Y``, ``Z``.

The heavy lifting happens in :func:`_integrate`, a numba kernel running
velocity Verlet with a speed-adaptive step ``h = h0 / max(|V|, v_min)``.
Forces come from a capsule neighbour list: every bump within ``R + m`` of a
straight segment laid along the current velocity is generated once and
sorted by its projection on the segment. The list is rebuilt when the
particle drifts more than ``m`` off the segment or runs past its end. While no
bump covers the particle it moves in a straight line, so the kernel jumps
directly to the next support entry (or capsule exit).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree
from numba import njit

from .field import (FieldInstance, BumpFamily, _cell_key_from, _draw_marks, _field_key,
                    _force_point, _gap_point, _poisson, _stride, _uniform, new_cache)

__all__ = [
    "ParticleState",
    "IntegratorConfig",
    "Trajectory",
    "RenewalLog",
    "verlet_step",
    "simulate_X",
    "simulate_renewal",
    "free_flight_diagnostics",
    "near_self_intersection_scan",
    "rescale_kp",
    "renewal_length",
]


def renewal_length(R: float) -> float:
    """Minimal free path ``l = 4R + 1`` before a renewal may occur."""
    return 4.0 * R + 1.0


@dataclass
class ParticleState:
    t: float
    X: np.ndarray
    V: np.ndarray

    @property
    def E(self) -> float:
        return 0.5 * float(self.V @ self.V)


def verlet_step(state: ParticleState, field, h: float) -> ParticleState:
    """One velocity-Verlet step in a frozen field (any object with ``force_at``)."""
    if not h > 0:
        raise ValueError("step must be positive")
    F0 = field.force_at(state.X)
    X1 = state.X + h * state.V + 0.5 * h * h * F0
    F1 = field.force_at(X1)
    V1 = state.V + 0.5 * h * (F0 + F1)
    return ParticleState(state.t + h, X1, V1)


@dataclass
class IntegratorConfig:
    """Integration controls.

    ``h0`` is the spatial step; the time step is ``h0 / max(|V|, v_min)``.
    ``t_obs`` is the observation schedule (``t = 0`` is always emitted too).
    """

    h0: float = 0.05
    v_min: float = 1.0
    t_max: float = 1000.0
    t_obs: Optional[np.ndarray] = None
    max_segments: int = 100000
    patience: float = 100.0
    track_spacing: float = 0.0
    slots: int = 2048
    capsule_length: float = 64.0  # neighbour-list segment length, in units of R
    capsule_margin: float = 0.5  # allowed drift off the segment, in units of R

    def schedule(self) -> np.ndarray:
        if self.t_obs is None:
            k = int(math.floor(math.log2(self.t_max))) if self.t_max >= 1 else 0
            ts = [2.0 ** i for i in range(k + 1)]
            if ts[-1] < self.t_max:
                ts.append(float(self.t_max))
            return np.array([t for t in ts if t <= self.t_max], float)
        t = np.asarray(self.t_obs, float)
        if t.ndim != 1 or t.size == 0 or np.any(t <= 0) or np.any(np.diff(t) <= 0):
            raise ValueError("observation schedule must be positive and strictly increasing")
        return t

    def validate(self):
        if not (self.h0 > 0 and self.v_min > 0 and self.patience > 0):
            raise ValueError("h0, v_min and patience must be positive")
        if not (self.capsule_length > 0 and self.capsule_margin > 0):
            raise ValueError("capsule length and margin must be positive")
        if self.max_segments < 1:
            raise ValueError("max_segments must be at least 1")


# --------------------------------------------------------------------------- #
# numba kernel
# --------------------------------------------------------------------------- #
@njit(cache=True)
def _grow2(a, n):
    b = np.empty((max(2 * a.shape[0], n), a.shape[1]), a.dtype)
    b[: a.shape[0]] = a
    return b


@njit(cache=True)
def _grow1(a, n):
    b = np.empty(max(2 * a.shape[0], n), a.dtype)
    b[: a.shape[0]] = a
    return b


@njit(cache=True, inline="always")
def _axis_window(x0j, uj, lo, hi, sa, sb):
    """Sub-interval of ``[sa, sb]`` where ``x0j + s uj`` lies in ``[lo, hi]``."""
    if uj == 0.0:
        if lo <= x0j <= hi:
            return sa, sb
        return 1.0, 0.0
    s1 = (lo - x0j) / uj
    s2 = (hi - x0j) / uj
    if s1 > s2:
        s1, s2 = s2, s1
    return max(sa, s1), min(sb, s2)


@njit(cache=True)
def _build_capsule(seed, findex, fp, excl_c, x0, u, L, r, buf_c, buf_i, nc, ncoef, nkind, nproj):
    """Neighbour list of all bumps within ``r`` of the segment ``x0 + s u``, ``0 <= s <= L``.

    Cells are visited by slab recursion over the axes, so only cells whose
    ``r``-dilated box meets the segment are generated. The list is sorted by
    the projection of the centre on the axis. Returns the count, or ``-1``
    when the output buffers are too small.
    """
    R, A, size, mu, kind, p_radial, excl, excl_r = fp
    d = x0.shape[0]
    sa = np.empty(d + 1)
    sb = np.empty(d + 1)
    cur = np.empty(d, np.int64)
    last = np.empty(d, np.int64)
    direction = np.empty(d)
    r2 = r * r
    fkey = _field_key(seed, findex)
    p0 = math.exp(-mu)
    stride = _stride(d)
    nn = 0
    sa[0] = 0.0
    sb[0] = L
    level = 0
    a = x0[0] + sa[0] * u[0]
    b = x0[0] + sb[0] * u[0]
    cur[0] = np.int64(math.floor((min(a, b) - r) / size))
    last[0] = np.int64(math.floor((max(a, b) + r) / size))
    while level >= 0:
        if cur[level] > last[level]:
            level -= 1
            if level >= 0:
                cur[level] += 1
            continue
        lo = cur[level] * size - r
        s0, s1 = _axis_window(x0[level], u[level], lo, lo + size + 2.0 * r, sa[level], sb[level])
        if s0 > s1:
            cur[level] += 1
            continue
        if level < d - 1:
            level += 1
            sa[level] = s0
            sb[level] = s1
            a = x0[level] + s0 * u[level]
            b = x0[level] + s1 * u[level]
            cur[level] = np.int64(math.floor((min(a, b) - r) / size))
            last[level] = np.int64(math.floor((max(a, b) + r) / size))
            continue
        # leaf: generate the cell and keep bumps close to the segment
        key = _cell_key_from(fkey, cur)
        n = _poisson(_uniform(key, 0), mu, p0)
        if n > buf_c.shape[0]:
            raise ValueError("cell bump count exceeds buffer capacity")
        for i in range(n):
            base = 1 + i * stride
            proj = 0.0
            for j in range(d):
                buf_c[0, j] = (cur[j] + _uniform(key, base + j)) * size
                proj += (buf_c[0, j] - x0[j]) * u[j]
            sp = min(max(proj, 0.0), L)
            dist2 = 0.0
            for j in range(d):
                t = buf_c[0, j] - x0[j] - sp * u[j]
                dist2 += t * t
            if dist2 >= r2:
                continue
            if excl:
                e2 = 0.0
                for j in range(d):
                    e2 += (buf_c[0, j] - excl_c[j]) ** 2
                if e2 < excl_r * excl_r:
                    continue
            if nn >= nc.shape[0]:
                return -1
            sgn, k = _draw_marks(key, i, d, kind, p_radial, direction)
            # insertion by projection
            pos = nn
            while pos > 0 and nproj[pos - 1] > proj:
                nproj[pos] = nproj[pos - 1]
                nkind[pos] = nkind[pos - 1]
                for j in range(d):
                    nc[pos, j] = nc[pos - 1, j]
                    ncoef[pos, j] = ncoef[pos - 1, j]
                pos -= 1
            nproj[pos] = proj
            nkind[pos] = k
            for j in range(d):
                nc[pos, j] = buf_c[0, j]
            if k == 0:
                for j in range(d):
                    ncoef[pos, j] = sgn * A * direction[j]
            else:
                ncoef[pos, 0] = sgn * A / R
            nn += 1
        cur[level] += 1
    return nn


@njit(cache=True, inline="always")
def _window_start(nproj, nn, first, s):
    # first index with nproj >= s, starting the search from a previous answer
    while first > 0 and nproj[first - 1] >= s:
        first -= 1
    while first < nn and nproj[first] < s:
        first += 1
    return first


@njit(cache=True)
def _near_force(x, R, s, first, nn, nc, ncoef, nkind, nproj, out):
    """Force from the capsule list at ``x`` (axis coordinate ``s``).

    Returns ``(active, first)``: the number of bumps covering ``x`` and the
    updated window start.
    """
    d = x.shape[0]
    R2 = R * R
    for j in range(d):
        out[j] = 0.0
    first = _window_start(nproj, nn, first, s - R)
    active = 0
    b = first
    while b < nn and nproj[b] < s + R:
        r2 = 0.0
        for j in range(d):
            t = x[j] - nc[b, j]
            r2 += t * t
        if r2 < R2:
            active += 1
            q = 1.0 - r2 / R2
            w = q * q * q
            if nkind[b] == 0:
                for j in range(d):
                    out[j] += w * ncoef[b, j]
            else:
                w *= ncoef[b, 0]
                for j in range(d):
                    out[j] += w * (x[j] - nc[b, j])
        b += 1
    return active, first


@njit(cache=True)
def _near_gap(x, rad, s, nn, nc, nproj):
    """True when no centre lies within ``rad`` of ``x``."""
    d = x.shape[0]
    rr = rad * rad
    b = _window_start(nproj, nn, 0, s - rad)
    while b < nn and nproj[b] < s + rad:
        r2 = 0.0
        for j in range(d):
            t = x[j] - nc[b, j]
            r2 += t * t
        if r2 < rr:
            return False
        b += 1
    return True


@njit(cache=True)
def _capsule_coords(x, x0, u, L):
    """Axis coordinate of ``x`` and its distance to the segment."""
    s = 0.0
    for j in range(x.shape[0]):
        s += (x[j] - x0[j]) * u[j]
    sp = min(max(s, 0.0), L)
    dist2 = 0.0
    for j in range(x.shape[0]):
        t = x[j] - x0[j] - sp * u[j]
        dist2 += t * t
    return s, math.sqrt(dist2)


@njit(cache=True)
def _ball_interval(x, v, c, rr):
    """Times ``s`` with ``|x + s v - c|^2 < rr`` as ``(s1, s2)``; empty gives s1 > s2."""
    a = 0.0
    b = 0.0
    q = -rr
    for j in range(x.shape[0]):
        y = x[j] - c[j]
        a += v[j] * v[j]
        b += y * v[j]
        q += y * y
    disc = b * b - a * q
    if disc <= 0.0 or a == 0.0:
        return 1.0, 0.0
    root = math.sqrt(disc)
    return (-b - root) / a, (-b + root) / a


@njit(cache=True)
def _capsule_exit(x, v, x0, u, L, m):
    """Time for the line ``x + t v`` to leave the set ``{0 <= s <= L, dist <= m}``."""
    d = x.shape[0]
    s = 0.0
    vs = 0.0
    for j in range(d):
        s += (x[j] - x0[j]) * u[j]
        vs += v[j] * u[j]
    t_end = np.inf
    if vs > 0:
        t_end = (L - s) / vs
    elif vs < 0:
        t_end = -s / vs
    # perpendicular part w + t v_perp must stay within m
    a = 0.0
    b = 0.0
    q = -m * m
    for j in range(d):
        w = x[j] - x0[j] - s * u[j]
        vp = v[j] - vs * u[j]
        a += vp * vp
        b += w * vp
        q += w * w
    if a > 0.0:
        disc = b * b - a * q
        if disc > 0.0:
            t_end = min(t_end, (-b + math.sqrt(disc)) / a)
        else:
            t_end = 0.0
    return max(t_end, 0.0)


@njit(cache=True)
def _free_horizon(x, v, s, R, first, nn, nc):
    """Time until the line ``x + t v`` enters the support of a listed bump."""
    R2 = R * R
    s_hit = np.inf
    for b in range(first, nn):
        s1, s2 = _ball_interval(x, v, nc[b], R2)
        if s2 > s1 and s2 > 0.0:
            s_hit = min(s_hit, max(s1, 0.0))
    return s_hit


@njit(cache=True)
def _first_gap_time(x, v, s0, rad, nn, nc):
    """First ``t >= s0`` at which ``x + t v`` is at distance ``>= rad`` from all centres."""
    rr = rad * rad
    s = s0
    moved = True
    while moved:
        moved = False
        for b in range(nn):
            s1, s2 = _ball_interval(x, v, nc[b], rr)
            if s1 <= s < s2:
                s = s2
                moved = True
    return s


@njit(cache=True)
def _line_diagnostics(cache, seed, findex, fp, excl_c, y0, v, t_first, t_end, h0, cap_factor, xi):
    """Straight-line gap time and force integral along ``z(s) = y0 + s v`` (local frame).

    ``t_first`` is the first admissible gap time and ``t_end`` the segment length
    (both relative to the segment start). Returns ``eta`` (NaN when the search cap
    ``cap_factor * t_end`` is exhausted); ``xi`` receives the trapezoid integral
    of the field over ``[0, t_end]``.
    """
    d = y0.shape[0]
    speed = 0.0
    for j in range(d):
        speed += v[j] * v[j]
    speed = math.sqrt(speed)
    h = h0 / max(speed, 1e-300)
    z = np.empty(d)
    f0 = np.empty(d)
    f1 = np.empty(d)
    for j in range(d):
        xi[j] = 0.0
    s = 0.0
    for j in range(d):
        z[j] = y0[j]
    _force_point(cache, seed, findex, z, fp, excl_c, f0)
    while s < t_end:
        hs = min(h, t_end - s)
        s += hs
        for j in range(d):
            z[j] = y0[j] + s * v[j]
        _force_point(cache, seed, findex, z, fp, excl_c, f1)
        for j in range(d):
            xi[j] += 0.5 * hs * (f0[j] + f1[j])
            f0[j] = f1[j]
    rr = 2.0 * fp[0]
    s = t_first
    cap = cap_factor * max(t_end, t_first)
    while s <= cap:
        for j in range(d):
            z[j] = y0[j] + s * v[j]
        if _gap_point(cache, seed, findex, z, fp, excl_c, rr):
            return s
        s += h
    return np.nan


@njit(cache=True)
def _line_diagnostics_list(cache, seed, findex, fp, excl_c, y0, v, t_first, t_end, h0,
                           cap_factor, xi, buf_c, buf_i):
    """Same quantities as :func:`_line_diagnostics`, read off a straight capsule list.

    The line is exactly straight, so a zero-margin neighbour list of radius
    ``2R`` serves both the force integral and the gap search; the search falls
    back to the cell cache past the end of the list.
    """
    d = y0.shape[0]
    R = fp[0]
    speed = 0.0
    for j in range(d):
        speed += v[j] * v[j]
    speed = math.sqrt(speed)
    u = np.empty(d)
    for j in range(d):
        u[j] = v[j] / speed
    L = max(t_end, t_first) * speed + 4.0 * R
    cap = 64
    nc = np.empty((cap, d))
    ncoef = np.empty((cap, d))
    nkind = np.empty(cap, np.int8)
    nproj = np.empty(cap)
    nn = _build_capsule(seed, findex, fp, excl_c, y0, u, L, 2.0 * R, buf_c, buf_i,
                        nc, ncoef, nkind, nproj)
    while nn < 0:
        cap *= 2
        nc = np.empty((cap, d))
        ncoef = np.empty((cap, d))
        nkind = np.empty(cap, np.int8)
        nproj = np.empty(cap)
        nn = _build_capsule(seed, findex, fp, excl_c, y0, u, L, 2.0 * R, buf_c, buf_i,
                            nc, ncoef, nkind, nproj)
    h = h0 / speed
    z = np.empty(d)
    f0 = np.empty(d)
    f1 = np.empty(d)
    for j in range(d):
        xi[j] = 0.0
        z[j] = y0[j]
    first = 0
    act, first = _near_force(z, R, 0.0, first, nn, nc, ncoef, nkind, nproj, f0)
    s = 0.0
    while s < t_end:
        hs = min(h, t_end - s)
        s += hs
        for j in range(d):
            z[j] = y0[j] + s * v[j]
        act, first = _near_force(z, R, s * speed, first, nn, nc, ncoef, nkind, nproj, f1)
        for j in range(d):
            xi[j] += 0.5 * hs * (f0[j] + f1[j])
            f0[j] = f1[j]
    rr = 2.0 * R
    s = t_first
    capt = cap_factor * max(t_end, t_first)
    while s <= capt:
        for j in range(d):
            z[j] = y0[j] + s * v[j]
        if s * speed <= L - rr:
            if _near_gap(z, rr, s * speed, nn, nc, nproj):
                return s
        elif _gap_point(cache, seed, findex, z, fp, excl_c, rr):
            return s
        s += h
    return np.nan


@njit(cache=True)
def _rebuild(seed, findex, fp, excl_c, loc, V, x0, u, L, r, buf_c, buf_i, nc, ncoef, nkind, nproj):
    """Reset the capsule to start at ``loc`` along ``V`` and rebuild its list."""
    d = loc.shape[0]
    speed = 0.0
    for j in range(d):
        speed += V[j] * V[j]
    speed = math.sqrt(speed)
    for j in range(d):
        x0[j] = loc[j]
        u[j] = V[j] / speed if speed > 0 else (1.0 if j == 0 else 0.0)
    return _build_capsule(seed, findex, fp, excl_c, x0, u, L, r, buf_c, buf_i,
                          nc, ncoef, nkind, nproj)


@njit(cache=True)
def _integrate(seed, d, fp0, fpn, excl0, excln, v0, h0, v_min, patience, t_obs,
               renewal, ell, max_segments, track_spacing, cache, cap_factor, cap_len, cap_margin):
    R = fp0[0]
    nobs = t_obs.shape[0]
    obs_t = np.full(nobs + 1, np.nan)
    obs_x = np.full((nobs + 1, d), np.nan)
    obs_v = np.full((nobs + 1, d), np.nan)

    X = np.zeros(d)
    V = v0.copy()
    origin = np.zeros(d)
    loc = np.zeros(d)
    F = np.zeros(d)
    Fn = np.zeros(d)
    Xn = np.zeros(d)
    Xp = np.zeros(d)
    # capsule neighbour list
    cap_L = cap_len * R
    if renewal:
        # fields are swapped about every ell units of path, so a longer list is wasted
        cap_L = min(cap_L, 2.0 * ell)
    cap_m = cap_margin * R
    cap_r = (2.0 * R if renewal else R) + cap_m
    x0 = np.zeros(d)
    u = np.zeros(d)
    cap0 = 64
    nc = np.empty((cap0, d))
    ncoef = np.empty((cap0, d))
    nkind = np.empty(cap0, np.int8)
    nproj = np.empty(cap0)
    bcap = int(fp0[3] + 12.0 * math.sqrt(fp0[3]) + 40)
    buf_c = np.empty((bcap, d))
    buf_i = np.empty(bcap, np.int64)

    findex = 0
    fp = fp0
    excl_c = excl0
    nn = _rebuild(seed, findex, fp, excl_c, loc, V, x0, u, cap_L, cap_r, buf_c, buf_i,
                  nc, ncoef, nkind, nproj)
    while nn < 0:
        nc = np.empty((2 * nc.shape[0], d))
        ncoef = np.empty((nc.shape[0], d))
        nkind = np.empty(nc.shape[0], np.int8)
        nproj = np.empty(nc.shape[0])
        nn = _rebuild(seed, findex, fp, excl_c, loc, V, x0, u, cap_L, cap_r, buf_c, buf_i,
                      nc, ncoef, nkind, nproj)
    first = 0
    s_ax = 0.0
    active, first = _near_force(loc, R, s_ax, first, nn, nc, ncoef, nkind, nproj, F)
    rebuilds = 1

    # renewal log: tau, Y, v, eta, xi(vector), max_dev
    seg_cap = 64
    seg_tau = np.empty(seg_cap)
    seg_y = np.empty((seg_cap, d))
    seg_v = np.empty((seg_cap, d))
    seg_eta = np.empty(seg_cap)
    seg_xi = np.empty((seg_cap, d))
    seg_dev = np.empty(seg_cap)
    nseg = 1
    seg_tau[0] = 0.0
    seg_y[0] = X
    seg_v[0] = V
    seg_eta[0] = np.nan
    seg_dev[0] = 0.0
    for j in range(d):
        seg_xi[0, j] = np.nan
    vn = V.copy()
    speed_n = math.sqrt(np.sum(V * V))
    t_admit = ell / speed_n if speed_n > 0 else np.inf

    # dyadic levels
    lev_cap = 64
    lev_t = np.empty(lev_cap)
    lev_m = np.empty(lev_cap, np.int64)
    speed = math.sqrt(np.sum(V * V))
    level = np.int64(math.floor(math.log2(speed) + 0.5)) if speed > 0 else np.int64(0)
    nlev = 1
    lev_t[0] = 0.0
    lev_m[0] = level

    # track points for the self-intersection scan
    trk_cap = 1024 if track_spacing > 0 else 1
    trk = np.empty((trk_cap, d))
    trk_t = np.empty(trk_cap)
    ntrk = 0
    if track_spacing > 0:
        trk[0] = X
        trk_t[0] = 0.0
        ntrk = 1
    last_trk = X.copy()

    t = 0.0
    obs_t[0] = 0.0
    obs_x[0] = X
    obs_v[0] = V
    k = 0
    below = 0.0
    trapped = False
    truncated = False
    steps = 0
    xi_tmp = np.empty(d)
    while k < nobs:
        speed = 0.0
        for j in range(d):
            speed += V[j] * V[j]
        speed = math.sqrt(speed)
        h = h0 / max(speed, v_min)
        if active == 0 and speed > 0:
            # no bump covers X: fly straight to the next support entry or capsule exit
            jump = min(_free_horizon(loc, V, s_ax, R, 0, nn, nc),
                       _capsule_exit(loc, V, x0, u, cap_L, cap_m))
            if renewal:
                s0 = max(seg_tau[nseg - 1] + t_admit - t, 0.0)
                g = _first_gap_time(loc, V, s0, 2.0 * R, nn, nc)
                if g > 0.0:
                    jump = min(jump, g)
            h = max(h, jump)
        hit = False
        if t + h >= t_obs[k]:
            h = t_obs[k] - t
            hit = True
        if renewal:
            # land exactly on the first admissible renewal time
            target = seg_tau[nseg - 1] + t_admit
            if t < target and t + h > target:
                h = target - t
                hit = False
        if h > 0:
            for j in range(d):
                Xp[j] = X[j]
                Xn[j] = X[j] + h * V[j] + 0.5 * h * h * F[j]
                loc[j] = Xn[j] - origin[j]
            s_ax, dist = _capsule_coords(loc, x0, u, cap_L)
            # landing on the capsule boundary triggers the rebuild right away
            if dist >= cap_m * (1.0 - 1e-9) or s_ax < 0.0 or s_ax >= cap_L * (1.0 - 1e-9):
                nn = _rebuild(seed, findex, fp, excl_c, loc, V, x0, u, cap_L, cap_r, buf_c, buf_i,
                              nc, ncoef, nkind, nproj)
                while nn < 0:
                    nc = np.empty((2 * nc.shape[0], d))
                    ncoef = np.empty((nc.shape[0], d))
                    nkind = np.empty(nc.shape[0], np.int8)
                    nproj = np.empty(nc.shape[0])
                    nn = _rebuild(seed, findex, fp, excl_c, loc, V, x0, u, cap_L, cap_r, buf_c,
                                  buf_i, nc, ncoef, nkind, nproj)
                s_ax = 0.0
                first = 0
                rebuilds += 1
            active, first = _near_force(loc, R, s_ax, first, nn, nc, ncoef, nkind, nproj, Fn)
            for j in range(d):
                V[j] += 0.5 * h * (F[j] + Fn[j])
                X[j] = Xn[j]
                F[j] = Fn[j]
            t_prev = t
            if hit:
                t = t_obs[k]
            elif renewal and t + h == seg_tau[nseg - 1] + t_admit:
                t = seg_tau[nseg - 1] + t_admit
            else:
                t = t + h
            steps += 1

            speed = 0.0
            for j in range(d):
                speed += V[j] * V[j]
            speed = math.sqrt(speed)
            if speed < v_min:
                below += h
                if below > patience:
                    trapped = True
                    break
            else:
                below = 0.0
            if speed > 0:
                up = 2.0 ** (level + 1)
                dn = 2.0 ** (level - 1)
                if speed >= up or speed <= dn:
                    level = level + 1 if speed >= up else level - 1
                    if nlev >= lev_t.shape[0]:
                        lev_t = _grow1(lev_t, nlev + 1)
                        lev_m = _grow1(lev_m, nlev + 1)
                    lev_t[nlev] = t
                    lev_m[nlev] = level
                    nlev += 1
            if track_spacing > 0:
                dd = 0.0
                for j in range(d):
                    dd += (X[j] - last_trk[j]) ** 2
                if dd >= track_spacing * track_spacing:
                    # long free flights are subdivided so that samples stay dense
                    step_len = 0.0
                    for j in range(d):
                        step_len += (X[j] - Xp[j]) ** 2
                    m = max(1, int(math.ceil(math.sqrt(step_len) / track_spacing)))
                    if ntrk + m > trk.shape[0]:
                        trk = _grow2(trk, ntrk + m)
                        trk_t = _grow1(trk_t, ntrk + m)
                    for i in range(1, m + 1):
                        f = i / m
                        for j in range(d):
                            trk[ntrk, j] = Xp[j] + f * (X[j] - Xp[j])
                        trk_t[ntrk] = t_prev + f * (t - t_prev)
                        ntrk += 1
                    last_trk[:] = X

            if renewal:
                dev = 0.0
                for j in range(d):
                    dev += (V[j] - vn[j]) ** 2
                dev = math.sqrt(dev)
                if dev > seg_dev[nseg - 1]:
                    seg_dev[nseg - 1] = dev
                if t >= seg_tau[nseg - 1] + t_admit and _near_gap(loc, 2.0 * R, s_ax, nn, nc, nproj):
                    if nseg > max_segments:
                        truncated = True
                        break
                    # close the finished segment with straight-line diagnostics
                    i = nseg - 1
                    y0 = seg_y[i] - origin
                    eta = _line_diagnostics_list(cache, seed, findex, fp, excl_c, y0, seg_v[i],
                                                 t_admit, t - seg_tau[i], h0, cap_factor, xi_tmp,
                                                 buf_c, buf_i)
                    seg_eta[i] = seg_tau[i] + eta
                    seg_xi[i] = xi_tmp
                    if nseg >= seg_tau.shape[0]:
                        seg_tau = _grow1(seg_tau, nseg + 1)
                        seg_eta = _grow1(seg_eta, nseg + 1)
                        seg_dev = _grow1(seg_dev, nseg + 1)
                        seg_y = _grow2(seg_y, nseg + 1)
                        seg_v = _grow2(seg_v, nseg + 1)
                        seg_xi = _grow2(seg_xi, nseg + 1)
                    seg_tau[nseg] = t
                    seg_y[nseg] = X
                    seg_v[nseg] = V
                    seg_eta[nseg] = np.nan
                    seg_dev[nseg] = 0.0
                    for j in range(d):
                        seg_xi[nseg, j] = np.nan
                    nseg += 1
                    if track_spacing > 0 and dd < track_spacing * track_spacing:
                        if ntrk >= trk.shape[0]:
                            trk = _grow2(trk, ntrk + 1)
                            trk_t = _grow1(trk_t, ntrk + 1)
                        trk[ntrk] = X
                        trk_t[ntrk] = t
                        ntrk += 1
                        last_trk[:] = X
                    # switch on the next field, centred at the current position
                    findex += 1
                    fp = fpn
                    excl_c = excln
                    for j in range(d):
                        origin[j] = X[j]
                        loc[j] = 0.0
                        vn[j] = V[j]
                    t_admit = ell / speed
                    nn = _rebuild(seed, findex, fp, excl_c, loc, V, x0, u, cap_L, cap_r, buf_c,
                                  buf_i, nc, ncoef, nkind, nproj)
                    while nn < 0:
                        nc = np.empty((2 * nc.shape[0], d))
                        ncoef = np.empty((nc.shape[0], d))
                        nkind = np.empty(nc.shape[0], np.int8)
                        nproj = np.empty(nc.shape[0])
                        nn = _rebuild(seed, findex, fp, excl_c, loc, V, x0, u, cap_L, cap_r, buf_c,
                                      buf_i, nc, ncoef, nkind, nproj)
                    s_ax = 0.0
                    first = 0
                    rebuilds += 1
                    active, first = _near_force(loc, R, s_ax, first, nn, nc, ncoef, nkind, nproj, F)
        if hit:
            obs_t[k + 1] = t
            obs_x[k + 1] = X
            obs_v[k + 1] = V
            k += 1
    return (obs_t, obs_x, obs_v, trapped, truncated, steps,
            seg_tau[:nseg].copy(), seg_y[:nseg].copy(), seg_v[:nseg].copy(),
            seg_eta[:nseg].copy(), seg_xi[:nseg].copy(), seg_dev[:nseg].copy(),
            lev_t[:nlev].copy(), lev_m[:nlev].copy(), trk[:ntrk].copy(), trk_t[:ntrk].copy(), t,
            rebuilds)


# --------------------------------------------------------------------------- #
# results
# --------------------------------------------------------------------------- #
@dataclass
class RenewalLog:
    """Per-segment record: ``tau[n]``, ``Y[n]``, ``v[n]`` open segment ``n``.

    ``eta``, ``xi`` and ``max_dev`` describe segment ``n`` once it is closed
    (the last, open segment carries NaN for ``eta``/``xi``).
    """

    tau: np.ndarray
    Y: np.ndarray
    v: np.ndarray
    eta: np.ndarray
    xi: np.ndarray
    max_dev: np.ndarray
    flags: np.ndarray = None

    def __len__(self):
        return len(self.tau)


@dataclass
class Trajectory:
    t: np.ndarray
    X: np.ndarray
    V: np.ndarray
    model: str = "X"
    trapped: bool = False
    truncated: bool = False
    steps: int = 0
    renewal: Optional[RenewalLog] = None
    levels_t: np.ndarray = None
    levels: np.ndarray = None
    track: np.ndarray = None
    track_t: np.ndarray = None
    t_end: float = 0.0
    meta: dict = dc_field(default_factory=dict)

    @property
    def E(self) -> np.ndarray:
        return 0.5 * np.sum(self.V ** 2, axis=1)

    @property
    def speed(self) -> np.ndarray:
        return np.linalg.norm(self.V, axis=1)


def _check_v0(v0, d):
    v0 = np.asarray(v0, float).reshape(-1)
    if v0.shape[0] != d:
        raise ValueError(f"initial velocity must have dimension {d}")
    if not np.all(np.isfinite(v0)) or not np.linalg.norm(v0) > 0:
        raise ValueError("initial velocity must be finite and non-zero")
    return v0


def _field_params(family: BumpFamily, empty: bool, excl: bool):
    size = family.cell_size
    mu = 0.0 if empty else size ** family.d
    if mu > 500:
        raise ValueError("cell volume too large for inversion sampling")
    return (float(family.R), float(family.amplitude), size, float(mu), np.int64(family.code),
            float(family.radial_weight), bool(excl), float(2.0 * family.R if excl else 0.0))


def _run(v0, seed, family, config, renewal, z_variant, empty):
    config.validate()
    d = family.d
    v0 = _check_v0(v0, d)
    fp0 = _field_params(family, empty, z_variant)
    fpn = _field_params(family, empty, True)
    mu = max(fp0[3], 1.0)
    cache = new_cache(d, mu, config.slots)
    zero = np.zeros(d)
    out = _integrate(np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF), d, fp0, fpn, zero, zero, v0,
                     float(config.h0), float(config.v_min), float(config.patience),
                     config.schedule(), bool(renewal), renewal_length(family.R),
                     np.int64(config.max_segments), float(config.track_spacing), cache, 10.0,
                     float(config.capsule_length), float(config.capsule_margin))
    (obs_t, obs_x, obs_v, trapped, truncated, steps, tau, Y, v, eta, xi, dev,
     lt, lm, trk, trk_t, t_end, rebuilds) = out
    log = RenewalLog(tau, Y, v, eta, xi, dev) if renewal else None
    model = ("Z" if z_variant else "Y") if renewal else "X"
    keep = ~np.isnan(obs_t)
    return Trajectory(obs_t[keep], obs_x[keep], obs_v[keep], model, bool(trapped),
                      bool(truncated), int(steps), log, lt, lm, trk, trk_t, float(t_end),
                      {"seed": int(seed), "h0": config.h0, "rebuilds": int(rebuilds)})


def simulate_X(v0, seed: int, family: BumpFamily, config: IntegratorConfig,
               empty: bool = False) -> Trajectory:
    """Integrate the particle in a single field (index 0, no exclusion)."""
    return _run(v0, seed, family, config, False, False, empty)


def simulate_renewal(v0, seed: int, family: BumpFamily, config: IntegratorConfig,
                     variant: str = "Y", empty: bool = False) -> Trajectory:
    """Integrate ``Y`` (or ``Z``) with field switching at the gap stopping times."""
    if variant not in ("Y", "Z"):
        raise ValueError("variant must be 'Y' or 'Z'")
    return _run(v0, seed, family, config, True, variant == "Z", empty)


def free_flight_diagnostics(traj: Trajectory, n: int, family: BumpFamily,
                            h0: Optional[float] = None, empty: bool = False):
    """Recompute ``(eta, xi, max_dev)`` of closed segment ``n`` of a renewal run.

    The field of segment ``n`` is rebuilt from the trajectory seed, so this is
    an independent route to the values logged by the integrator.
    """
    log = traj.renewal
    if log is None or n >= len(log) - 1:
        raise ValueError("segment must be closed")
    h0 = traj.meta["h0"] if h0 is None else h0
    z_variant = traj.model == "Z"
    excl = n >= 1 or z_variant
    inst = FieldInstance(traj.meta["seed"], family, index=n,
                         exclusion=(np.zeros(family.d), 2.0 * family.R) if excl else None,
                         empty=empty)
    ell = renewal_length(family.R)
    vn = log.v[n]
    xi = np.zeros(family.d)
    eta = _line_diagnostics(inst._cache, inst._seed64, np.int64(n), inst.fp, inst._excl_c,
                            np.zeros(family.d), vn, ell / np.linalg.norm(vn),
                            log.tau[n + 1] - log.tau[n], h0, 10.0, xi)
    return log.tau[n] + eta, xi, log.max_dev[n]


# --------------------------------------------------------------------------- #
# near self-intersection
# --------------------------------------------------------------------------- #
def _cone_ok(points, apex, v, sign):
    y = points - apex
    r = np.linalg.norm(y, axis=1)
    mask = r > 1e-12
    if not mask.any():
        return True
    dots = sign * (y[mask] @ v)
    return bool(np.all(dots >= 0.75 * r[mask] * np.linalg.norm(v) - 1e-12))


def near_self_intersection_scan(track, track_t, tau, Y=None, v=None, R: float = 1.0,
                                threshold: Optional[float] = None):
    """Flag segments whose neighbourhood is revisited later on.

    Parameters
    ----------
    track, track_t : sampled positions and their times (consecutive points
        closer than ``R``).
    tau : segment start times ``tau_0 = 0 < tau_1 < ...``.
    Y, v : renewal positions/velocities; when given the cone containment
        ``gamma_n in K^-(Y_n, v_n)`` and ``gamma_{n+1} in K^+(Y_n, v_n)`` is checked.

    Returns
    -------
    dict with boolean arrays ``intersect`` and ``cone`` (one entry per segment
    index ``n = 1..len(tau)``) and their union ``any``.
    """
    track = np.asarray(track, float)
    track_t = np.asarray(track_t, float)
    tau = np.asarray(tau, float)
    thr = 3.0 * R if threshold is None else threshold
    nseg = len(tau)
    order = np.argsort(track_t, kind="stable")
    track, track_t = track[order], track_t[order]
    # gamma_n covers (tau_{n-1}, tau_n]; the open tail after the last tau is gamma_{nseg}
    seg = np.maximum(np.searchsorted(tau, track_t, side="left"), 1)
    intersect = np.zeros(nseg + 1, bool)
    if len(track) > 1:
        pairs = cKDTree(track).query_pairs(thr, output_type="ndarray")
        if len(pairs):
            si, sj = seg[pairs[:, 0]], seg[pairs[:, 1]]
            far = np.abs(si - sj) >= 2
            intersect[np.minimum(si, sj)[far]] = True
    cone = np.zeros(nseg + 1, bool)
    if Y is not None and v is not None:
        lo = np.searchsorted(track_t, tau, side="left")
        hi = np.searchsorted(track_t, tau, side="right")
        for n in range(1, nseg):
            before = track[lo[n - 1]:hi[n]]
            after = track[lo[n]:(hi[n + 1] if n + 1 < nseg else len(track))]
            if not (_cone_ok(before, Y[n], v[n], -1.0) and _cone_ok(after, Y[n], v[n], 1.0)):
                cone[n] = True
    return {"intersect": intersect[1:], "cone": cone[1:], "any": (intersect | cone)[1:]}


def rescale_kp(t, X, V, eps: float, inverse: bool = False):
    """Map a trajectory of ``X'' = F(X)`` to the ``x'' = eps F(x)`` scaling.

    With ``X(t) = x(t / sqrt(eps))`` the small-field trajectory is
    ``x(s) = X(s sqrt(eps))`` and ``v(s) = sqrt(eps) V``. ``inverse=True``
    undoes the map.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    r = math.sqrt(eps)
    t = np.asarray(t, float)
    V = np.asarray(V, float)
    X = np.asarray(X, float)
    if inverse:
        return t * r, X.copy(), V / r
    return t / r, X.copy(), V * r
