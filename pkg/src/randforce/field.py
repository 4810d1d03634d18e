"""Lazy Poisson bump fields.

A field is the superposition ``F(x) = sum_i f_i(x - r_i)`` of compactly
supported bumps centred on a unit-intensity Poisson point set. Points are
produced one lattice cell at a time from a counter-based hash stream keyed by
``(seed, field index, cell)``, so any cell can be regenerated on demand and the
realisation never depends on query order.

Two bump kinds are supported:

* ``uniform``: ``s * A * phi(|y|) * e`` with ``e`` uniform on the unit sphere.
* ``radial``: ``s * A * phi(|y|) * y / R``, the gradient of a radial potential.

``phi(rho) = (1 - (rho/R)^2)^3`` on ``[0, R]`` and zero beyond.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np
from numba import njit

__all__ = [
    "BumpProfile",
    "BumpFamily",
    "Bump",
    "FieldInstance",
    "StaticField",
    "FAMILY_CODES",
    "sample_cell",
    "force_at",
    "jacobian_at",
    "gap_condition",
]

FAMILY_CODES = {"uniform": 0, "radial": 1, "mixture": 2}

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M3 = np.uint64(0xD6E8FEB86659FD93)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_TWO53 = 2.0 ** -53


# --------------------------------------------------------------------------- #
# counter-based stream
# --------------------------------------------------------------------------- #
@njit(cache=True)
def _mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def _field_key(seed, findex):
    k = _mix64(np.uint64(seed) ^ _GOLDEN)
    return _mix64(k + np.uint64(findex) * _M1 + _GOLDEN)


@njit(cache=True, inline="always")
def _cell_key_from(fkey, cell):
    # coordinates enter two at a time between mixing rounds
    k = fkey
    for j in range(0, cell.shape[0], 2):
        k += np.uint64(cell[j]) * _M2
        if j + 1 < cell.shape[0]:
            k += np.uint64(cell[j + 1]) * _M3
        k = _mix64(k)
    return k


@njit(cache=True)
def _cell_key(seed, findex, cell):
    return _cell_key_from(_field_key(seed, findex), cell)


@njit(cache=True)
def _uniform(key, counter):
    """Uniform on [0, 1) at position ``counter`` of the stream ``key``."""
    return np.float64(_mix64(key + np.uint64(counter) * _GOLDEN) >> _S11) * _TWO53


def stream_uniforms(key: int, n: int) -> np.ndarray:
    """First ``n`` values of the counter stream ``key`` (debug / test helper)."""
    return np.array([_uniform(np.uint64(key), i) for i in range(n)])


# --------------------------------------------------------------------------- #
# cell generation
# --------------------------------------------------------------------------- #
# Stream layout of a cell: counter 0 draws the Poisson count; bump i owns the
# counters 1 + i*stride ... with stride = d + 2 + 2*ceil(d/2): d for the centre,
# one for the sign, one for the kind and the rest for Box-Muller normals.
@njit(cache=True)
def _stride(d):
    return d + 2 + 2 * ((d + 1) // 2)


@njit(cache=True, inline="always")
def _poisson(u, mu, p0):
    # inversion; p0 = exp(-mu)
    n = 0
    if mu > 0.0:
        p = p0
        cdf = p
        while u > cdf and n < 100000:
            n += 1
            p *= mu / n
            cdf += p
    return n


@njit(cache=True, inline="always")
def _generate_centers(key, cell, mu, size, excl, excl_c, excl_r, centers, bidx):
    """Draw the bump centres of a cell; marks are drawn later by :func:`_draw_marks`."""
    d = cell.shape[0]
    n = _poisson(_uniform(key, 0), mu, math.exp(-mu))
    if n > centers.shape[0]:
        raise ValueError("cell bump count exceeds cache capacity")
    stride = _stride(d)
    m = 0
    for i in range(n):
        base = 1 + i * stride
        for j in range(d):
            centers[m, j] = (cell[j] + _uniform(key, base + j)) * size
        if excl:
            r2 = 0.0
            for j in range(d):
                t = centers[m, j] - excl_c[j]
                r2 += t * t
            if r2 < excl_r * excl_r:
                continue
        bidx[m] = i
        m += 1
    return m


@njit(cache=True)
def _draw_marks(key, i, d, kind, p_radial, direction):
    """Sign, kind and unit direction of bump ``i`` of the cell stream ``key``."""
    base = 1 + i * _stride(d)
    sign = 1.0 if _uniform(key, base + d) < 0.5 else -1.0
    if kind == 2:
        k = 1 if _uniform(key, base + d + 1) < p_radial else 0
    else:
        k = kind
    nrm = 0.0
    for j in range(0, d, 2):
        u1 = 1.0 - _uniform(key, base + d + 2 + j)
        u2 = _uniform(key, base + d + 3 + j)
        rad = math.sqrt(-2.0 * math.log(u1))
        direction[j] = rad * math.cos(2.0 * math.pi * u2)
        nrm += direction[j] ** 2
        if j + 1 < d:
            direction[j + 1] = rad * math.sin(2.0 * math.pi * u2)
            nrm += direction[j + 1] ** 2
    nrm = math.sqrt(nrm)
    for j in range(d):
        direction[j] /= nrm
    return sign, k


@njit(cache=True)
def _generate_cell(key, cell, mu, size, kind, p_radial, excl, excl_c, excl_r,
                   centers, signs, dirs, kinds):
    """Eager generation of a whole cell (centres and marks)."""
    bidx = np.empty(centers.shape[0], np.int64)
    m = _generate_centers(key, cell, mu, size, excl, excl_c, excl_r, centers, bidx)
    d = cell.shape[0]
    for b in range(m):
        sgn, k = _draw_marks(key, bidx[b], d, kind, p_radial, dirs[b])
        signs[b] = sgn
        kinds[b] = k
    return m


# Cache layout (tuple of arrays, slot count a power of two):
#   keys   (S, d+1) int64   field index followed by cell coordinates
#   valid  (S,)     bool
#   counts (S,)     int64
#   hkey   (S,)     uint64  stream key of the cell
#   centers(S,C,d)  float
#   bidx   (S,C)    int64   stream index of each kept bump
#   marked (S,C)    bool    marks drawn yet?
#   signs  (S,C), dirs (S,C,d), kinds (S,C) int8
@njit(cache=True, inline="always")
def _slot(keys, valid, counts, hkey, centers, bidx, marked, seed, findex, cell,
          mu, size, excl, excl_c, excl_r):
    d = cell.shape[0]
    h = _cell_key(seed, findex, cell)
    s = np.int64(h & np.uint64(keys.shape[0] - 1))
    if valid[s] and hkey[s] == h and keys[s, 0] == findex:
        hit = True
        for j in range(d):
            if keys[s, 1 + j] != cell[j]:
                hit = False
                break
        if hit:
            return s
    counts[s] = _generate_centers(h, cell, mu, size, excl, excl_c, excl_r, centers[s], bidx[s])
    for b in range(counts[s]):
        marked[s, b] = False
    keys[s, 0] = findex
    for j in range(d):
        keys[s, 1 + j] = cell[j]
    hkey[s] = h
    valid[s] = True
    return s


@njit(cache=True, inline="always")
def _ensure_marks(hkey, bidx, marked, signs, dirs, kinds, s, b, kind, p_radial):
    if not marked[s, b]:
        sgn, k = _draw_marks(hkey[s], bidx[s, b], dirs.shape[2], kind, p_radial, dirs[s, b])
        signs[s, b] = sgn
        kinds[s, b] = k
        marked[s, b] = True


# fp layout: (R, A, size, mu, kind, p_radial, excl, excl_r)
@njit(cache=True)
def _cell_slot(cache, seed, findex, cell, fp, excl_c):
    keys, valid, counts, hkey, centers, bidx, marked, signs, dirs, kinds = cache
    return _slot(keys, valid, counts, hkey, centers, bidx, marked, seed, findex, cell,
                 fp[3], fp[2], fp[6], excl_c, fp[7])


@njit(cache=True)
def _visit_cells(x, radius, size, lo, span_out):
    # lowest candidate cell per axis and number of candidates per axis
    d = x.shape[0]
    total = 1
    for j in range(d):
        a = math.floor((x[j] - radius) / size)
        b = math.floor((x[j] + radius) / size)
        lo[j] = a
        span_out[j] = b - a + 1
        total *= span_out[j]
    return total


@njit(cache=True, inline="always")
def _next_cell(cell, lo, span):
    # odometer increment over the candidate block
    j = 0
    cell[0] += 1
    while cell[j] >= lo[j] + span[j] and j < cell.shape[0] - 1:
        cell[j] = lo[j]
        j += 1
        cell[j] += 1


@njit(cache=True, inline="always")
def _cell_box_gap2(x, cell, size):
    g2 = 0.0
    for j in range(x.shape[0]):
        a = cell[j] * size
        b = a + size
        if x[j] < a:
            g2 += (a - x[j]) ** 2
        elif x[j] > b:
            g2 += (x[j] - b) ** 2
    return g2


@njit(cache=True)
def _force_point(cache, seed, findex, x, fp, excl_c, out):
    keys, valid, counts, hkey, centers, bidx, marked, signs, dirs, kinds = cache
    R, A, size, mu, kind, p_radial, excl, excl_r = fp
    d = x.shape[0]
    for j in range(d):
        out[j] = 0.0
    lo = np.empty(d, np.int64)
    span = np.empty(d, np.int64)
    cell = np.empty(d, np.int64)
    total = _visit_cells(x, R, size, lo, span)
    R2 = R * R
    for j in range(d):
        cell[j] = lo[j]
    cell[0] -= 1
    for idx in range(total):
        _next_cell(cell, lo, span)
        if _cell_box_gap2(x, cell, size) >= R2:
            continue
        s = _slot(keys, valid, counts, hkey, centers, bidx, marked, seed, findex, cell,
                  mu, size, excl, excl_c, excl_r)
        for b in range(counts[s]):
            r2 = 0.0
            for j in range(d):
                t = x[j] - centers[s, b, j]
                r2 += t * t
            if r2 >= R2:
                continue
            _ensure_marks(hkey, bidx, marked, signs, dirs, kinds, s, b, kind, p_radial)
            q = 1.0 - r2 / R2
            w = signs[s, b] * A * q * q * q
            if kinds[s, b] == 0:
                for j in range(d):
                    out[j] += w * dirs[s, b, j]
            else:
                for j in range(d):
                    out[j] += w * (x[j] - centers[s, b, j]) / R


@njit(cache=True)
def _jacobian_point(cache, seed, findex, x, fp, excl_c, out):
    keys, valid, counts, hkey, centers, bidx, marked, signs, dirs, kinds = cache
    R, A, size, mu, kind, p_radial, excl, excl_r = fp
    d = x.shape[0]
    out[:, :] = 0.0
    lo = np.empty(d, np.int64)
    span = np.empty(d, np.int64)
    cell = np.empty(d, np.int64)
    diff = np.empty(d)
    total = _visit_cells(x, R, size, lo, span)
    R2 = R * R
    for j in range(d):
        cell[j] = lo[j]
    cell[0] -= 1
    for idx in range(total):
        _next_cell(cell, lo, span)
        if _cell_box_gap2(x, cell, size) >= R2:
            continue
        s = _slot(keys, valid, counts, hkey, centers, bidx, marked, seed, findex, cell,
                  mu, size, excl, excl_c, excl_r)
        for b in range(counts[s]):
            r2 = 0.0
            for j in range(d):
                diff[j] = x[j] - centers[s, b, j]
                r2 += diff[j] ** 2
            if r2 >= R2:
                continue
            _ensure_marks(hkey, bidx, marked, signs, dirs, kinds, s, b, kind, p_radial)
            q = 1.0 - r2 / R2
            sa = signs[s, b] * A
            g = -6.0 * q * q / R2  # gradient of phi is g * diff
            if kinds[s, b] == 0:
                for i in range(d):
                    for k in range(d):
                        out[i, k] += sa * dirs[s, b, i] * g * diff[k]
            else:
                for i in range(d):
                    out[i, i] += sa * q * q * q / R
                    for k in range(d):
                        out[i, k] += sa * diff[i] * g * diff[k] / R


@njit(cache=True)
def _gap_point(cache, seed, findex, x, fp, excl_c, radius):
    keys, valid, counts, hkey, centers, bidx, marked, signs, dirs, kinds = cache
    R, A, size, mu, kind, p_radial, excl, excl_r = fp
    d = x.shape[0]
    lo = np.empty(d, np.int64)
    span = np.empty(d, np.int64)
    cell = np.empty(d, np.int64)
    total = _visit_cells(x, radius, size, lo, span)
    rr = radius * radius
    for j in range(d):
        cell[j] = lo[j]
    cell[0] -= 1
    for idx in range(total):
        _next_cell(cell, lo, span)
        if _cell_box_gap2(x, cell, size) >= rr:
            continue
        s = _slot(keys, valid, counts, hkey, centers, bidx, marked, seed, findex, cell,
                  mu, size, excl, excl_c, excl_r)
        for b in range(counts[s]):
            r2 = 0.0
            for j in range(d):
                t = x[j] - centers[s, b, j]
                r2 += t * t
            if r2 < rr:
                return False
    return True


def new_cache(d: int, mu: float, slots: int = 2048):
    """Allocate a direct-mapped cell cache for a field with mean count ``mu``.

    ``slots`` is rounded up to a power of two.
    """
    slots = 1 << max(int(slots) - 1, 1).bit_length()
    cap = int(mu + 12.0 * math.sqrt(mu) + 40)
    return (
        np.zeros((slots, d + 1), np.int64),
        np.zeros(slots, np.bool_),
        np.zeros(slots, np.int64),
        np.zeros(slots, np.uint64),
        np.zeros((slots, cap, d)),
        np.zeros((slots, cap), np.int64),
        np.zeros((slots, cap), np.bool_),
        np.zeros((slots, cap)),
        np.zeros((slots, cap, d)),
        np.zeros((slots, cap), np.int8),
    )


# --------------------------------------------------------------------------- #
# Python-level types
# --------------------------------------------------------------------------- #
def _profile_c2(kind: int, R: float) -> float:
    """Sup of value, first and second radial derivative bounds for a unit amplitude."""
    rho = np.linspace(0.0, R, 4001)
    q = 1.0 - (rho / R) ** 2
    phi = q ** 3
    dphi = -6.0 * rho * q ** 2 / R ** 2
    d2phi = -6.0 * q ** 2 / R ** 2 + 24.0 * rho ** 2 * q / R ** 4
    if kind == 0:
        # Hessian eigenvalues of phi(|y|) are phi'' and phi'/rho = -6 q^2 / R^2
        tang = 6.0 * q ** 2 / R ** 2
        return float(max(phi.max(), np.abs(dphi).max(), np.abs(d2phi).max(), tang.max()))
    # f = phi(rho) * y / R: value rho*phi/R, first derivative phi + rho*phi',
    # second derivative bounded by 3|phi'| + rho|phi''| (all divided by R)
    val = rho * phi / R
    d1 = np.maximum(np.abs(phi), np.abs(phi + rho * dphi)) / R
    d2 = (3.0 * np.abs(dphi) + rho * np.abs(d2phi)) / R
    return float(max(val.max(), d1.max(), d2.max()))


@dataclass(frozen=True)
class BumpProfile:
    """Radial profile ``A * phi(rho)`` with support radius ``R``.

    ``amplitude`` is the requested value; :attr:`effective_amplitude` is
    shrunk when needed so that every bump kind respects the C^2 bound ``m``.
    """

    R: float = 1.0
    m: float = 1.0
    amplitude: float = 0.5

    def __post_init__(self):
        if not (self.R > 0 and self.m > 0 and self.amplitude >= 0):
            raise ValueError("R and m must be positive, amplitude non-negative")

    def phi(self, rho):
        rho = np.asarray(rho, dtype=float)
        q = np.clip(1.0 - (rho / self.R) ** 2, 0.0, None)
        return q ** 3

    def c2_norm(self, kind: int) -> float:
        return self.amplitude * _profile_c2(kind, self.R)

    def effective_amplitude(self, kinds=(0, 1)) -> float:
        worst = max(_profile_c2(k, self.R) for k in kinds)
        return min(self.amplitude, self.m / worst)


@dataclass(frozen=True)
class BumpFamily:
    """Law of a single bump: kind, profile and dimension."""

    kind: str = "uniform"
    profile: BumpProfile = dc_field(default_factory=BumpProfile)
    d: int = 4
    p: float = 0.5  # radial fraction for the mixture
    cell: Optional[float] = None  # lattice spacing of the generator, see cell_size

    def __post_init__(self):
        if self.cell is not None and not self.cell > 0:
            raise ValueError("cell size must be positive")
        if self.kind not in FAMILY_CODES:
            raise ValueError(f"unknown family kind {self.kind!r}")
        if int(self.d) != self.d or self.d < 1:
            raise ValueError("dimension must be a positive integer")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("mixture weight must lie in [0, 1]")

    @property
    def code(self) -> int:
        return FAMILY_CODES[self.kind]

    @property
    def R(self) -> float:
        return self.profile.R

    @property
    def amplitude(self) -> float:
        kinds = {"uniform": (0,), "radial": (1,), "mixture": (0, 1)}[self.kind]
        return self.profile.effective_amplitude(kinds)

    @property
    def cell_size(self) -> float:
        """Generator lattice spacing; ``max(2R, 1)`` unless set explicitly.

        It fixes how a seed maps to a realisation but not the law of the field.
        """
        return float(self.cell) if self.cell is not None else max(2.0 * self.R, 1.0)

    @property
    def radial_weight(self) -> float:
        return {"uniform": 0.0, "radial": 1.0, "mixture": self.p}[self.kind]

    @classmethod
    def from_config(cls, block: dict) -> "BumpFamily":
        """Build from a run-config field block (``family``, ``R``, ``A``, ``m``, ``d``, ``p``)."""
        prof = BumpProfile(R=float(block.get("R", 1.0)), m=float(block.get("m", 1.0)),
                           amplitude=float(block.get("A", 0.5)))
        cell = block.get("cell")
        return cls(kind=block.get("family", "uniform"), profile=prof,
                   d=int(block.get("d", 4)), p=float(block.get("p", block.get("mixtureWeight", 0.5))),
                   cell=None if cell is None else float(cell))


@dataclass
class Bump:
    center: np.ndarray
    sign: float
    direction: np.ndarray
    kind: int
    amplitude: float
    R: float

    def force(self, x):
        y = np.asarray(x, float) - self.center
        r2 = float(y @ y)
        if r2 >= self.R ** 2:
            return np.zeros_like(y)
        w = self.sign * self.amplitude * (1.0 - r2 / self.R ** 2) ** 3
        return w * self.direction if self.kind == 0 else w * y / self.R


class FieldInstance:
    """One realisation of the bump field, generated lazily per lattice cell.

    Parameters
    ----------
    seed : int
        64-bit seed; together with ``index`` it fixes every cell.
    family : BumpFamily
    index : int
        Field index ``n`` (renewal fields use ``n >= 1``).
    cell_size : float, optional
        Lattice spacing, ``family.cell_size`` by default.
    exclusion : (center, radius), optional
        Ball in which no bump centres are placed.
    empty : bool
        Zero-intensity test mode.
    """

    def __init__(self, seed: int, family: BumpFamily, index: int = 0,
                 cell_size: Optional[float] = None, exclusion=None,
                 empty: bool = False, slots: int = 1024):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.family = family
        self.index = int(index)
        self.d = family.d
        self.cell_size = float(cell_size) if cell_size is not None else family.cell_size
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        self.empty = bool(empty)
        mu = 0.0 if empty else self.cell_size ** self.d
        if mu > 500:
            raise ValueError("cell volume too large for inversion sampling; reduce cell_size")
        if exclusion is None:
            self._excl_c = np.zeros(self.d)
            excl_flag, excl_r = False, 0.0
        else:
            c, r = exclusion
            self._excl_c = np.asarray(c, float).reshape(self.d)
            excl_flag, excl_r = True, float(r)
        self.exclusion = exclusion
        self.fp = (float(family.R), float(family.amplitude), self.cell_size, float(mu),
                   np.int64(family.code), float(family.radial_weight),
                   bool(excl_flag), float(excl_r))
        self._cache = new_cache(self.d, max(mu, 1.0), slots)
        self.cells: dict = {}
        self._seed64 = np.uint64(self.seed)

    def _point(self, x):
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.d:
            raise ValueError(f"expected a point of dimension {self.d}")
        if not np.all(np.isfinite(x)):
            raise ValueError("point must be finite")
        return x

    def sample_cell(self, cell) -> list:
        key = tuple(int(c) for c in cell)
        if len(key) != self.d:
            raise ValueError("cell coordinates must have the field dimension")
        if key not in self.cells:
            mu = self.fp[3]
            cap = int(max(mu, 1.0) + 12.0 * math.sqrt(max(mu, 1.0)) + 40)
            centers = np.zeros((cap, self.d))
            signs = np.zeros(cap)
            dirs = np.zeros((cap, self.d))
            kinds = np.zeros(cap, np.int8)
            carr = np.array(key, np.int64)
            h = np.uint64(_cell_key(self._seed64, np.int64(self.index), carr))
            n = _generate_cell(h, carr, mu, self.cell_size, self.fp[4], self.fp[5],
                               self.fp[6], self._excl_c, self.fp[7],
                               centers, signs, dirs, kinds)
            amp, R = self.fp[1], self.fp[0]
            self.cells[key] = [Bump(centers[i].copy(), float(signs[i]), dirs[i].copy(),
                                    int(kinds[i]), amp, R) for i in range(n)]
        return self.cells[key]

    def force_at(self, x) -> np.ndarray:
        x = self._point(x)
        out = np.zeros(self.d)
        _force_point(self._cache, self._seed64, np.int64(self.index), x, self.fp, self._excl_c, out)
        return out

    def jacobian_at(self, x) -> np.ndarray:
        x = self._point(x)
        out = np.zeros((self.d, self.d))
        _jacobian_point(self._cache, self._seed64, np.int64(self.index), x, self.fp, self._excl_c, out)
        return out

    def gap_condition(self, x) -> bool:
        x = self._point(x)
        return bool(_gap_point(self._cache, self._seed64, np.int64(self.index), x,
                               self.fp, self._excl_c, 2.0 * self.fp[0]))

    def bumps_near(self, x, radius: float) -> list:
        """All bumps whose centre lies within ``radius`` of ``x`` (via :meth:`sample_cell`)."""
        x = self._point(x)
        lo = np.floor((x - radius) / self.cell_size).astype(int)
        hi = np.floor((x + radius) / self.cell_size).astype(int)
        found = []
        for cell in np.ndindex(*(hi - lo + 1)):
            for b in self.sample_cell(lo + np.array(cell)):
                if np.linalg.norm(b.center - x) < radius:
                    found.append(b)
        return found


class StaticField:
    """Field made of an explicit list of bumps; numpy evaluation.

    Handy for frozen-field checks and hand-built scenarios.
    """

    def __init__(self, bumps, d: int):
        self.bumps = list(bumps)
        self.d = d

    def force_at(self, x):
        x = np.asarray(x, float)
        out = np.zeros(self.d)
        for b in self.bumps:
            out += b.force(x)
        return out

    def jacobian_at(self, x):
        x = np.asarray(x, float)
        out = np.zeros((self.d, self.d))
        for b in self.bumps:
            y = x - b.center
            r2 = float(y @ y)
            if r2 >= b.R ** 2:
                continue
            q = 1.0 - r2 / b.R ** 2
            grad = -6.0 * q * q / b.R ** 2 * y
            sa = b.sign * b.amplitude
            if b.kind == 0:
                out += sa * np.outer(b.direction, grad)
            else:
                out += sa / b.R * (q ** 3 * np.eye(self.d) + np.outer(y, grad))
        return out

    def gap_condition(self, x, radius_factor: float = 2.0):
        x = np.asarray(x, float)
        return all(np.linalg.norm(b.center - x) >= radius_factor * b.R for b in self.bumps)


def sample_cell(instance: FieldInstance, cell) -> list:
    return instance.sample_cell(cell)


def force_at(instance, x) -> np.ndarray:
    return instance.force_at(x)


def jacobian_at(instance, x) -> np.ndarray:
    return instance.jacobian_at(x)


def gap_condition(instance, x) -> bool:
    return instance.gap_condition(x)
