"""CSV and JSON writers.

Floats are written with ``repr`` so that files round-trip bit for bit.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

__all__ = [
    "write_trajectory_csv",
    "write_renewal_csv",
    "write_marginal_csv",
    "write_json",
    "read_csv",
    "FLAG_INTERSECT",
    "FLAG_CONE",
]

FLAG_INTERSECT = 1
FLAG_CONE = 2


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _write_rows(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def write_trajectory_csv(path, traj):
    """``t,X1..Xd,V1..Vd,E`` at the observation times of ``traj``."""
    d = traj.X.shape[1]
    header = ["t"] + [f"X{j + 1}" for j in range(d)] + [f"V{j + 1}" for j in range(d)] + ["E"]
    E = traj.E
    rows = ([traj.t[i], *traj.X[i], *traj.V[i], E[i]] for i in range(len(traj.t)))
    return _write_rows(path, header, rows)


def write_renewal_csv(path, traj, scan=None):
    """``n,tau_n,Y1..Yd,v1..vd,eta_n,xi_norm,max_dev,flags`` for a renewal run.

    ``flags`` is a bit mask (1: near self-intersection, 2: cone failure) taken
    from the output of :func:`randforce.dynamics.near_self_intersection_scan`.
    """
    log = traj.renewal
    if log is None:
        raise ValueError("trajectory has no renewal log")
    d = log.Y.shape[1]
    n_seg = len(log.tau)
    flags = np.zeros(n_seg, np.int64)
    if scan is not None:
        # scan entries are indexed by n = 1..len(tau)
        k = min(n_seg - 1, len(scan["intersect"]))
        flags[1:k + 1] = (FLAG_INTERSECT * scan["intersect"][:k].astype(np.int64)
                          + FLAG_CONE * scan["cone"][:k].astype(np.int64))
    header = (["n", "tau_n"] + [f"Y{j + 1}" for j in range(d)] + [f"v{j + 1}" for j in range(d)]
              + ["eta_n", "xi_norm", "max_dev", "flags"])
    xin = np.linalg.norm(log.xi, axis=1)
    rows = ([n, log.tau[n], *log.Y[n], *log.v[n], log.eta[n], xin[n], log.max_dev[n], flags[n]]
            for n in range(n_seg))
    return _write_rows(path, header, rows)


def write_marginal_csv(path, samples):
    """Empirical CDF as ``x,ecdf`` rows (sorted samples, right-continuous)."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    rows = ((x[i], (i + 1) / n) for i in range(n))
    return _write_rows(path, ["x", "ecdf"], rows)


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n")
    return path


def read_csv(path):
    """Return ``(header, array)`` for a numeric CSV written by this module."""
    with Path(path).open() as fh:
        r = csv.reader(fh)
        header = next(r)
        data = np.array([[float(v) for v in row] for row in r])
    return header, data.reshape(-1, len(header))
