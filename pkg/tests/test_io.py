import json

import numpy as np

from randforce.dynamics import IntegratorConfig, near_self_intersection_scan, simulate_X, simulate_renewal
from randforce.field import BumpFamily
from randforce.harness import acceptance_family
from randforce.io import (FLAG_CONE, FLAG_INTERSECT, read_csv, write_json, write_marginal_csv,
                          write_renewal_csv, write_trajectory_csv)


def test_trajectory_csv_roundtrip(tmp_path):
    tr = simulate_X(np.array([3.0, 0.1, 0, 0]), 4, BumpFamily(), IntegratorConfig(t_max=50.0))
    p = write_trajectory_csv(tmp_path / "t.csv", tr)
    header, data = read_csv(p)
    assert header == ["t", "X1", "X2", "X3", "X4", "V1", "V2", "V3", "V4", "E"]
    assert np.array_equal(data[:, 0], tr.t)
    assert np.array_equal(data[:, 1:5], tr.X) and np.array_equal(data[:, 5:9], tr.V)
    assert np.array_equal(data[:, 9], tr.E)


def test_renewal_csv(tmp_path):
    fam = acceptance_family()
    tr = simulate_renewal(np.array([10.0, 0, 0, 0]), 2, fam,
                          IntegratorConfig(t_max=20.0, track_spacing=fam.R))
    sc = near_self_intersection_scan(tr.track, tr.track_t, tr.renewal.tau, tr.renewal.Y,
                                     tr.renewal.v, R=fam.R)
    header, data = read_csv(write_renewal_csv(tmp_path / "r.csv", tr, sc))
    assert header[:2] == ["n", "tau_n"] and header[-4:] == ["eta_n", "xi_norm", "max_dev", "flags"]
    assert np.array_equal(data[:, 1], tr.renewal.tau)
    flags = data[:, -1].astype(int)
    assert flags[0] == 0 and set(flags) <= {0, FLAG_INTERSECT, FLAG_CONE, FLAG_INTERSECT | FLAG_CONE}
    n_seg = len(tr.renewal.tau)
    expect = (sc["intersect"][:n_seg - 1].astype(int) * FLAG_INTERSECT
              + sc["cone"][:n_seg - 1].astype(int) * FLAG_CONE)
    assert np.array_equal(flags[1:], expect)


def test_marginal_csv(tmp_path):
    header, data = read_csv(write_marginal_csv(tmp_path / "m.csv", [3.0, 1.0, 2.0, 2.0]))
    assert header == ["x", "ecdf"]
    assert data[:, 0].tolist() == [1.0, 2.0, 2.0, 3.0] and data[-1, 1] == 1.0


def test_json_numpy_and_sorted(tmp_path):
    p = write_json(tmp_path / "a.json", {"b": np.float64(0.1), "a": np.arange(3), "c": np.bool_(True)})
    text = p.read_text()
    assert text.index('"a"') < text.index('"b"')
    assert json.loads(text) == {"a": [0, 1, 2], "b": 0.1, "c": True}
