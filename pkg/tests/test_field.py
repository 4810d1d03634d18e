import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from randforce.covariance import zero_lag_variance
from randforce.field import (Bump, BumpFamily, BumpProfile, FieldInstance, StaticField,
                             force_at, gap_condition, jacobian_at, sample_cell, stream_uniforms)

FAMILIES = ["uniform", "radial", "mixture"]


def _fd_jacobian(f, x, h=1e-5):
    d = len(x)
    J = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        J[:, j] = (f(x + e) - f(x - e)) / (2 * h)
    return J


# profile and family ---------------------------------------------------------
def test_profile_vanishes_with_derivatives_at_support_edge():
    p = BumpProfile(R=1.3)
    r = 1.3 * (1 - np.array([1e-4, 2e-4]))
    vals = p.phi(r)
    # phi ~ (2 eps)^3 near the edge: value, slope and curvature all go to zero
    assert vals[0] < 1e-10 and p.phi(1.3) == 0.0 and p.phi(2.0) == 0.0
    assert p.phi(0.0) == 1.0


def test_default_amplitude_respects_c2_bound():
    fam = BumpFamily()
    assert fam.amplitude <= 0.5
    assert fam.amplitude * fam.profile.c2_norm(0) / fam.profile.amplitude <= 1.0 + 1e-12


@pytest.mark.parametrize("bad", [dict(R=0.0), dict(m=-1.0), dict(amplitude=-0.1)])
def test_profile_rejects_bad_constants(bad):
    with pytest.raises(ValueError):
        BumpProfile(**bad)


def test_family_rejects_bad_input():
    with pytest.raises(ValueError):
        BumpFamily("spiral")
    with pytest.raises(ValueError):
        BumpFamily("mixture", p=1.5)
    with pytest.raises(ValueError):
        BumpFamily(cell=0.0)


def test_default_cell_size():
    assert BumpFamily().cell_size == 2.0
    assert BumpFamily(profile=BumpProfile(R=0.25)).cell_size == 1.0


def test_from_config_block():
    fam = BumpFamily.from_config({"family": "mixture", "mixtureWeight": 0.3, "R": 2.0, "A": 0.1,
                                  "d": 5})
    assert fam.kind == "mixture" and fam.p == 0.3 and fam.R == 2.0 and fam.d == 5


def test_stream_uniforms_in_unit_interval():
    u = stream_uniforms(99, 10000)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 4 * math.sqrt(1 / 12 / 10000)


# sample_cell ---------------------------------------------------------------
def test_cell_queried_twice_is_identical():
    inst = FieldInstance(7, BumpFamily())
    a = sample_cell(inst, (0, 0, 0, 0))
    b = FieldInstance(7, BumpFamily()).sample_cell((0, 0, 0, 0))
    assert len(a) == len(b) > 0
    for p, q in zip(a, b):
        assert np.array_equal(p.center, q.center) and p.sign == q.sign
        assert np.array_equal(p.direction, q.direction)


def test_query_order_does_not_matter():
    fam = BumpFamily("mixture")
    cells = [tuple(c) for c in np.random.default_rng(1).integers(-3, 3, (15, 4))]
    a = FieldInstance(5, fam)
    b = FieldInstance(5, fam)
    fa = [a.force_at(np.array(c, float) * 1.7) for c in cells]
    fb = [b.force_at(np.array(c, float) * 1.7) for c in reversed(cells)][::-1]
    assert all(np.array_equal(x, y) for x, y in zip(fa, fb))


def test_exclusion_ball_empties_cell():
    fam = BumpFamily()
    inst = FieldInstance(3, fam, exclusion=(np.full(4, 1.0), 10.0))
    assert sample_cell(inst, (0, 0, 0, 0)) == []


def test_exclusion_keeps_bumps_outside_ball():
    fam = BumpFamily()
    plain = FieldInstance(3, fam).sample_cell((2, 0, 0, 0))
    excl = FieldInstance(3, fam, exclusion=(np.zeros(4), 2.0)).sample_cell((2, 0, 0, 0))
    assert len(plain) == len(excl)


def test_mean_bump_count_matches_cell_volume():
    inst = FieldInstance(11, BumpFamily())
    counts = np.array([len(inst.sample_cell((i, 0, 0, 0))) for i in range(10000)])
    # Poisson(16) per cell of side 2 in d = 4
    assert abs(counts.mean() - 16.0) < 4 * math.sqrt(16.0 / 10000)
    assert abs(counts.var() - 16.0) < 1.0


def test_centers_lie_in_their_cell():
    inst = FieldInstance(2, BumpFamily())
    for b in inst.sample_cell((1, -2, 0, 3)):
        assert np.all(np.floor(b.center / 2.0) == [1, -2, 0, 3])


# force_at -------------------------------------------------------------------
def test_single_uniform_bump_at_origin():
    e1 = np.eye(4)[0]
    f = StaticField([Bump(np.zeros(4), 1.0, e1, 0, 0.5, 1.0)], 4)
    assert np.array_equal(f.force_at(np.zeros(4)), [0.5, 0, 0, 0])


def test_radial_bump_direction():
    f = StaticField([Bump(np.zeros(4), -1.0, np.zeros(4), 1, 0.5, 1.0)], 4)
    x = np.array([0.3, 0.0, 0.0, 0.0])
    expected = -0.5 * (1 - 0.09) ** 3 * x / 1.0
    assert np.allclose(f.force_at(x), expected)
    assert np.array_equal(f.force_at(np.zeros(4)), np.zeros(4))


def test_empty_field_is_zero():
    inst = FieldInstance(1, BumpFamily(), empty=True)
    x = np.array([0.1, 2.0, -3.0, 0.5])
    assert not force_at(inst, x).any()
    assert not jacobian_at(inst, x).any()
    assert gap_condition(inst, x)


@pytest.mark.parametrize("kind", FAMILIES)
def test_force_matches_bump_sum(kind):
    """The kernel sum agrees with summing Bump.force over nearby cells."""
    inst = FieldInstance(21, BumpFamily(kind))
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.uniform(-4, 4, 4)
        ref = sum((b.force(x) for b in inst.bumps_near(x, 1.0)), np.zeros(4))
        assert np.allclose(inst.force_at(x), ref, atol=1e-14)


@given(st.lists(st.floats(-6, 6), min_size=4, max_size=4), st.integers(0, 2 ** 32),
       st.sampled_from(FAMILIES))
def test_compact_support_property(x, seed, kind):
    inst = FieldInstance(seed, BumpFamily(kind), slots=64)
    x = np.array(x)
    near = inst.bumps_near(x, 1.0)
    if not near:
        assert not inst.force_at(x).any()


@given(st.integers(0, 2 ** 40), st.floats(0.01, 0.15))
def test_force_is_linear_in_amplitude(seed, A):
    f1 = FieldInstance(seed, BumpFamily(profile=BumpProfile(amplitude=A)), slots=64)
    f2 = FieldInstance(seed, BumpFamily(profile=BumpProfile(amplitude=A / 2)), slots=64)
    x = np.array([0.3, -0.2, 0.1, 0.7])
    assert np.allclose(f1.force_at(x), 2 * f2.force_at(x), rtol=1e-12, atol=1e-300)


def test_force_mean_zero_and_isotropic():
    fam = BumpFamily()
    F = np.array([FieldInstance(s, fam, slots=64).force_at(np.zeros(4)) for s in range(10000)])
    se = F.std(axis=0, ddof=1) / math.sqrt(len(F))
    assert np.all(np.abs(F.mean(axis=0)) < 4 * se)
    C = np.cov(F.T)
    oracle = zero_lag_variance(fam, 1)
    # variance of a sample variance of a compound Poisson sum is about 2-3 var^2 / n
    assert np.all(np.abs(np.diag(C) - oracle) < 0.08 * oracle)
    off = C[~np.eye(4, dtype=bool)]
    assert np.all(np.abs(off) < 0.06 * oracle)


# jacobian_at ----------------------------------------------------------------
@pytest.mark.parametrize("kind", FAMILIES)
def test_jacobian_matches_finite_differences(kind):
    inst = FieldInstance(9, BumpFamily(kind))
    rng = np.random.default_rng(4)
    done = 0
    while done < 25:
        x = rng.uniform(-3, 3, 4)
        J = inst.jacobian_at(x)
        if not J.any():
            continue
        done += 1
        fd = _fd_jacobian(inst.force_at, x)
        assert np.abs(fd - J).max() <= 1e-6 * np.abs(J).max()


@given(st.lists(st.floats(-0.9, 0.9), min_size=4, max_size=4))
def test_static_jacobian_single_bump(x):
    x = np.array(x)
    e = np.array([0.6, 0.0, 0.8, 0.0])
    for kind in (0, 1):
        f = StaticField([Bump(np.zeros(4), 1.0, e, kind, 0.5, 1.0)], 4)
        if x @ x >= 0.999:
            continue
        J = f.jacobian_at(x)
        fd = _fd_jacobian(f.force_at, x)
        assert np.abs(fd - J).max() <= 1e-6 * max(np.abs(J).max(), 1e-3)


def test_radial_jacobian_is_symmetric():
    inst = FieldInstance(4, BumpFamily("radial"))
    rng = np.random.default_rng(8)
    for _ in range(30):
        J = inst.jacobian_at(rng.uniform(-3, 3, 4))
        assert np.allclose(J, J.T, atol=1e-15)


# gap_condition -------------------------------------------------------------
def test_gap_boundary_is_strict():
    c = np.zeros(4)
    c[0] = 2.0 - 1e-9
    f = StaticField([Bump(c, 1.0, np.eye(4)[1], 0, 0.5, 1.0)], 4)
    assert not f.gap_condition(np.zeros(4))
    c[0] = 2.0
    assert StaticField([Bump(c, 1.0, np.eye(4)[1], 0, 0.5, 1.0)], 4).gap_condition(np.zeros(4))


@pytest.mark.parametrize("R", [0.25, 1.0])
def test_void_probability(R):
    fam = BumpFamily(profile=BumpProfile(R=R))
    n = 10000
    hits = np.array([FieldInstance(s, fam, slots=64).gap_condition(np.zeros(4)) for s in range(n)])
    p = math.exp(-math.pi ** 2 / 2 * (2 * R) ** 4)
    se = math.sqrt(max(p * (1 - p), 1.0 / n) / n)
    assert abs(hits.mean() - p) < 3 * se


def test_bad_point_rejected():
    inst = FieldInstance(1, BumpFamily())
    with pytest.raises(ValueError):
        inst.force_at(np.zeros(3))
    with pytest.raises(ValueError):
        inst.force_at(np.array([np.nan, 0, 0, 0]))
