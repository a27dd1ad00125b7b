import numpy as np
import pytest
from hypothesis import given, strategies as st

from sympfold import (CertificationFailed, CutoffProfile, DisplacementProblem, DisplacementResult,
                      HamFlow, LinearHamiltonian, NoDirectionFound, PairBudgetExceeded, cantor_dust,
                      circle, displace_certify, displacement_image, filled_box,
                      find_generic_direction, hofer_norm_bound, point_set, segment,
                      translation_flow)
from sympfold.sympmap import standard_J

from conftest import space_dust_curve

coords = st.floats(-10, 10, allow_nan=False)


# displacement image


def test_single_difference():
    D = displacement_image(np.array([[0.0, 0.0]]), np.array([[1.0, 0.0]]))
    assert np.array_equal(D.points, [[1.0, 0.0]])


def test_self_differences_contain_zero(rng):
    X = rng.random((50, 4))
    D = displacement_image(X, X).points
    assert np.any(np.all(D == 0, axis=1))


def test_parallel_segments():
    a = segment((0, 0), (1, 0)).sample(100, 1).points
    b = segment((0, 1), (1, 1)).sample(100, 2).points
    D = displacement_image(a, b).points
    assert D.shape == (10_000, 2)
    assert np.all(D[:, 1] == 1.0)


@given(st.integers(1, 30), st.integers(1, 30), st.integers(0, 1000))
def test_difference_symmetry(na, nb, seed):
    r = np.random.default_rng(seed)
    a, b = r.random((na, 3)), r.random((nb, 3))
    ab = displacement_image(a, b)
    ba = displacement_image(b, a)
    # pair (i, j) of ab is pair (j, i) of ba
    i, j = ab.chart_index, ab.params[:, 0].astype(int)
    lookup = {(int(x), int(y)): k for k, (x, y) in enumerate(zip(ba.chart_index, ba.params[:, 0]))}
    k = [lookup[(int(y), int(x))] for x, y in zip(i, j)]
    assert np.array_equal(ab.points, -ba.points[k])


def test_pair_budget(rng):
    X = rng.random((100, 2))
    assert len(displacement_image(X, X, pair_budget=500).points) == 500
    with pytest.raises(PairBudgetExceeded):
        displacement_image(X, X, pair_budget=500, subsample=False)


# direction search


def test_point_against_point():
    prob = DisplacementProblem(point_set([(0, 0)]), point_set([(0, 0)]), 1, 1)
    res = find_generic_direction(prob, 8, (0, 1), 100)
    assert res.bad_time_fraction == 0.0
    assert len(res.admissible_times) == 100


def test_dust_on_a_line():
    dust = cantor_dust(np.log(2) / np.log(3), 1, 12,
                       embedding=__import__("sympfold.sets", fromlist=["x"]).AffineChartMap(
                           (0.0, 0.0), ((1.0,), (0.0,))))
    prob = DisplacementProblem(dust, dust, 200, 200, seed=4)
    res = find_generic_direction(prob, 64, (0, 1), 1000)
    assert res.bad_time_fraction < 0.05
    assert np.linalg.norm(res.v0) == pytest.approx(1.0)


def test_circle_against_centre():
    c = circle((0.3, -0.2), 1.0)
    a = c.sample(4000, 1).points
    b = np.array([[0.3, -0.2]])
    prob = DisplacementProblem.from_clouds(a, b)
    res = find_generic_direction(prob, 16, (0, 2), 2000, clearance_tol=1e-2)
    ts = np.array(res.admissible_times)
    clear = np.array(res.clearances)
    # oracle: the centre is at distance |1 - t| from the translated unit circle
    assert np.all(clear >= np.abs(1 - ts) - 1e-12)
    assert np.all(clear <= np.abs(1 - ts) + 2e-3)
    # so exactly the times with |1 - t| below the tolerance (up to sampling) are rejected
    assert np.all(np.abs(ts - 1) > 1e-2 - 2e-3)
    grid = np.arange(1, 2001) / 1000
    assert set(np.round(grid[np.abs(grid - 1) > 1e-2 + 2e-3], 9)) <= set(np.round(ts, 9))


def test_no_direction_found(rng):
    X = filled_box((0, 0), (1, 1)).sample(400, 3).points
    prob = DisplacementProblem.from_clouds(X, X)
    with pytest.raises(NoDirectionFound):
        find_generic_direction(prob, 8, (0, 0.5), 50, clearance_tol=0.2)


def test_ties_prefer_lowest_index():
    prob = DisplacementProblem(point_set([(0, 0)]), point_set([(0, 0)]), 1, 1)
    res = find_generic_direction(prob, 8, (0, 1), 10)
    assert res.direction_index == 0 and res.sign == 1


def test_empty_side_is_vacuous():
    prob = DisplacementProblem.from_clouds(np.zeros((0, 2)), np.zeros((3, 2)))
    res = find_generic_direction(prob, 4, (0, 1), 10)
    assert res.scanned["vacuous"] and res.bad_time_fraction == 0.0


# translation flow


def test_translation_examples():
    h = LinearHamiltonian((1.0, 0.0))
    assert np.array_equal(translation_flow(h, 2.0, (0.0, 0.0)), [2.0, 0.0])
    assert np.array_equal(translation_flow(LinearHamiltonian((0.0, 1.0)), -1.0, (3.0, 4.0)),
                          [3.0, 3.0])
    x = np.array([0.3, -7.0])
    assert np.array_equal(translation_flow(LinearHamiltonian((0.6, 0.8)), 0.0, x), x)


@given(st.lists(coords, min_size=4, max_size=4), st.lists(coords, min_size=4, max_size=4),
       st.floats(-5, 5), st.floats(-5, 5))
def test_translation_group_law(v, x, s, t):
    h = LinearHamiltonian(tuple(v))
    lhs = translation_flow(h, s, translation_flow(h, t, x))
    rhs = translation_flow(h, s + t, x)
    # equal up to rounding of the two different summation orders
    assert np.allclose(lhs, rhs, rtol=0, atol=4 * np.finfo(float).eps * (1 + np.abs(x).max() + 10 * np.abs(v).max()))


def test_linear_field_is_v0(rng):
    for _ in range(10):
        v = rng.normal(size=4)
        h = LinearHamiltonian(tuple(v), tuple(rng.normal(size=4)))
        X = rng.normal(size=(20, 4))
        step = 1e-6
        grad = np.column_stack([(h.value(X + step * e) - h.value(X - step * e)) / (2 * step)
                                for e in np.eye(4)])
        assert np.allclose(grad @ standard_J(4).T, v, atol=1e-8)


def test_translation_matches_integrator(rng):
    h = LinearHamiltonian((0.3, -1.2, 0.5, 0.1))
    X = rng.normal(size=(50, 4))
    exact = translation_flow(h, 0.7, X)
    ode = HamFlow(h, 0.7, integrate=True)(X)
    assert np.max(np.abs(exact - ode)) <= 1e-10


# certificates


def _result(v0):
    return DisplacementResult(np.asarray(v0, dtype=float))


def test_certify_points():
    prob = DisplacementProblem(point_set([(0, 0)]), point_set([(0, 0)]), 1, 1)
    cert = displace_certify(prob, _result((1, 0)), 1.0)
    assert cert.passed and cert.distance == pytest.approx(1.0)


def test_certify_parallel_segment():
    s = segment((0, 0), (1, 0))
    prob = DisplacementProblem(s, s, 100, 100)
    cert = displace_certify(prob, _result((0, 1)), 0.5)
    assert cert.passed and cert.distance == pytest.approx(0.5, abs=1e-12)


def test_certify_unit_circles_fail():
    c = circle()
    prob = DisplacementProblem(c, c, 500, 500)
    with pytest.raises(CertificationFailed) as info:
        displace_certify(prob, _result((1, 0)), 1.0)
    assert info.value.witness is not None


def test_certificate_monotone_under_subsampling(rng):
    A = space_dust_curve()
    prob = DisplacementProblem(A, A, 300, 300, seed=2)
    res = find_generic_direction(prob, 32, (0, 1), 200)
    t = res.admissible_times[len(res.admissible_times) // 2]
    cert = displace_certify(prob, res, t)
    assert cert.passed
    a, b = prob.certification_clouds()
    for _ in range(5):
        ia = rng.choice(len(a), len(a) // 3, replace=False)
        ib = rng.choice(len(b), len(b) // 3, replace=False)
        sub = DisplacementProblem.from_clouds(a[ia], b[ib])
        d = displace_certify(sub, res, t, tol=cert.tol, raise_on_fail=False).distance
        assert d >= cert.distance


def test_clearance_scales_with_dilation():
    A = space_dust_curve()
    a, b = A.sample(1000, 1).points, A.sample(1000, 2).points
    v0 = np.array([0.3, 0.5, -0.2, 0.78])
    v0 /= np.linalg.norm(v0)
    p1 = DisplacementProblem.from_clouds(a, b)
    p2 = DisplacementProblem.from_clouds(2 * a, 2 * b)
    d1 = displace_certify(p1, _result(v0), 0.3, raise_on_fail=False).distance
    d2 = displace_certify(p2, _result(v0), 0.6, raise_on_fail=False).distance
    assert d2 == pytest.approx(2 * d1, rel=1e-12)


# Hofer bound


def test_hofer_examples():
    h = LinearHamiltonian((0.0, -1.0))        # omega(-e2, x) = x1
    box = ((0.0, 0.0), (1.0, 1.0))
    rho = CutoffProfile("constant")
    assert float(hofer_norm_bound(h, rho, 0.0, box)) == 0.0
    assert float(hofer_norm_bound(h, rho, 0.1, box)) == pytest.approx(0.1, abs=1e-15)
    assert float(hofer_norm_bound(h, rho, 0.01, box)) == pytest.approx(0.01, abs=1e-15)


@given(st.one_of(st.just(0.0), st.floats(1e-200, 10)), st.integers(0, 20))
def test_hofer_linear_in_t(t, k):
    h = LinearHamiltonian((0.2, -1.0, 0.4, 0.3))
    rho = CutoffProfile.bump(-0.1, 0.0, 1.0, 1.1)
    box = (np.full(4, -0.2), np.full(4, 1.2))
    b1 = hofer_norm_bound(h, rho, t, box, grid=9)
    b2 = hofer_norm_bound(h, rho, t * 2.0**-k, box, grid=9)
    assert float(b2) == float(b1) * 2.0**-k
