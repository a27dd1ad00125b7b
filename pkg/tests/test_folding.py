import math

import numpy as np
import pytest

from sympfold import (BadAreas, Compose, EmbeddingCertificationFailed, FoldConfig, FoldProblem,
                      HamFlow, PiecewiseGlue, SqueezeConfig, build_v_delta, check_symplectic,
                      empty_set, fold_once, normalize, point_set, segment, squeeze,
                      theta_embedding)
from sympfold.folding import SlitRegion, normalization_scale, rect_area
from sympfold.hausdorff import lebesgue_estimate
from sympfold.sympmap import disk_image_area

from conftest import plane_dust_curve

Q18 = (0.0, 0.9, -1.0, 1.0)       # area 1.8
R105 = (0.0, 1.05, 0.0, 1.0)      # area 1.05
SMALL = FoldConfig(cert_size=5000, symplectic_points=2000)


# normalization


def test_normalized_pair_is_kept():
    frame = normalize(FoldProblem(point_set([(0.1, 0.1)]), Q18, R105))
    assert frame.scale == 1.0 and frame.Q == Q18


def test_normalization_of_large_pair():
    Q, R = (0.0, 1.8, 0.0, 2.0), (0.0, 2.1, 0.0, 1.0)    # 3.6 and 2.1
    frame = normalize(FoldProblem(point_set([(0.1, 0.1)]), Q, R))
    q, r = rect_area(frame.Q), rect_area(frame.R)
    assert q < 2 and r > 1
    # areas scale by c^2, the ratio is preserved
    assert q / r == pytest.approx(3.6 / 2.1, rel=1e-12)
    assert q == pytest.approx(3.6 * frame.scale**2, rel=1e-12)


@pytest.mark.parametrize("qa,ra", [(0.1, 0.06), (5.0, 2.6), (1.0, 0.51), (3.9, 2.0)])
def test_normalization_inequalities(qa, ra):
    c2 = normalization_scale(qa, ra) ** 2
    assert qa * c2 < 2 and ra * c2 > 1


def test_bad_areas():
    with pytest.raises(BadAreas):
        normalization_scale(2.0, 1.0)
    with pytest.raises(BadAreas):
        FoldProblem(point_set([(0.1, 0.1)]), (0, 2, 0, 1), (0, 1, 0, 1))


# V_delta


def test_v_delta_examples():
    region, poly = build_v_delta(0.1)
    assert not region.contains([(0.5, 0.05)])[0]
    assert region.contains([(0.05, 0.05)])[0]
    assert region.contains([(0.5, -0.5)])[0] and region.contains([(0.5, 0.5)])[0]
    assert poly.shape[1] == 2 and np.array_equal(poly[0], poly[-1])


def test_v_delta_area():
    region = SlitRegion(0.1)
    est = lebesgue_estimate(((0, -1), (1, 1)), region.contains, 400_000, seed=9)
    assert est.value == pytest.approx(1.91, abs=0.02)
    assert region.area == pytest.approx(2 - 0.1 * 0.9)


def test_polyline_shoelace_area():
    poly = build_v_delta(0.2)[1]
    x, y = poly[:, 0], poly[:, 1]
    area = 0.5 * abs(np.dot(x[:-1], y[1:]) - np.dot(x[1:], y[:-1]))
    assert area == pytest.approx(2 - 0.2 * 0.8, abs=1e-12)


# theta


def test_theta_affine_for_small_rectangle():
    theta, info = theta_embedding((0.0, 0.9, 0.0, 1.0), 0.1, return_info=True)
    assert not info["stretch"]
    assert check_symplectic(theta, np.random.default_rng(0).random((1000, 2)), 1e-12).passed


def test_theta_stretch_for_large_rectangle():
    Q = (0.0, 1.75, 0.0, 1.0)
    theta, info = theta_embedding(Q, 0.1, cert_points=10_000, return_info=True)
    assert info["stretch"] and info["certified_points"] >= 10_000
    rng = np.random.default_rng(3)
    X = np.column_stack([1.75 * rng.random(10_000), rng.random(10_000)])
    assert SlitRegion(0.1).contains(theta(X)).all()
    assert check_symplectic(theta, X, 1e-8).passed


def test_theta_rejects_oversized_rectangle():
    with pytest.raises(ValueError):
        theta_embedding((0.0, 1.9, 0.0, 1.0), 0.1)


def test_theta_area_preserved():
    theta = theta_embedding((0.0, 1.75, 0.0, 1.0), 0.1)
    # a disk inside Q keeps its area
    area, se = disk_image_area(theta, (0.8, 0.5), 0.3, 200_000, seed=2)
    assert abs(area - math.pi * 0.09) <= max(4 * se, 0.01 * math.pi * 0.09)


# fold_once


@pytest.fixture(scope="module")
def plane_fold():
    A = plane_dust_curve()
    lo = A.sample(20_000, 0).points.min(axis=0)
    hi = A.sample(20_000, 0).points.max(axis=0)
    Q = (lo[0] - 0.05, lo[0] - 0.05 + 0.9, -0.95 + 0.5 * (lo[1] + hi[1]) - 0.05,
         1.05 + 0.5 * (lo[1] + hi[1]) - 0.05)
    return fold_once(FoldProblem(A, Q, R105, seed=1), SMALL)


def test_fold_dust_curve_passes(plane_fold):
    rep = plane_fold
    assert rep.passed, {k: (v.passed, v.value) for k, v in rep.checks.items()}
    assert set(rep.checks) == {"symplecticity", "glue", "containment", "injectivity",
                               "displacement"}
    assert rep.checks["symplecticity"].value <= 1e-6
    assert rep.checks["glue"].value <= 1e-8
    assert rep.checks["injectivity"].value > 0


def test_fold_parameters(plane_fold):
    p = plane_fold.parameters
    R_area, Q_area = rect_area(R105), 1.8
    assert p.feasible(R_area, Q_area)
    assert p.eps == pytest.approx(0.6 * (R_area - 1))
    assert p.delta == pytest.approx(min(0.1 * p.eps, 0.5 * (1 - Q_area / 2)))
    assert p.delta < p.eps_prime < p.eps / 2
    assert 0 < p.t < min(p.t0, p.t1, p.t2)


def test_fold_flow_fixes_the_hinge(plane_fold):
    # phi is the identity for q <= delta, which is what makes the glue smooth
    p = plane_fold.parameters
    flows = [m for m in plane_fold.map.walk() if isinstance(m, HamFlow)]
    assert len(flows) == 1
    rng = np.random.default_rng(4)
    X = np.column_stack([p.delta * rng.random(2000), 2 * rng.random(2000) - 1])
    assert np.max(np.abs(flows[0](X) - X)) <= 1e-10


def test_fold_branch_preserves_area(plane_fold):
    glue = next(m for m in plane_fold.map.walk() if isinstance(m, PiecewiseGlue))
    branch = glue.plus
    assert isinstance(branch, Compose)
    area, se = disk_image_area(branch, (0.3, 0.5), 0.2, 100_000, seed=3)
    assert abs(area - math.pi * 0.04) <= 4 * se


def test_fold_empty_set():
    rep = fold_once(FoldProblem(empty_set(2), Q18, R105), SMALL)
    assert rep.passed and rep.parameters.t == 0.0


def test_fold_lower_half_only():
    # a small Q goes affinely into the lower half, so nothing is folded over
    A = segment((0.1, 0.2), (0.7, 0.7))
    rep = fold_once(FoldProblem(A, (0.0, 0.8, 0.0, 1.0), R105, seed=2), SMALL)
    assert rep.passed and rep.parameters.t == 0.0
    assert not any(isinstance(m, HamFlow) for m in rep.map.walk())
    X = A.sample(1000, 5).points
    Y = rep.map(X)
    assert np.all((Y[:, 0] > 0) & (Y[:, 0] < 1.05) & (Y[:, 1] > 0) & (Y[:, 1] < 1))


def test_fold_domain_violation():
    from sympfold import DomainViolation
    with pytest.raises(DomainViolation):
        fold_once(FoldProblem(segment((0, 0), (3, 0)), Q18, R105), SMALL)


def test_fold_is_deterministic():
    A = segment((0.1, -0.6), (0.7, 0.8))
    a = fold_once(FoldProblem(A, Q18, R105, seed=3), SMALL)
    b = fold_once(FoldProblem(A, Q18, R105, seed=3), SMALL)
    assert a.map.to_json() == b.map.to_json()


# squeeze


def test_squeeze_point_set():
    pts = [(0.1, 0.2), (0.9, 0.1), (0.5, 0.5), (0.2, 0.95), (0.7, 0.8)]
    A = point_set(pts)
    cfg = SqueezeConfig()
    cfg.fold.cert_size = 2000
    rep = squeeze(A, [(0.4, 0.5, 0.4, 0.5)], cfg, seed=1)
    assert rep.passed
    Y = rep.map(np.array(pts, dtype=float))
    assert np.all((Y[:, 0] > 0.4) & (Y[:, 0] < 0.5) & (Y[:, 1] > 0.4) & (Y[:, 1] < 0.5))
    assert len(np.unique(Y.round(12), axis=0)) == len(pts)


def test_squeeze_fold_count():
    rep = squeeze(point_set([(0.1, 0.2), (0.6, 0.7)]), [(0.0, 0.25, 0.0, 0.25)], seed=0)
    q = rect_area(rep.boxes[0])
    final = (0.25 * (1 - 2 * 0.08)) ** 2
    assert rep.folds_per_factor[0] == math.ceil(math.log2(q / final) / 0.8)
    assert len(rep.folds) == rep.folds_per_factor[0]


def test_squeeze_empty():
    rep = squeeze(empty_set(4), [(0, 1, 0, 1), (0, 1, 0, 1)])
    assert rep.passed and rep.folds == []


def test_squeeze_target_validation():
    with pytest.raises(ValueError):
        squeeze(point_set([(0.1, 0.2)]), [(0, 1, 0, 1), (0, 1, 0, 1)])
    with pytest.raises(ValueError):
        squeeze(point_set([(0.1, 0.2)]), [(0, 0, 0, 1)])


def test_theta_embedding_failure_type():
    assert issubclass(EmbeddingCertificationFailed, Exception)
