import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sympfold import (Affine, AffineSymplectic, Compose, CutoffLinearHamiltonian, CutoffProfile,
                      FactorPermute, FiberStretch, HamFlow, Identity, LinearHamiltonian, MapExpr,
                      PiecewiseGlue, Product2D, QPHamiltonian, Rescaled, Shear,
                      SerializationError, check_injective, check_symplectic, glue_check, omega,
                      standard_J)
from sympfold.sympmap import (AgreementBand, HalfSpace, disk_image_area, finite_difference_jacobian,
                              integrate_flow, symplectic_residuals)

from conftest import _cutoff_flow, _slope, all_nodes


NODES = all_nodes()


# basic examples


def test_identity():
    x = np.array([0.3, -2.0, 5.0, 1e-9])
    assert np.array_equal(Identity(4)(x), x)
    assert np.array_equal(Identity(4).jacobian(x), np.eye(4))


def test_shear_example():
    s = Shear(CutoffProfile.step(0.25, 0.5))
    assert np.allclose(s((0.9, 0.5)), (0.9, -0.5), atol=0, rtol=0)
    assert np.array_equal(s((0.1, 0.5)), (0.1, 0.5))
    assert np.allclose(s.inverse()(s((0.37, 0.2))), (0.37, 0.2), atol=1e-15)


def test_shear_jacobian_determinant(rng):
    s = Shear(CutoffProfile.step(0.25, 0.5))
    D = s.jacobian(rng.random((1000, 2)))
    assert np.allclose(np.linalg.det(D), 1.0, atol=1e-14)


def test_standard_form():
    J = standard_J(4)
    assert np.array_equal(J @ J, -np.eye(4))
    assert omega((1, 0), (0, 1)) == 1.0
    # omega(-e2, x) = x1 in the plane
    assert omega((0, -1), (0.7, 3.0)) == pytest.approx(0.7)


def test_linear_flow_closed_form_matches_integrator(rng):
    h = LinearHamiltonian((0.3, -1.2, 0.5, 0.1), (1.0, 2.0, 3.0, 4.0))
    X = rng.normal(size=(100, 4))
    exact = HamFlow(h, -1.3)(X)
    assert np.array_equal(exact, X - 1.3 * np.array(h.v0))
    assert np.max(np.abs(exact - integrate_flow(h, -1.3, X))) <= 1e-10


def test_qp_flow_is_hyperbolic_where_cutoff_is_one(rng):
    h = QPHamiltonian(CutoffProfile("constant", value=1.0), 2, 0, 0.2, -0.1)
    X = rng.normal(size=(50, 2)) * 0.3
    Y = HamFlow(h, 0.5)(X)
    assert np.allclose(Y[:, 0] - 0.2, math.exp(0.5) * (X[:, 0] - 0.2), atol=1e-10)
    assert np.allclose(Y[:, 1] + 0.1, math.exp(-0.5) * (X[:, 1] + 0.1), atol=1e-10)


def test_cutoff_flow_fixes_points_below_threshold(rng):
    phi = _cutoff_flow()
    X = rng.random((200, 4))
    X[:, 0] *= 0.1
    assert np.array_equal(phi(X), X)


def test_cutoff_flow_fast_path_agrees_with_integrator(rng):
    phi = _cutoff_flow()
    oracle = HamFlow(phi.h, phi.t, integrate=True)
    X = rng.random((300, 4)) * 1.4 - 0.2
    assert np.max(np.abs(phi(X) - oracle(X))) <= 1e-10


# jacobians


@pytest.mark.parametrize("name", sorted(NODES))
def test_jacobian_against_finite_differences(name, rng):
    m = NODES[name]
    X = rng.random((200, 4)) * 1.2 - 0.1
    if name == "glue":
        X = X[np.abs(X[:, 1]) > 1e-3]
    D = m.jacobian(X)
    fd = m.jacobian(X, mode="finite-diff", step=1e-6)
    scale = max(1.0, float(np.max(np.abs(D))))
    assert np.max(np.abs(D - fd)) <= 1e-6 * scale


def test_cutoff_hamiltonian_jacobian_analytic():
    # variational equation against finite differences of the integrated flow
    phi = HamFlow(_cutoff_flow().h, 0.3, integrate=True)
    X = np.array([[0.2, 0.5, 0.1, 0.9], [0.3, 0.1, 0.5, 0.5]])
    D = phi.jacobian(X)
    fd = finite_difference_jacobian(phi._eval, X, 1e-6)
    assert np.max(np.abs(D - fd)) <= 1e-6


@pytest.mark.parametrize("h", [LinearHamiltonian((0.3, -1.0, 0.5, 0.2), (0.1, 0.2, 0.3, 0.4)),
                               _cutoff_flow().h,
                               QPHamiltonian(CutoffProfile.bump(-1.0, -0.5, 0.5, 1.0), 4, 1, 0.1,
                                             -0.1)])
def test_hamiltonian_derivatives(h, rng):
    X = rng.random((100, 4)) * 1.5 - 0.5
    step = 1e-6
    E = np.eye(4)
    g = np.column_stack([(h.value(X + step * e) - h.value(X - step * e)) / (2 * step) for e in E])
    assert np.allclose(h.grad(X), g, atol=1e-6)
    H = np.stack([(h.grad(X + step * e) - h.grad(X - step * e)) / (2 * step) for e in E], axis=2)
    assert np.allclose(h.hess(X), H, atol=1e-6)
    assert np.allclose(h.vector_field(X), h.grad(X) @ standard_J(4).T)


# symplecticity


@pytest.mark.parametrize("name", sorted(NODES))
def test_every_node_is_symplectic(name, rng):
    X = rng.random((10_000 if name not in ("ham_flow_cutoff", "ham_flow_qp", "compose",
                                             "rescaled") else 2000, 4)) * 1.2 - 0.1
    rep = check_symplectic(NODES[name], X, tol=1e-8)
    assert rep.passed, (name, rep.value)


def test_identity_residual_is_zero(rng):
    assert check_symplectic(Identity(4), rng.random((100, 4))).value == 0.0


def test_shear_symplectic_on_large_cloud(rng):
    rep = check_symplectic(Shear(CutoffProfile.step(0.25, 0.5)), rng.random((10_000, 2)), 1e-8)
    assert rep.passed and rep.details["points"] == 10_000


def test_conformal_map_fails():
    rep = check_symplectic(Affine(np.diag([2.0, 1.0])), np.random.default_rng(0).random((100, 2)))
    assert not rep.passed
    assert rep.value >= 1.0


def test_affine_symplectic_validates():
    with pytest.raises(ValueError):
        AffineSymplectic(np.diag([2.0, 1.0]))
    AffineSymplectic.diagonal_scaling(3.0)


def test_residuals_are_per_point(rng):
    r = symplectic_residuals(Affine(np.diag([1.0, 1.0])), rng.random((7, 2)))
    assert r.shape == (7,) and np.all(r == 0)


def test_flow_reversibility(rng):
    for name in ("ham_flow_linear", "ham_flow_cutoff", "ham_flow_qp"):
        f = NODES[name]
        X = rng.random((500, 4))
        assert np.max(np.abs(f.inverse()(f(X)) - X)) <= 1e-8


@pytest.mark.parametrize("name", ["affine_symplectic", "shear", "fiber_stretch", "factor_permute",
                                  "compose", "rescaled"])
def test_inverses(name, rng):
    f = NODES[name]
    X = rng.random((500, 4))
    assert np.max(np.abs(f.inverse()(f(X)) - X)) <= 1e-8


def test_disk_area_preserved():
    f = Compose((FiberStretch(_slope()), Shear(CutoffProfile.step(0.25, 0.5)),
                 AffineSymplectic.diagonal_scaling(1.7, (0.1, 0.0))))
    area, se = disk_image_area(f, (0.3, -0.2), 0.4, 1_000_000, seed=1)
    assert se < 0.003
    assert area == pytest.approx(math.pi * 0.16, rel=0.01)


def test_disk_area_preserved_by_flow():
    # the integrated flow is slow, so fewer samples and a matching tolerance
    f = HamFlow(QPHamiltonian(CutoffProfile.bump(-2, -1.5, 1.5, 2)), 0.3)
    area, se = disk_image_area(f, (0.3, -0.2), 0.4, 100_000, seed=1)
    assert abs(area - math.pi * 0.16) <= 4 * se


def test_disk_area_detects_conformal_map():
    area, _ = disk_image_area(Affine(np.diag([2.0, 1.0])), (0, 0), 0.5, 200_000, seed=1)
    assert area == pytest.approx(2 * math.pi * 0.25, rel=0.02)


# injectivity


def test_identity_injective(rng):
    rep = check_injective(Identity(2), rng.random((2000, 2)), 1e-3)
    assert rep.passed and rep.value >= 1e-3


def test_fold_without_flow_collides():
    # the shear folds p > 0 over p < 0; without the displacing flow the halves meet
    shear = Shear(CutoffProfile.step(0.25, 0.5))
    fold = PiecewiseGlue(HalfSpace(1, 0.0), shear, Identity(2),
                         AgreementBand(((None, 0.25), (-0.25, 0.25))))
    X = np.array([[0.9, 0.5], [0.9, -0.5], [0.1, 0.1]])
    rep = check_injective(fold, X)
    assert not rep.passed and rep.value == 0.0
    assert sorted(map(tuple, rep.details["witness"])) == [(0.9, -0.5), (0.9, 0.5)]


def test_constant_map_not_injective(rng):
    rep = check_injective(Affine(np.zeros((2, 2)), np.array([1.0, 1.0])), rng.random((50, 2)))
    assert not rep.passed


# gluing


def _band():
    return AgreementBand(((None, 0.2), (-0.2, 0.2)))


def test_glue_identical_branches(rng):
    g = PiecewiseGlue(HalfSpace(1), Identity(2), Identity(2), _band())
    rep = glue_check(g, rng.random((500, 2)) * 0.4 - 0.2)
    assert rep.passed and rep.value == 0.0


def test_glue_shear_then_flow_agree_near_axis(rng):
    # both factors are the identity for q <= delta
    delta = 0.1
    psi = Shear(CutoffProfile.step(0.25, 0.5))
    rho = CutoffProfile.step(delta, 0.2)
    phi = HamFlow(CutoffLinearHamiltonian(rho, LinearHamiltonian((0.6, 0.8), (0.2, 0.5))), 0.05)
    g = PiecewiseGlue(HalfSpace(1), Compose((phi, psi)), Identity(2),
                      AgreementBand(((None, delta), (-delta, delta))))
    X = np.column_stack([delta * rng.random(1000), delta * (2 * rng.random(1000) - 1)])
    rep = glue_check(g, X, 1e-8)
    assert rep.passed and rep.value <= 1e-8


def test_glue_translation_fails(rng):
    g = PiecewiseGlue(HalfSpace(1), Identity(2), AffineSymplectic.translation((1.0, 0.0)), _band())
    rep = glue_check(g, rng.random((100, 2)) * 0.4 - 0.2)
    assert not rep.passed and rep.value == pytest.approx(1.0)


def test_glue_needs_band():
    with pytest.raises(ValueError):
        PiecewiseGlue(HalfSpace(1), Identity(2), Identity(2), None)


# composition and structure


affine_entries = st.floats(-2, 2, allow_nan=False)


@given(st.lists(st.floats(0.2, 3), min_size=3, max_size=3),
       st.lists(affine_entries, min_size=3, max_size=3), st.integers(0, 2**31))
def test_compose_associative(lams, shifts, seed):
    a, b, c = (AffineSymplectic.diagonal_scaling(l, (s, -s)) for l, s in zip(lams, shifts))
    X = np.random.default_rng(seed).random((20, 2))
    lhs = Compose((Compose((a, b)), c))(X)
    rhs = Compose((a, Compose((b, c))))(X)
    flat = Compose((a, b, c))(X)
    assert np.allclose(lhs, rhs, atol=1e-12) and np.allclose(lhs, flat, atol=1e-12)


def test_compose_order():
    t = AffineSymplectic.translation((1.0, 0.0))
    s = AffineSymplectic.diagonal_scaling(2.0)
    # the last map is applied first
    assert np.allclose(Compose((t, s))((1.0, 1.0)), (3.0, 0.5))


def test_product2d_block_structure(rng):
    inner = Shear(CutoffProfile.step(0.25, 0.5))
    m = Product2D(inner, 6, 1)
    X = rng.random((50, 6))
    Y = m(X)
    assert np.array_equal(Y[:, [0, 1, 4, 5]], X[:, [0, 1, 4, 5]])
    assert np.array_equal(Y[:, 2:4], inner(X[:, 2:4]))
    D = m.jacobian(X)
    mask = np.ones((6, 6), bool)
    mask[2:4, 2:4] = False
    assert np.array_equal(D[:, mask], np.broadcast_to(np.eye(6)[mask], (50, mask.sum())))
    with pytest.raises(ValueError):
        Product2D(inner, 4, 2)


def test_factor_permute():
    p = FactorPermute(6, 0, 2)
    assert np.array_equal(p(np.arange(6.0)), [4, 5, 2, 3, 0, 1])


def test_rescaled_conjugates():
    inner = AffineSymplectic.translation((1.0, 0.0))
    assert np.allclose(Rescaled(inner, 2.0)((0.0, 0.0)), (0.5, 0.0))
    with pytest.raises(ValueError):
        Rescaled(inner, 0.0)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        Compose((Identity(2), Identity(4)))


# serialization


@pytest.mark.parametrize("name", sorted(NODES))
def test_json_roundtrip(name, rng):
    m = NODES[name]
    back = MapExpr.from_json(m.to_json())
    assert back.to_json() == m.to_json()
    X = rng.random((20, 4))
    assert np.array_equal(back(X), m(X))


def test_unknown_node():
    with pytest.raises(SerializationError):
        MapExpr.from_dict({"kind": "teleport"})
