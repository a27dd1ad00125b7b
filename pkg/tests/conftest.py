import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sympfold import (AffineSymplectic, Compose, CutoffLinearHamiltonian, CutoffProfile,
                      FactorPermute, FiberStretch, HamFlow, Identity, LinearHamiltonian,
                      PiecewiseGlue, Product2D, QPHamiltonian, Rescaled, Shear, SlopeProfile,
                      dust_curve)
from sympfold.sympmap import AgreementBand, HalfSpace

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=500, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


# Depth-24 dusts: at depth 12 the pieces are segments ~1e-4 long and the set
# looks one-dimensional at the scales the fold certificates probe.
def plane_dust_curve(depth=24):
    return dust_curve(0.9, depth, (0.5, 0.5), cos=[(0.35, 0.1)], sin=[(0.1, 0.35)])


def space_dust_curve(depth=24):
    return dust_curve(0.9, depth, (0.9, 0.5, 0.5, 0.5),
                      cos=[(0.8, 0.4, 0.25, 0.0), (0.05, 0, 0, 0.2)],
                      sin=[(0, 0, 0, 0.25), (0, 0.05, 0.2, 0)])


def _slope():
    return SlopeProfile((0.5, 3.0, 0.7), (0.0, 0.6), (0.3, 0.2), -1.0, -0.9)


def _cutoff_flow(t=0.3, dim=4):
    v = np.zeros(dim)
    v[:2] = (0.4, -0.7)
    if dim > 2:
        v[2:] = 0.2
    rho = CutoffProfile.step(0.1, 0.4)
    return HamFlow(CutoffLinearHamiltonian(rho, LinearHamiltonian(tuple(v), tuple(np.full(dim, 0.3)))), t)


def all_nodes():
    """One instance of every node kind, on R^4 where possible."""
    shear = Shear(CutoffProfile.step(0.25, 0.5))
    qp = HamFlow(QPHamiltonian(CutoffProfile.bump(-1.0, -0.5, 0.5, 1.0), 4, 1, 0.1, -0.1), 0.4)
    glue = PiecewiseGlue(HalfSpace(1, 0.0), Product2D(shear, 4), Identity(4),
                         AgreementBand(((None, 0.25), (-0.25, 0.25), (None, None), (None, None))))
    return {
        "identity": Identity(4),
        "affine_symplectic": AffineSymplectic(np.array([[1.0, 2.0, 0, 0], [0, 1.0, 0, 0],
                                                        [0, 0, 2.0, 0], [0, 0, 0, 0.5]]),
                                              np.array([0.1, 0.2, 0.3, 0.4])),
        "shear": Product2D(shear, 4, 1),
        "fiber_stretch": Product2D(FiberStretch(_slope()), 4),
        "fiber_stretch_inv": Product2D(FiberStretch(_slope(), inverted=True), 4),
        "ham_flow_linear": HamFlow(LinearHamiltonian((0.3, -1.0, 0.5, 0.2)), 0.7),
        "ham_flow_cutoff": _cutoff_flow(),
        "ham_flow_qp": qp,
        "factor_permute": FactorPermute(4, 0, 1),
        "compose": Compose((FactorPermute(4), Product2D(shear, 4), _cutoff_flow())),
        "glue": glue,
        "rescaled": Rescaled(_cutoff_flow(), 1.7),
    }


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
