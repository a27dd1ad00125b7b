"""Folding a critically negligible set into a rectangle of just over half the area.

All constructions happen in normalized coordinates where |Q| < 2 < 2|R| and
|R| > 1.  The plane factor is first embedded into the slit square V_delta,
the upper half is sheared down over the lower half, a cut-off linear
Hamiltonian flow pushes the two halves apart, and an embedding chi of a
neighbourhood V of the L-shaped region S into R finishes the fold.  Every
stage is certified on sample clouds.

Coordinates are interleaved, (q1, p1, q2, p2, ...); the folded factor is
always the first one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .cutoff import CutoffProfile, SlopeProfile
from .displacement import DisplacementProblem, find_generic_direction, sample_spacing
from .errors import (BadAreas, CertificationFailed, DomainViolation, EmbeddingCertificationFailed,
                     NoAdmissibleTime, NoDirectionFound)
from .sets import RectifiableSet, SampleCloud, child_seeds, image, local_sample
from .sympmap import (Affine, AffineSymplectic, AgreementBand, CheckReport, Compose,
                      CutoffLinearHamiltonian, FactorPermute, FiberStretch, HalfSpace, HamFlow,
                      Identity, LinearHamiltonian, PiecewiseGlue, Product2D, Rescaled, Shear,
                      check_injective, check_symplectic, glue_check)
from ._env import workers


# --------------------------------------------------------------------------
# rectangles and boxes
# --------------------------------------------------------------------------


def rect_area(r):
    q0, q1, p0, p1 = r
    return (q1 - q0) * (p1 - p0)


def shrink_rect(r, m):
    q0, q1, p0, p1 = r
    return (q0 + m, q1 - m, p0 + m, p1 - m)


def scale_rect(r, c):
    return tuple(c * v for v in r)


def rect_bounds(r):
    return np.array([r[0], r[2]]), np.array([r[1], r[3]])


def _box(lo, hi):
    return np.asarray(lo, dtype=float).reshape(-1), np.asarray(hi, dtype=float).reshape(-1)


def full_box(R, box):
    """lo, hi of R x box in interleaved coordinates (R is the first factor)."""
    lo, hi = rect_bounds(R)
    blo, bhi = box
    return np.concatenate([lo, blo]), np.concatenate([hi, bhi])


def inside_box(X, lo, hi, margin=0.0):
    X = np.atleast_2d(X)
    if X.shape[1] == 0:
        return np.ones(len(X), dtype=bool)
    return np.all((X > lo + margin) & (X < hi - margin), axis=1)


def box_margin(X, lo, hi):
    """Smallest distance of a cloud to the boundary of the box (negative outside)."""
    X = np.atleast_2d(X)
    if len(X) == 0 or X.shape[1] == 0:
        return np.inf
    return float(min(np.min(X - lo), np.min(hi - X)))


# --------------------------------------------------------------------------
# problem, parameters, reports
# --------------------------------------------------------------------------


@dataclass
class FoldConfig:
    eps_fraction: float = 0.6          # eps as a fraction of |R| - 1
    delta_fraction: float = 0.1        # delta as a fraction of eps (below 1/2)
    sample_size: int = 300
    validation_factor: int = 10
    cert_size: int = 100_000
    symplectic_points: int = 10_000
    directions: int = 64
    t_samples: int = 400
    t_grid: int = 8
    speed_grid: int = 2001
    speed_safety: float = 2.0
    sym_tol: float = 1e-6
    glue_tol: float = 1e-8
    glue_points: int = 1000
    min_preimage_sep: float = 1e-4
    clearance_rtol: float = 1e-6       # containment margin, relative to the U scale
    displacement_tol: float = 1e-9     # float-noise floor for the refined clearance
    refine_rounds: int = 16            # most local refinement rounds of the displacement certificate
    min_rounds: int = 1
    refine_pairs: int = 16
    refine_per_point: int = 150
    refine_radius: float = 0.02        # first parameter radius, halved every round
    converged: float = 0.8             # clearance ratio of the last round counted as settled
    resolution_factor: float = 4.0     # clearance must exceed this many local sample spacings
    raise_on_failure: bool = True

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class FoldProblem:
    """Fold A subset Q x K into R x U (K compact box, U open box containing K).

    Q and R are rectangles (q0, q1, p0, p1) in the first plane factor; K and
    U are (lo, hi) boxes in the remaining 2n - 2 coordinates.

    Inside a squeeze, A has already been moved by earlier folds: ``prefix``
    maps A's own coordinates to the problem's, ``clouds`` holds the moved
    "search", "validation" and "cert" clouds and ``source`` is the cert
    cloud before moving (needed to resample A locally).
    """

    A: RectifiableSet
    Q: tuple
    R: tuple
    K: tuple = None
    U: tuple = None
    seed: int = 0
    clouds: dict = None
    source: object = None
    prefix: object = None

    def __post_init__(self):
        self.Q = tuple(float(v) for v in self.Q)
        self.R = tuple(float(v) for v in self.R)
        if self.A.ambient_dim % 2:
            raise ValueError("ambient dimension must be even")
        k = self.A.ambient_dim - 2
        if self.K is None:
            self.K = (np.zeros(k), np.zeros(k))
        self.K = _box(*self.K)
        if self.U is None:
            self.U = (self.K[0] - 1.0, self.K[1] + 1.0)
        self.U = _box(*self.U)
        if len(self.K[0]) != k or len(self.U[0]) != k:
            raise ValueError("K and U must live in R^(2n-2)")
        if np.any(self.U[0] >= self.K[0]) or np.any(self.U[1] <= self.K[1]):
            raise ValueError("U must contain K in its interior")
        if not rect_area(self.Q) < 2 * rect_area(self.R):
            raise BadAreas(f"|Q| = {rect_area(self.Q):g} is not below 2|R| = {2 * rect_area(self.R):g}")

    @property
    def n(self):
        return self.A.ambient_dim // 2

    @property
    def dim(self):
        return self.A.ambient_dim

    def get_clouds(self, config):
        """(clouds in problem coordinates, cert SampleCloud of A, prefix map)."""
        prefix = self.prefix if self.prefix is not None else Identity(self.dim)
        if self.clouds is not None:
            return self.clouds, self.source, prefix
        s = child_seeds(self.seed, 3)
        cert = self.A.sample(config.cert_size if not self.A.is_empty else 0, s[2])
        if self.A.is_empty:
            z = np.zeros((0, self.dim))
            return {"search": z, "validation": z, "cert": z}, cert, prefix
        return ({"search": self.A.sample(config.sample_size, s[0]).points,
                 "validation": self.A.sample(config.sample_size * config.validation_factor, s[1]).points,
                 "cert": cert.points}, cert, prefix)

    def to_dict(self):
        return {"Q": list(self.Q), "R": list(self.R), "K": [list(self.K[0]), list(self.K[1])],
                "U": [list(self.U[0]), list(self.U[1])], "seed": self.seed, "n": self.n}


@dataclass
class FoldParameters:
    eps: float
    delta: float
    eps_prime: float
    t: float
    t0: float
    t1: float
    t2: float
    v0: tuple
    scale: float
    margin_v: float
    margin_u: float
    speed_bound: float

    def feasible(self, R_area_normalized, Q_area_normalized):
        """Every interval constraint of the construction, checked exactly."""
        return (0 < self.eps < R_area_normalized - 1
                and 0 < self.delta < min(self.eps / 2, 1 - Q_area_normalized / 2)
                and self.delta < self.eps_prime < self.eps / 2
                and 0 <= self.t < min(self.t0, self.t1, self.t2))

    def to_dict(self):
        d = dict(self.__dict__)
        d["v0"] = [float(v) for v in self.v0]
        return d


@dataclass
class FoldReport:
    map: object
    parameters: FoldParameters
    checks: dict
    problem: FoldProblem
    image_set: RectifiableSet = None
    snapshots: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks.values())

    def to_dict(self):
        return {"kind": "fold", "passed": self.passed, "map": self.map.to_dict(),
                "parameters": self.parameters.to_dict(),
                "checks": {k: v.to_dict() for k, v in sorted(self.checks.items())},
                "problem": self.problem.to_dict(), "notes": list(self.notes)}


# --------------------------------------------------------------------------
# normalization
# --------------------------------------------------------------------------


def normalization_scale(Q_area, R_area):
    """Dilation factor c (areas scale by c^2) giving |Q| c^2 < 2 and |R| c^2 > 1.

    Already normalized pairs keep c = 1.  Otherwise c^2 = 3 / (|Q| + |R|),
    which satisfies both inequalities whenever |Q| < 2|R|.
    """
    if not Q_area < 2 * R_area:
        raise BadAreas(f"|Q| = {Q_area:g} is not below 2|R| = {2 * R_area:g}")
    if Q_area < 2 and R_area > 1:
        return 1.0
    return math.sqrt(3.0 / (Q_area + R_area))


@dataclass(frozen=True)
class NormalizedFrame:
    """The problem data after the dilation x -> c x.

    The dilation is conformally symplectic, not symplectic; it only changes
    the coordinates the construction is carried out in and is undone by
    conjugation (:class:`Rescaled`) at the end.
    """

    scale: float
    Q: tuple
    R: tuple
    K: tuple
    U: tuple

    def dilation(self, dim):
        return Affine(self.scale * np.eye(dim), np.zeros(dim))


def normalize(problem):
    c = normalization_scale(rect_area(problem.Q), rect_area(problem.R))
    return NormalizedFrame(c, scale_rect(problem.Q, c), scale_rect(problem.R, c),
                           (c * problem.K[0], c * problem.K[1]), (c * problem.U[0], c * problem.U[1]))


# --------------------------------------------------------------------------
# the slit square and the embedding theta
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SlitRegion:
    """V_delta = (0,1) x (-1,1) minus the slit [delta, 1) x [0, delta]."""

    delta: float

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")

    def contains(self, X, margin=0.0):
        X = np.atleast_2d(X)
        q, p = X[:, 0], X[:, 1]
        d, m = self.delta, margin
        square = (q > m) & (q < 1 - m) & (p > -1 + m) & (p < 1 - m)
        slit = (q >= d - m) & (p >= -m) & (p <= d + m)
        return square & ~slit

    @property
    def area(self):
        return 2.0 - self.delta * (1.0 - self.delta)

    def polyline(self):
        d = self.delta
        return np.array([(0, -1), (1, -1), (1, 0), (d, 0), (d, d), (1, d), (1, 1), (0, 1), (0, -1)],
                        dtype=float)


def build_v_delta(delta):
    region = SlitRegion(delta)
    return region, region.polyline()


@dataclass(frozen=True)
class ThetaMargins:
    """Margins of the theta embedding as fractions of its slack 2 - |Q| - delta."""

    q_offset: float = 1 / 40
    p_margin: float = 1 / 40
    q_margin: float = 1 / 20
    band: float = 1 / 40
    slit_share: float = 0.8      # q / P' <= slit_share * delta across the slit


def _affine_into(Q, q_lo, q_hi, p_lo, p_hi):
    """Area-preserving diagonal scaling plus translation taking Q into the box."""
    x0, x1, y0, y1 = Q
    lam_min = (y1 - y0) / (p_hi - p_lo)
    lam_max = (q_hi - q_lo) / (x1 - x0)
    if lam_min > lam_max * (1 + 1e-12):
        return None
    lam = math.sqrt(lam_min * lam_max)
    w, h = lam * (x1 - x0), (y1 - y0) / lam
    qc, pc = 0.5 * (q_lo + q_hi), 0.5 * (p_lo + p_hi)
    offset = (qc - w / 2 - lam * x0, pc - h / 2 - y0 / lam)
    return AffineSymplectic.diagonal_scaling(lam, offset)


def theta_embedding(Q, delta, margins=ThetaMargins(), cert_points=10_000, seed=0,
                    return_info=False):
    """Symplectic embedding of the rectangle Q into V_delta, certified on a cloud.

    Small Q go affinely into the lower half (0,1) x (-1,0).  Otherwise Q is
    placed in a strip (a, b) x (-1, 1) and a fiber stretch
    (q, p) -> (q / P'(p), P(p)) squeezes the rows that land at heights
    [0, delta] to width below delta, so that the image avoids the slit.
    """
    area = rect_area(Q)
    if not area <= 2 - 2 * delta:
        raise ValueError(f"|Q| = {area:g} exceeds 2 - 2 delta = {2 - 2 * delta:g}")
    slack = 2.0 - area - delta
    qo, pm = margins.q_offset * slack, margins.p_margin * slack
    lower = _affine_into(Q, min(qo, 0.05), 1 - min(qo, 0.05), -1 + min(pm, 0.05), -min(pm, 0.05))
    info = {"slack": slack, "stretch": False}
    if lower is not None:
        theta = lower
    else:
        Lp = 2 - 2 * pm
        w = area / Lp
        a = qo + w
        s0 = a / (1 - margins.q_margin * slack)
        s1 = a / (margins.slit_share * delta)
        kappa = margins.band * slack
        nu = pm
        plateau = (delta + 2 * kappa) / s1
        tau = (2 - 2 * nu - s0 * Lp) / (s1 - s0) - plateau
        if not tau > 0:
            raise EmbeddingCertificationFailed("no room for the fiber stretch", stage="theta",
                                               check="budget", witness={"tau": tau})
        p_bottom = -1 + pm
        p_s = p_bottom + (1 - nu - kappa - (s1 - s0) * tau / 2) / s0
        if not p_s - tau >= p_bottom:
            raise EmbeddingCertificationFailed("slit band starts below the strip", stage="theta",
                                               check="budget", witness={"p_s": p_s, "tau": tau})
        profile = SlopeProfile((s0, s1, s0), (p_s - tau, p_s + plateau), (tau, tau), p_bottom,
                               -1 + nu)
        place = _affine_into(Q, qo, a, -1 + pm, 1 - pm)
        theta = Compose((FiberStretch(profile), place))
        info.update(stretch=True, slopes=(s0, s1), tau=tau, plateau=(p_s, p_s + plateau))
    rng = np.random.default_rng(seed)
    x0, x1, y0, y1 = Q
    X = np.column_stack([x0 + (x1 - x0) * rng.random(cert_points), y0 + (y1 - y0) * rng.random(cert_points)])
    # include the corners and edges of the closed rectangle
    e = np.linspace(0, 1, 257)
    edges = np.vstack([np.column_stack([x0 + (x1 - x0) * e, np.full_like(e, y)]) for y in (y0, y1)]
                      + [np.column_stack([np.full_like(e, x), y0 + (y1 - y0) * e]) for x in (x0, x1)])
    Y = theta(np.vstack([X, edges]))
    ok = SlitRegion(delta).contains(Y)
    if not np.all(ok):
        bad = int(np.flatnonzero(~ok)[0])
        raise EmbeddingCertificationFailed(f"{int((~ok).sum())} certification points leave V_delta",
                                           stage="theta", check="containment",
                                           witness=Y[bad].tolist())
    info["certified_points"] = int(len(Y))
    return (theta, info) if return_info else theta


# --------------------------------------------------------------------------
# the embedding chi of a neighbourhood of S into R
# --------------------------------------------------------------------------


def build_chi(eps, m, tau, target):
    """Symplectic embedding of V = S inflated by m into the rectangle ``target``.

    V is the union of [-m, 1+m] x [-1-m, m] and [-m, eps+m] x [-1-m, 1+m].
    After shifting q by m every row of V starts at q = 0, and the fiber
    stretch with slope (row width)/W maps each row into [0, W].  Returns
    (chi, image height) or (None, height) when the image does not fit.
    """
    q0, q1, p0, p1 = target
    W = q1 - q0
    lo_slope, hi_slope = (1 + 2 * m) / W, (eps + 2 * m) / W
    profile = SlopeProfile((lo_slope, hi_slope), (m,), (tau,), -1 - m, 0.0)
    height = float(profile(1 + m))
    if height > p1 - p0:
        return None, height
    shift = AffineSymplectic.translation((m, 0.0))
    place = AffineSymplectic.translation((q0, p0 + 0.5 * (p1 - p0 - height)))
    return Compose((place, FiberStretch(profile), shift)), height


# --------------------------------------------------------------------------
# fold_once
# --------------------------------------------------------------------------


def _clearance(P, M, start=1e-4):
    """min over P of the distance to M, searched with a growing radius bound."""
    if len(P) == 0 or len(M) == 0:
        return np.inf
    # duplicates (finite sets) do not change the minimum but slow the tree
    P, M = np.unique(P, axis=0), np.unique(M, axis=0)
    tree = cKDTree(M)
    r = start
    while True:
        d = tree.query(P, distance_upper_bound=r, workers=workers())[0]
        if np.isfinite(d).any():
            return float(d.min())
        r *= 4.0


def _fail(config, exc):
    if config.raise_on_failure:
        raise exc


def hamiltonian_speed_sup(H, q_range, lo, hi, grid=2001):
    """Upper bound of |X_H| for H = rho(q) * a.(x - c) on a box, q = x[0] on ``q_range``.

    |X_H| = |grad H| <= rho |a| + |rho'| |a.(x - c)|; the linear part is
    maximized exactly over the box for each q on the grid.
    """
    a = H.base.coefficients
    c = np.asarray(H.base.center, dtype=float)
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    rest = abs(float(a[1:] @ (mid[1:] - c[1:]))) + float(np.abs(a[1:]) @ half[1:])
    q = np.linspace(q_range[0], q_range[1], grid)
    Hmax = np.abs(a[0] * (q - c[0])) + rest
    return float(np.max(H.rho(q) * np.linalg.norm(a) + np.abs(H.rho.deriv(q)) * Hmax))


def _time_bounds(rho, H, eps, delta, eps_p, m, m_u, Kn, Un, config):
    """(t0, t1, t2, speed on C, speed on V x U), each a distance over a padded speed."""
    speed = np.linalg.norm(H.base.coefficients)
    t0 = (eps / 2 - eps_p) / speed
    Clo = np.concatenate([[delta, delta], Kn[0]])
    Chi = np.concatenate([[eps / 2, 1.0], Kn[1]])
    sC = config.speed_safety * hamiltonian_speed_sup(H, (delta, eps / 2), Clo, Chi, config.speed_grid)
    Vlo = np.concatenate([[-m, -1 - m], Un[0]])
    Vhi = np.concatenate([[1 + m, 1 + m], Un[1]])
    sV = config.speed_safety * hamiltonian_speed_sup(H, (-m, 1 + m), Vlo, Vhi, config.speed_grid)
    return t0, delta / sC, min(m, m_u) / sV, sC, sV


class _Pipeline:
    """Problem-coordinate points -> (moved plus part with q > delta, minus part)."""

    def __init__(self, c, Theta, Psi, phi, delta):
        self.c, self.Theta, self.Psi, self.phi, self.delta = c, Theta, Psi, phi, delta

    def split(self, X):
        idx = np.arange(len(X))
        if len(X) == 0:
            return X, idx, X, idx
        Y = self.Theta(self.c * X)
        plus = Y[:, 1] > 0
        P = self.Psi(Y[plus]) if plus.any() else Y[plus]
        far = P[:, 0] > self.delta
        P, iP = P[far], idx[plus][far]
        if len(P) and self.phi is not None:
            P = self.phi(P)
        return P, iP, Y[~plus], idx[~plus]


def refined_clearance(A, source, X, prefix, pipeline, tol, config, seed=0):
    """Distance of phi(A+' with q > delta) from A-, certified by local refinement.

    A is resampled near the closest pairs at parameter radii halving every
    round.  The local samples of a round have a resolution (median
    nearest-neighbour spacing); for overlapping sets the clearance keeps
    tracking that resolution, for disjoint sets it settles while the
    resolution goes to zero.  PASS needs the clearance above ``tol``, above
    ``config.resolution_factor`` times the last resolution, and unchanged
    within ``config.converged`` over the last round.
    """
    P, iP, M, iM = pipeline.split(X)
    if len(P) == 0 or len(M) == 0:
        return CheckReport("displacement", True, np.inf, tol, {"vacuous": True})
    hist = [_clearance(P, M)]
    spacing = [sample_spacing(np.vstack([P, M]), 0.5)]
    radius = config.refine_radius
    clouds = [source]
    offset = len(source) if source is not None else 0
    refinable = source is not None and A.rect_order > 0

    def settled():
        return (hist[-1] > config.resolution_factor * spacing[-1]
                and (len(hist) < 2 or hist[-1] >= config.converged * hist[-2]))

    for k in range(config.refine_rounds if refinable else 0):
        if k >= config.min_rounds and settled():
            break
        dist, j = cKDTree(M).query(P, distance_upper_bound=4 * hist[-1] + 1e-12,
                                   workers=workers())
        order = np.argsort(dist)[: config.refine_pairs]
        j = np.minimum(j, len(M) - 1)
        near = np.unique(np.concatenate([iP[order], iM[j[order]]]))
        local = local_sample(A, _concat_clouds(clouds), near, radius, config.refine_per_point,
                             seed + k)
        if len(local):
            P2, iP2, M2, iM2 = pipeline.split(prefix(local.points))
            P, iP = np.vstack([P, P2]), np.concatenate([iP, iP2 + offset])
            M, iM = np.vstack([M, M2]), np.concatenate([iM, iM2 + offset])
            clouds.append(local)
            offset += len(local)
            spacing.append(sample_spacing(np.vstack([P2, M2]), 0.5) if len(P2) + len(M2) > 1
                           else spacing[-1])
        else:
            spacing.append(spacing[-1])
        hist.append(_clearance(P, M))
        radius /= 2
    ok = hist[-1] > tol and (settled() or not refinable and hist[-1] > 0)
    det = {"history": hist, "resolution": spacing, "points": [int(len(P)), int(len(M))],
           "rounds": len(hist) - 1, "refinable": refinable}
    if not ok:
        dist, j = cKDTree(M).query(P, distance_upper_bound=4 * hist[-1] + 1e-12,
                                   workers=workers())
        i = int(np.argmin(dist))
        det["witness"] = [P[i].tolist(), M[min(j[i], len(M) - 1)].tolist()]
    return CheckReport("displacement", bool(ok), hist[-1], tol, det)


def _concat_clouds(clouds):
    if len(clouds) == 1:
        return clouds[0]
    return SampleCloud(np.vstack([c.points for c in clouds]),
                       np.concatenate([c.chart_index for c in clouds]),
                       np.vstack([c.params for c in clouds]), clouds[0].seed)


def fold_once(problem, config=None):
    """Fold A into R x U; returns a :class:`FoldReport` with all certificates."""
    config = config or FoldConfig()
    d = problem.dim
    notes = []
    clouds, source, prefix = problem.get_clouds(config)
    lo, hi = full_box(problem.Q, problem.K)
    for name in ("search", "cert"):
        X = clouds[name]
        if len(X) and not np.all(inside_box(X, lo - 1e-12, hi + 1e-12)):
            raise DomainViolation(f"{name} cloud of A is not contained in Q x K")

    frame = normalize(problem)
    c = frame.scale
    if c != 1.0:
        notes.append(f"coordinates dilated by {c:.6g} (areas by {c * c:.6g}) and conjugated back")
    Qn, Rn, Kn, Un = frame.Q, frame.R, frame.K, frame.U
    Q_area, R_area = rect_area(Qn), rect_area(Rn)

    g = R_area - 1.0
    eps = config.eps_fraction * g
    delta = min(config.delta_fraction * eps, 0.5 * (1 - Q_area / 2))
    eps_p = 0.5 * (delta + eps / 2)

    theta = theta_embedding(Qn, delta, seed=problem.seed)
    Theta = Product2D(theta, d)
    Psi = Product2D(Shear(CutoffProfile.step(eps / 2, eps)), d)

    # chi and the margin m of V, shrinking m until the image fits
    rest = g - eps
    r_margin = min(rest / 64, 0.01 * min(Rn[1] - Rn[0], Rn[3] - Rn[2]))
    target = shrink_rect(Rn, r_margin)
    m, tau = rest / 16, rest / 2
    chi = None
    for _ in range(40):
        chi, height = build_chi(eps, m, tau, target)
        if chi is not None:
            break
        m, tau = m / 2, tau / 2
    if chi is None:
        raise BadAreas("no neighbourhood of S fits into R")
    Chi = Product2D(chi, d)
    m_u = float(min(np.min(Kn[0] - Un[0]), np.min(Un[1] - Kn[1]))) if d > 2 else np.inf

    rho = CutoffProfile.step(delta, eps_p)
    # H vanishes at the centre of C = [delta, eps/2] x [delta, 1] x K
    center = np.concatenate([[0.5 * (delta + eps / 2), 0.5 * (delta + 1)], 0.5 * (Kn[0] + Kn[1])])

    def hamiltonian(v):
        return CutoffLinearHamiltonian(rho, LinearHamiltonian(tuple(v), tuple(center)))

    split0 = _Pipeline(c, Theta, Psi, None, delta)
    sp, _, sm, _ = split0.split(clouds["search"])
    vp, _, vm, _ = split0.split(clouds["validation"])
    # the search runs on all of A+' (points with q <= delta never move)
    Ys = Theta(c * clouds["search"]) if len(clouds["search"]) else np.zeros((0, d))
    plus_all = Psi(Ys[Ys[:, 1] > 0]) if len(Ys) else Ys
    v0 = np.zeros(d)
    v0[0] = 1.0
    t = 0.0
    search = {}
    t0, t1, t2, sC, sV = _time_bounds(rho, hamiltonian(v0), eps, delta, eps_p, m, m_u, Kn, Un,
                                      config)
    if len(plus_all) and len(sm):
        prob = DisplacementProblem.from_clouds(plus_all, sm, seed=problem.seed)
        t_scan = min(t0, t1, t2)
        try:
            res = find_generic_direction(prob, config.directions, (0.0, t_scan), config.t_samples,
                                         certify=False)
        except NoDirectionFound as exc:
            raise NoAdmissibleTime(str(exc), stage="fold", check="direction") from exc
        v0 = np.asarray(res.v0, dtype=float)
        t0, t1, t2, sC, sV = _time_bounds(rho, hamiltonian(v0), eps, delta, eps_p, m, m_u, Kn,
                                          Un, config)
        t_max = min(t0, t1, t2) * (1 - 1e-9)
        search = {"bad_time_fraction": res.bad_time_fraction,
                  "direction_index": res.direction_index, "t_max": t_max}
        best = None
        for k in range(config.t_grid):
            tk = t_max * 2.0**-k
            cl = _clearance(HamFlow(hamiltonian(v0), tk)(vp), vm) if len(vp) else np.inf
            if best is None or cl > best[1]:
                best = (tk, cl)
        t = best[0]
        search["validation_clearance"] = best[1]
        if not best[1] > 0:
            raise NoAdmissibleTime("no scanned time separates the folded half", stage="fold",
                                   check="displacement", witness={"clearance": best[1]})
    phi = HamFlow(hamiltonian(v0), t)
    plus_branch = Compose((phi, Psi)) if t > 0 else Psi
    band = AgreementBand(((None, delta), (-delta, delta)) + tuple(zip(Kn[0], Kn[1])))
    glue = PiecewiseGlue(HalfSpace(1, 0.0, True), plus_branch, Identity(d), band)
    inner = Compose((Chi, glue, Theta))
    fold_map = inner if c == 1.0 else Rescaled(inner, c)

    params = FoldParameters(eps, delta, eps_p, t, t0, t1, t2, tuple(float(v) for v in v0), c, m,
                            m_u, max(sC, sV))
    if not params.feasible(R_area, Q_area):
        raise CertificationFailed("fold parameters violate their constraints", stage="fold",
                                  check="parameters", witness=params.to_dict())

    pipeline = _Pipeline(c, Theta, Psi, phi if t > 0 else None, delta)
    checks = certify_fold(problem, fold_map, glue, pipeline, clouds["cert"], source, prefix,
                          delta, config)
    report = FoldReport(fold_map, params, checks, problem, notes=notes)
    report.snapshots = _snapshots(c * clouds["cert"], Theta, Psi, phi, Chi, delta)
    report.notes.append(f"search: {search}")
    for name, chk in checks.items():
        if not chk.passed:
            _fail(config, CertificationFailed(f"fold check {name} failed ({chk.value:.3g})",
                                              stage="fold", check=name,
                                              witness=chk.details.get("witness")))
    if problem.clouds is None and len(clouds["cert"]) and report.passed:
        X = clouds["cert"][: config.symplectic_points]
        lip = 1.1 * float(np.max(np.linalg.norm(fold_map.jacobian(X), ord=2, axis=(1, 2))))
        report.image_set = image(problem.A, fold_map, lip, estimated=True)
    return report


def certify_fold(problem, fold_map, glue, pipeline, X, source, prefix, delta, config):
    checks = {}
    scale = max(1.0, float(np.max(problem.U[1] - problem.U[0]))) if problem.dim > 2 else 1.0
    tol = config.clearance_rtol * scale
    if len(X) == 0:
        for name in ("symplecticity", "glue", "containment", "injectivity", "displacement"):
            checks[name] = CheckReport(name, True, 0.0, 0.0, {"points": 0, "vacuous": True})
        return checks
    checks["symplecticity"] = check_symplectic(fold_map, X[: config.symplectic_points],
                                               config.sym_tol)
    rng = np.random.default_rng(problem.seed + 1)
    bc = glue.band.sample(config.glue_points, rng)
    bc[:, 0] = delta * rng.random(len(bc))  # q in [0, delta)
    checks["glue"] = glue_check(glue, bc, config.glue_tol)
    Y = fold_map(X)
    lo, hi = full_box(problem.R, problem.U)
    inside = inside_box(Y, lo, hi, tol)
    det = {"points": int(len(Y)), "fraction": float(inside.mean()), "margin": box_margin(Y, lo, hi)}
    if not inside.all():
        det["witness"] = Y[int(np.flatnonzero(~inside)[0])].tolist()
    checks["containment"] = CheckReport("containment", bool(inside.all()), float(inside.mean()),
                                        1.0, det)
    checks["injectivity"] = check_injective(fold_map, X, config.min_preimage_sep, images=Y)
    # the separation is of order t |v0|, far below the containment tolerance
    checks["displacement"] = refined_clearance(problem.A, source, X, prefix, pipeline,
                                               config.displacement_tol * pipeline.c, config,
                                               problem.seed)
    return checks


def _snapshots(X, Theta, Psi, phi, Chi, delta, limit=3000):
    X = X[:limit]
    if len(X) == 0:
        return {}
    Y = Theta(X)
    plus = Y[:, 1] > 0
    P = Psi(Y[plus]) if plus.any() else Y[plus]
    D = phi(P) if len(P) else P
    Z = np.vstack([Chi(D), Chi(Y[~plus])])
    return {"input": X[:, :2], "theta": Y[:, :2], "plus": plus, "folded": P[:, :2],
            "minus": Y[~plus][:, :2], "displaced": D[:, :2], "final": Z[:, :2], "delta": delta}


# --------------------------------------------------------------------------
# squeeze
# --------------------------------------------------------------------------


@dataclass
class SqueezeConfig:
    fold: FoldConfig = field(default_factory=lambda: FoldConfig(cert_size=20_000,
                                                                raise_on_failure=True))
    area_exponent: float = 0.8     # each fold targets |R| = 2^-area_exponent |Q|
    q_padding: float = 0.05
    target_margin: float = 0.08    # fraction of the shorter target side kept free
    cert_size: int = 10_000
    retries: int = 1
    bbox_samples: int = 50_000

    def to_dict(self):
        d = dict(self.__dict__)
        d["fold"] = self.fold.to_dict()
        return d


@dataclass
class SqueezeReport:
    map: object
    folds: list
    checks: dict
    targets: list
    boxes: list
    folds_per_factor: list
    final_points: np.ndarray = None
    notes: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks.values())

    def to_dict(self):
        return {"kind": "squeeze", "passed": self.passed, "map": self.map.to_dict(),
                "folds": self.folds, "checks": {k: v.to_dict() for k, v in sorted(self.checks.items())},
                "targets": [list(r) for r in self.targets], "boxes": [list(b) for b in self.boxes],
                "folds_per_factor": list(self.folds_per_factor),
                "fold_count_bound": "engineering estimate ceil(log2(|Q|/|R|)/area_exponent)",
                "notes": list(self.notes)}


def _rect_like(target, area):
    """Rectangle with the centre and aspect ratio of ``target`` and the given area."""
    q0, q1, p0, p1 = target
    s = math.sqrt(area / rect_area(target))
    qc, pc, w, h = 0.5 * (q0 + q1), 0.5 * (p0 + p1), s * (q1 - q0), s * (p1 - p0)
    return (qc - w / 2, qc + w / 2, pc - h / 2, pc + h / 2)


def _factor_perm(d, i):
    return FactorPermute(d, 0, i) if i else Identity(d)


def _other(boxes, i):
    lo = np.concatenate([[b[0], b[2]] for j, b in enumerate(boxes) if j != i]) if len(boxes) > 1 else np.zeros(0)
    hi = np.concatenate([[b[1], b[3]] for j, b in enumerate(boxes) if j != i]) if len(boxes) > 1 else np.zeros(0)
    return lo, hi


def _interleave_rest(boxes, i):
    """Coordinates after FactorPermute(0, i): factor i first, then the others in order
    with factor 0 in slot i."""
    order = list(range(len(boxes)))
    order[0], order[i] = order[i], order[0]
    rest = [boxes[j] for j in order[1:]]
    lo = np.concatenate([[b[0], b[2]] for b in rest]) if rest else np.zeros(0)
    hi = np.concatenate([[b[1], b[3]] for b in rest]) if rest else np.zeros(0)
    return lo, hi, order


def squeeze(A, targets, config=None, seed=0):
    """Fold every factor of A in turn until A lies in the product of the targets."""
    config = config or SqueezeConfig()
    d = A.ambient_dim
    n = d // 2
    targets = [tuple(float(v) for v in r) for r in targets]
    if len(targets) != n:
        raise ValueError(f"need {n} target rectangles")
    if any(rect_area(r) <= 0 for r in targets):
        raise ValueError("targets must be nonempty open rectangles")
    s_bbox, s_search, s_val, s_cert, s_final = child_seeds(seed, 5)
    fc = config.fold
    if A.is_empty:
        z = np.zeros((0, d))
        clouds = {"search": z, "validation": z, "cert": z}
        source = A.sample(0, s_cert)
        boxes = list(targets)
    else:
        B = A.sample(config.bbox_samples, s_bbox).points
        source = A.sample(fc.cert_size, s_cert)
        clouds = {"search": A.sample(fc.sample_size, s_search).points,
                  "validation": A.sample(fc.sample_size * fc.validation_factor, s_val).points,
                  "cert": source.points}
        boxes = []
        for i in range(n):
            lo, hi = B[:, 2 * i:2 * i + 2].min(axis=0), B[:, 2 * i:2 * i + 2].max(axis=0)
            span = np.maximum(hi - lo, 1e-3)
            pad = config.q_padding * span + 1e-3
            boxes.append((lo[0] - pad[0], hi[0] + pad[0], lo[1] - pad[1], hi[1] + pad[1]))
    Q_initial = list(boxes)
    margins = [config.target_margin * min(r[1] - r[0], r[3] - r[2]) for r in targets]
    finals = [shrink_rect(r, mg) for r, mg in zip(targets, margins)]
    counts = [max(0, math.ceil(math.log2(rect_area(boxes[i]) / rect_area(finals[i]))
                               / config.area_exponent)) if not A.is_empty else 0
              for i in range(n)]
    total = sum(counts)
    # every fold may push the other factors by at most u_j
    u = [mg / (2 * total + 2) for mg in margins]

    maps, fold_summaries, snaps = [], [], []
    cur = {k: v.copy() for k, v in clouds.items()}
    for i in range(n):
        k_i = counts[i]
        if k_i == 0:
            continue
        perm = _factor_perm(d, i)
        for j in range(1, k_i + 1):
            Qi = boxes[i]
            area = rect_area(Q_initial[i]) * (rect_area(finals[i]) / rect_area(Q_initial[i])) ** (j / k_i)
            Ri = finals[i] if j == k_i else _rect_like(finals[i], area)
            Klo, Khi, order = _interleave_rest(boxes, i)
            ulist = [u[o] for o in order[1:]]
            du = np.repeat(ulist, 2) if ulist else np.zeros(0)
            Ulo, Uhi = Klo - du, Khi + du
            pc = {k: perm(v) if len(v) else v for k, v in cur.items()}
            prefix = Compose((perm,) + tuple(reversed(maps)))
            for attempt in range(config.retries + 1):
                try:
                    prob = FoldProblem(A, Qi, Ri, (Klo, Khi), (Ulo, Uhi), seed + 7919 * attempt,
                                       clouds=pc, source=source, prefix=prefix)
                    rep = fold_once(prob, fc)
                    break
                except CertificationFailed as exc:
                    if attempt < config.retries and not A.is_empty:
                        # fresh search clouds for the next attempt
                        rs = child_seeds(seed + 7919 * (attempt + 1), 2)
                        pc = dict(pc, search=prefix(A.sample(fc.sample_size, rs[0]).points),
                                  validation=prefix(A.sample(fc.sample_size * fc.validation_factor,
                                                             rs[1]).points))
                        continue
                    exc.stage = f"factor {i + 1} fold {j}: {exc.stage}"
                    raise
            step = Compose((perm, rep.map, perm)) if i else rep.map
            maps.append(step)
            cur = {k: step(v) if len(v) else v for k, v in cur.items()}
            fold_summaries.append({"factor": i + 1, "iteration": j, "Q": list(Qi), "R": list(Ri),
                                   "passed": rep.passed,
                                   "parameters": rep.parameters.to_dict(),
                                   "checks": {k: v.to_dict() for k, v in sorted(rep.checks.items())}})
            snaps.append({"factor": i + 1, "iteration": j, **rep.snapshots})
            # the folded factor now lies in Ri; every other factor may have moved by u
            new = list(boxes)
            new[i] = Ri
            for o in range(n):
                if o != i:
                    b = boxes[o]
                    new[o] = (b[0] - u[o], b[1] + u[o], b[2] - u[o], b[3] + u[o])
            boxes = new
    full = Compose(tuple(reversed(maps))) if maps else Identity(d)
    checks = certify_squeeze(A, full, targets, config, s_final)
    rep = SqueezeReport(full, fold_summaries, checks, targets, Q_initial, counts, notes=[
        "fold counts use an engineering bound, not a bound proved for the construction"])
    rep.snapshots = snaps
    if not rep.passed and config.fold.raise_on_failure:
        bad = [k for k, v in checks.items() if not v.passed]
        raise CertificationFailed(f"squeeze certification failed: {bad}", stage="squeeze final",
                                  check=bad[0])
    return rep


def certify_squeeze(A, full, targets, config, seed):
    lo = np.concatenate([[r[0], r[2]] for r in targets])
    hi = np.concatenate([[r[1], r[3]] for r in targets])
    checks = {}
    if A.is_empty:
        for name in ("symplecticity", "containment", "injectivity"):
            checks[name] = CheckReport(name, True, 0.0, 0.0, {"points": 0, "vacuous": True})
        return checks
    X = A.sample(config.cert_size, seed).points
    Y = full(X)
    inside = inside_box(Y, lo, hi, config.fold.clearance_rtol)
    det = {"points": int(len(Y)), "fraction": float(inside.mean()), "margin": box_margin(Y, lo, hi)}
    checks["containment"] = CheckReport("containment", bool(inside.all()), float(inside.mean()),
                                        1.0, det)
    checks["injectivity"] = check_injective(full, X, config.fold.min_preimage_sep, images=Y)
    checks["symplecticity"] = check_symplectic(full, X[: config.fold.symplectic_points],
                                               config.fold.sym_tol)
    return checks
