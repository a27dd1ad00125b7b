"""Displacing sample clouds by generic linear Hamiltonian translations.

A + t v0 misses B exactly when t v0 is not a difference y - x with x in A
and y in B.  For an m-rectifiable A and an (l - m)-negligible B the set of
such differences is negligible in R^l, so almost every ray t v0 avoids it.
At sample scale this becomes: build the cloud of differences, scan rays
through a KD-tree and keep the times whose distance clears a tolerance.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import norm, qmc

from .cutoff import CutoffProfile
from .errors import CertificationFailed, NoDirectionFound, PairBudgetExceeded
from .sets import RectifiableSet, SampleCloud, child_seeds
from .sympmap import LinearHamiltonian
from ._env import workers

PAIR_BUDGET = 2_000_000
CLEARANCE_RTOL = 1e-6


def _pts(c):
    return np.atleast_2d(np.asarray(getattr(c, "points", c), dtype=float))


def displacement_image(a_cloud, b_cloud, pair_budget=PAIR_BUDGET, subsample=True, seed=0):
    """All differences y - x (x from a, y from b), provenance = (i, j).

    Beyond ``pair_budget`` pairs a uniform subsample is taken, or
    :class:`PairBudgetExceeded` is raised when ``subsample`` is off.
    """
    A, B = _pts(a_cloud), _pts(b_cloud)
    if A.shape[1] != B.shape[1]:
        raise ValueError("clouds live in different dimensions")
    na, nb = len(A), len(B)
    total = na * nb
    if total > pair_budget:
        if not subsample:
            raise PairBudgetExceeded(f"{total} pairs exceed the budget of {pair_budget}")
        flat = np.sort(np.random.default_rng(seed).choice(total, pair_budget, replace=False))
        i, j = flat // nb, flat % nb
    else:
        i, j = np.repeat(np.arange(na), nb), np.tile(np.arange(nb), na)
    return SampleCloud(B[j] - A[i], i, j[:, None].astype(float), seed)


@dataclass
class DisplacementProblem:
    """Sets (or raw clouds) A, B in R^l and their sample sizes.

    Clouds are drawn with child seeds 0 and 1 of ``seed``; certification
    clouds (10x larger) use child seeds 2 and 3.
    """

    A: RectifiableSet = None
    B: RectifiableSet = None
    sample_a: int = 500
    sample_b: int = 500
    seed: int = 0
    a_points: np.ndarray = None
    b_points: np.ndarray = None
    witness: object = None

    def __post_init__(self):
        if self.A is not None and self.B is not None and self.A.ambient_dim != self.B.ambient_dim:
            raise ValueError("A and B must share the ambient dimension")
        if self.A is not None and self.A.rect_order > self.A.ambient_dim:
            raise ValueError("rectifiability order exceeds ambient dimension")
        seeds = child_seeds(self.seed, 4)
        if self.a_points is None:
            self.a_points = self._draw(self.A, self.sample_a, seeds[0])
        if self.b_points is None:
            self.b_points = self._draw(self.B, self.sample_b, seeds[1])
        self.a_points, self.b_points = _pts(self.a_points), _pts(self.b_points)

    @classmethod
    def from_clouds(cls, a, b, seed=0):
        return cls(a_points=_pts(a), b_points=_pts(b), seed=seed)

    @staticmethod
    def _draw(s, n, seed):
        if s is None:
            raise ValueError("need either a set or a cloud for each side")
        if s.is_empty:
            return np.zeros((0, s.ambient_dim))
        return s.sample(n, seed).points

    @property
    def dim(self):
        return self.a_points.shape[1]

    def diameter(self):
        X = np.vstack([self.a_points, self.b_points])
        if len(X) == 0:
            return 0.0
        return float(np.linalg.norm(X.max(axis=0) - X.min(axis=0)))

    def clearance_tol(self):
        return CLEARANCE_RTOL * max(self.diameter(), 1e-300)

    def certification_clouds(self, factor=10):
        if self.A is None or self.B is None:
            return self.a_points, self.b_points
        seeds = child_seeds(self.seed, 4)
        return (self._draw(self.A, factor * self.sample_a, seeds[2]),
                self._draw(self.B, factor * self.sample_b, seeds[3]))


@dataclass
class DisplacementResult:
    v0: np.ndarray
    admissible_times: list = field(default_factory=list)
    clearances: list = field(default_factory=list)
    bad_time_fraction: float = 0.0
    clearance: float = np.inf
    clearance_tol: float = 0.0
    direction_index: int = 0
    sign: int = 1
    scanned: dict = field(default_factory=dict)

    @property
    def hamiltonian(self):
        return LinearHamiltonian(tuple(self.v0))

    def to_dict(self):
        return {"v0": [float(v) for v in self.v0],
                "admissible_times": [float(t) for t in self.admissible_times],
                "clearances": [float(c) for c in self.clearances],
                "bad_time_fraction": float(self.bad_time_fraction),
                "clearance": None if not np.isfinite(self.clearance) else float(self.clearance),
                "clearance_tol": float(self.clearance_tol),
                "direction_index": int(self.direction_index), "sign": int(self.sign),
                "scanned": self.scanned}


def sphere_directions(dim, count):
    """Deterministic, evenly spread unit vectors (one per antipodal pair in 2D)."""
    if count < 1:
        raise ValueError("need at least one direction")
    if dim == 1:
        return np.ones((1, 1))
    if dim == 2:
        ang = np.pi * (np.arange(count) + 0.5) / count
        return np.column_stack([np.cos(ang), np.sin(ang)])
    U = qmc.Halton(d=dim, scramble=False).random(count + 1)[1:]
    G = norm.ppf(np.clip(U, 1e-12, 1 - 1e-12))
    return G / np.linalg.norm(G, axis=1, keepdims=True)


def _min_dist(a, b, v, ts, tree=None):
    """min_{x, y} |x + t v - y| for each t."""
    tree = cKDTree(b) if tree is None else tree
    out = np.empty(len(ts))
    for k, t in enumerate(ts):
        out[k] = tree.query(a + t * v, workers=workers())[0].min()
    return out


def find_generic_direction(problem, directions=64, t_range=(0.0, 1.0), t_samples=1000,
                           clearance_tol=None, pair_budget=PAIR_BUDGET, certify=True):
    """Scan directions for a ray t v0 that avoids the difference cloud.

    Both v and -v are scanned for every direction; the least bad-time
    fraction wins, then the larger median clearance over 16 probe times,
    then the lower index.  Accepted times are
    certified by exact nearest-neighbour distances between A + t v0 and B.
    """
    if directions < 1 or t_samples < 1:
        raise ValueError("directions and t_samples must be >= 1")
    t_lo, t_hi = map(float, t_range)
    if not t_hi > t_lo >= 0:
        raise ValueError("t_range must be (t_lo, t_hi] with 0 <= t_lo < t_hi")
    ts = t_lo + (t_hi - t_lo) * np.arange(1, t_samples + 1) / t_samples
    tol = problem.clearance_tol() if clearance_tol is None else float(clearance_tol)
    a, b = problem.a_points, problem.b_points
    V = sphere_directions(problem.dim, directions)
    if len(a) == 0 or len(b) == 0:
        return DisplacementResult(V[0], list(ts), [np.inf] * len(ts), 0.0, np.inf, tol, 0, 1,
                                  {"directions": directions, "t_samples": t_samples,
                                   "vacuous": True})
    D = displacement_image(a, b, pair_budget, seed=problem.seed).points
    tree = cKDTree(D)
    btree = cKDTree(b)
    probe = ts[np.linspace(0, len(ts) - 1, min(16, len(ts))).astype(int)]
    best = None
    fractions = []
    for k, v in enumerate(V):
        for sgn in (1, -1):
            # only "within tol or not" matters, which keeps far queries cheap
            dist = tree.query(ts[:, None] * (sgn * v), distance_upper_bound=tol,
                              workers=workers())[0]
            frac = float(np.mean(dist <= tol))
            fractions.append(frac)
            if best is not None and frac > best[0]:
                continue
            # ties on the fraction go to the larger typical clearance
            score = float(np.median(_min_dist(a, b, sgn * v, probe, btree)))
            if best is None or (frac, -score) < (best[0], -best[1]):
                best = (frac, score, k, sgn, dist)
    frac, score, k, sgn, dist = best
    if frac >= 1.0:
        raise NoDirectionFound(f"all {directions} directions are blocked at every scanned time")
    v0 = sgn * V[k]
    good = ts[dist > tol]
    if certify:
        exact = _min_dist(a, b, v0, good, cKDTree(b))
        keep = exact > tol
        good, exact = good[keep], exact[keep]
    else:
        exact = np.full(len(good), np.inf)
    return DisplacementResult(
        v0, [float(t) for t in good], [float(c) for c in exact], frac,
        float(exact.min()) if len(exact) else np.inf, tol, k, sgn,
        {"directions": directions, "t_samples": t_samples, "t_range": [t_lo, t_hi],
         "pairs": int(len(D)), "median_probe_clearance": score, "fractions_min": float(min(fractions)),
         "fractions_max": float(max(fractions))})


def translation_flow(h, t, x):
    """Time-t flow of H = omega(v0, .): x + t v0."""
    x = np.asarray(x, dtype=float)
    return x + t * np.asarray(h.v0, dtype=float)


@dataclass
class Certificate:
    passed: bool
    t: float
    distance: float
    tol: float
    points: tuple
    resolution: float = 0.0
    witness: list = None

    def to_dict(self):
        return {"passed": bool(self.passed), "t": float(self.t),
                "distance": None if not np.isfinite(self.distance) else float(self.distance),
                "tol": float(self.tol), "resolution": float(self.resolution),
                "points": list(self.points), "witness": self.witness}


def sample_spacing(X, quantile=0.99):
    """High quantile of nearest-neighbour distances inside a cloud."""
    X = _pts(X)
    if len(X) < 2:
        return 0.0
    U, inv, mult = np.unique(X, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    if len(U) < 2:
        return 0.0
    du = cKDTree(U).query(U, k=2, workers=workers())[0][:, 1]
    # repeated points sit at distance zero from a copy
    d = np.where(mult[inv] > 1, 0.0, du[inv])
    return float(np.quantile(d, quantile))


def displace_certify(problem, result, t, factor=10, tol=None, raise_on_fail=True):
    """Recheck A + t v0 against B on clouds ``factor`` times larger.

    PASS needs the distance to exceed both ``tol`` and the sample spacing of
    the B cloud: two sampled curves that cross transversally stay about one
    spacing apart, so a smaller clearance is no evidence of disjointness.
    """
    tol = result.clearance_tol if tol is None else tol
    if tol <= 0:
        tol = problem.clearance_tol()
    a, b = problem.certification_clouds(factor)
    if len(a) == 0 or len(b) == 0:
        return Certificate(True, t, np.inf, tol, (len(a), len(b)))
    shifted = a + t * np.asarray(result.v0)
    dist, j = cKDTree(b).query(shifted, workers=workers())
    i = int(np.argmin(dist))
    d = float(dist[i])
    res = sample_spacing(b)
    cert = Certificate(d > max(tol, res), t, d, tol, (len(a), len(b)), res)
    if not cert.passed:
        cert.witness = [a[i].tolist(), b[j[i]].tolist()]
        if raise_on_fail:
            raise CertificationFailed(f"A + t v0 meets B at t={t:g} (distance {d:.3g})",
                                      stage="displacement", check="clearance",
                                      witness=cert.witness)
    return cert


@dataclass(frozen=True)
class HoferBound:
    value: float
    spacing: tuple
    spread: float

    def __float__(self):
        return self.value


def hofer_norm_bound(h, cutoff, t, support_box, grid=None, index=0):
    """t * (max - min) of rho(x[index]) H(x) over a grid on ``support_box``.

    For a time-independent Hamiltonian the Hofer norm is exactly the
    oscillation, so on a grid containing the box corners this is an upper
    estimate up to the grid spacing, and it is exactly linear in t.
    """
    lo, hi = (np.asarray(v, dtype=float) for v in support_box)
    dim = len(lo)
    if grid is None:
        grid = max(2, int(1e6 ** (1.0 / dim)))
    axes = [np.linspace(lo[i], hi[i], grid) for i in range(dim)]
    G = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    rho = cutoff if cutoff is not None else CutoffProfile("constant")
    vals = rho(G[:, index]) * h.value(G)
    spread = float(vals.max() - vals.min())
    return HoferBound(t * spread, tuple(float(s) for s in (hi - lo) / (grid - 1)), spread)
