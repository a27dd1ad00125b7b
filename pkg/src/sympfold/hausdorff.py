"""Hausdorff-content upper bounds, box dimension and negligibility heuristics.

Coverings are grids in parameter space pushed through the charts: a cell
whose diagonal is at most ``scale / L`` has an image of diameter at most
``scale`` when ``L`` bounds the chart's Lipschitz constant.  Cantor-masked
axes are covered by the dust's own level cells, so only cells meeting the
set are counted.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptySet, InsufficientScales, ScaleTooSmall
from .sets import product
from ._env import workers

CELL_BUDGET = 4_000_000
DECAY_FACTOR = 0.2


@dataclass(frozen=True)
class ProductMetricSpec:
    """p-product metric d((x, y), (x', y')) = (|x - x'|^p + |y - y'|^p)^(1/p)."""

    p: float = 2.0
    dims: tuple = ()

    def __post_init__(self):
        if not self.p >= 1:
            raise ValueError("product metric needs p >= 1")

    def distance(self, X, Y):
        X, Y = np.atleast_2d(X), np.atleast_2d(Y)
        k = self.dims[0]
        da = np.linalg.norm(X[:, :k] - Y[:, :k], axis=1)
        db = np.linalg.norm(X[:, k:] - Y[:, k:], axis=1)
        return (da**self.p + db**self.p) ** (1 / self.p)


def _power(d, s):
    d = np.asarray(d, dtype=float)
    if s == 0:
        return np.ones_like(d)  # 0^0 = 1
    return d**s


@dataclass
class Covering:
    """Finite family of balls (center, diameter) covering a set.

    Product coverings keep their factor coverings instead of the full list of
    pieces; each product piece is a pair (i, j) with diameter
    (d_i^p + d_j^p)^(1/p).
    """

    scale: float
    s: float
    centers: np.ndarray
    diameters: np.ndarray
    factors: tuple = None
    p: float = 2.0

    @property
    def count(self):
        if self.factors is not None:
            return self.factors[0].count * self.factors[1].count
        return len(self.diameters)

    @property
    def weight(self):
        if self.factors is not None:
            a, b = self.factors
            da, ca = np.unique(_factor_diams(a), return_counts=True)
            db, cb = np.unique(_factor_diams(b), return_counts=True)
            D = (da[:, None] ** self.p + db[None, :] ** self.p) ** (1 / self.p)
            return float(np.sum(np.outer(ca, cb) * _power(D, self.s)))
        return float(np.sum(_power(self.diameters, self.s)))

    def weight_at(self, s):
        return Covering(self.scale, s, self.centers, self.diameters, self.factors, self.p).weight

    @property
    def max_diameter(self):
        if self.factors is not None:
            a, b = self.factors
            if a.count == 0 or b.count == 0:
                return 0.0
            return float((_factor_diams(a).max() ** self.p + _factor_diams(b).max() ** self.p)
                         ** (1 / self.p))
        return float(self.diameters.max()) if len(self.diameters) else 0.0

    def contains(self, points, rtol=1e-9):
        """Boolean mask: point lies in some piece (closed ball of radius d/2)."""
        X = np.atleast_2d(np.asarray(points, dtype=float))
        if self.factors is not None:
            a, b = self.factors
            k = a.centers.shape[1] if len(a.centers) else X.shape[1] - b.centers.shape[1]
            return a.contains(X[:, :k], rtol) & b.contains(X[:, k:], rtol)
        ok = np.zeros(len(X), dtype=bool)
        if len(self.diameters) == 0:
            return ok
        for d in np.unique(self.diameters):
            sel = self.diameters == d
            dist, _ = cKDTree(self.centers[sel]).query(X[~ok], workers=workers())
            hit = dist <= 0.5 * d * (1 + rtol) + 1e-12
            idx = np.flatnonzero(~ok)
            ok[idx[hit]] = True
        return ok

    def to_dict(self):
        return {"scale": self.scale, "s": self.s, "count": int(self.count), "weight": self.weight,
                "max_diameter": self.max_diameter}


def _factor_diams(c):
    return c.diameters if c.factors is None else np.array(
        [(da**c.p + db**c.p) ** (1 / c.p) for da in _factor_diams(c.factors[0])
         for db in _factor_diams(c.factors[1])])


def _axis_cells(side, h, cantor):
    """Normalized (starts, widths) of 1D cells of physical width <= h."""
    if side == 0:
        return np.zeros(1), np.zeros(1)
    if cantor is None:
        k = max(1, int(np.ceil(side / h - 1e-12)))
        return np.arange(k) / k, np.full(k, 1.0 / k)
    r, depth = cantor.ratio, cantor.depth
    level = max(0, int(np.ceil(np.log(side / h) / np.log(1 / r) - 1e-12)))
    if level <= depth:
        starts, w = cantor.level_cells(level)
        return starts[:, 0] if starts.ndim == 2 else starts, np.full(len(starts), w)
    starts, w = cantor.level_cells(depth)
    starts = starts[:, 0] if starts.ndim == 2 else starts
    k = max(1, int(np.ceil(side * w / h - 1e-12)))
    sub = (starts[:, None] + w * np.arange(k) / k).ravel()
    return sub, np.full(len(sub), w / k)


def _cantor_axis_masks(chart):
    out = [None] * chart.param_dim
    for m in chart.cantor_masks:
        for a in range(m.axes):
            single = type(m)(m.ratio, m.depth, 1, 0)
            out[m.offset + a] = single
    return out


def _cover_chart(chart, scale, budget):
    m, L = chart.param_dim, chart.lip_const
    if m == 0 or L == 0:
        y = np.zeros((1, m))
        lo = np.asarray(chart.lo)
        hi = np.asarray(chart.hi)
        return chart.evaluate(0.5 * (lo + hi) if m else y), np.array([L * chart.diameter])
    h = scale / (L * np.sqrt(m))
    lo, hi = np.asarray(chart.lo), np.asarray(chart.hi)
    axes = [_axis_cells(hi[i] - lo[i], h, c) for i, c in enumerate(_cantor_axis_masks(chart))]
    total = int(np.prod([len(a[0]) for a in axes], dtype=float))
    if total > budget:
        raise ScaleTooSmall(f"scale {scale:g} needs {total} cells (budget {budget})")
    S = np.meshgrid(*[a[0] for a in axes], indexing="ij")
    W = np.meshgrid(*[a[1] for a in axes], indexing="ij")
    S = np.column_stack([g.ravel() for g in S])
    W = np.column_stack([g.ravel() for g in W])
    span = hi - lo
    centers = chart.evaluate(lo + span * (S + 0.5 * W))
    diams = L * np.linalg.norm(span * W, axis=1)
    return centers, diams


def cover_upper_bound(s_set, s, scale, seed=0, metric=None, budget=CELL_BUDGET):
    """Grid covering with piece diameters <= scale; weight bounds the s-content.

    ``metric`` (a :class:`ProductMetricSpec`) switches product sets with
    recorded factors to the p-product metric: each factor is covered at
    scale / 2^(1/p) so product pieces have p-diameter <= scale.
    """
    if not scale > 0:
        raise ValueError("scale must be positive")
    if s < 0:
        raise ValueError("exponent must be nonnegative")
    if metric is not None and s_set.factors is not None:
        sig = scale / 2 ** (1 / metric.p)
        a, b = s_set.factors
        ca = cover_upper_bound(a, s, sig, seed, None, budget)
        cb = cover_upper_bound(b, s, sig, seed, None, budget)
        return Covering(scale, s, np.zeros((0, s_set.ambient_dim)), np.zeros(0), (ca, cb), metric.p)
    centers, diams = [np.zeros((0, s_set.ambient_dim))], [np.zeros(0)]
    used = 0
    for chart in s_set.charts:
        c, d = _cover_chart(chart, scale, budget - used)
        used += len(d)
        centers.append(c)
        diams.append(d)
    return Covering(scale, s, np.vstack(centers), np.concatenate(diams))


# --------------------------------------------------------------------------
# box dimension
# --------------------------------------------------------------------------


@dataclass
class DimensionEstimate:
    label: str
    scales: list
    counts: list
    slope: float
    ci: float
    intercept: float = 0.0
    samples: int = 0

    def to_dict(self):
        return {"label": self.label, "scales": [float(x) for x in self.scales],
                "counts": [int(c) for c in self.counts], "slope": float(self.slope),
                "ci": float(self.ci), "intercept": float(self.intercept), "samples": self.samples}

    def to_csv(self):
        return scale_table_csv(self.scales, self.counts)


def occupied_cells(points, h):
    """Number of grid cells of side h (anchored at 0) meeting the cloud."""
    X = np.atleast_2d(points)
    if len(X) == 0:
        return 0
    return int(len(np.unique(np.floor(X / h).astype(np.int64), axis=0)))


def default_scales(s_set, n=8, decades=2.0, seed=0):
    lo, hi = s_set.bounding_box(seed=seed)
    diam = max(float(np.linalg.norm(hi - lo)), 1e-12)
    return list(diam / 4 * np.logspace(0, -decades, n))


def box_dimension(s_set, scales=None, seed=0, samples=100_000):
    """Least-squares slope of log N(h) against log(1/h) on a sampled cloud."""
    if s_set.is_empty:
        raise EmptySet("box dimension of an empty set")
    if scales is None:
        scales = default_scales(s_set, seed=seed)
    scales = sorted((float(h) for h in scales), reverse=True)
    if len(scales) < 3 or np.log10(scales[0] / scales[-1]) < 1.5 - 1e-9:
        raise InsufficientScales("need >= 3 scales spanning >= 1.5 decades")
    X = s_set.sample(samples, seed).points
    counts = [occupied_cells(X, h) for h in scales]
    x = np.log(1 / np.asarray(scales))
    y = np.log(np.asarray(counts, dtype=float))
    A = np.column_stack([x, np.ones_like(x)])
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    return DimensionEstimate(s_set.label, scales, counts, float(coef[0]), resid, float(coef[1]),
                             samples)


# --------------------------------------------------------------------------
# negligibility heuristics
# --------------------------------------------------------------------------

CONSISTENT = "NEGLIGIBLE-CONSISTENT"
INCONSISTENT = "NOT-CONSISTENT"


@dataclass
class NegligibilityReport:
    s: float
    scales: list
    weights: list
    counts: list
    verdict: str
    factor: float = DECAY_FACTOR
    heuristic: bool = True
    extra: dict = field(default_factory=dict)

    @property
    def consistent(self):
        return self.verdict == CONSISTENT

    def to_dict(self):
        d = {"s": self.s, "scales": [float(x) for x in self.scales],
             "weights": [float(w) for w in self.weights], "counts": [int(c) for c in self.counts],
             "verdict": self.verdict, "decay_factor": self.factor, "heuristic": self.heuristic}
        d.update(self.extra)
        return d

    def to_csv(self):
        return scale_table_csv(self.scales, self.counts, self.weights)


def _verdict(weights, factor):
    w = np.asarray(weights, dtype=float)
    monotone = bool(np.all(np.diff(w) <= 1e-9 * np.maximum(w[:-1], 1e-300)))
    return CONSISTENT if monotone and w[-1] <= factor * w[0] else INCONSISTENT


def negligibility_decay_test(s_set, s, scales, seed=0, factor=DECAY_FACTOR, metric=None):
    """Covering weights across decreasing scales and a decay verdict.

    The verdict is a finite-scale heuristic: NEGLIGIBLE-CONSISTENT when the
    weights never increase and the last is at most ``factor`` times the first.
    """
    scales = [float(h) for h in scales]
    if any(b >= a for a, b in zip(scales, scales[1:])):
        raise ValueError("scales must be strictly decreasing")
    covers = [cover_upper_bound(s_set, s, h, seed, metric) for h in scales]
    weights = [c.weight for c in covers]
    counts = [c.count for c in covers]
    return NegligibilityReport(s, scales, weights, counts, _verdict(weights, factor), factor)


def product_negligibility_test(a, b, p=2.0, scales=None, seed=0, m_prime=None,
                               factor=DECAY_FACTOR):
    """Decay test of a x b at exponent m + m' in the p-product metric.

    ``b`` is expected to be m'-negligible (default m' = b.rect_order); its
    own decay test is run first and recorded, not enforced, so that
    counterexamples can still be examined.
    """
    if scales is None:
        scales = [3.0**-k for k in range(2, 8)]
    m_prime = b.rect_order if m_prime is None else m_prime
    pre = negligibility_decay_test(b, m_prime, scales, seed, factor)
    prod = product(a, b)
    metric = ProductMetricSpec(p, (a.ambient_dim, b.ambient_dim))
    rep = negligibility_decay_test(prod, a.rect_order + m_prime, scales, seed, factor, metric)
    rep.extra = {"p": p, "m": a.rect_order, "m_prime": m_prime,
                 "witness_verdict": pre.verdict, "witness_weights": pre.weights}
    return rep


# --------------------------------------------------------------------------
# Lebesgue measure
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MonteCarloEstimate:
    value: float
    stderr: float
    samples: int

    def __float__(self):
        return self.value

    def to_dict(self):
        return {"value": self.value, "stderr": self.stderr, "samples": self.samples}


def lebesgue_estimate(box, indicator, samples, seed=0, chunk=250_000):
    """Monte Carlo volume of {x in box : indicator(x)} with its standard error."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    lo, hi = (np.asarray(v, dtype=float) for v in box)
    vol = float(np.prod(hi - lo))
    rng = np.random.default_rng(seed)
    hits, done = 0, 0
    while done < samples:
        k = min(chunk, samples - done)
        X = lo + (hi - lo) * rng.random((k, len(lo)))
        hits += int(np.count_nonzero(indicator(X)))
        done += k
    frac = hits / samples
    return MonteCarloEstimate(vol * frac, vol * float(np.sqrt(frac * (1 - frac) / samples)), samples)


def scale_table_csv(scales, counts, weights=None):
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["scale", "count"] + (["weight"] if weights is not None else []))
    for i, (h, c) in enumerate(zip(scales, counts)):
        w.writerow([repr(float(h)), int(c)] + ([repr(float(weights[i]))] if weights is not None else []))
    return buf.getvalue()
