"""Rectifiable sets as finite unions of Lipschitz charts.

A chart is a Lipschitz map from an axis-aligned parameter box in R^m (cut
down by optional masks) into R^l.  A :class:`RectifiableSet` is the union of
its chart images.  Masks are either parameter predicates (finite-depth Cantor
dusts) or predicates on the image point (half-spaces), and the sampler
respects both.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import BadDimension, DomainViolation, EmptySet, MaskRejectionExhausted, SerializationError
from .sympmap import MapExpr

REJECTION_BUDGET = 200  # candidate draws per requested point
SPLIT_PROBE = 4096


# --------------------------------------------------------------------------
# chart maps
# --------------------------------------------------------------------------

_CHART_MAPS = {}


def _batch_params(Y, m):
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 2 and Y.shape[1] == m:
        return Y
    if m == 0:
        return np.zeros((max(len(Y), 1) if Y.ndim else 1, 0))
    return Y.reshape(-1, m)


def _register(cls):
    _CHART_MAPS[cls.kind] = cls
    return cls


class ChartMap:
    kind = "abstract"
    param_dim: int
    ambient_dim: int

    def __call__(self, Y):
        raise NotImplementedError

    def lipschitz(self):
        raise NotImplementedError

    @staticmethod
    def from_dict(d):
        try:
            return _CHART_MAPS[d["kind"]]._from_dict(d)
        except KeyError as exc:
            raise SerializationError(f"unknown chart map {d.get('kind')!r}") from exc


@_register
@dataclass(frozen=True)
class AffineChartMap(ChartMap):
    """y -> origin + matrix @ y."""

    origin: tuple
    matrix: tuple
    kind = "affine"

    def __post_init__(self):
        o = tuple(float(v) for v in self.origin)
        M = np.array(self.matrix, dtype=float).reshape(len(o), -1)
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "matrix", tuple(map(tuple, M)))

    @property
    def ambient_dim(self):
        return len(self.origin)

    @property
    def param_dim(self):
        return len(self.matrix[0]) if self.matrix else 0

    def __call__(self, Y):
        Y = _batch_params(Y, self.param_dim)
        M = np.asarray(self.matrix).reshape(self.ambient_dim, self.param_dim)
        return np.asarray(self.origin) + Y @ M.T

    def lipschitz(self):
        if self.param_dim == 0:
            return 0.0
        return float(np.linalg.norm(np.asarray(self.matrix), 2))

    def to_dict(self):
        return {"kind": self.kind, "origin": list(self.origin),
                "matrix": [list(r) for r in self.matrix]}

    @classmethod
    def _from_dict(cls, d):
        return cls(tuple(d["origin"]), tuple(map(tuple, d["matrix"])))


@_register
@dataclass(frozen=True)
class PolylineMap(ChartMap):
    """Arclength-proportional parametrization of a polyline by t in [0, 1]."""

    vertices: tuple
    kind = "polyline"
    param_dim = 1

    def __post_init__(self):
        V = np.array(self.vertices, dtype=float)
        if V.ndim != 2 or len(V) < 2:
            raise ValueError("polyline needs at least two vertices")
        object.__setattr__(self, "vertices", tuple(map(tuple, V)))

    @property
    def ambient_dim(self):
        return len(self.vertices[0])

    def _cum(self):
        V = np.asarray(self.vertices)
        seg = np.linalg.norm(np.diff(V, axis=0), axis=1)
        return V, np.concatenate([[0.0], np.cumsum(seg)])

    def __call__(self, Y):
        V, cum = self._cum()
        s = np.asarray(Y, dtype=float).reshape(-1) * cum[-1]
        k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(V) - 2)
        seg = cum[k + 1] - cum[k]
        w = np.where(seg > 0, (s - cum[k]) / np.where(seg > 0, seg, 1.0), 0.0)
        return V[k] + w[:, None] * (V[k + 1] - V[k])

    def lipschitz(self):
        return float(self._cum()[1][-1])

    def to_dict(self):
        return {"kind": self.kind, "vertices": [list(v) for v in self.vertices]}

    @classmethod
    def _from_dict(cls, d):
        return cls(tuple(map(tuple, d["vertices"])))


@_register
@dataclass(frozen=True)
class FourierCurveMap(ChartMap):
    """t -> mean + sum_k cos_k cos(2 pi k t) + sin_k sin(2 pi k t), t in [0, 1].

    ``cos`` and ``sin`` have shape (harmonics, ambient_dim); harmonic k is
    row k - 1.
    """

    mean: tuple
    cos: tuple = ()
    sin: tuple = ()
    kind = "fourier_curve"
    param_dim = 1

    def __post_init__(self):
        mean = tuple(float(v) for v in self.mean)
        object.__setattr__(self, "mean", mean)
        for name in ("cos", "sin"):
            A = np.array(getattr(self, name), dtype=float).reshape(-1, len(mean))
            object.__setattr__(self, name, tuple(map(tuple, A)))

    @property
    def ambient_dim(self):
        return len(self.mean)

    def _coef(self):
        k = max(len(self.cos), len(self.sin))
        C = np.zeros((k, self.ambient_dim))
        S = np.zeros((k, self.ambient_dim))
        if self.cos:
            C[: len(self.cos)] = self.cos
        if self.sin:
            S[: len(self.sin)] = self.sin
        return C, S

    def __call__(self, Y):
        t = np.asarray(Y, dtype=float).reshape(-1, 1)
        C, S = self._coef()
        k = 2 * np.pi * np.arange(1, len(C) + 1)
        return np.asarray(self.mean) + np.cos(t * k) @ C + np.sin(t * k) @ S

    def lipschitz(self):
        C, S = self._coef()
        k = 2 * np.pi * np.arange(1, len(C) + 1)[:, None]
        # |x'(t)| <= || sum_k k (|C_k| + |S_k|) || componentwise bound
        return float(np.linalg.norm(np.sum(k * (np.abs(C) + np.abs(S)), axis=0)))

    def to_dict(self):
        return {"kind": self.kind, "mean": list(self.mean), "cos": [list(r) for r in self.cos],
                "sin": [list(r) for r in self.sin]}

    @classmethod
    def _from_dict(cls, d):
        return cls(tuple(d["mean"]), tuple(map(tuple, d.get("cos", ()))),
                   tuple(map(tuple, d.get("sin", ()))))


@_register
@dataclass(frozen=True)
class CircleMap(ChartMap):
    center: tuple
    radius: float
    kind = "circle"
    param_dim = 1
    ambient_dim = 2

    def __call__(self, Y):
        t = 2 * np.pi * np.asarray(Y, dtype=float).reshape(-1)
        return np.asarray(self.center, dtype=float) + self.radius * np.column_stack([np.cos(t), np.sin(t)])

    def lipschitz(self):
        return float(2 * np.pi * self.radius)

    def to_dict(self):
        return {"kind": self.kind, "center": list(self.center), "radius": self.radius}

    @classmethod
    def _from_dict(cls, d):
        return cls(tuple(d["center"]), float(d["radius"]))


@_register
@dataclass(frozen=True)
class SineGraphMap(ChartMap):
    """Graph u -> (u, offset + amplitude sin(2 pi frequency u + phase))."""

    amplitude: float = 1.0
    frequency: float = 1.0
    phase: float = 0.0
    offset: float = 0.0
    kind = "sine_graph"
    param_dim = 1
    ambient_dim = 2

    def __call__(self, Y):
        u = np.asarray(Y, dtype=float).reshape(-1)
        y = self.offset + self.amplitude * np.sin(2 * np.pi * self.frequency * u + self.phase)
        return np.column_stack([u, y])

    def lipschitz(self):
        return float(np.hypot(1.0, 2 * np.pi * self.frequency * self.amplitude))

    def to_dict(self):
        return {"kind": self.kind, "amplitude": self.amplitude, "frequency": self.frequency,
                "phase": self.phase, "offset": self.offset}

    @classmethod
    def _from_dict(cls, d):
        return cls(d.get("amplitude", 1.0), d.get("frequency", 1.0), d.get("phase", 0.0),
                   d.get("offset", 0.0))


@_register
@dataclass(frozen=True)
class ProductMap(ChartMap):
    a: ChartMap
    b: ChartMap
    kind = "product"

    @property
    def param_dim(self):
        return self.a.param_dim + self.b.param_dim

    @property
    def ambient_dim(self):
        return self.a.ambient_dim + self.b.ambient_dim

    def __call__(self, Y):
        Y = np.asarray(Y, dtype=float).reshape(-1, self.param_dim)
        ma = self.a.param_dim
        return np.hstack([self.a(Y[:, :ma]), self.b(Y[:, ma:])])

    def lipschitz(self):
        return float(np.hypot(self.a.lipschitz(), self.b.lipschitz()))

    def to_dict(self):
        return {"kind": self.kind, "a": self.a.to_dict(), "b": self.b.to_dict()}

    @classmethod
    def _from_dict(cls, d):
        return cls(ChartMap.from_dict(d["a"]), ChartMap.from_dict(d["b"]))


@_register
@dataclass(frozen=True)
class ComposedMap(ChartMap):
    """outer o inner for a MapExpr ``outer``; Lipschitz bound is multiplied."""

    inner: ChartMap
    outer: MapExpr
    lip_factor: float
    kind = "composed"

    @property
    def param_dim(self):
        return self.inner.param_dim

    @property
    def ambient_dim(self):
        return self.outer.dim

    def __call__(self, Y):
        return self.outer.evaluate(self.inner(Y))

    def lipschitz(self):
        return self.inner.lipschitz() * self.lip_factor

    def to_dict(self):
        return {"kind": self.kind, "inner": self.inner.to_dict(), "outer": self.outer.to_dict(),
                "lip_factor": self.lip_factor}

    @classmethod
    def _from_dict(cls, d):
        return cls(ChartMap.from_dict(d["inner"]), MapExpr.from_dict(d["outer"]),
                   float(d["lip_factor"]))


# --------------------------------------------------------------------------
# masks
# --------------------------------------------------------------------------

_MASKS = {}


def _register_mask(cls):
    _MASKS[cls.kind] = cls
    return cls


class Mask:
    kind = "abstract"

    @staticmethod
    def from_dict(d):
        try:
            return _MASKS[d["kind"]]._from_dict(d)
        except KeyError as exc:
            raise SerializationError(f"unknown mask {d.get('kind')!r}") from exc


@_register_mask
@dataclass(frozen=True)
class CantorMask(Mask):
    """Product of 1D two-piece dusts of contraction ``ratio`` at finite depth.

    Acts on parameter coordinates ``offset .. offset + axes - 1``, each
    normalized to [0, 1] inside the chart's box.
    """

    ratio: float
    depth: int
    axes: int = 1
    offset: int = 0
    kind = "cantor"

    def __post_init__(self):
        if not 0 < self.ratio <= 0.5:
            raise ValueError("Cantor ratio must lie in (0, 1/2]")
        if self.depth < 0:
            raise ValueError("depth must be nonnegative")

    @property
    def density(self):
        return (2 * self.ratio) ** (self.depth * self.axes)

    @property
    def dimension(self):
        return self.axes * np.log(2) / np.log(1 / self.ratio)

    def contains_unit(self, U):
        """Membership of normalized parameters U (shape (N, axes))."""
        r = self.ratio
        U = np.array(U, dtype=float)
        ok = np.ones(len(U), dtype=bool)
        for _ in range(self.depth):
            left = U <= r
            right = U >= 1 - r
            ok &= np.all(left | right, axis=1)
            U = np.where(left, U / r, (U - (1 - r)) / r)
        return ok

    def sample_unit(self, n, rng):
        r = self.ratio
        digits = rng.integers(0, 2, size=(n, self.axes, self.depth))
        scales = (1 - r) * r ** np.arange(self.depth)
        return digits @ scales + r**self.depth * rng.random((n, self.axes))

    def level_cells(self, level):
        """Lower corners (normalized) and side of the 2^level x ... level cells."""
        r = self.ratio
        level = min(level, self.depth)
        lo = np.zeros(1)
        for k in range(level):
            lo = np.concatenate([lo, lo + (1 - r) * r**k])
        grids = np.meshgrid(*([lo] * self.axes), indexing="ij")
        return np.column_stack([g.ravel() for g in grids]), r**level

    def to_dict(self):
        return {"kind": self.kind, "ratio": self.ratio, "depth": self.depth, "axes": self.axes,
                "offset": self.offset}

    @classmethod
    def _from_dict(cls, d):
        return cls(float(d["ratio"]), int(d["depth"]), int(d.get("axes", 1)), int(d.get("offset", 0)))


@_register_mask
@dataclass(frozen=True)
class HalfSpaceMask(Mask):
    """Keeps image points with x[index] > threshold (``above``) or <= threshold."""

    index: int
    threshold: float = 0.0
    above: bool = True
    kind = "half_space"

    def contains_points(self, X):
        v = np.asarray(X)[:, self.index]
        return v > self.threshold if self.above else v <= self.threshold

    def to_dict(self):
        return {"kind": self.kind, "index": self.index, "threshold": self.threshold,
                "above": self.above}

    @classmethod
    def _from_dict(cls, d):
        return cls(int(d["index"]), float(d.get("threshold", 0.0)), bool(d.get("above", True)))


# --------------------------------------------------------------------------
# charts and sets
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LipschitzChart:
    lo: tuple
    hi: tuple
    map: ChartMap
    lip_const: float = None
    masks: tuple = ()
    lip_estimated: bool = False

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi) or len(lo) != self.map.param_dim:
            raise ValueError("domain box does not match the chart's parameter dimension")
        if any(h < l for l, h in zip(lo, hi)):
            raise ValueError("empty domain box")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "masks", tuple(self.masks))
        if self.lip_const is None:
            object.__setattr__(self, "lip_const", float(self.map.lipschitz()))
        elif self.lip_const < 0:
            raise ValueError("Lipschitz constant must be nonnegative")

    @property
    def param_dim(self):
        return len(self.lo)

    @property
    def ambient_dim(self):
        return self.map.ambient_dim

    @property
    def cantor_masks(self):
        return [m for m in self.masks if isinstance(m, CantorMask)]

    @property
    def point_masks(self):
        return [m for m in self.masks if isinstance(m, HalfSpaceMask)]

    @property
    def box_volume(self):
        return float(np.prod(np.subtract(self.hi, self.lo))) if self.param_dim else 1.0

    @property
    def volume(self):
        """Parameter-space measure of the domain after Cantor masks."""
        v = self.box_volume
        for m in self.cantor_masks:
            v *= m.density
        return v

    @property
    def diameter(self):
        return float(np.linalg.norm(np.subtract(self.hi, self.lo)))

    def evaluate(self, Y):
        return self.map(_batch_params(Y, self.param_dim))

    def sample_params(self, n, rng):
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        U = rng.random((n, self.param_dim))
        for m in self.cantor_masks:
            sl = slice(m.offset, m.offset + m.axes)
            U[:, sl] = m.sample_unit(n, rng)
        return lo + (hi - lo) * U

    def param_mask(self, Y):
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        span = np.where(hi > lo, hi - lo, 1.0)
        U = (np.asarray(Y) - lo) / span
        ok = np.ones(len(U), dtype=bool)
        for m in self.cantor_masks:
            ok &= m.contains_unit(U[:, m.offset:m.offset + m.axes])
        return ok

    def point_mask(self, X):
        ok = np.ones(len(X), dtype=bool)
        for m in self.point_masks:
            ok &= m.contains_points(X)
        return ok

    def with_mask(self, mask):
        return replace(self, masks=self.masks + (mask,))

    def to_dict(self):
        return {"kind": "chart", "lo": list(self.lo), "hi": list(self.hi), "map": self.map.to_dict(),
                "lip_const": self.lip_const, "lip_estimated": self.lip_estimated,
                "masks": [m.to_dict() for m in self.masks]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["lo"]), tuple(d["hi"]), ChartMap.from_dict(d["map"]), d.get("lip_const"),
                   tuple(Mask.from_dict(m) for m in d.get("masks", ())),
                   bool(d.get("lip_estimated", False)))


@dataclass(frozen=True)
class SampleCloud:
    points: np.ndarray
    chart_index: np.ndarray
    params: np.ndarray
    seed: int = None

    def __len__(self):
        return len(self.points)

    @property
    def dim(self):
        return self.points.shape[1]

    def subset(self, idx):
        return SampleCloud(self.points[idx], self.chart_index[idx], self.params[idx], self.seed)

    def to_csv(self, path_or_buf=None):
        buf = io.StringIO()
        w = csv.writer(buf)
        d, m = self.points.shape[1], self.params.shape[1]
        w.writerow([f"x{i}" for i in range(d)] + ["chart"] + [f"y{j}" for j in range(m)])
        for x, c, y in zip(self.points, self.chart_index, self.params):
            w.writerow([repr(float(v)) for v in x] + [int(c)] + [repr(float(v)) for v in y])
        text = buf.getvalue()
        if path_or_buf is None:
            return text
        with open(path_or_buf, "w", newline="") as fh:
            fh.write(text)
        return None


def child_seeds(seed, k):
    """Seed-splitting rule used by product sets and pipelines.

    Child ``i`` is the first 32-bit word of ``SeedSequence(seed).spawn(k)[i]``.
    """
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(k)]


@dataclass(frozen=True)
class RectifiableSet:
    ambient_dim: int
    rect_order: int
    charts: tuple = ()
    label: str = ""
    factors: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "charts", tuple(self.charts))
        for c in self.charts:
            if c.ambient_dim != self.ambient_dim or c.param_dim != self.rect_order:
                raise ValueError("all charts must share the set's ambient dimension and order")

    def __len__(self):
        return len(self.charts)

    @property
    def is_empty(self):
        return not self.charts

    def sample(self, count, seed=0):
        return sample(self, count, seed)

    def bounding_box(self, count=20000, seed=0):
        if self.is_empty:
            raise EmptySet("empty set has no bounding box")
        X = self.sample(count, seed).points
        return X.min(axis=0), X.max(axis=0)

    def to_dict(self):
        d = {"ambient_dim": self.ambient_dim, "rect_order": self.rect_order,
             "label": self.label, "charts": [c.to_dict() for c in self.charts]}
        if self.factors is not None:
            d["factors"] = [f.to_dict() for f in self.factors]
        return d

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), sort_keys=True, **kw)

    @classmethod
    def from_dict(cls, d):
        return set_from_dict(d)


def sample(s, count, seed=0):
    """Seeded sample of ``count`` points with (chart, parameter) provenance."""
    if count < 0:
        raise ValueError("count must be nonnegative")
    m = s.rect_order
    if count == 0:
        return SampleCloud(np.zeros((0, s.ambient_dim)), np.zeros(0, dtype=int),
                           np.zeros((0, m)), seed)
    if s.is_empty:
        raise EmptySet(f"cannot sample {count} points from an empty set")
    if s.factors is not None:
        a, b = s.factors
        sa, sb = child_seeds(seed, 2)
        ca, cb = sample(a, count, sa), sample(b, count, sb)
        return SampleCloud(np.hstack([ca.points, cb.points]),
                           ca.chart_index * len(b.charts) + cb.chart_index,
                           np.hstack([ca.params, cb.params]), seed)
    rng = np.random.default_rng(seed)
    vols = np.array([c.volume for c in s.charts])
    weights = vols / vols.sum() if vols.sum() > 0 else np.full(len(vols), 1 / len(vols))
    pts, idx, prm, pos = [], [], [], []
    have, tries = 0, 0
    budget = REJECTION_BUDGET * count + 10000
    while have < count:
        if tries >= budget:
            raise MaskRejectionExhausted(
                f"masks accepted {have} of {count} points after {tries} draws")
        batch = max(64, min(2 * (count - have), budget - tries))
        ci = rng.choice(len(s.charts), size=batch, p=weights)
        for k in np.unique(ci):
            chart = s.charts[k]
            where = np.flatnonzero(ci == k)
            Y = chart.sample_params(len(where), rng)
            X = chart.evaluate(Y)
            ok = chart.point_mask(X)
            if np.any(ok):
                pts.append(X[ok])
                prm.append(Y[ok])
                idx.append(np.full(int(ok.sum()), k))
                pos.append(tries + where[ok])
                have += int(ok.sum())
        tries += batch
    # restore draw order before truncating, so no chart is cut off
    order = np.argsort(np.concatenate(pos), kind="stable")[:count]
    P, I, Y = np.vstack(pts)[order], np.concatenate(idx)[order], np.vstack(prm)[order]
    return SampleCloud(P, I, Y, seed)


def local_sample(s, cloud, index, radius, per_point, seed=0, max_rounds=8):
    """Resample ``s`` near the cloud points ``index`` in parameter space.

    Parameters are perturbed uniformly in a cube of half-width ``radius``
    (relative to each chart's parameter box) and kept when the chart masks
    accept them.  Returns a SampleCloud; ``params`` holds the perturbed
    parameters.
    """
    rng = np.random.default_rng(seed)
    index = np.asarray(index, dtype=int)
    pts, idx, prm = [], [], []
    for ci in np.unique(cloud.chart_index[index]):
        chart = s.charts[int(ci)]
        sel = index[cloud.chart_index[index] == ci]
        lo, hi = np.asarray(chart.lo), np.asarray(chart.hi)
        span = hi - lo
        need = np.full(len(sel), per_point)
        for _ in range(max_rounds):
            if not need.any() or chart.param_dim == 0:
                break
            rep = np.repeat(np.arange(len(sel)), need * 2)
            Y = cloud.params[sel[rep]] + span * radius * (2 * rng.random((len(rep), chart.param_dim)) - 1)
            Y = np.clip(Y, lo, hi)
            ok = chart.param_mask(Y)
            X = chart.evaluate(Y[ok])
            okp = chart.point_mask(X)
            Y, X, r = Y[ok][okp], X[okp], rep[ok][okp]
            keep = np.zeros(len(r), dtype=bool)
            for k in np.unique(r):
                hits = np.flatnonzero(r == k)[: need[k]]
                keep[hits] = True
                need[k] -= len(hits)
            pts.append(X[keep])
            prm.append(Y[keep])
            idx.append(np.full(int(keep.sum()), int(ci)))
    if not pts:
        return SampleCloud(np.zeros((0, s.ambient_dim)), np.zeros(0, dtype=int),
                           np.zeros((0, s.rect_order)), seed)
    return SampleCloud(np.vstack(pts), np.concatenate(idx), np.vstack(prm), seed)


# --------------------------------------------------------------------------
# constructors
# --------------------------------------------------------------------------


def segment(a, b, label="segment"):
    a, b = np.asarray(a, float), np.asarray(b, float)
    chart = LipschitzChart((0.0,), (1.0,), AffineChartMap(tuple(a), tuple(map(tuple, (b - a)[:, None]))))
    return RectifiableSet(len(a), 1, (chart,), label)


def point_set(points, label="points"):
    P = np.atleast_2d(np.asarray(points, dtype=float))
    charts = tuple(LipschitzChart((), (), AffineChartMap(tuple(p), ())) for p in P)
    return RectifiableSet(P.shape[1], 0, charts, label)


def empty_set(ambient_dim, rect_order=0, label="empty"):
    return RectifiableSet(ambient_dim, rect_order, (), label)


def circle(center=(0.0, 0.0), radius=1.0, label="circle"):
    chart = LipschitzChart((0.0,), (1.0,), CircleMap(tuple(center), float(radius)))
    return RectifiableSet(2, 1, (chart,), label)


def polyline(vertices, label="polyline"):
    m = PolylineMap(tuple(map(tuple, vertices)))
    return RectifiableSet(m.ambient_dim, 1, (LipschitzChart((0.0,), (1.0,), m),), label)


def unit_square_boundary(label="square boundary"):
    return polyline([(0, 0), (1, 0), (1, 1), (0, 1), (0, 0)], label)


def filled_box(lo, hi, label="box"):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    chart = LipschitzChart(tuple(lo), tuple(hi), AffineChartMap(tuple(np.zeros(len(lo))),
                                                              tuple(map(tuple, np.eye(len(lo))))))
    return RectifiableSet(len(lo), len(lo), (chart,), label)


def cantor_ratio(target_dim, param_dim):
    """Contraction r with 2^m r^s = 1."""
    if not 0 < target_dim <= param_dim:
        raise BadDimension(f"target dimension {target_dim} not in (0, {param_dim}]")
    return 2.0 ** (-param_dim / target_dim)


def cantor_dust(target_dim, param_dim=1, depth=8, embedding=None, label=None):
    """Self-similar dust in [0, 1]^m of limiting dimension ``target_dim``.

    ``embedding`` is a chart map from [0, 1]^m (default: the identity into
    R^m), which turns the dust into e.g. a dust-parametrized curve.
    """
    if depth < 1:
        raise ValueError("depth must be at least 1")
    r = cantor_ratio(target_dim, param_dim)
    if embedding is None:
        embedding = AffineChartMap(tuple(np.zeros(param_dim)), tuple(map(tuple, np.eye(param_dim))))
    if embedding.param_dim != param_dim:
        raise ValueError("embedding parameter dimension must equal param_dim")
    chart = LipschitzChart(tuple(np.zeros(param_dim)), tuple(np.ones(param_dim)), embedding,
                           masks=(CantorMask(r, depth, param_dim),))
    return RectifiableSet(embedding.ambient_dim, param_dim, (chart,),
                          label or f"cantor dust dim {target_dim:.4g}")


def dust_curve(target_dim, depth, mean, cos=(), sin=(), label=None):
    curve = FourierCurveMap(tuple(mean), tuple(map(tuple, cos)), tuple(map(tuple, sin)))
    return cantor_dust(target_dim, 1, depth, curve, label or f"dust curve dim {target_dim:.4g}")


def union(*sets, label="union"):
    if not sets:
        raise ValueError("union of nothing")
    l, m = sets[0].ambient_dim, max(s.rect_order for s in sets)
    if any(s.ambient_dim != l for s in sets):
        raise ValueError("ambient dimensions differ")
    if any(s.rect_order != m for s in sets):
        raise ValueError("rectifiability orders differ")
    return RectifiableSet(l, m, tuple(c for s in sets for c in s.charts), label)


def product(a, b, label=None):
    """Cartesian product; charts are pairwise products with sqrt(La^2 + Lb^2)."""
    charts = []
    for ca in a.charts:
        for cb in b.charts:
            masks = tuple(ca.masks)
            for mk in cb.masks:
                if isinstance(mk, CantorMask):
                    masks += (replace(mk, offset=mk.offset + ca.param_dim),)
                else:
                    masks += (replace(mk, index=mk.index + ca.ambient_dim),)
            charts.append(LipschitzChart(ca.lo + cb.lo, ca.hi + cb.hi, ProductMap(ca.map, cb.map),
                                         float(np.hypot(ca.lip_const, cb.lip_const)), masks,
                                         ca.lip_estimated or cb.lip_estimated))
    return RectifiableSet(a.ambient_dim + b.ambient_dim, a.rect_order + b.rect_order, tuple(charts),
                          label or f"({a.label}) x ({b.label})", factors=(a, b))


def estimate_lipschitz(expr, lo, hi, samples=4096, seed=0, safety=1.1):
    """Finite-difference estimate of sup ||D expr||_2 over a box."""
    rng = np.random.default_rng(seed)
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    X = lo + (hi - lo) * rng.random((samples, len(lo)))
    D = expr.jacobian(X, mode="finite-diff")
    return safety * float(np.max(np.linalg.norm(D, ord=2, axis=(1, 2))))


def image(s, expr, lip_bound=None, domain=None, check_samples=1024, seed=0, estimated=None):
    """Image of a set under a MapExpr, chartwise.

    Without ``lip_bound`` the bound is estimated by finite differences on
    the set's bounding box and the charts are flagged as estimated.
    ``domain`` (lo, hi) is the map's declared domain; chart images leaving
    it raise :class:`DomainViolation`.  ``estimated`` flags a supplied bound
    that was itself measured rather than proved.
    """
    if expr.dim != s.ambient_dim:
        raise ValueError("map dimension does not match the set")
    if s.is_empty:
        return RectifiableSet(s.ambient_dim, s.rect_order, (), f"image of {s.label}")
    if domain is not None:
        lo, hi = (np.asarray(v, float) for v in domain)
        X = s.sample(check_samples, seed).points
        if np.any(X < lo) or np.any(X > hi):
            raise DomainViolation("set leaves the map's declared domain")
    if estimated is None:
        estimated = lip_bound is None
    if lip_bound is None:
        blo, bhi = s.bounding_box(seed=seed)
        lip_bound = estimate_lipschitz(expr, blo, bhi, seed=seed)
    charts = tuple(LipschitzChart(c.lo, c.hi, ComposedMap(c.map, expr, float(lip_bound)),
                                  c.lip_const * lip_bound, c.masks, c.lip_estimated or estimated)
                   for c in s.charts)
    return RectifiableSet(s.ambient_dim, s.rect_order, charts, f"image of {s.label}")


def _has_points(s, probe, seed):
    try:
        sample(s, 1, seed)
    except MaskRejectionExhausted:
        return False
    return True


def split_by_p_sign(s, index=1, probe=SPLIT_PROBE, seed=0):
    """(A+, A-) with A+ = {p > 0}, A- = {p <= 0}, as half-space masks.

    Charts whose masked domain shows no point in a probe of ``probe``
    draws are dropped, so a half that misses the set comes back empty.
    """
    if s.ambient_dim < 2:
        raise ValueError("need ambient dimension >= 2 to split on p")
    halves = []
    for above in (True, False):
        kept = []
        for c in s.charts:
            mc = c.with_mask(HalfSpaceMask(index, 0.0, above))
            rng = np.random.default_rng(seed)
            X = mc.evaluate(mc.sample_params(probe, rng))
            if np.any(mc.point_mask(X)):
                kept.append(mc)
        halves.append(RectifiableSet(s.ambient_dim, s.rect_order, tuple(kept),
                                     f"{s.label} {'p>0' if above else 'p<=0'}"))
    return halves[0], halves[1]


# --------------------------------------------------------------------------
# JSON set descriptions
# --------------------------------------------------------------------------


def _chart_from_description(d, ambient_dim):
    kind = d["kind"]
    masks = tuple(Mask.from_dict(m) for m in d.get("masks", ()))
    if kind == "chart":
        return [LipschitzChart.from_dict(d)]
    if kind == "affine_segment":
        return list(segment(d["start"], d["end"]).charts)
    if kind == "point":
        return list(point_set([d["point"]]).charts)
    if kind == "points":
        return list(point_set(d["points"]).charts)
    if kind == "polyline":
        return list(polyline(d["vertices"]).charts)
    if kind == "circle":
        return list(circle(d.get("center", (0, 0)), d.get("radius", 1.0)).charts)
    if kind == "box":
        return list(filled_box(d["lo"], d["hi"]).charts)
    if kind == "graph_of_function":
        x0, x1 = d.get("interval", (0.0, 1.0))
        fn = d.get("function", {})
        if fn.get("kind", "sine") != "sine":
            raise SerializationError("only sine graphs are supported")
        m = SineGraphMap(fn.get("amplitude", 1.0), fn.get("frequency", 1.0), fn.get("phase", 0.0),
                         fn.get("offset", 0.0))
        return [LipschitzChart((float(x0),), (float(x1),), m, masks=masks)]
    if kind == "fourier_curve":
        m = FourierCurveMap(tuple(d["mean"]), tuple(map(tuple, d.get("cos", ()))),
                            tuple(map(tuple, d.get("sin", ()))))
        return [LipschitzChart((0.0,), (1.0,), m, masks=masks)]
    if kind == "cantor_dust":
        emb = d.get("embedding")
        emb = ChartMap.from_dict(emb) if emb else None
        return list(cantor_dust(d["target_dim"], d.get("param_dim", 1), d.get("depth", 8), emb).charts)
    if kind == "product":
        a = _set_from_charts(d["a"])
        b = _set_from_charts(d["b"])
        return list(product(a, b).charts)
    raise SerializationError(f"unknown chart kind {kind!r}")


def _set_from_charts(d):
    if "charts" in d:
        return set_from_dict(d)
    charts = _chart_from_description(d, None)
    c0 = charts[0]
    return RectifiableSet(c0.ambient_dim, c0.param_dim, tuple(charts))


def set_from_dict(d):
    """Build a set from the JSON description format.

    ``{"ambient_dim", "rect_order", "label"?, "charts": [...]}``; a chart
    entry is ``{"kind": ..., ...}`` with kinds ``affine_segment``,
    ``polyline``, ``cantor_dust``, ``graph_of_function``, ``product``,
    ``point``, ``points``, ``circle``, ``box``, ``fourier_curve`` or a fully
    serialized ``chart``.
    """
    try:
        if "factors" in d and d["factors"]:
            a, b = (set_from_dict(f) for f in d["factors"])
            p = product(a, b, d.get("label"))
            return p
        charts = []
        for c in d.get("charts", []):
            charts.extend(_chart_from_description(c, d.get("ambient_dim")))
        l = int(d["ambient_dim"]) if "ambient_dim" in d else charts[0].ambient_dim
        m = int(d["rect_order"]) if "rect_order" in d else charts[0].param_dim
        return RectifiableSet(l, m, tuple(charts), d.get("label", ""))
    except SerializationError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise SerializationError(f"bad set description: {exc}") from exc


def load_set(path):
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SerializationError(f"{path}: {exc}") from exc
    return set_from_dict(d)
