"""Smooth cut-off functions with exact 0/1 plateaus.

The basic building block is the normalized ``exp(-1/x)`` blend

    S(x) = g(x) / (g(x) + g(1 - x)),   g(x) = exp(-1/x) for x > 0, else 0,

which is C-infinity, equals 0 on (-inf, 0] and 1 on [1, inf), and satisfies
S(x) + S(1 - x) = 1.  Value, first and second derivatives are analytic; the
antiderivative is evaluated by Gauss-Legendre quadrature.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

# interior evaluation is clipped here; S underflows to exactly 0/1 long before
_EDGE = 1e-6
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)


def _interior(x):
    x = np.asarray(x, dtype=float)
    inside = (x > 0.0) & (x < 1.0)
    xc = np.clip(x, _EDGE, 1.0 - _EDGE)
    return x, inside, xc


def smooth_step(x):
    x, inside, xc = _interior(x)
    u = 1.0 / xc - 1.0 / (1.0 - xc)
    val = expit(-u)
    return np.where(inside, val, np.where(x >= 1.0, 1.0, 0.0))


def smooth_step_d1(x):
    x, inside, xc = _interior(x)
    u = 1.0 / xc - 1.0 / (1.0 - xc)
    s = expit(-u)
    du = -1.0 / xc**2 - 1.0 / (1.0 - xc) ** 2
    return np.where(inside, -s * (1.0 - s) * du, 0.0)


def smooth_step_d2(x):
    x, inside, xc = _interior(x)
    u = 1.0 / xc - 1.0 / (1.0 - xc)
    s = expit(-u)
    du = -1.0 / xc**2 - 1.0 / (1.0 - xc) ** 2
    ddu = 2.0 / xc**3 - 2.0 / (1.0 - xc) ** 3
    ds = -s * (1.0 - s) * du
    val = -(ds * (1.0 - 2.0 * s) * du + s * (1.0 - s) * ddu)
    return np.where(inside, val, 0.0)


def smooth_step_integral(x):
    """Antiderivative of :func:`smooth_step` vanishing on (-inf, 0]."""
    x = np.asarray(x, dtype=float)
    out = np.where(x >= 1.0, 0.5 + (x - 1.0), 0.0)
    mid = (x > 0.0) & (x < 1.0)
    if np.any(mid):
        # Gauss-Legendre on [0, u], only where the integrand is not flat
        u = x[mid]
        nodes = 0.5 * u[..., None] * (_GL_NODES + 1.0)
        out[mid] = 0.5 * u * np.sum(_GL_WEIGHTS * smooth_step(nodes), axis=-1)
    return out


@dataclass(frozen=True)
class CutoffProfile:
    """Smooth function of one variable with exact plateaus.

    kind ``"step"``: 0 on (-inf, a], 1 on [b, inf).
    kind ``"step_down"``: 1 on (-inf, a], 0 on [b, inf).
    kind ``"bump"``: 0 outside (a, d), 1 on [b, c).
    kind ``"constant"``: identically ``value``.
    """

    kind: str
    thresholds: tuple = ()
    value: float = 1.0

    def __post_init__(self):
        th = tuple(float(t) for t in self.thresholds)
        object.__setattr__(self, "thresholds", th)
        need = {"step": 2, "step_down": 2, "bump": 4, "constant": 0}
        if self.kind not in need:
            raise ValueError(f"unknown cutoff kind {self.kind!r}")
        if len(th) != need[self.kind]:
            raise ValueError(f"{self.kind} cutoff needs {need[self.kind]} thresholds")
        if any(b <= a for a, b in zip(th, th[1:])):
            raise ValueError("cutoff thresholds must be strictly increasing")

    @classmethod
    def step(cls, a, b):
        return cls("step", (a, b))

    @classmethod
    def bump(cls, a, b, c, d):
        return cls("bump", (a, b, c, d))

    def _parts(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "step" or self.kind == "step_down":
            a, b = self.thresholds
            w = b - a
            y = (x - a) / w
            v, d1, d2 = smooth_step(y), smooth_step_d1(y) / w, smooth_step_d2(y) / w**2
            if self.kind == "step_down":
                return 1.0 - v, -d1, -d2
            return v, d1, d2
        if self.kind == "bump":
            a, b, c, d = self.thresholds
            up = CutoffProfile("step", (a, b))._parts(x)
            dn = CutoffProfile("step_down", (c, d))._parts(x)
            v = up[0] * dn[0]
            d1 = up[1] * dn[0] + up[0] * dn[1]
            d2 = up[2] * dn[0] + 2.0 * up[1] * dn[1] + up[0] * dn[2]
            return v, d1, d2
        z = np.zeros_like(x)
        return z + self.value, z, z

    def __call__(self, x):
        return self._parts(x)[0]

    def deriv(self, x):
        return self._parts(x)[1]

    def deriv2(self, x):
        return self._parts(x)[2]

    def max_abs_deriv(self, grid=4001):
        """Grid estimate of sup |f'|; the caller applies any safety factor."""
        if self.kind == "constant":
            return 0.0
        lo, hi = self.thresholds[0], self.thresholds[-1]
        xs = np.linspace(lo, hi, grid)
        return float(np.max(np.abs(self.deriv(xs))))

    def to_dict(self):
        d = {"kind": self.kind, "thresholds": list(self.thresholds)}
        if self.kind == "constant":
            d["value"] = self.value
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], tuple(d.get("thresholds", ())), d.get("value", 1.0))


@dataclass(frozen=True)
class SlopeProfile:
    """Increasing function P of one variable given through its slope.

    P'(p) = s_0 + sum_i (s_i - s_{i-1}) S((p - b_i) / w_i), i.e. the slope
    moves smoothly from ``slopes[i-1]`` to ``slopes[i]`` across
    ``[starts[i-1], starts[i-1] + widths[i-1]]``.  ``offset`` is P at
    ``anchor`` where ``anchor`` lies left of every transition.
    """

    slopes: tuple
    starts: tuple
    widths: tuple
    anchor: float
    offset: float
    _coef: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("slopes", "starts", "widths"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        s = np.asarray(self.slopes)
        if len(self.starts) != len(s) - 1 or len(self.widths) != len(s) - 1:
            raise ValueError("need len(slopes) - 1 transitions")
        if np.any(s <= 0):
            raise ValueError("slopes must be positive")
        if np.any(np.asarray(self.widths) <= 0):
            raise ValueError("transition widths must be positive")
        ends = np.asarray(self.starts) + np.asarray(self.widths)
        if np.any(ends[:-1] > np.asarray(self.starts)[1:]):
            raise ValueError("transitions overlap")
        if self.starts and self.anchor > self.starts[0]:
            raise ValueError("anchor must lie left of all transitions")
        object.__setattr__(self, "_coef", np.diff(s))

    def deriv(self, p):
        p = np.asarray(p, dtype=float)
        out = np.full_like(p, self.slopes[0])
        for dv, b, w in zip(self._coef, self.starts, self.widths):
            out = out + dv * smooth_step((p - b) / w)
        return out

    def deriv2(self, p):
        p = np.asarray(p, dtype=float)
        out = np.zeros_like(p)
        for dv, b, w in zip(self._coef, self.starts, self.widths):
            out = out + dv * smooth_step_d1((p - b) / w) / w
        return out

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        out = self.offset + self.slopes[0] * (p - self.anchor)
        for dv, b, w in zip(self._coef, self.starts, self.widths):
            out = out + dv * w * smooth_step_integral((p - b) / w)
        return out

    def _initial_guess(self, y):
        # P is linear outside the transitions, so interpolation there is exact
        if not self.starts:
            return self.anchor + (y - self.offset) / self.slopes[0]
        a = self.starts[0]
        b = self.starts[-1] + self.widths[-1]
        grid = np.linspace(a, b, 4097)
        vals = self(grid)
        return np.where(y < vals[0], a + (y - vals[0]) / self.slopes[0],
                        np.where(y > vals[-1], b + (y - vals[-1]) / self.slopes[-1],
                                 np.interp(y, vals, grid)))

    def inverse(self, y, tol=1e-14, max_iter=200):
        """Solve P(p) = y by safeguarded Newton iteration."""
        y = np.asarray(y, dtype=float)
        smin, smax = min(self.slopes), max(self.slopes)
        # P(anchor) = offset and smin <= P' <= smax bracket the root
        d = y - self.offset
        lo = self.anchor + np.where(d >= 0, d / smax, d / smin)
        hi = self.anchor + np.where(d >= 0, d / smin, d / smax)
        p = np.clip(self._initial_guess(y), lo, hi)
        # iterate only on the points that have not settled yet
        act = np.flatnonzero(np.ones(p.shape, dtype=bool).ravel())
        p, lo, hi, yf = p.ravel().copy(), lo.ravel().copy(), hi.ravel().copy(), y.ravel()
        for _ in range(max_iter):
            if act.size == 0:
                break
            pa, la, ha = p[act], lo[act], hi[act]
            f = self(pa) - yf[act]
            la = np.where(f < 0, pa, la)
            ha = np.where(f >= 0, pa, ha)
            step = pa - f / self.deriv(pa)
            bad = (step < la) | (step > ha)
            new = np.where(bad, 0.5 * (la + ha), step)
            done = (np.abs(new - pa) <= tol * (1.0 + np.abs(pa))) | (f == 0) | (ha - la <= tol * (1.0 + np.abs(pa)))
            p[act], lo[act], hi[act] = np.where(f == 0, pa, new), la, ha
            act = act[~done]
        return p.reshape(y.shape)

    def to_dict(self):
        return {
            "slopes": list(self.slopes),
            "starts": list(self.starts),
            "widths": list(self.widths),
            "anchor": self.anchor,
            "offset": self.offset,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["slopes"]), tuple(d["starts"]), tuple(d["widths"]),
                   d["anchor"], d["offset"])
