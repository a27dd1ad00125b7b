"""Composable symplectic maps of R^{2n} with Jacobians and numerical checks.

Coordinates are interleaved, ``(q1, p1, q2, p2, ...)``, so the 2D factors of
R^{2n} = R^2 x ... x R^2 are consecutive coordinate pairs.  The standard form
is ``omega(u, v) = u^T J v`` with ``J`` block diagonal, each block
``[[0, 1], [-1, 0]]``.  Hamiltonian vector fields are ``X_H = J grad H``, so
``dq/dt = dH/dp`` and ``dp/dt = -dH/dq``.

Every map node evaluates on batches (``(N, dim)`` arrays) and returns batched
Jacobians of shape ``(N, dim, dim)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.spatial import cKDTree

from .cutoff import CutoffProfile, SlopeProfile
from .errors import DomainViolation, IntegrationFailure, SerializationError
from ._env import workers

ODE_RTOL = 1e-12
ODE_ATOL = 1e-14
ODE_CHUNK = 8192


def standard_J(dim):
    if dim % 2:
        raise ValueError("symplectic dimension must be even")
    J = np.zeros((dim, dim))
    for k in range(0, dim, 2):
        J[k, k + 1] = 1.0
        J[k + 1, k] = -1.0
    return J


def omega(u, v):
    """Standard symplectic pairing u^T J v (batched over leading axes)."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    J = standard_J(u.shape[-1])
    return np.einsum("...i,ij,...j->...", u, J, v)


def _as_batch(x, dim):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != dim:
        raise DomainViolation(f"expected points of dimension {dim}, got shape {x.shape}")
    return X, single


# --------------------------------------------------------------------------
# Hamiltonians
# --------------------------------------------------------------------------

_HAMILTONIANS = {}


def _register_h(cls):
    _HAMILTONIANS[cls.kind] = cls
    return cls


class HamiltonianSpec:
    kind = "abstract"
    dim: int

    def value(self, X):
        raise NotImplementedError

    def grad(self, X):
        raise NotImplementedError

    def hess(self, X):
        raise NotImplementedError

    def vector_field(self, X):
        J = standard_J(self.dim)
        return self.grad(X) @ J.T

    @staticmethod
    def from_dict(d):
        try:
            cls = _HAMILTONIANS[d["kind"]]
        except KeyError as exc:
            raise SerializationError(f"unknown Hamiltonian kind {d.get('kind')!r}") from exc
        return cls._from_dict(d)


@_register_h
@dataclass(frozen=True)
class LinearHamiltonian(HamiltonianSpec):
    """H(x) = omega(v0, x - center); its flow is x -> x + t v0."""

    v0: tuple
    center: tuple = None
    kind = "linear"

    def __post_init__(self):
        object.__setattr__(self, "v0", tuple(float(v) for v in self.v0))
        if self.center is not None:
            object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def dim(self):
        return len(self.v0)

    @property
    def coefficients(self):
        # grad H = J^T v0
        return standard_J(self.dim).T @ np.asarray(self.v0)

    def value(self, X):
        X = np.asarray(X, dtype=float)
        c = np.zeros(self.dim) if self.center is None else np.asarray(self.center)
        return (X - c) @ self.coefficients

    def grad(self, X):
        X = np.atleast_2d(X)
        return np.broadcast_to(self.coefficients, X.shape).copy()

    def hess(self, X):
        X = np.atleast_2d(X)
        return np.zeros((X.shape[0], self.dim, self.dim))

    def to_dict(self):
        d = {"kind": self.kind, "v0": list(self.v0)}
        if self.center is not None:
            d["center"] = list(self.center)
        return d

    @classmethod
    def _from_dict(cls, d):
        return cls(tuple(d["v0"]), tuple(d["center"]) if d.get("center") is not None else None)


@_register_h
@dataclass(frozen=True)
class CutoffLinearHamiltonian(HamiltonianSpec):
    """rho(x[index]) * H(x) for a linear H and a one-variable cut-off rho."""

    rho: CutoffProfile
    base: LinearHamiltonian
    index: int = 0
    kind = "cutoff_linear"

    @property
    def dim(self):
        return self.base.dim

    def value(self, X):
        X = np.atleast_2d(X)
        return self.rho(X[:, self.index]) * self.base.value(X)

    def grad(self, X):
        X = np.atleast_2d(X)
        q = X[:, self.index]
        g = self.rho(q)[:, None] * self.base.coefficients[None, :]
        g[:, self.index] += self.rho.deriv(q) * self.base.value(X)
        return g

    def hess(self, X):
        X = np.atleast_2d(X)
        q = X[:, self.index]
        a = self.base.coefficients
        Hv = self.base.value(X)
        out = np.zeros((X.shape[0], self.dim, self.dim))
        d1 = self.rho.deriv(q)
        out[:, self.index, :] += d1[:, None] * a[None, :]
        out[:, :, self.index] += d1[:, None] * a[None, :]
        out[:, self.index, self.index] += self.rho.deriv2(q) * Hv
        return out

    def to_dict(self):
        return {"kind": self.kind, "rho": self.rho.to_dict(), "base": self.base.to_dict(),
                "index": self.index}

    @classmethod
    def _from_dict(cls, d):
        return cls(CutoffProfile.from_dict(d["rho"]), LinearHamiltonian._from_dict(d["base"]),
                   int(d.get("index", 0)))


@_register_h
@dataclass(frozen=True)
class QPHamiltonian(HamiltonianSpec):
    """Cut-off hyperbolic Hamiltonian H = (q - q0) (p - p0) c(p) on one factor.

    Where ``c == 1`` the flow is the hyperbolic squeeze
    ``q - q0 -> e^t (q - q0)``, ``p - p0 -> e^{-t} (p - p0)``.
    """

    cutoff: CutoffProfile
    dim: int = 2
    factor: int = 0
    q0: float = 0.0
    p0: float = 0.0
    kind = "qp"

    def _g(self, p):
        s = p - self.p0
        c, c1, c2 = self.cutoff(p), self.cutoff.deriv(p), self.cutoff.deriv2(p)
        return s * c, c + s * c1, 2.0 * c1 + s * c2

    def value(self, X):
        X = np.atleast_2d(X)
        i = 2 * self.factor
        return (X[:, i] - self.q0) * self._g(X[:, i + 1])[0]

    def grad(self, X):
        X = np.atleast_2d(X)
        i = 2 * self.factor
        g, g1, _ = self._g(X[:, i + 1])
        out = np.zeros_like(X, dtype=float)
        out[:, i] = g
        out[:, i + 1] = (X[:, i] - self.q0) * g1
        return out

    def hess(self, X):
        X = np.atleast_2d(X)
        i = 2 * self.factor
        _, g1, g2 = self._g(X[:, i + 1])
        out = np.zeros((X.shape[0], self.dim, self.dim))
        out[:, i, i + 1] = g1
        out[:, i + 1, i] = g1
        out[:, i + 1, i + 1] = (X[:, i] - self.q0) * g2
        return out

    def to_dict(self):
        return {"kind": self.kind, "cutoff": self.cutoff.to_dict(), "dim": self.dim,
                "factor": self.factor, "q0": self.q0, "p0": self.p0}

    @classmethod
    def _from_dict(cls, d):
        return cls(CutoffProfile.from_dict(d["cutoff"]), int(d["dim"]), int(d.get("factor", 0)),
                   float(d.get("q0", 0.0)), float(d.get("p0", 0.0)))


def integrate_flow(h, t, X, with_jacobian=False):
    """Time-t flow of X_H = J grad H by adaptive Dormand-Prince 8(5,3).

    With ``with_jacobian`` the variational equation dPhi/dt = J Hess(H) Phi
    is integrated alongside and the batched Jacobians are returned too.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    eye = np.broadcast_to(np.eye(d), (n, d, d))
    if t == 0.0 or n == 0:
        return (X.copy(), eye.copy()) if with_jacobian else X.copy()
    J = standard_J(d)
    outs, jacs = [], []
    for start in range(0, n, ODE_CHUNK):
        Xc = X[start:start + ODE_CHUNK]
        m = Xc.shape[0]

        if with_jacobian:
            def rhs(_, y, m=m):
                Y = y[: m * d].reshape(m, d)
                P = y[m * d:].reshape(m, d, d)
                dY = h.grad(Y) @ J.T
                dP = np.einsum("ij,njk,nkl->nil", J, h.hess(Y), P)
                return np.concatenate([dY.ravel(), dP.ravel()])

            y0 = np.concatenate([Xc.ravel(), np.broadcast_to(np.eye(d), (m, d, d)).ravel()])
        else:
            def rhs(_, y, m=m):
                return (h.grad(y.reshape(m, d)) @ J.T).ravel()

            y0 = Xc.ravel()
        sol = solve_ivp(rhs, (0.0, float(t)), y0, method="DOP853", rtol=ODE_RTOL,
                        atol=ODE_ATOL, t_eval=[float(t)])
        if not sol.success:
            raise IntegrationFailure(sol.message)
        y = sol.y[:, -1]
        outs.append(y[: m * d].reshape(m, d))
        if with_jacobian:
            jacs.append(y[m * d:].reshape(m, d, d))
    Y = np.concatenate(outs)
    if with_jacobian:
        return Y, np.concatenate(jacs)
    return Y


# --------------------------------------------------------------------------
# Map expressions
# --------------------------------------------------------------------------

_NODES = {}


def _register(cls):
    _NODES[cls.kind] = cls
    return cls


class MapExpr:
    """Node of a symplectic map expression tree.

    Subclasses implement ``_eval_jac(X) -> (Y, D)``; ``_eval`` defaults to
    dropping the Jacobian and is overridden where that is cheaper.
    """

    kind = "abstract"
    dim: int

    def _eval(self, X):
        return self._eval_jac(X)[0]

    def _eval_jac(self, X):
        raise NotImplementedError

    def __call__(self, x):
        return self.evaluate(x)

    def evaluate(self, x):
        X, single = _as_batch(x, self.dim)
        Y = self._eval(X)
        return Y[0] if single else Y

    def jacobian(self, x, mode="analytic", step=1e-5):
        X, single = _as_batch(x, self.dim)
        if mode == "analytic":
            D = self._eval_jac(X)[1]
        elif mode == "finite-diff":
            D = finite_difference_jacobian(self._eval, X, step)
        else:
            raise ValueError(f"unknown jacobian mode {mode!r}")
        return D[0] if single else D

    def inverse(self):
        raise NotImplementedError(f"{self.kind} has no closed-form inverse")

    def children(self):
        return ()

    def walk(self):
        yield self
        for c in self.children():
            yield from c.walk()

    def to_dict(self):
        raise NotImplementedError

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), sort_keys=True, **kw)

    @staticmethod
    def from_dict(d):
        try:
            cls = _NODES[d["kind"]]
        except KeyError as exc:
            raise SerializationError(f"unknown map node {d.get('kind')!r}") from exc
        return cls._from_dict(d)

    @staticmethod
    def from_json(s):
        return MapExpr.from_dict(json.loads(s))


def finite_difference_jacobian(fun, X, step=1e-5):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    D = np.empty((n, d, d))
    for k in range(d):
        e = np.zeros(d)
        e[k] = step
        D[:, :, k] = (fun(X + e) - fun(X - e)) / (2.0 * step)
    return D


@_register
@dataclass(frozen=True)
class Identity(MapExpr):
    dim: int
    kind = "identity"

    def _eval(self, X):
        return X.copy()

    def _eval_jac(self, X):
        return X.copy(), np.broadcast_to(np.eye(self.dim), (len(X), self.dim, self.dim)).copy()

    def inverse(self):
        return self

    def to_dict(self):
        return {"kind": self.kind, "dim": self.dim}

    @classmethod
    def _from_dict(cls, d):
        return cls(int(d["dim"]))


@_register
@dataclass(frozen=True)
class Affine(MapExpr):
    """x -> M x + b with no structural requirement on M.

    Used for conformal pieces and as a negative control; symplectic affine
    maps should use :class:`AffineSymplectic`.
    """

    matrix: np.ndarray
    offset: np.ndarray = None
    kind = "affine"

    def __post_init__(self):
        M = np.array(self.matrix, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError("affine matrix must be square")
        b = np.zeros(M.shape[0]) if self.offset is None else np.array(self.offset, dtype=float)
        M.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "matrix", M)
        object.__setattr__(self, "offset", b)

    @property
    def dim(self):
        return self.matrix.shape[0]

    def _eval(self, X):
        return X @ self.matrix.T + self.offset

    def _eval_jac(self, X):
        return self._eval(X), np.broadcast_to(self.matrix, (len(X), self.dim, self.dim)).copy()

    def inverse(self):
        Minv = np.linalg.inv(self.matrix)
        return type(self)(Minv, -Minv @ self.offset)

    def to_dict(self):
        return {"kind": self.kind, "matrix": self.matrix.tolist(), "offset": self.offset.tolist()}

    @classmethod
    def _from_dict(cls, d):
        return cls(np.array(d["matrix"]), np.array(d["offset"]))

    def __eq__(self, other):
        return (type(self) is type(other) and np.array_equal(self.matrix, other.matrix)
                and np.array_equal(self.offset, other.offset))

    __hash__ = None


@_register
@dataclass(frozen=True, eq=False)
class AffineSymplectic(Affine):
    kind = "affine_symplectic"
    tol = 1e-10

    def __post_init__(self):
        super().__post_init__()
        M = self.matrix
        J = standard_J(M.shape[0])
        res = np.max(np.abs(M.T @ J @ M - J))
        if res > self.tol:
            raise ValueError(f"matrix is not symplectic (residual {res:.3e})")

    @classmethod
    def diagonal_scaling(cls, lam, offset=(0.0, 0.0)):
        """(q, p) -> (lam q, p / lam) + offset."""
        return cls(np.diag([lam, 1.0 / lam]), np.asarray(offset, dtype=float))

    @classmethod
    def translation(cls, v):
        v = np.asarray(v, dtype=float)
        return cls(np.eye(len(v)), v)


@_register
@dataclass(frozen=True)
class Shear(MapExpr):
    """(q, p) -> (q, p - sign * f(q)) on R^2."""

    f: CutoffProfile
    sign: float = 1.0
    kind = "shear"
    dim = 2

    def _eval(self, X):
        Y = X.copy()
        Y[:, 1] -= self.sign * self.f(X[:, 0])
        return Y

    def _eval_jac(self, X):
        D = np.broadcast_to(np.eye(2), (len(X), 2, 2)).copy()
        D[:, 1, 0] = -self.sign * self.f.deriv(X[:, 0])
        return self._eval(X), D

    def inverse(self):
        return Shear(self.f, -self.sign)

    def to_dict(self):
        return {"kind": self.kind, "f": self.f.to_dict(), "sign": self.sign}

    @classmethod
    def _from_dict(cls, d):
        return cls(CutoffProfile.from_dict(d["f"]), float(d.get("sign", 1.0)))


@_register
@dataclass(frozen=True)
class FiberStretch(MapExpr):
    """(q, p) -> (q / P'(p), P(p)) on R^2 for an increasing P.

    Horizontal lines go to horizontal lines and each is rescaled towards
    q = 0 by 1/P'; the Jacobian is upper triangular with determinant 1.
    These are exactly the time-one maps of cut-off Hamiltonians q * k(p),
    the family containing the cut-off hyperbolic Hamiltonian qp.
    ``inverted`` selects the inverse map.
    """

    profile: SlopeProfile
    inverted: bool = False
    kind = "fiber_stretch"
    dim = 2

    def _forward(self, X):
        q, p = X[:, 0], X[:, 1]
        s, s2 = self.profile.deriv(p), self.profile.deriv2(p)
        Y = np.column_stack([q / s, self.profile(p)])
        D = np.zeros((len(X), 2, 2))
        D[:, 0, 0] = 1.0 / s
        D[:, 0, 1] = -q * s2 / s**2
        D[:, 1, 1] = s
        return Y, D

    def _backward(self, Y):
        qp, pp = Y[:, 0], Y[:, 1]
        p = self.profile.inverse(pp)
        s, s2 = self.profile.deriv(p), self.profile.deriv2(p)
        X = np.column_stack([qp * s, p])
        # inverse of [[1/s, -q s2/s^2], [0, s]] with q = qp * s
        D = np.zeros((len(Y), 2, 2))
        D[:, 0, 0] = s
        D[:, 0, 1] = qp * s2 / s
        D[:, 1, 1] = 1.0 / s
        return X, D

    def _eval_jac(self, X):
        return self._backward(X) if self.inverted else self._forward(X)

    def inverse(self):
        return FiberStretch(self.profile, not self.inverted)

    def to_dict(self):
        return {"kind": self.kind, "profile": self.profile.to_dict(), "inverted": self.inverted}

    @classmethod
    def _from_dict(cls, d):
        return cls(SlopeProfile.from_dict(d["profile"]), bool(d.get("inverted", False)))


@_register
@dataclass(frozen=True)
class HamFlow(MapExpr):
    """Time-t Hamiltonian flow.

    Linear Hamiltonians use the closed form x + t v0 unless ``integrate`` is
    set, in which case the generic integrator runs (used as an oracle).
    """

    h: HamiltonianSpec
    t: float
    integrate: bool = False
    kind = "ham_flow"

    @property
    def dim(self):
        return self.h.dim

    def _closed_form(self):
        return isinstance(self.h, LinearHamiltonian) and not self.integrate

    def _flat_split(self, X):
        """Points whose trajectory stays where a step cut-off is flat.

        Below the lower threshold the field vanishes, so those points are
        fixed; points that stay above the upper threshold for the whole time
        move by the constant field t v0.  Both are exact, so only the
        transition strip is integrated.  Returns (fixed, moved) masks or None.
        """
        h = self.h
        if self.integrate or not isinstance(h, CutoffLinearHamiltonian) or h.rho.kind != "step":
            return None
        a, b = h.rho.thresholds
        q = X[:, h.index]
        drift = abs(self.t * h.base.v0[h.index])
        return q <= a, q - drift >= b

    def _eval(self, X):
        if self._closed_form():
            return X + self.t * np.asarray(self.h.v0)
        split = self._flat_split(X)
        if split is None:
            return integrate_flow(self.h, self.t, X)
        fixed, moved = split
        Y = X.copy()
        Y[moved] += self.t * np.asarray(self.h.base.v0)
        rest = ~(fixed | moved)
        if np.any(rest):
            Y[rest] = integrate_flow(self.h, self.t, X[rest])
        return Y

    def _eval_jac(self, X):
        eye = np.broadcast_to(np.eye(self.dim), (len(X), self.dim, self.dim)).copy()
        if self._closed_form():
            return self._eval(X), eye
        split = self._flat_split(X)
        if split is None:
            return integrate_flow(self.h, self.t, X, with_jacobian=True)
        fixed, moved = split
        Y = X.copy()
        Y[moved] += self.t * np.asarray(self.h.base.v0)
        rest = ~(fixed | moved)
        if np.any(rest):
            Y[rest], eye[rest] = integrate_flow(self.h, self.t, X[rest], with_jacobian=True)
        return Y, eye

    def inverse(self):
        return HamFlow(self.h, -self.t, self.integrate)

    def to_dict(self):
        return {"kind": self.kind, "h": self.h.to_dict(), "t": self.t,
                "integrate": self.integrate}

    @classmethod
    def _from_dict(cls, d):
        return cls(HamiltonianSpec.from_dict(d["h"]), float(d["t"]), bool(d.get("integrate", False)))


@_register
@dataclass(frozen=True)
class Product2D(MapExpr):
    """A map of one R^2 factor times the identity on the remaining factors."""

    inner: MapExpr
    dim: int
    factor: int = 0
    kind = "product2d"

    def __post_init__(self):
        if self.inner.dim != 2:
            raise ValueError("Product2D needs a map of R^2")
        if not 0 <= self.factor < self.dim // 2:
            raise ValueError("factor index out of range")

    def _eval(self, X):
        i = 2 * self.factor
        Y = X.copy()
        Y[:, i:i + 2] = self.inner._eval(X[:, i:i + 2])
        return Y

    def _eval_jac(self, X):
        i = 2 * self.factor
        Y = X.copy()
        Y2, D2 = self.inner._eval_jac(X[:, i:i + 2])
        Y[:, i:i + 2] = Y2
        D = np.broadcast_to(np.eye(self.dim), (len(X), self.dim, self.dim)).copy()
        D[:, i:i + 2, i:i + 2] = D2
        return Y, D

    def inverse(self):
        return Product2D(self.inner.inverse(), self.dim, self.factor)

    def children(self):
        return (self.inner,)

    def to_dict(self):
        return {"kind": self.kind, "inner": self.inner.to_dict(), "dim": self.dim,
                "factor": self.factor}

    @classmethod
    def _from_dict(cls, d):
        return cls(MapExpr.from_dict(d["inner"]), int(d["dim"]), int(d.get("factor", 0)))


@_register
@dataclass(frozen=True)
class FactorPermute(MapExpr):
    """Swap the 2D factors ``i`` and ``j``."""

    dim: int
    i: int = 0
    j: int = 1
    kind = "factor_permute"

    @property
    def permutation(self):
        perm = np.arange(self.dim)
        a, b = 2 * self.i, 2 * self.j
        perm[[a, a + 1, b, b + 1]] = perm[[b, b + 1, a, a + 1]]
        return perm

    def _eval(self, X):
        return X[:, self.permutation]

    def _eval_jac(self, X):
        P = np.eye(self.dim)[self.permutation]
        return self._eval(X), np.broadcast_to(P, (len(X), self.dim, self.dim)).copy()

    def inverse(self):
        return self

    def to_dict(self):
        return {"kind": self.kind, "dim": self.dim, "i": self.i, "j": self.j}

    @classmethod
    def _from_dict(cls, d):
        return cls(int(d["dim"]), int(d["i"]), int(d["j"]))


@_register
@dataclass(frozen=True)
class Compose(MapExpr):
    """Compose([a, b, c]) is a o b o c: the last map is applied first."""

    maps: tuple
    kind = "compose"

    def __post_init__(self):
        maps = tuple(self.maps)
        if not maps:
            raise ValueError("Compose needs at least one map")
        if len({m.dim for m in maps}) != 1:
            raise ValueError("composed maps must share a dimension")
        object.__setattr__(self, "maps", maps)

    @property
    def dim(self):
        return self.maps[0].dim

    def _eval(self, X):
        for m in reversed(self.maps):
            X = m._eval(X)
        return X

    def _eval_jac(self, X):
        D = None
        for m in reversed(self.maps):
            X, Dm = m._eval_jac(X)
            D = Dm if D is None else Dm @ D
        return X, D

    def inverse(self):
        return Compose(tuple(m.inverse() for m in self.maps[::-1]))

    def children(self):
        return self.maps

    def to_dict(self):
        return {"kind": self.kind, "maps": [m.to_dict() for m in self.maps]}

    @classmethod
    def _from_dict(cls, d):
        return cls(tuple(MapExpr.from_dict(m) for m in d["maps"]))


@dataclass(frozen=True)
class HalfSpace:
    """Region {x : x[index] > threshold} (or >= when not strict)."""

    index: int
    threshold: float = 0.0
    strict: bool = True

    def contains(self, X):
        X = np.atleast_2d(X)
        v = X[:, self.index]
        return v > self.threshold if self.strict else v >= self.threshold

    def to_dict(self):
        return {"index": self.index, "threshold": self.threshold, "strict": self.strict}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["index"]), float(d.get("threshold", 0.0)), bool(d.get("strict", True)))


@dataclass(frozen=True)
class AgreementBand:
    """Axis-aligned box (``None`` = unbounded side) where glued branches agree."""

    bounds: tuple

    def __post_init__(self):
        object.__setattr__(self, "bounds", tuple(
            (None if lo is None else float(lo), None if hi is None else float(hi))
            for lo, hi in self.bounds))

    def contains(self, X):
        X = np.atleast_2d(X)
        ok = np.ones(len(X), dtype=bool)
        for k, (lo, hi) in enumerate(self.bounds):
            if lo is not None:
                ok &= X[:, k] >= lo
            if hi is not None:
                ok &= X[:, k] <= hi
        return ok

    def sample(self, count, rng, fallback=1.0):
        lo = np.array([-fallback if b[0] is None else b[0] for b in self.bounds])
        hi = np.array([fallback if b[1] is None else b[1] for b in self.bounds])
        return lo + (hi - lo) * rng.random((count, len(self.bounds)))

    def to_dict(self):
        return {"bounds": [list(b) for b in self.bounds]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(tuple(b) for b in d["bounds"]))


@_register
@dataclass(frozen=True)
class PiecewiseGlue(MapExpr):
    """``plus`` on ``region``, ``minus`` elsewhere.

    The agreement band is mandatory: it is where both branches must coincide
    (values and Jacobians) for the glued map to be smooth, and it is what
    :func:`glue_check` tests.
    """

    region: HalfSpace
    plus: MapExpr
    minus: MapExpr
    band: AgreementBand
    kind = "piecewise_glue"

    def __post_init__(self):
        if self.band is None:
            raise ValueError("PiecewiseGlue requires an agreement band")
        if self.plus.dim != self.minus.dim:
            raise ValueError("glued branches must share a dimension")

    @property
    def dim(self):
        return self.plus.dim

    def _split(self, X, method):
        mask = self.region.contains(X)
        Y = np.empty_like(X)
        D = np.empty((len(X), self.dim, self.dim))
        for sel, branch in ((mask, self.plus), (~mask, self.minus)):
            if np.any(sel):
                if method == "eval":
                    Y[sel] = branch._eval(X[sel])
                else:
                    Y[sel], D[sel] = branch._eval_jac(X[sel])
        return Y, D

    def _eval(self, X):
        return self._split(X, "eval")[0]

    def _eval_jac(self, X):
        return self._split(X, "jac")

    def children(self):
        return (self.plus, self.minus)

    def to_dict(self):
        return {"kind": self.kind, "region": self.region.to_dict(), "plus": self.plus.to_dict(),
                "minus": self.minus.to_dict(), "band": self.band.to_dict()}

    @classmethod
    def _from_dict(cls, d):
        return cls(HalfSpace.from_dict(d["region"]), MapExpr.from_dict(d["plus"]),
                   MapExpr.from_dict(d["minus"]), AgreementBand.from_dict(d["band"]))


@_register
@dataclass(frozen=True)
class Rescaled(MapExpr):
    """Conjugate by a global dilation: x -> inner(c x) / c.

    The dilation multiplies the symplectic form by c^2 on the way in and by
    c^-2 on the way out, so the conjugate of a symplectic map is symplectic.
    """

    inner: MapExpr
    scale: float
    kind = "rescaled"

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    @property
    def dim(self):
        return self.inner.dim

    def _eval(self, X):
        return self.inner._eval(self.scale * X) / self.scale

    def _eval_jac(self, X):
        Y, D = self.inner._eval_jac(self.scale * X)
        return Y / self.scale, D

    def inverse(self):
        return Rescaled(self.inner.inverse(), self.scale)

    def children(self):
        return (self.inner,)

    def to_dict(self):
        return {"kind": self.kind, "inner": self.inner.to_dict(), "scale": self.scale}

    @classmethod
    def _from_dict(cls, d):
        return cls(MapExpr.from_dict(d["inner"]), float(d["scale"]))


# --------------------------------------------------------------------------
# verification
# --------------------------------------------------------------------------


@dataclass
class CheckReport:
    name: str
    passed: bool
    value: float
    tol: float
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {"name": self.name, "passed": bool(self.passed), "value": float(self.value),
                "tol": float(self.tol), "details": self.details}


def _points(cloud):
    return np.atleast_2d(np.asarray(getattr(cloud, "points", cloud), dtype=float))


def symplectic_residuals(expr, points, mode="analytic"):
    X = _points(points)
    if len(X) == 0:
        return np.zeros(0)
    D = expr.jacobian(X, mode=mode)
    J = standard_J(expr.dim)
    R = np.einsum("nji,jk,nkl->nil", D, J, D) - J
    return np.max(np.abs(R), axis=(1, 2))


def check_symplectic(expr, cloud, tol=1e-6, histogram_bins=12):
    """Max over the cloud of ||D^T J D - J||_inf; PASS iff <= tol."""
    res = symplectic_residuals(expr, cloud)
    worst = float(res.max()) if res.size else 0.0
    details = {"points": int(res.size)}
    if res.size:
        edges = np.concatenate([[0.0], np.logspace(-16, 0, histogram_bins), [np.inf]])
        counts, _ = np.histogram(res, bins=edges)
        details["histogram"] = {"edges": [float(e) for e in edges[1:-1]],
                                "counts": counts.tolist()}
        details["argmax"] = int(np.argmax(res))
    return CheckReport("symplecticity", worst <= tol, worst, tol, details)


def thin_cloud(X, min_sep):
    """Greedy thinning so that kept points are pairwise >= min_sep apart."""
    X = _points(X)
    if len(X) < 2 or min_sep <= 0:
        return np.arange(len(X))
    # repeated points (finite sets sampled many times) would flood the pair list
    first = np.sort(np.unique(X, axis=0, return_index=True)[1])
    if len(first) < len(X):
        return first[thin_cloud(X[first], min_sep)]
    pairs = cKDTree(X).query_pairs(min_sep, output_type="ndarray")
    keep = np.ones(len(X), dtype=bool)
    if len(pairs):
        pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
        for a, b in pairs:
            if keep[a] and keep[b]:
                keep[b] = False
    return np.flatnonzero(keep)


def check_injective(expr, cloud, min_preimage_sep=1e-4, images=None):
    """Min distance between images of distinct points of a thinned cloud."""
    X = _points(cloud)
    idx = thin_cloud(X, min_preimage_sep)
    X = X[idx]
    if len(X) < 2:
        return CheckReport("injectivity", True, np.inf, 0.0,
                           {"points": int(len(X)), "min_preimage_sep": min_preimage_sep})
    Y = expr(X) if images is None else np.asarray(images)[idx]
    dist, nn = cKDTree(Y).query(Y, k=2, workers=workers())
    # with coincident images the tree may list the point itself second
    own = nn[:, 1] == np.arange(len(Y))
    nn[own, 1] = nn[own, 0]
    k = int(np.argmin(dist[:, 1]))
    margin = float(dist[k, 1])
    details = {"points": int(len(X)), "min_preimage_sep": min_preimage_sep,
               "pair": [int(idx[k]), int(idx[nn[k, 1]])],
               "preimage_distance": float(np.linalg.norm(X[k] - X[nn[k, 1]]))}
    if margin <= 0:
        details["witness"] = [X[k].tolist(), X[nn[k, 1]].tolist()]
    return CheckReport("injectivity", margin > 0, margin, 0.0, details)


def glue_check(glue, band_cloud, tol=1e-8):
    """Max discrepancy of the two branches (values and Jacobians) on the band."""
    X = _points(band_cloud)
    inside = glue.band.contains(X)
    X = X[inside]
    if len(X) == 0:
        return CheckReport("glue", True, 0.0, tol, {"points": 0})
    Yp, Dp = glue.plus._eval_jac(X)
    Ym, Dm = glue.minus._eval_jac(X)
    dv = float(np.max(np.abs(Yp - Ym)))
    dj = float(np.max(np.abs(Dp - Dm)))
    worst = max(dv, dj)
    return CheckReport("glue", worst <= tol, worst, tol,
                       {"points": int(len(X)), "value_discrepancy": dv,
                        "jacobian_discrepancy": dj,
                        "rejected_outside_band": int((~inside).sum())})


def disk_image_area(expr2d, center, radius, samples, seed, pad=1.05):
    """Monte Carlo area of expr2d(disk) by membership through the inverse map.

    Returns (area, standard_error).
    """
    rng = np.random.default_rng(seed)
    center = np.asarray(center, dtype=float)
    theta = np.linspace(0.0, 2.0 * np.pi, 2048, endpoint=False)
    ring = center + radius * np.column_stack([np.cos(theta), np.sin(theta)])
    ang = rng.random(4096) * 2 * np.pi
    inner = center + rng.random((4096, 1)) ** 0.5 * radius * np.column_stack(
        [np.cos(ang), np.sin(ang)])
    img = expr2d(np.vstack([ring, inner]))
    lo, hi = img.min(axis=0), img.max(axis=0)
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo) * pad + 1e-12
    lo, hi = mid - half, mid + half
    box_area = float(np.prod(hi - lo))
    inv = expr2d.inverse()
    hits = 0
    chunk = 200_000
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        Y = lo + (hi - lo) * rng.random((m, 2))
        X = inv(Y)
        hits += int(np.count_nonzero(np.sum((X - center) ** 2, axis=1) < radius**2))
        done += m
    frac = hits / samples
    return box_area * frac, box_area * np.sqrt(frac * (1 - frac) / samples)
