"""Uniform B-spline math on control-point spans.

A span is the (k+1) x 3 stacked matrix of consecutive control points that
supports one knot interval. Evaluation, control cost, derivative-span
transforms and closed-form extrema all reduce to small dense matrix
algebra against cached per-degree blending tables.
"""

from dataclasses import dataclass, field
from functools import lru_cache
from math import comb, factorial

import numpy as np

from . import kernels

SUPPORTED_EVAL_DEGREES = range(1, 8)
EXTREMA_DEGREES = (3, 5)


def blending_matrix(k: int) -> np.ndarray:
    """(k+1)x(k+1) uniform B-spline blending matrix M_k.

    Entries follow the combinatorial closed form
    m[i, j] = C(k, k-i)/k! * sum_{s=j..k} (-1)^(s-j) C(k+1, s-j) (k-s)^(k-i)
    so that a span evaluates as b(u)^T M_k P with b = [1, u, .., u^k].
    """
    if not (0 <= k <= 7):
        raise ValueError(f"degree {k} outside supported range 0..7")
    M = np.zeros((k + 1, k + 1))
    for i in range(k + 1):
        for j in range(k + 1):
            acc = 0.0
            for s in range(j, k + 1):
                acc += (-1.0) ** (s - j) * comb(k + 1, s - j) * float(k - s) ** (k - i)
            M[i, j] = comb(k, k - i) * acc / factorial(k)
    return M


def _basis_derivative_map(k: int, l: int) -> np.ndarray:
    """C_l with d^l b / du^l = C_l b for the monomial basis b."""
    C = np.zeros((k + 1, k + 1))
    for i in range(1, k + 1):
        C[i, i - 1] = i
    return np.linalg.matrix_power(C, l)


@dataclass(frozen=True)
class BlendingTables:
    """Immutable per-degree tables shared by every span operation.

    cost_mat(l) returns M^T Q_l M without the 1/dt^(2l-1) scale, and
    bound_transform(l, dt) the derivative-span map S_l including 1/dt^l.
    """

    k: int
    M: np.ndarray
    Minv: np.ndarray
    _C: tuple = field(repr=False, default=())
    _cost: tuple = field(repr=False, default=())

    def C(self, l: int) -> np.ndarray:
        if not (0 <= l <= self.k):
            raise ValueError(f"derivative order {l} outside 0..{self.k}")
        return self._C[l]

    def cost_mat(self, l: int) -> np.ndarray:
        if not (1 <= l <= self.k):
            raise ValueError(f"cost order {l} outside 1..{self.k}")
        return self._cost[l]

    def bound_transform(self, l: int, dt: float) -> np.ndarray:
        """S_l = M^-1 C_l^T M / dt^l mapping a span to its derivative span."""
        return self.Minv @ self.C(l).T @ self.M / dt**l


@lru_cache(maxsize=None)
def blending_tables(k: int) -> BlendingTables:
    M = blending_matrix(k)
    Minv = np.linalg.inv(M)
    Cs = []
    for l in range(k + 1):
        C = _basis_derivative_map(k, l)
        Cs.append(C)
    # H[i, j] = integral of u^(i+j) over [0, 1]
    H = np.array([[1.0 / (i + j + 1) for j in range(k + 1)] for i in range(k + 1)])
    costs = [None]
    for l in range(1, k + 1):
        Q = Cs[l] @ H @ Cs[l].T
        cm = M.T @ Q @ M
        cm = 0.5 * (cm + cm.T)
        costs.append(cm)
    return BlendingTables(k=k, M=M, Minv=Minv, _C=tuple(Cs), _cost=tuple(costs))


@dataclass(frozen=True)
class DerivativeBounds:
    """Per-axis min/max for velocity (order 1) and acceleration (order 2)."""

    v_min: np.ndarray
    v_max: np.ndarray
    a_min: np.ndarray
    a_max: np.ndarray

    @staticmethod
    def symmetric(v: float, a: float) -> "DerivativeBounds":
        v3 = np.full(3, float(v))
        a3 = np.full(3, float(a))
        return DerivativeBounds(-v3, v3, -a3, a3)

    def __post_init__(self):
        for lo, hi in ((self.v_min, self.v_max), (self.a_min, self.a_max)):
            if np.any(np.asarray(lo) > np.asarray(hi)):
                raise ValueError("bounds require min <= max per axis")


@dataclass(frozen=True)
class SplineDef:
    """Uniform B-spline: degree, knot spacing and a 3-D control point row list.

    Knots are implicit at i*dt. The curve domain covers n-k+1 spans; span j
    is supported by control points j..j+k.
    """

    k: int
    dt: float
    points: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=float))
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError("control points must be (n+1, 3)")
        if pts.shape[0] < self.k + 1:
            raise ValueError("need at least k+1 control points")
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ValueError("knot spacing must be positive and finite")
        if not np.all(np.isfinite(pts)):
            raise ValueError("control points must be finite")
        object.__setattr__(self, "points", pts)

    @property
    def n_spans(self) -> int:
        return self.points.shape[0] - self.k

    @property
    def duration(self) -> float:
        return self.n_spans * self.dt

    def span(self, j: int) -> np.ndarray:
        if not (0 <= j < self.n_spans):
            raise IndexError(f"span {j} outside 0..{self.n_spans - 1}")
        return self.points[j:j + self.k + 1]

    def eval(self, t: float, l: int = 0) -> np.ndarray:
        """Derivative of order l at trajectory time t in [0, duration]."""
        j = min(int(t / self.dt), self.n_spans - 1)
        j = max(j, 0)
        u = t / self.dt - j
        return eval_span(self.span(j), min(max(u, 0.0), 1.0), l, self.dt)

    def sample(self, step: float, l: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """(times, values) on a uniform grid including both endpoints."""
        n = max(int(np.ceil(self.duration / step)), 1)
        ts = np.linspace(0.0, self.duration, n + 1)
        out = np.empty((ts.size, 3))
        for i, t in enumerate(ts):
            out[i] = self.eval(t, l)
        return ts, out

    def cost(self, l: int) -> float:
        """Total order-l control cost, summed over every span."""
        return sum(span_cost(self.span(j), l, self.dt) for j in range(self.n_spans))


def eval_span(P, u: float, l: int, dt: float) -> np.ndarray:
    """l-th time derivative of a span at normalized u in [0, 1]."""
    P = np.asarray(P, dtype=float)
    k = P.shape[0] - 1
    if not (0 <= l <= k):
        raise ValueError(f"derivative order {l} outside 0..{k}")
    if not (0.0 <= u <= 1.0):
        raise ValueError("u outside [0, 1]")
    tab = blending_tables(k)
    out = np.empty(3)
    kernels.eval_span_kernel(P, tab.M, float(u), l, float(dt), out)
    return out


def eval_span_many(P, us, l: int, dt: float) -> np.ndarray:
    """Vectorized eval_span over an array of u values, (len(us), 3)."""
    P = np.asarray(P, dtype=float)
    k = P.shape[0] - 1
    if not (0 <= l <= k):
        raise ValueError(f"derivative order {l} outside 0..{k}")
    us = np.asarray(us, dtype=float)
    tab = blending_tables(k)
    i = np.arange(k + 1)
    ff = np.zeros(k + 1)
    ff[l:] = [np.prod(np.arange(m - l + 1, m + 1)) if l else 1.0 for m in range(l, k + 1)]
    ex = np.maximum(i - l, 0)
    B = ff * us[:, None] ** ex
    B[:, :l] = 0.0
    return (B @ tab.M @ P) / dt**l


def span_cost(P, l: int, dt: float) -> float:
    """Integral over the span of the squared l-th time derivative."""
    P = np.asarray(P, dtype=float)
    k = P.shape[0] - 1
    if not (1 <= l <= k):
        raise ValueError(f"cost order {l} outside 1..{k}")
    tab = blending_tables(k)
    val = float(kernels.span_cost_kernel(P, tab.cost_mat(l), dt ** (1 - 2 * l)))
    return max(val, 0.0)


def derivative_span(P, l: int, dt: float) -> np.ndarray:
    """Control-point span of the l-th derivative: S_l P.

    Evaluating the returned rows through b^T M_k reproduces the l-th time
    derivative of the original span, so per-axis row bounds on it bound the
    whole derivative profile (sufficient condition).
    """
    P = np.asarray(P, dtype=float)
    k = P.shape[0] - 1
    if not (0 <= l <= k):
        raise ValueError(f"derivative order {l} outside 0..{k}")
    return blending_tables(k).bound_transform(l, dt) @ P


def span_extrema(P, l: int, dt: float) -> np.ndarray:
    """Tight per-axis (min, max) of the l-th derivative over u in [0, 1].

    Closed form: roots of the derivative polynomial (cubic at worst for the
    supported degrees) plus interval endpoints. Returns a (3, 2) array.
    """
    P = np.asarray(P, dtype=float)
    k = P.shape[0] - 1
    if k not in EXTREMA_DEGREES or l not in (1, 2):
        raise ValueError(f"extrema unsupported for degree {k}, order {l}")
    tab = blending_tables(k)
    out = np.empty((3, 2))
    kernels.span_extrema_kernel(P, tab.M, l, float(dt), out)
    return out


def check_feasible(P, bounds: DerivativeBounds, dt: float) -> bool:
    """True iff velocity and acceleration extrema respect bounds per axis."""
    P = np.asarray(P, dtype=float)
    k = P.shape[0] - 1
    if k not in EXTREMA_DEGREES:
        raise ValueError(f"feasibility check unsupported for degree {k}")
    tab = blending_tables(k)
    return bool(kernels.span_feasible_kernel(
        P, tab.M, float(dt),
        np.asarray(bounds.v_min, dtype=float), np.asarray(bounds.v_max, dtype=float),
        np.asarray(bounds.a_min, dtype=float), np.asarray(bounds.a_max, dtype=float)))


def position_extrema_axis(p_axis, k: int, u_lo: float = 0.0,
                          u_hi: float = 1.0) -> tuple[float, float]:
    """(min, max) of one axis of a span position profile over [u_lo, u_hi].

    The derivative polynomial has degree k-1; real roots come from the
    companion matrix with a Newton polish, so any supported degree works.
    Used by the offline deviation certification.
    """
    a = blending_tables(k).M @ np.asarray(p_axis, dtype=float)
    lo = float(np.polynomial.polynomial.polyval(u_lo, a))
    hi = float(np.polynomial.polynomial.polyval(u_hi, a))
    if lo > hi:
        lo, hi = hi, lo
    d = np.polynomial.polynomial.polyder(a)
    d = np.trim_zeros(d, "b")
    if d.size > 1:
        roots = np.polynomial.polynomial.polyroots(d)
        dd = np.polynomial.polynomial.polyder(d)
        for r in roots:
            if abs(r.imag) > 1e-9:
                continue
            x = float(r.real)
            for _ in range(3):
                fp = np.polynomial.polynomial.polyval(x, dd)
                if fp == 0.0:
                    break
                x -= np.polynomial.polynomial.polyval(x, d) / fp
            if u_lo < x < u_hi:
                v = float(np.polynomial.polynomial.polyval(x, a))
                lo = min(lo, v)
                hi = max(hi, v)
    return lo, hi


def insert_control_point(spline: SplineDef, index: int, point) -> SplineDef:
    """New SplineDef with point inserted before control point index.

    The knot spacing is unchanged; the span count grows by exactly one.
    """
    n1 = spline.points.shape[0]
    if not (0 <= index <= n1):
        raise IndexError(f"insert index {index} outside 0..{n1}")
    point = np.asarray(point, dtype=float).reshape(3)
    if not np.all(np.isfinite(point)):
        raise ValueError("inserted point must be finite")
    pts = np.insert(spline.points, index, point, axis=0)
    return SplineDef(k=spline.k, dt=spline.dt, points=pts)
