"""Constructive barriers for the nonlocal problem and grid checks of their inequalities.

Four objects are built here:

* the supersolution family ``v(t, x) = exp(-delta t) xi x**omega``;
* a tamed nonlinearity ``H`` with ``u < H(u) <= F(u)``, linear near 0 and
  convex near the fixed point ``Xi``;
* the base functions ``v_omega`` on ``[0, 1]``, produced by a descent in
  ``omega`` that starts from ``v_1(x) = x``;
* the self-similar scaffold ``w`` with ``w(x) = H(w(B x))`` for ``x >= 1/B``.

Every inequality is checked on a grid.  These are numerical certificates,
not interval-arithmetic proofs.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import BPoly
from scipy.optimize import minimize_scalar

from .errors import ConstructionError, DomainError, PreconditionError
from .nonlinearity import as_nonlinearity

PASS_TOL = 1e-8
CONTINUITY_TOL = 1e-10
JUMP_TOL = 1e-12
CHECK_POINTS = 10_000
TAIL_POINTS = 20_001
DELTA_SAFETY = 0.98


@dataclass
class CertificateReport:
    min_residual: float
    argmin_x: float
    grid_size: int
    passed: bool
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "min_residual": self.min_residual,
            "argmin_x": self.argmin_x,
            "grid_size": self.grid_size,
            "passed": self.passed,
            "details": self.details,
        }


def _report(residual: np.ndarray, x: np.ndarray, details=None) -> CertificateReport:
    i = int(np.argmin(residual))
    lo = float(residual[i])
    return CertificateReport(lo, float(x[i]), int(len(x)), bool(lo >= -PASS_TOL), details or {})


def offset_grid(lo: float, hi: float, n: int = CHECK_POINTS, log: bool = False) -> np.ndarray:
    """Cell midpoints of an ``n``-cell partition of ``[lo, hi]``, optionally log-spaced."""
    if log:
        edges = np.linspace(math.log(lo), math.log(hi), n + 1)
        return np.exp(0.5 * (edges[1:] + edges[:-1]))
    edges = np.linspace(lo, hi, n + 1)
    return 0.5 * (edges[1:] + edges[:-1])


# --- piecewise functions -----------------------------------------------------


@dataclass(frozen=True)
class PowerPiece:
    """``a * x**omega + c``; ``omega = 1`` gives a linear piece."""

    a: float
    omega: float
    c: float = 0.0

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        w = self.omega
        if w == 1.0:
            return self.a * x + self.c, np.full_like(x, self.a), np.zeros_like(x)
        xw = np.power(x, w)
        with np.errstate(divide="ignore", invalid="ignore"):
            d1 = np.where(x > 0, self.a * w * xw / x, np.inf if w < 1 else 0.0)
            d2 = np.where(x > 0, self.a * w * (w - 1) * xw / (x * x), -np.inf if w < 1 else 0.0)
        return self.a * xw + self.c, d1, d2

    def scaled(self, factor: float) -> "PowerPiece":
        return PowerPiece(self.a * factor, self.omega, self.c * factor)

    def describe(self) -> dict:
        return {"type": "linear" if self.omega == 1.0 else "power",
                "a": self.a, "omega": self.omega, "c": self.c}


@dataclass(frozen=True)
class ComposedPiece:
    """``w(x) = H(w(B x))`` unrolled down to a seed function on ``[0, 1/B]``."""

    H: "HFunction"
    B: float
    seed: "PiecewiseFn"
    factor: float = 1.0

    def levels(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        k = np.zeros(x.shape, dtype=int)
        y = x.copy()
        top = 1.0 / self.B
        while np.any(y > top):
            m = y > top
            y[m] *= self.B
            k[m] += 1
        return k

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        k = self.levels(x)
        y = x * self.B ** k
        v, d1, d2 = self.seed.evaluate(y)
        for level in range(int(k.max(initial=0)), 0, -1):
            m = k >= level
            hv, h1, h2 = self.H.evaluate(v[m])
            d2[m] = self.B**2 * (h2 * d1[m] ** 2 + h1 * d2[m])
            d1[m] = self.B * h1 * d1[m]
            v[m] = hv
        return self.factor * v, self.factor * d1, self.factor * d2

    def scaled(self, factor: float) -> "ComposedPiece":
        return ComposedPiece(self.H, self.B, self.seed, self.factor * factor)

    def describe(self) -> dict:
        return {"type": "composed", "B": self.B, "factor": self.factor,
                "H": self.H.describe()}


class PiecewiseFn:
    """Function on ``[breakpoints[0], breakpoints[-1]]`` given piece by piece.

    Piece ``i`` lives on ``[breakpoints[i], breakpoints[i+1]]``; a point on
    a breakpoint is evaluated with the piece to its right.
    """

    def __init__(self, breakpoints: Sequence[float], pieces: Sequence):
        bp = np.asarray(breakpoints, dtype=float)
        if len(bp) != len(pieces) + 1:
            raise ValueError("need one more breakpoint than pieces")
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        self.breakpoints = bp
        self.pieces = list(pieces)

    @property
    def x_max(self) -> float:
        return float(self.breakpoints[-1])

    def evaluate(self, x):
        """Value, first and second derivative at ``x``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        idx = np.clip(np.searchsorted(self.breakpoints, x, side="right") - 1,
                      0, len(self.pieces) - 1)
        v = np.empty_like(x)
        d1 = np.empty_like(x)
        d2 = np.empty_like(x)
        for i in np.unique(idx):
            m = idx == i
            v[m], d1[m], d2[m] = self.pieces[i].eval(x[m])
        return v, d1, d2

    def __call__(self, x):
        return self.evaluate(x)[0]

    def d1(self, x):
        return self.evaluate(x)[1]

    def d2(self, x):
        return self.evaluate(x)[2]

    def one_sided(self, i: int):
        """Values and slopes on both sides of interior breakpoint ``i``."""
        x = np.array([self.breakpoints[i]])
        left = self.pieces[i - 1].eval(x)
        right = self.pieces[i].eval(x)
        return float(left[0][0]), float(right[0][0]), float(left[1][0]), float(right[1][0])

    def junctions(self) -> list[dict]:
        out = []
        for i in range(1, len(self.pieces)):
            vl, vr, sl, sr = self.one_sided(i)
            out.append({
                "x": float(self.breakpoints[i]),
                "gap": vr - vl,
                "slope_left": sl,
                "slope_right": sr,
                "continuous": abs(vr - vl) <= CONTINUITY_TOL * max(1.0, abs(vl)),
                "upward": sl < sr + JUMP_TOL,
            })
        return out

    def scaled_piece(self, index: int, factor: float) -> "PiecewiseFn":
        """Copy with piece ``index`` multiplied by ``factor``."""
        pieces = list(self.pieces)
        pieces[index] = pieces[index].scaled(factor)
        return PiecewiseFn(self.breakpoints, pieces)

    def describe(self) -> dict:
        return {"breakpoints": [float(b) for b in self.breakpoints],
                "pieces": [p.describe() for p in self.pieces]}

    def to_json(self, **extra) -> str:
        return json.dumps({**self.describe(), **extra})

    def write_csv(self, path, x) -> None:
        v, d1, _ = self.evaluate(x)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["x", "w(x)", "w'(x)"])
            for row in zip(np.asarray(x, dtype=float), v, d1):
                wr.writerow([repr(float(c)) for c in row])


# --- supersolution -----------------------------------------------------------


def check_supersolution(delta: float, xi: float, omega: float, F, zeta: float, gamma: float,
                        x_grid, times: Sequence[float] = (0.0, 1.0, 5.0)) -> CertificateReport:
    """Residual of ``v = exp(-delta t) xi x**omega`` as a supersolution.

    The main residual replaces ``F`` by the linear bound ``Upsilon * u``; it
    scales as ``exp(-delta t)`` so ``t = 0`` suffices.  The exact residual with
    ``F`` itself and ``v`` clipped at 1 is also evaluated at ``times``.
    """
    if not 0 < omega <= 1:
        raise DomainError(f"omega must lie in (0, 1], got {omega}")
    x = np.asarray(x_grid, dtype=float)
    if np.any(x <= 0):
        raise DomainError("grid points must be positive")
    Fn = as_nonlinearity(F)
    ups = Fn.Upsilon
    xw = xi * x**omega
    lap = xi * omega * (omega - 1.0) * x ** (omega - 2.0)
    lin = -delta * xw - 0.5 * lap - zeta * (ups * gamma**-omega - 1.0) * xw

    exact = {}
    worst = lin.copy()
    for t in times:
        s = math.exp(-delta * t)
        v = s * xw
        vg = s * xi * (x / gamma) ** omega
        clipped = v >= 1.0
        rt = np.where(
            clipped,
            -zeta * (Fn(np.minimum(vg, 1.0)) - 1.0),
            -delta * v - 0.5 * s * lap - zeta * (Fn(np.minimum(vg, 1.0)) - v),
        )
        exact[str(t)] = float(rt.min())
        worst = np.minimum(worst, rt)
    i_lin = int(np.argmin(lin))
    rep = _report(worst, x, {
        "linear_bound_min": float(lin[i_lin]),
        "linear_bound_argmin": float(x[i_lin]),
        "exact_min_by_time": exact,
        "delta_bound": zeta * (1.0 - ups * gamma**-omega),
        "upsilon": ups,
    })
    return rep


# --- H -------------------------------------------------------------------------


class _ConvexTail:
    """``h`` with ``h'' = k`` piecewise linear on a grid of ``[0, 1/2]``, integrated exactly."""

    def __init__(self, x: np.ndarray, k: np.ndarray):
        self.x = x
        self.k = k
        dx = np.diff(x)
        self.s = np.diff(k) / dx
        h1 = np.zeros_like(x)
        h0 = np.zeros_like(x)
        h1[1:] = np.cumsum(k[:-1] * dx + 0.5 * self.s * dx**2)
        h0[1:] = np.cumsum(h1[:-1] * dx + 0.5 * k[:-1] * dx**2 + self.s * dx**3 / 6.0)
        self.h0, self.h1 = h0, h1

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        i = np.clip(np.searchsorted(self.x, y, side="right") - 1, 0, len(self.s) - 1)
        t = y - self.x[i]
        k, s = self.k[i], self.s[i]
        v = self.h0[i] + self.h1[i] * t + 0.5 * k * t**2 + s * t**3 / 6.0
        d1 = self.h1[i] + k * t + 0.5 * s * t**2
        d2 = k + s * t
        return v, d1, d2


def _running_min_from_right(values: np.ndarray) -> np.ndarray:
    return np.minimum.accumulate(values[::-1])[::-1]


class HFunction:
    """Tamed nonlinearity on ``[0, Xi]``, stored in the scaled variable ``s = u / Xi``.

    Segments (scaled): ``f s`` on ``[0, a]``; a quintic Hermite on
    ``[a, r]``; on ``[r, 1]`` the convex tail ``s + c (1 - s) + h(1 - s)``.
    """

    def __init__(self, Xi, f_slope, a, r, c, tail: _ConvexTail, middle: BPoly, delta2, G):
        self.Xi = float(Xi)
        self.f_slope = float(f_slope)
        self.a = float(a)
        self.r = float(r)
        self.c = float(c)
        self.tail = tail
        self.middle = middle
        self._m1 = middle.derivative(1)
        self._m2 = middle.derivative(2)
        self.delta2 = float(delta2)
        self._G = G

    @property
    def delta(self) -> float:
        return self.Xi * min(self.a, 1.0 - self.r)

    @property
    def knots(self) -> tuple[float, float]:
        return self.Xi * self.a, self.Xi * self.r

    def _scaled(self, s):
        s = np.asarray(s, dtype=float)
        v = np.empty_like(s)
        d1 = np.empty_like(s)
        d2 = np.empty_like(s)
        lo = s <= self.a
        hi = s >= self.r
        mid = ~(lo | hi)
        v[lo] = self.f_slope * s[lo]
        d1[lo] = self.f_slope
        d2[lo] = 0.0
        if mid.any():
            v[mid] = self.middle(s[mid])
            d1[mid] = self._m1(s[mid])
            d2[mid] = self._m2(s[mid])
        if hi.any():
            y = 1.0 - s[hi]
            hv, h1, h2 = self.tail(y)
            v[hi] = s[hi] + self.c * y + hv
            d1[hi] = 1.0 - self.c - h1
            d2[hi] = h2
        return v, d1, d2

    def evaluate(self, u):
        u = np.asarray(u, dtype=float)
        v, d1, d2 = self._scaled(u / self.Xi)
        return self.Xi * v, d1, d2 / self.Xi

    def __call__(self, u):
        return self.evaluate(u)[0]

    def derivative(self, u):
        return self.evaluate(u)[1]

    def second_derivative(self, u):
        return self.evaluate(u)[2]

    def invariants(self, points: int = CHECK_POINTS) -> dict:
        """Grid margins of the defining properties."""
        u = self.Xi * offset_grid(0.0, 1.0, points)
        v, d1, d2 = self.evaluate(u)
        G = self._G(u)
        ends = self.evaluate(np.array([0.0, self.Xi]))
        conv = u >= self.Xi - self.delta
        return {
            "H0": float(ends[0][0]),
            "H_Xi_error": float(ends[0][1] - self.Xi),
            "min_H_minus_u": float(np.min(v - u)),
            "min_F_minus_H": float(np.min(G - v)),
            "min_H_prime": float(min(np.min(d1), np.min(ends[1]))),
            "min_H_second_on_tail": float(np.min(d2[conv])) if conv.any() else 0.0,
            "H_prime_at_Xi": float(ends[1][1]),
        }

    def valid(self, points: int = CHECK_POINTS) -> bool:
        inv = self.invariants(points)
        return (abs(inv["H0"]) <= 1e-14 and abs(inv["H_Xi_error"]) <= 1e-10
                and inv["min_H_minus_u"] > 0 and inv["min_F_minus_H"] >= 0
                and inv["min_H_prime"] > 0 and inv["min_H_second_on_tail"] >= -1e-10)

    def describe(self) -> dict:
        return {"Xi": self.Xi, "f_slope": self.f_slope, "delta": self.delta,
                "linear_end": self.Xi * self.a, "tail_start": self.Xi * self.r,
                "tail_slack": self.c}


def _largest_linear_range(G, f, points) -> float:
    """Largest grid ``s`` with ``f t < G(t)`` for every grid ``t`` in ``(0, s]``."""
    s = np.linspace(0.0, 1.0, points + 1)[1:]
    ok = f * s < G(s)
    if not ok[0]:
        return 0.0
    bad = np.flatnonzero(~ok)
    return float(s[bad[0] - 1]) if bad.size else 1.0


def build_H(F, Xi: float, f: float, *, tail_slack: bool = True,
            points: int = CHECK_POINTS) -> HFunction:
    """Construct ``H`` below ``F`` on ``[0, Xi]`` with slope ``f`` at the origin.

    With ``tail_slack`` the convex tail keeps a linear term ``c (Xi - u)``
    so that ``H'(Xi) = 1 - c < 1``; iterates of ``H`` then approach ``Xi``
    geometrically.  Without it the tail touches the diagonal to second
    order at ``Xi`` and the approach is only algebraic.
    """
    Fn = as_nonlinearity(F)
    if not Fn.Fprime0 > 1:
        raise PreconditionError("F'(0) must exceed 1")
    if not Xi > 0:
        raise PreconditionError("Xi must be positive")
    if not 1 < f < Fn.Fprime0:
        raise PreconditionError(f"f must lie in (1, F'(0)) = (1, {Fn.Fprime0:.6g}), got {f}")

    def G(s):
        return Fn(np.asarray(s) * Xi) / Xi

    # tail: work in y = 1 - s on [0, 1/2]
    y = np.linspace(0.0, 0.5, TAIL_POINTS)
    Gt = G(1.0 - y) - (1.0 - y)
    if np.any(Gt[1:] <= 0):
        raise ConstructionError("F(u) <= u somewhere below Xi", y=float(1 - y[1:][Gt[1:] <= 0][0]))
    c = 0.5 * float(np.min(Gt[1:] / y[1:])) if tail_slack else 0.0
    tail = _ConvexTail(y, _running_min_from_right(Gt - c * y))

    delta2 = DELTA_SAFETY * min(_largest_linear_range(G, f, points), 0.5)
    if delta2 <= 0:
        raise ConstructionError("no linear range f*u < F(u) found; f too close to F'(0)",
                                f=f, fprime0=Fn.Fprime0, grid=points)
    a0 = delta2 / f

    def tail_at(r):
        hv, h1, h2 = tail(np.array([1.0 - r]))
        return [r + c * (1 - r) + hv[0], 1.0 - c - h1[0], h2[0]]

    tried = []
    for a in (a0, 0.75 * a0, 0.5 * a0, min(1.5 * a0, delta2), 0.25 * a0):
        for r in (0.5, 0.6, 0.7, 0.8, 0.9, 0.55, 0.65, 0.75):
            if a >= r:
                continue
            middle = BPoly.from_derivatives([a, r], [[f * a, f, 0.0], tail_at(r)])
            H = HFunction(Xi, f, a, r, c, tail, middle, delta2 * Xi, lambda u: Fn(u))
            inv = H.invariants(points)
            tried.append({"a": a, "r": r, **inv})
            if H.valid(points):
                return H
    raise ConstructionError("no middle segment satisfied u < H <= F with H' > 0",
                            attempts=tried)


# --- v_omega -----------------------------------------------------------------


def kappa(f: float, B: float, nu: float, points: int = CHECK_POINTS) -> float:
    """``inf over omega in (0, 1] of f B**omega - 1 + nu omega`` (convex in omega)."""
    om = np.linspace(0.0, 1.0, points + 1)
    vals = f * B**om - 1.0 + nu * om
    i = int(np.argmin(vals))
    best = float(vals[i])
    lo, hi = om[max(i - 1, 0)], om[min(i + 1, points)]
    res = minimize_scalar(lambda s: f * B**s - 1.0 + nu * s, bounds=(lo, hi),
                          method="bounded", options={"xatol": 1e-12})
    return min(best, float(res.fun))


def alpha_lower_bound(f: float, kap: float) -> float:
    return max(1.0 - kap / (f - 1.0), 0.0) ** (1.0 / 3.0)


def omega_ratio_increasing(x: float, omegas: np.ndarray, tol: float = 1e-12) -> bool:
    """Numerical check that ``omega -> (x**omega - 1) / omega`` is increasing."""
    vals = np.expm1(np.asarray(omegas) * math.log(x)) / np.asarray(omegas)
    return bool(np.all(np.diff(vals) >= -tol))


def _tail_slope(M: float, omega: float, m: float) -> float:
    Mw = M**omega
    return omega * Mw / (Mw - 1.0 + omega / m)


def verify_v_omega(v: PiecewiseFn, f: float, B: float, nu: float,
                   points: int = CHECK_POINTS) -> CertificateReport:
    """Grid check of ``0 <= f v(B x) - v(x) + nu x v'(x)`` on ``[0, 1]``."""
    x = offset_grid(0.0, 1.0, points)
    vv, d1, _ = v.evaluate(x)
    res = f * v(B * x) - vv + nu * x * d1
    return _report(res, x)


@dataclass
class VOmega:
    fn: PiecewiseFn
    m_omega: float
    omega: float
    ladder: list

    def __iter__(self):
        yield self.fn
        yield self.m_omega


def build_v_omega(B: float, f: float, nu_over_zeta: float, alpha: float, omega_target: float,
                  points: int = CHECK_POINTS, max_doublings: int = 200) -> VOmega:
    """Descend from ``v_1(x) = x`` to ``omega <= omega_target``.

    Each step lowers ``omega`` by at most a factor ``alpha**2``, glues the
    power tail ``(m / omega)(x**omega - 1) + 1`` at ``x = 1`` with ``m`` the
    midpoint of its admissible interval, and rescales by ``M`` (doubled from
    ``1/B``) until the new end slope lies below ``omega / alpha``.
    """
    if not 0 < B < 1:
        raise DomainError("B must lie in (0, 1)")
    if not f > 1:
        raise DomainError("f must exceed 1")
    if nu_over_zeta < 0:
        raise DomainError("nu must be nonnegative")
    if not 0 < omega_target <= 1:
        raise DomainError("omega_target must lie in (0, 1]")
    kap = kappa(f, B, nu_over_zeta)
    if kap <= 0:
        raise PreconditionError(f"kappa = {kap:.6g} must be positive")
    lb = alpha_lower_bound(f, kap)
    if not lb < alpha < 1:
        raise PreconditionError(f"alpha must lie in ({lb:.6g}, 1), got {alpha}")

    bps = [0.0, 1.0]
    pieces = [PowerPiece(1.0, 1.0, 0.0)]
    omega, m_omega = 1.0, 1.0
    ladder = [{"omega": 1.0, "m_omega": 1.0, "M": None}]
    while omega > omega_target * (1 + 1e-12):
        w2 = max(alpha**2 * omega, omega_target)
        m = 0.5 * (m_omega + alpha**-3 * w2)
        M = 1.0 / B
        for _ in range(max_doublings):
            if _tail_slope(M, w2, m) < w2 / alpha:
                break
            M *= 2.0
        else:
            raise ConstructionError("no rescaling M found", omega=w2, m=m)
        tail = PowerPiece(m / w2, w2, 1.0 - m / w2)
        norm = float(tail.eval(np.array([M]))[0][0])
        new_pieces = []
        for p in pieces:
            new_pieces.append(PowerPiece(p.a * M**p.omega / norm, p.omega, p.c / norm))
        new_pieces.append(PowerPiece(tail.a * M**w2 / norm, w2, tail.c / norm))
        bps = [b / M for b in bps] + [1.0]
        pieces = new_pieces
        omega, m_omega = w2, _tail_slope(M, w2, m)
        ladder.append({"omega": omega, "m_omega": m_omega, "M": M, "m": m})
        if not omega_ratio_increasing(B, np.array([omega, ladder[-2]["omega"]])):
            raise ConstructionError("(x^w - 1)/w failed to increase in w", omega=omega)

    v = PiecewiseFn(bps, pieces)
    rep = verify_v_omega(v, f, B, nu_over_zeta, points)
    if not rep.passed:
        raise ConstructionError("v_omega inequality violated", x=rep.argmin_x,
                                residual=rep.min_residual)
    bad = [j for j in v.junctions() if not (j["continuous"] and j["upward"])]
    if bad:
        raise ConstructionError("v_omega junction failed", junctions=bad)
    return VOmega(v, m_omega, omega, ladder)


# --- w -------------------------------------------------------------------------


def omega0(f: float, B: float) -> float:
    return -math.log(f) / math.log(B)


@dataclass
class Scaffold:
    fn: PiecewiseFn
    H: HFunction
    B: float
    delta: float
    omega0: float
    checks: dict

    def __call__(self, x):
        return self.fn(x)

    def evaluate(self, x):
        return self.fn.evaluate(x)

    def scaled_piece(self, index, factor):
        return self.fn.scaled_piece(index, factor)


def build_w(H: HFunction, B: float, v_omega, delta: float | None = None,
            x_max: float | None = None, points: int = CHECK_POINTS) -> Scaffold:
    """Assemble ``w`` from the seed ``(delta/f) v_omega`` and the recursion through ``H``.

    ``v_omega`` is a :class:`VOmega` (or a ``(fn, m_omega, omega)`` tuple).
    """
    if isinstance(v_omega, VOmega):
        v, m_omega, om = v_omega.fn, v_omega.m_omega, v_omega.omega
    else:
        v, m_omega, om = v_omega
    f = H.f_slope
    delta = H.delta if delta is None else float(delta)
    if not 0 < delta <= H.delta * (1 + 1e-12):
        raise PreconditionError("delta must lie in (0, H.delta]")
    w0 = omega0(f, B)
    if not m_omega < w0:
        raise ConstructionError("end slope m_omega must be below omega0",
                                m_omega=m_omega, omega0=w0)
    xs = offset_grid(B, 1.0, points)
    glue = v(xs) - xs**w0
    if glue.min() < -1e-12:
        raise ConstructionError("x**omega0 <= v_omega fails on [B, 1]",
                                x=float(xs[np.argmin(glue)]))
    x_max = B**-40 if x_max is None else float(x_max)
    scale = delta / f
    seed_pieces = [p.scaled(scale) for p in v.pieces] + [PowerPiece(scale, w0, 0.0)]
    seed_bps = list(v.breakpoints) + [1.0 / B]
    seed = PiecewiseFn(seed_bps, seed_pieces)
    if x_max > 1.0 / B:
        fn = PiecewiseFn(seed_bps + [x_max], seed_pieces + [ComposedPiece(H, B, seed)])
    else:
        fn = seed

    # post-checks
    junc = fn.junctions()
    xg = offset_grid(min(1e-6, 0.5 * fn.breakpoints[1]), x_max, points, log=True)
    vals = fn(xg)
    ks = np.arange(0, int(math.floor(math.log(x_max) / -math.log(B))) + 1)
    ladder_vals = fn(B ** (-ks.astype(float)))
    checks = {
        "omega": om,
        "m_omega": m_omega,
        "omega0": w0,
        "junctions": junc,
        "increasing": bool(np.all(np.diff(vals) > 0)),
        "ladder_monotone": bool(np.all(np.diff(ladder_vals) > 0)),
        "w_at_x_max": float(fn(np.array([x_max]))[0]),
        "Xi": H.Xi,
    }
    if not all(j["continuous"] and j["upward"] for j in junc):
        raise ConstructionError("w junction is discontinuous or has a downward kink",
                                junctions=junc)
    if not checks["increasing"]:
        raise ConstructionError("w is not increasing on the check grid")
    return Scaffold(fn, H, B, delta, w0, checks)


def check_subsolution_inequality(w, F, zeta: float, gamma: float, nu: float, x_grid,
                                 M_report: float | None = None) -> CertificateReport:
    """Grid minimum of ``zeta (F(w(x/gamma)) - w(x)) + nu x w'(x)``.

    The second-order residual ``w''/2 + zeta (F(w(x/gamma)) - w(x))`` is
    checked for ``x >= M_report``.  When ``M_report`` is not supplied it is
    taken as the smallest grid point beyond which the second-order residual
    stays above the tolerance; if none exists it is ``inf`` and the check
    fails.
    """
    if nu < 0:
        raise DomainError("nu must be nonnegative")
    fn = w.fn if isinstance(w, Scaffold) else w
    Fn = as_nonlinearity(F)
    x = np.asarray(x_grid, dtype=float)
    v, d1, d2 = fn.evaluate(x)
    wg = np.clip(fn(x / gamma), -1.0, 1.0)
    nonlocal_term = zeta * (Fn(wg) - v)
    first = nonlocal_term + nu * x * d1
    second = 0.5 * d2 + nonlocal_term
    second = np.where(np.isfinite(second), second, -np.inf)

    if M_report is None:
        bad = np.flatnonzero(second < -PASS_TOL)
        if bad.size == 0:
            M_report = float(x[0])
        elif bad[-1] == len(x) - 1:
            M_report = math.inf
        else:
            M_report = float(x[bad[-1] + 1])
    far = x >= M_report
    i1 = int(np.argmin(first))
    details = {
        "first_order_min": float(first[i1]),
        "first_order_argmin": float(x[i1]),
        "M_report": M_report,
        "second_order_points": int(far.sum()),
    }
    if far.any():
        j = int(np.argmin(np.where(far, second, np.inf)))
        details["second_order_min"] = float(second[j])
        details["second_order_argmin"] = float(x[j])
    worst = first.copy()
    worst[far] = np.minimum(worst[far], second[far])
    rep = _report(worst, x, details)
    if not far.any():
        rep.passed = False
    return rep
