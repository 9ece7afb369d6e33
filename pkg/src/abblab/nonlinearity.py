"""Voting rules, the one-layer vote transfer map F and its derived constants.

A voting rule is an offspring law ``p_n`` together with a threshold law
``eta[n] = (eta_{n,1}, ..., eta_{n,n})``.  A parent with ``n`` children draws
a threshold ``L ~ eta[n]`` and votes +1 iff at least ``L`` children voted +1.
If every child independently votes +1 with probability ``(1 + u) / 2`` the
parent votes +1 with probability ``(1 + F(u)) / 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import gammaln, xlogy

from .errors import ConfigurationError, DomainError, PreconditionError, RuleError

PROB_TOL = 1e-12
KPP_TOL = 1e-10
SCAN_POINTS = 10_000
# exact integer binomials up to this arity, log-gamma above
EXACT_BINOMIAL_MAX = 60


def _validate_pmf(pmf: Mapping[int, float]) -> dict[int, float]:
    if not pmf:
        raise RuleError("offspring pmf is empty")
    out = {}
    for n, p in pmf.items():
        n_int = int(n)
        if n_int != n or n_int < 1:
            raise RuleError(f"arity {n!r} is not a positive integer")
        p = float(p)
        if not np.isfinite(p) or p < 0:
            raise RuleError(f"p_{n_int} = {p} is not a nonnegative probability")
        out[n_int] = p
    total = sum(out.values())
    if abs(total - 1.0) > PROB_TOL:
        worst = max(out, key=out.get)
        raise RuleError(
            f"offspring pmf sums to {total!r}, not 1 (largest mass at arity {worst})"
        )
    return {n: p for n, p in sorted(out.items()) if p > 0}


@dataclass(frozen=True)
class VotingRule:
    """Offspring pmf plus threshold table, validated on construction.

    Arities with zero probability are dropped from the support.  Every arity
    in the support must have a threshold vector of length ``n`` summing to 1.
    """

    offspring_pmf: Mapping[int, float]
    thresholds: Mapping[int, tuple]
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        pmf = _validate_pmf(self.offspring_pmf)
        thr = {}
        for n in pmf:
            if n not in self.thresholds:
                raise RuleError(f"no threshold vector for arity {n}")
            eta = tuple(float(e) for e in self.thresholds[n])
            if len(eta) != n:
                raise RuleError(f"threshold vector for arity {n} has length {len(eta)}")
            if any(e < 0 or not np.isfinite(e) for e in eta):
                raise RuleError(f"threshold vector for arity {n} has a negative entry")
            if abs(sum(eta) - 1.0) > PROB_TOL:
                raise RuleError(f"threshold vector for arity {n} sums to {sum(eta)!r}")
            thr[n] = eta
        object.__setattr__(self, "offspring_pmf", pmf)
        object.__setattr__(self, "thresholds", thr)

    @property
    def n_max(self) -> int:
        return max(self.offspring_pmf)

    @property
    def mean_offspring(self) -> float:
        return sum(n * p for n, p in self.offspring_pmf.items())

    @property
    def odd_symmetric(self) -> bool:
        return all(
            eta[k] == eta[n - 1 - k]
            for n, eta in self.thresholds.items()
            for k in range(n)
        )

    def cumulative_tables(self) -> tuple[np.ndarray, np.ndarray]:
        """Dense cumulative pmf ``(N+1,)`` and threshold cdf ``(N+1, N+1)``.

        Row ``n`` of the threshold table holds ``sum_{k <= L} eta_{n,k}`` in
        column ``L``; the last populated column is forced to exactly 1 so a
        uniform draw always resolves.
        """
        N = self.n_max
        cum_pmf = np.zeros(N + 1)
        acc = 0.0
        for n in range(1, N + 1):
            acc += self.offspring_pmf.get(n, 0.0)
            cum_pmf[n] = acc
        cum_pmf[N] = 1.0
        cum_thr = np.ones((N + 1, N + 1))
        for n, eta in self.thresholds.items():
            cum_thr[n, 0] = 0.0
            cum_thr[n, 1 : n + 1] = np.cumsum(eta)
            cum_thr[n, n] = 1.0
        return cum_pmf, cum_thr

    def describe(self) -> dict:
        return {
            "name": self.name,
            "pmf": {str(n): p for n, p in self.offspring_pmf.items()},
            "thresholds": {str(n): list(e) for n, e in self.thresholds.items()},
        }


def majority_rule(offspring_pmf: Mapping[int, float]) -> VotingRule:
    """Majority voting with ties broken by a fair coin."""
    pmf = _validate_pmf(offspring_pmf)
    thresholds = {}
    for n in pmf:
        eta = [0.0] * n
        lo, hi = (n + 1) // 2, -(-(n + 1) // 2)
        eta[lo - 1] += 0.5
        eta[hi - 1] += 0.5
        thresholds[n] = tuple(eta)
    return VotingRule(pmf, thresholds, name="majority")


def binomial_pmf(n: int, p: np.ndarray) -> np.ndarray:
    """``P(Bin(n, p) = j)`` for ``j = 0..n``, shape ``p.shape + (n + 1,)``."""
    p = np.asarray(p, dtype=float)[..., None]
    q = 1.0 - p
    j = np.arange(n + 1)
    if n <= EXACT_BINOMIAL_MAX:
        coef = np.array([float(math.comb(n, k)) for k in j])
        return coef * p**j * q ** (n - j)
    logc = gammaln(n + 1) - gammaln(j + 1) - gammaln(n - j + 1)
    return np.exp(logc + xlogy(j, p) + xlogy(n - j, q))


def _check_domain(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if np.any(np.abs(u) > 1 + 1e-12) or np.any(np.isnan(u)):
        raise DomainError("F is defined on [-1, 1] only")
    return np.clip(u, -1.0, 1.0)


def _f_and_fprime(rule: VotingRule, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = (1.0 + u) / 2.0
    F = np.zeros_like(u)
    dF = np.zeros_like(u)
    for n, pn in rule.offspring_pmf.items():
        eta = np.asarray(rule.thresholds[n])
        # sum_k eta_k P(X >= k) = sum_j P(X = j) sum_{k <= j} eta_k
        at_most = np.concatenate([[0.0], np.cumsum(eta)])
        F += pn * (binomial_pmf(n, p) @ at_most)
        # d/dp P(Bin(n,p) >= k) = n P(Bin(n-1,p) = k-1)
        dF += pn * n * (binomial_pmf(n - 1, p) @ eta)
    return 2.0 * F - 1.0, dF


def eval_F(rule: VotingRule, u):
    """Evaluate the vote transfer map at ``u`` (scalar or array) in [-1, 1]."""
    arr = _check_domain(u)
    F, _ = _f_and_fprime(rule, np.atleast_1d(arr))
    return F.reshape(arr.shape)[()] if arr.ndim == 0 else F.reshape(arr.shape)


def eval_F_prime(rule: VotingRule, u):
    arr = _check_domain(u)
    _, dF = _f_and_fprime(rule, np.atleast_1d(arr))
    return dF.reshape(arr.shape)[()] if arr.ndim == 0 else dF.reshape(arr.shape)


def fprime0_majority_closed_form(offspring_pmf: Mapping[int, float]) -> float:
    """Slope at zero of the majority-rule map, summed arity by arity."""
    pmf = _validate_pmf(offspring_pmf)
    total = 0.0
    for n, pn in pmf.items():
        log_term = (1 - n) * math.log(2) + math.log(-(-n // 2)) + _log_comb(n, n // 2)
        total += pn * math.exp(log_term)
    return total


def _log_comb(n: int, k: int) -> float:
    if n <= EXACT_BINOMIAL_MAX:
        return math.log(math.comb(n, k))
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def stirling_ratio(n: int) -> float:
    """Ratio of the arity-``n`` majority slope term to ``sqrt(2n/pi)``."""
    if n < 2 or n % 2:
        raise DomainError("stirling_ratio needs an even n >= 2")
    log_term = (1 - n) * math.log(2) + math.log(n // 2) + (
        math.lgamma(n + 1) - 2 * math.lgamma(n // 2 + 1)
    )
    return math.exp(log_term - 0.5 * math.log(2 * n / math.pi))


def _sup_with_refinement(fn: Callable, grid: np.ndarray) -> tuple[float, float]:
    """Grid maximum of ``fn`` refined by bounded Brent search around it."""
    vals = fn(grid)
    i = int(np.argmax(vals))
    best_val, best_arg = float(vals[i]), float(grid[i])
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, len(grid) - 1)]
    if hi > lo:
        res = minimize_scalar(
            lambda s: -float(fn(np.array([s]))[0]),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-12},
        )
        if -res.fun > best_val:
            best_val, best_arg = -float(res.fun), float(res.x)
    return best_val, best_arg


@dataclass(frozen=True)
class XiScan:
    xi: float
    crossings: tuple
    tangential: bool


class Nonlinearity:
    """Callable ``F`` for a rule, with lazily computed derived constants."""

    def __init__(self, rule: VotingRule):
        self.rule = rule

    def __call__(self, u):
        return eval_F(self.rule, u)

    def derivative(self, u):
        return eval_F_prime(self.rule, u)

    def __repr__(self):
        return f"Nonlinearity({self.rule.name}, pmf={dict(self.rule.offspring_pmf)})"

    @cached_property
    def Fprime0(self) -> float:
        return float(self.derivative(0.0))

    @cached_property
    def lipschitz_bound(self) -> float:
        lo = 0.0 if self.rule.odd_symmetric else -1.0
        grid = np.linspace(lo, 1.0, SCAN_POINTS + 1)
        return _sup_with_refinement(self.derivative, grid)[0]

    @cached_property
    def xi_scan(self) -> XiScan:
        return fixed_point_scan(self)

    @property
    def Xi(self) -> float:
        return self.xi_scan.xi

    @cached_property
    def Upsilon(self) -> float:
        return upsilon(self)

    @cached_property
    def is_kpp(self) -> bool:
        return kpp_check(self)


def as_nonlinearity(obj) -> Nonlinearity:
    if isinstance(obj, Nonlinearity):
        return obj
    if isinstance(obj, VotingRule):
        return Nonlinearity(obj)
    raise TypeError(f"expected a Nonlinearity or VotingRule, got {type(obj).__name__}")


def fixed_point_scan(F, points: int = SCAN_POINTS, xtol: float = 1e-10) -> XiScan:
    """Locate ``inf{v > 0 : F(v) <= v}`` and every sign change of ``F(v) - v``.

    ``F`` is a :class:`Nonlinearity` (checked for oddness) or a plain callable
    assumed odd.  Values within ``1e-13`` of zero count as ``F(v) <= v``.
    """
    if isinstance(F, (Nonlinearity, VotingRule)):
        F = as_nonlinearity(F)
        if not F.rule.odd_symmetric:
            raise ConfigurationError("the fixed point Xi_F is only defined for odd rules")
    grid = np.linspace(0.0, 1.0, points + 1)[1:]
    g = np.asarray(F(grid), dtype=float) - grid
    below = g <= 1e-13
    crossings = []
    sign = np.sign(np.where(np.abs(g) <= 1e-13, 0.0, g))
    for i in range(1, len(grid)):
        if sign[i - 1] > 0 and sign[i] <= 0 or sign[i - 1] < 0 and sign[i] >= 0:
            crossings.append(float(grid[i]))
    if not below.any():
        # F(1) = 1 forces a crossing at 1; tolerate rounding at the endpoint
        return XiScan(1.0, tuple(crossings), False)
    i = int(np.argmax(below))
    if i == 0:
        return XiScan(0.0, tuple(crossings), bool(np.all(np.abs(g[:3]) <= 1e-13)))
    lo, hi = float(grid[i - 1]), float(grid[i])
    while hi - lo > xtol:
        mid = 0.5 * (lo + hi)
        if float(F(np.array([mid]))[0]) - mid <= 1e-13:
            hi = mid
        else:
            lo = mid
    nxt = g[i : i + 3]
    tangential = bool(len(nxt) > 1 and np.all(np.abs(nxt) <= 1e-13) and hi < 1.0 - 1e-9)
    return XiScan(hi, tuple(crossings), tangential)


def fixed_point_xi(F, **kwargs) -> float:
    return fixed_point_scan(F, **kwargs).xi


def upsilon(F, points: int = SCAN_POINTS) -> float:
    """``sup_{0 < v <= 1} F(v) / v`` with the ``v -> 0`` limit ``F'(0)``."""
    F = as_nonlinearity(F)
    grid = np.linspace(0.0, 1.0, points + 1)[1:]
    val, _ = _sup_with_refinement(lambda v: F(v) / v, grid)
    return max(val, F.Fprime0)


def _sigma_objective(f, gamma):
    log_g = math.log(gamma)
    return lambda w: (1.0 - f * np.exp(-w * log_g)) / w


def sigma_with_argmax(f: float, gamma: float, points: int = SCAN_POINTS) -> tuple[float, float]:
    """``sup_{0 < w <= 1} (1 - f gamma^-w) / w`` and its maximiser."""
    if not f > 1 or not gamma > 1:
        raise DomainError(f"sigma needs f > 1 and gamma > 1 (got f={f}, gamma={gamma})")
    grid = np.arange(1, points + 1) / points
    return _sup_with_refinement(_sigma_objective(f, gamma), grid)


def sigma(f: float, gamma: float) -> float:
    return sigma_with_argmax(f, gamma)[0]


@dataclass(frozen=True)
class SpeedPair:
    c_under: float
    c_over: float
    zeta: float
    gamma: float


def speeds(F, zeta: float, gamma: float) -> SpeedPair:
    F = as_nonlinearity(F)
    if not F.Fprime0 > 1:
        raise PreconditionError(f"spreading speeds need F'(0) > 1 (got {F.Fprime0:.6g})")
    if not zeta > 0:
        raise DomainError("zeta must be positive")
    return SpeedPair(
        c_under=zeta * sigma(F.Upsilon, gamma),
        c_over=zeta * sigma(F.Fprime0, gamma),
        zeta=zeta,
        gamma=gamma,
    )


def kpp_check(F, points: int = SCAN_POINTS) -> bool:
    F = as_nonlinearity(F)
    v = np.linspace(0.0, 1.0, points)
    return bool(np.all(F(v) <= F.Fprime0 * v + KPP_TOL))

