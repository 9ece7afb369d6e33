"""Finite differences for the nonlocal half-line problem and the local model.

The nonlocal problem on the cut-off domain ``[0, L]`` is

    u_t = 1/2 u_xx + zeta * (F(u(t, x / gamma)) - u),   u(t, 0) = 0,  u(t, L) = 1 or 0,

started from ``u(0, .) = 1``.  ``u(x_i / gamma)`` is read off the grid by
linear interpolation, which keeps the explicit scheme a convex combination
of grid values (hence monotone and range preserving) under the step bound
``dt * (1/dx**2 + zeta * max(Lip F, 1)) <= 1``.  The IMEX variant treats
diffusion implicitly and is monotone as long as ``dt * zeta <= 1``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.linalg import solve_banded

from .errors import ConfigurationError, DomainError

SCHEMES = ("explicit_monotone", "imex")
BC_VALUES = {"one": 1.0, "zero": 0.0}


@dataclass(frozen=True)
class Grid:
    L: float
    n: int

    def __post_init__(self):
        if self.n < 16:
            raise ConfigurationError(f"grid needs at least 16 interior points, got {self.n}")
        if not self.L > 0:
            raise ConfigurationError("domain length must be positive")

    @classmethod
    def from_spacing(cls, L: float, dx: float) -> "Grid":
        return cls(L, int(round(L / dx)) - 1)

    @property
    def dx(self) -> float:
        return self.L / (self.n + 1)

    @property
    def x(self) -> np.ndarray:
        return self.dx * np.arange(1, self.n + 1)


@dataclass(frozen=True)
class Field:
    grid: Grid
    values: np.ndarray
    time: float = 0.0

    def at(self, x, right: float = 1.0):
        """Linear interpolation including the boundary values ``0`` and ``right``."""
        xg = np.concatenate([[0.0], self.grid.x, [self.grid.L]])
        ug = np.concatenate([[0.0], self.values, [right]])
        return np.interp(x, xg, ug)


@dataclass(frozen=True)
class SolverConfig:
    gamma: float
    zeta: float
    dt: float
    scheme: str = "explicit_monotone"
    t_end: float = 1.0
    steady_tol: float = 1e-8
    bc_right: str = "one"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")
        if self.bc_right not in BC_VALUES:
            raise ConfigurationError(f"bc_right must be 'one' or 'zero', got {self.bc_right!r}")
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if not self.gamma >= 1:
            raise ConfigurationError("gamma must be >= 1")
        if not self.zeta > 0:
            raise ConfigurationError("zeta must be positive")

    @property
    def right_value(self) -> float:
        return BC_VALUES[self.bc_right]


class Reaction:
    """An increasing Lipschitz nonlinearity with a known Lipschitz bound."""

    def __init__(self, fn: Callable, lipschitz: float):
        self.fn = fn
        self.lipschitz_bound = float(lipschitz)

    def __call__(self, u):
        return self.fn(u)


def _lipschitz(F, lipschitz):
    if lipschitz is not None:
        return float(lipschitz)
    lip = getattr(F, "lipschitz_bound", None)
    if lip is None:
        raise ConfigurationError("pass lipschitz= for a plain callable nonlinearity")
    return float(lip)


def max_stable_dt(grid: Grid, zeta: float, lipschitz: float, scheme: str) -> float:
    if scheme == "imex":
        return 1.0 / zeta
    return 1.0 / (1.0 / grid.dx**2 + zeta * max(lipschitz, 1.0))


def check_step(grid: Grid, cfg: SolverConfig, lipschitz: float, dt: float | None = None) -> None:
    dt = cfg.dt if dt is None else dt
    limit = max_stable_dt(grid, cfg.zeta, lipschitz, cfg.scheme)
    if dt > limit * (1 + 1e-12):
        raise ConfigurationError(
            f"dt={dt:.3g} violates the monotonicity bound {limit:.3g} for scheme {cfg.scheme}"
        )


class NonlocalOperator:
    """Discrete ``1/2 D2 u + zeta (F(u(./gamma)) - u)`` on a fixed grid."""

    def __init__(self, grid: Grid, F, cfg: SolverConfig, lipschitz=None,
                 boundary: tuple[float, float] | None = None):
        self.grid = grid
        self.F = F
        self.cfg = cfg
        self.lipschitz = _lipschitz(F, lipschitz)
        self.left, self.right = boundary if boundary is not None else (0.0, cfg.right_value)
        s = np.arange(1, grid.n + 1) / cfg.gamma
        j = np.floor(s).astype(int)
        j = np.minimum(j, grid.n)
        self._j = j
        self._w = s - j
        self._banded = {}

    def extended(self, u: np.ndarray) -> np.ndarray:
        return np.concatenate([[self.left], u, [self.right]])

    def shifted(self, u: np.ndarray) -> np.ndarray:
        ug = self.extended(u)
        return (1.0 - self._w) * ug[self._j] + self._w * ug[self._j + 1]

    def reaction(self, u: np.ndarray) -> np.ndarray:
        return self.cfg.zeta * (np.asarray(self.F(self.shifted(u))) - u)

    def laplacian(self, u: np.ndarray) -> np.ndarray:
        ug = self.extended(u)
        return (ug[2:] - 2.0 * ug[1:-1] + ug[:-2]) / self.grid.dx**2

    def residual(self, u: np.ndarray) -> np.ndarray:
        return 0.5 * self.laplacian(u) + self.reaction(u)

    def _matrix(self, dt):
        ab = self._banded.get(dt)
        if ab is None:
            r = dt / (2.0 * self.grid.dx**2)
            n = self.grid.n
            ab = np.zeros((3, n))
            ab[0, 1:] = -r
            ab[1, :] = 1.0 + 2.0 * r
            ab[2, :-1] = -r
            self._banded[dt] = ab
        return ab

    def step(self, u: np.ndarray, dt: float) -> np.ndarray:
        if self.cfg.scheme == "explicit_monotone":
            return u + dt * self.residual(u)
        r = dt / (2.0 * self.grid.dx**2)
        rhs = u + dt * self.reaction(u)
        rhs[0] += r * self.left
        rhs[-1] += r * self.right
        return solve_banded((1, 1), self._matrix(dt), rhs, check_finite=False)


def ones_field(grid: Grid) -> Field:
    return Field(grid, np.ones(grid.n), 0.0)


def step_nonlocal(field: Field, F, cfg: SolverConfig, *, lipschitz=None,
                  boundary: tuple[float, float] | None = None) -> Field:
    """Advance ``field`` by one step of ``cfg.dt``."""
    op = NonlocalOperator(field.grid, F, cfg, lipschitz, boundary)
    check_step(field.grid, cfg, op.lipschitz)
    return Field(field.grid, op.step(field.values, cfg.dt), field.time + cfg.dt)


def _march(op: NonlocalOperator, u: np.ndarray, t: float, t_stop: float, dt: float):
    while t < t_stop - 1e-12:
        h = min(dt, t_stop - t)
        u = op.step(u, h)
        t = t_stop if h < dt else t + h
    return u, t


def solve_cauchy(F, cfg: SolverConfig, grid: Grid, snapshot_times: Sequence[float], *,
                 lipschitz=None, initial: Field | None = None) -> list[Field]:
    """Integrate from ``u = 1`` (or ``initial``) and return the requested snapshots."""
    times = [float(t) for t in snapshot_times]
    if any(b < a for a, b in zip(times, times[1:])):
        raise DomainError("snapshot times must be increasing")
    if times and times[-1] > cfg.t_end + 1e-12:
        raise DomainError("snapshot times must not exceed t_end")
    op = NonlocalOperator(grid, F, cfg, lipschitz)
    check_step(grid, cfg, op.lipschitz)
    start = initial if initial is not None else ones_field(grid)
    u, t = start.values.copy(), start.time
    out = []
    for ts in times:
        u, t = _march(op, u, t, ts, cfg.dt)
        out.append(Field(grid, u.copy(), ts))
    return out


class SteadyState(NamedTuple):
    field: Field
    converged: bool


def steady_state(F, cfg: SolverConfig, grid: Grid, *, lipschitz=None,
                 initial: Field | None = None) -> SteadyState:
    """March until ``max |du| / dt < steady_tol`` or ``t_end`` is reached.

    Started from ``u = 1`` the iterates decrease monotonically, so an early
    stop still returns an upper bound on the maximal steady state.
    """
    if cfg.bc_right != "one":
        raise ConfigurationError("steady_state runs the cut-off problem (bc_right='one')")
    op = NonlocalOperator(grid, F, cfg, lipschitz)
    check_step(grid, cfg, op.lipschitz)
    u = (initial.values if initial is not None else np.ones(grid.n)).copy()
    t = 0.0
    while t < cfg.t_end - 1e-12:
        new = op.step(u, cfg.dt)
        t += cfg.dt
        rate = np.max(np.abs(new - u)) / cfg.dt
        u = new
        if rate < cfg.steady_tol:
            return SteadyState(Field(grid, u, t), True)
    return SteadyState(Field(grid, u, t), False)


def residual_nonlocal(field: Field, F, cfg: SolverConfig, *, lipschitz=None,
                      boundary: tuple[float, float] | None = None) -> np.ndarray:
    """Discrete steady residual ``1/2 U'' + zeta (F(U(x/gamma)) - U)`` at interior nodes."""
    lip = lipschitz if lipschitz is not None else getattr(F, "lipschitz_bound", 1.0)
    op = NonlocalOperator(field.grid, F, cfg, lip, boundary)
    return op.residual(field.values)


def residual_report(field: Field, F, cfg: SolverConfig, **kwargs) -> dict:
    r = residual_nonlocal(field, F, cfg, **kwargs)
    return {
        "max_residual": float(np.max(np.abs(r))),
        "l2_residual": float(math.sqrt(field.grid.dx * np.sum(r * r))),
        "time": float(field.time),
    }


def extend_field(field: Field, new_length: float, fill: float = 1.0) -> Field:
    """Extend to ``[0, new_length]`` at the same spacing, padding with ``fill``."""
    dx = field.grid.dx
    grid = Grid.from_spacing(new_length, dx)
    if abs(grid.dx - dx) > 1e-12 * dx:
        raise ConfigurationError("new length must be a multiple of the grid spacing")
    pad = np.full(grid.n - field.grid.n, fill)
    return Field(grid, np.concatenate([field.values, pad]), field.time)


# --- local model -----------------------------------------------------------


def local_step_limit(grid: Grid, nu: float, b: float, t: float, zeta: float,
                     lipschitz: float) -> float:
    diff = 0.5 * math.exp(-2.0 * nu * t)
    rate = 2.0 * diff / grid.dx**2 + abs(b - nu) * grid.L / grid.dx + zeta * lipschitz
    return 1.0 / rate


def step_local_model(field: Field, f: Callable, nu: float, b: float, cfg: SolverConfig,
                     *, lipschitz: float | None = None) -> Field:
    """One explicit step of ``u_t = 1/2 e^{-2 nu t} u_xx - (b - nu) x u_x + zeta f(u)``.

    Advection is upwinded against the sign of ``b - nu``; the diffusivity is
    taken at the midpoint of the step.  ``lipschitz`` bounds ``|f'|`` and
    defaults to ``f.lipschitz`` when present, else 1.
    """
    if nu < 0:
        raise DomainError("nu must be nonnegative")
    lip = lipschitz if lipschitz is not None else getattr(f, "lipschitz", 1.0)
    grid = field.grid
    dt = cfg.dt
    t = field.time
    if dt > local_step_limit(grid, nu, b, t, cfg.zeta, lip) * (1 + 1e-12):
        raise ConfigurationError(f"dt={dt:.3g} violates the upwind step bound")
    u = field.values
    ug = np.concatenate([[0.0], u, [cfg.right_value]])
    dx = grid.dx
    diff = 0.5 * math.exp(-2.0 * nu * (t + 0.5 * dt))
    lap = (ug[2:] - 2.0 * ug[1:-1] + ug[:-2]) / dx**2
    vel = (b - nu) * grid.x
    if b - nu >= 0:
        grad = (ug[1:-1] - ug[:-2]) / dx
    else:
        grad = (ug[2:] - ug[1:-1]) / dx
    new = u + dt * (diff * lap - vel * grad + cfg.zeta * np.asarray(f(u)))
    return Field(grid, new, t + dt)


def solve_local_model(f: Callable, nu: float, b: float, cfg: SolverConfig, grid: Grid,
                      snapshot_times: Sequence[float], *, lipschitz: float | None = None,
                      on_step: Callable[[Field], None] | None = None) -> list[Field]:
    field = ones_field(grid)
    out = []
    for ts in snapshot_times:
        while field.time < ts - 1e-12:
            h = min(cfg.dt, ts - field.time)
            field = step_local_model(field, f, nu, b, replace(cfg, dt=h), lipschitz=lipschitz)
            if on_step is not None:
                on_step(field)
        out.append(Field(grid, field.values.copy(), ts))
    return out


# --- export ------------------------------------------------------------------


def snapshots_csv_rows(fields: Sequence[Field]):
    yield ("t", "x", "u")
    for f in fields:
        for x, u in zip(f.grid.x, f.values):
            yield (repr(float(f.time)), repr(float(x)), repr(float(u)))


def steady_csv_rows(field: Field):
    yield ("x", "U")
    for x, u in zip(field.grid.x, field.values):
        yield (repr(float(x)), repr(float(u)))


def residual_json(field: Field, F, cfg: SolverConfig, **kwargs) -> str:
    return json.dumps(residual_report(field, F, cfg, **kwargs))
