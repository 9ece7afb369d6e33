import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import erf

from abblab.errors import ConfigurationError, DomainError
from abblab.nonlinearity import Nonlinearity, majority_rule
from abblab.pde import (
    Field,
    Grid,
    Reaction,
    SolverConfig,
    extend_field,
    max_stable_dt,
    ones_field,
    residual_json,
    residual_nonlocal,
    residual_report,
    snapshots_csv_rows,
    solve_cauchy,
    solve_local_model,
    steady_csv_rows,
    steady_state,
    step_local_model,
    step_nonlocal,
)

F3 = Nonlinearity(majority_rule({3: 1.0}))
IDENT = Nonlinearity(majority_rule({1: 1.0}))


def stable_dt(grid, zeta, lip, frac=0.9):
    return frac * max_stable_dt(grid, zeta, lip, "explicit_monotone")


def random_increasing(rng):
    """Random increasing piecewise-linear map of [-1, 1] with its Lipschitz constant."""
    k = rng.integers(2, 6)
    xs = np.linspace(-1, 1, k + 1)
    ys = np.sort(rng.uniform(-1, 1, k + 1))
    lip = float(np.max(np.diff(ys) / np.diff(xs)))
    return Reaction(lambda u: np.interp(u, xs, ys), max(lip, 1e-3))


# --- types and checks ----------------------------------------------------------------


def test_grid_and_config_validation():
    with pytest.raises(ConfigurationError):
        Grid(10.0, 8)
    g = Grid.from_spacing(10.0, 0.1)
    assert g.n == 99 and g.dx == pytest.approx(0.1)
    assert g.x[0] == pytest.approx(0.1) and g.x[-1] == pytest.approx(9.9)
    with pytest.raises(ConfigurationError):
        SolverConfig(1.2, 1.0, 0.01, scheme="rk4")
    with pytest.raises(ConfigurationError):
        SolverConfig(1.2, 1.0, 0.01, bc_right="two")
    with pytest.raises(ConfigurationError):
        SolverConfig(0.8, 1.0, 0.01)


def test_cfl_violation_raises_before_stepping():
    g = Grid.from_spacing(10.0, 0.1)
    bad = SolverConfig(1.5, 1.0, 0.02)
    with pytest.raises(ConfigurationError, match="monotonicity"):
        step_nonlocal(ones_field(g), F3, bad)
    with pytest.raises(ConfigurationError):
        solve_cauchy(F3, bad, g, [0.1])
    # IMEX only needs dt * zeta <= 1
    step_nonlocal(ones_field(g), F3, SolverConfig(1.5, 1.0, 0.5, scheme="imex"))
    with pytest.raises(ConfigurationError):
        step_nonlocal(ones_field(g), F3, SolverConfig(1.5, 1.0, 1.5, scheme="imex"))


def test_plain_callable_needs_lipschitz():
    g = Grid.from_spacing(5.0, 0.1)
    with pytest.raises(ConfigurationError):
        step_nonlocal(ones_field(g), np.tanh, SolverConfig(1.5, 1.0, 0.001))
    step_nonlocal(ones_field(g), np.tanh, SolverConfig(1.5, 1.0, 0.001), lipschitz=1.0)


def test_snapshot_time_validation():
    g = Grid.from_spacing(5.0, 0.1)
    cfg = SolverConfig(1.5, 1.0, 0.004, t_end=1.0)
    with pytest.raises(DomainError):
        solve_cauchy(F3, cfg, g, [0.5, 0.2])
    with pytest.raises(DomainError):
        solve_cauchy(F3, cfg, g, [2.0])


# --- oracles -------------------------------------------------------------------------------


def test_heat_equation_erf_oracle():
    g = Grid.from_spacing(8.0, 0.01)
    cfg = SolverConfig(1.0, 1.0, stable_dt(g, 1.0, 1.0), t_end=1.0)
    (u,) = solve_cauchy(IDENT, cfg, g, [1.0])
    err = np.max(np.abs(u.values - erf(g.x / math.sqrt(2.0))))
    assert err <= 2e-3


def test_initial_snapshot_is_all_ones():
    g = Grid.from_spacing(10.0, 0.1)
    snaps = solve_cauchy(F3, SolverConfig(2.0, 1.0, 0.004, t_end=1.0), g, [0.0, 0.5])
    np.testing.assert_array_equal(snaps[0].values, np.ones(g.n))
    assert snaps[1].time == 0.5


def test_constant_fixed_point_field_is_stationary():
    g = Grid.from_spacing(10.0, 0.1)
    xi = F3.Xi
    cfg = SolverConfig(1.7, 1.0, 0.004)
    f = Field(g, np.full(g.n, xi))
    out = step_nonlocal(f, F3, cfg, boundary=(xi, xi))
    assert np.max(np.abs(out.values - xi)) <= 1e-12
    r = residual_nonlocal(f, F3, cfg, boundary=(xi, xi))
    assert np.max(np.abs(r)) <= 1e-12


def test_zero_field_has_zero_residual():
    g = Grid.from_spacing(10.0, 0.1)
    cfg = SolverConfig(1.7, 1.0, 0.004)
    r = residual_nonlocal(Field(g, np.zeros(g.n)), F3, cfg, boundary=(0.0, 0.0))
    assert np.all(r == 0)


@pytest.mark.parametrize("scheme", ["explicit_monotone", "imex"])
def test_identity_steady_state_is_linear(scheme):
    g = Grid.from_spacing(4.0, 0.1)
    dt = stable_dt(g, 1.0, 1.0) if scheme == "explicit_monotone" else 0.5
    cfg = SolverConfig(1.0, 1.0, dt, scheme=scheme, t_end=400.0, steady_tol=1e-10)
    res = steady_state(IDENT, cfg, g)
    assert res.converged
    assert np.max(np.abs(res.field.values - g.x / g.L)) <= 1e-6


def test_steady_state_needs_cutoff_boundary():
    g = Grid.from_spacing(5.0, 0.1)
    with pytest.raises(ConfigurationError):
        steady_state(F3, SolverConfig(1.5, 1.0, 0.004, bc_right="zero"), g)


def test_converged_steady_state_has_small_residual():
    g = Grid.from_spacing(20.0, 0.05)
    cfg = SolverConfig(1.2, 1.0, 0.01, scheme="imex", t_end=400.0, steady_tol=1e-8)
    res = steady_state(F3, cfg, g)
    assert res.converged
    rep = residual_report(res.field, F3, cfg)
    assert rep["max_residual"] <= 10 * cfg.steady_tol
    assert set(rep) == {"max_residual", "l2_residual", "time"}


def test_domain_doubling_changes_little():
    cfg = SolverConfig(2.0, 1.0, 0.009, t_end=5.0)
    small = Grid.from_spacing(40.0, 0.1)
    big = Grid.from_spacing(80.0, 0.1)
    times = [1.0, 2.5, 5.0]
    a = solve_cauchy(F3, cfg, small, times)
    b = solve_cauchy(F3, cfg, big, times)
    for fa, fb in zip(a, b):
        assert np.max(np.abs(fa.values - fb.values[: small.n])) < 1e-3


def test_local_model_heat_limit():
    # f = 0 and nu = b: u_t = 1/2 e^{-2bt} u_xx, so u = erf(x / sqrt(2 tau)) with tau = (1 - e^{-2bt}) / 2b
    b, t = 0.5, 1.0
    g = Grid.from_spacing(6.0, 0.01)
    cfg = SolverConfig(1.0, 1.0, 0.9e-4)
    (u,) = solve_local_model(lambda v: np.zeros_like(v), b, b, cfg, g, [t], lipschitz=0.0)
    tau = (1 - math.exp(-2 * b * t)) / (2 * b)
    assert np.max(np.abs(u.values - erf(g.x / math.sqrt(2 * tau)))) <= 2e-3


def test_local_model_step_checks():
    g = Grid.from_spacing(10.0, 0.1)
    f = ones_field(g)
    with pytest.raises(DomainError):
        step_local_model(f, lambda v: 0 * v, -0.1, 0.3, SolverConfig(1.0, 1.0, 0.001))
    with pytest.raises(ConfigurationError, match="upwind"):
        step_local_model(f, lambda v: 0 * v, 0.0, 0.3, SolverConfig(1.0, 1.0, 0.05))


def test_local_model_upwind_both_signs_stays_in_range():
    g = Grid.from_spacing(10.0, 0.1)
    f = lambda v: F3(v) - v  # noqa: E731
    for nu, b in [(0.0, 0.3), (0.6, 0.3)]:
        cfg = SolverConfig(1.0, 1.0, 0.002)
        (u,) = solve_local_model(f, nu, b, cfg, g, [2.0], lipschitz=1.5)
        assert u.values.min() >= -1e-12 and u.values.max() <= 1 + 1e-12


# --- properties ---------------------------------------------------------------------------


def test_discrete_comparison_principle_random_instances():
    rng = np.random.default_rng(2024)
    g = Grid(6.0, 39)
    for _ in range(100):
        G = random_increasing(rng)
        gamma = rng.uniform(1.0, 3.0)
        zeta = rng.uniform(0.2, 3.0)
        cfg = SolverConfig(gamma, zeta, stable_dt(g, zeta, G.lipschitz_bound, rng.uniform(0.3, 1.0)))
        lo = rng.uniform(-1, 1, g.n)
        hi = np.minimum(lo + rng.uniform(0, 1, g.n), 1.0)
        b_lo = sorted(rng.uniform(-1, 1, 2))
        b_hi = (min(b_lo[0] + rng.uniform(0, 0.5), 1.0), min(b_lo[1] + rng.uniform(0, 0.5), 1.0))
        under, over = Field(g, lo), Field(g, hi)
        for _ in range(40):
            under = step_nonlocal(under, G, cfg, boundary=tuple(b_lo))
            over = step_nonlocal(over, G, cfg, boundary=b_hi)
            assert np.all(over.values >= under.values - 1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(1.0, 3.0), st.floats(0.2, 3.0), st.integers(0, 2**31))
def test_range_preservation(gamma, zeta, seed):
    g = Grid(8.0, 31)
    u = Field(g, np.random.default_rng(seed).uniform(0, 1, g.n))
    cfg = SolverConfig(gamma, zeta, stable_dt(g, zeta, F3.lipschitz_bound))
    for _ in range(60):
        u = step_nonlocal(u, F3, cfg)
        assert u.values.min() >= -1e-12 and u.values.max() <= 1 + 1e-12


def test_time_monotonicity_from_ones():
    g = Grid.from_spacing(20.0, 0.1)
    cfg = SolverConfig(2.0, 1.0, stable_dt(g, 1.0, F3.lipschitz_bound))
    u = ones_field(g)
    for _ in range(2000):
        new = step_nonlocal(u, F3, cfg)
        assert np.all(new.values <= u.values + 1e-12)
        u = new


def test_interpolated_shift_is_monotone():
    from abblab.pde import NonlocalOperator

    g = Grid(5.0, 49)
    op = NonlocalOperator(g, F3, SolverConfig(1.7, 1.0, 0.001))
    u = np.sort(np.random.default_rng(0).uniform(0, 1, g.n))
    assert np.all(np.diff(op.shifted(u)) >= 0)


def test_grid_convergence_is_first_order_or_better():
    gamma, t = 1.5, 1.0
    sols = {}
    for dx in (0.2, 0.1, 0.05, 0.025):
        g = Grid.from_spacing(10.0, dx)
        cfg = SolverConfig(gamma, 1.0, stable_dt(g, 1.0, F3.lipschitz_bound), t_end=t)
        (u,) = solve_cauchy(F3, cfg, g, [t])
        sols[dx] = u
    ref = sols[0.025]
    errs = [np.max(np.abs(sols[dx].values - ref.at(sols[dx].grid.x))) for dx in (0.2, 0.1, 0.05)]
    print("grid convergence max-norm differences vs dx=0.025:", errs)
    assert errs[0] > errs[1] > errs[2]
    assert errs[0] / errs[1] > 1.5


# --- export -------------------------------------------------------------------------------


def test_extend_field_pads_and_checks_spacing():
    g = Grid.from_spacing(10.0, 0.1)
    f = Field(g, np.linspace(0, 1, g.n), 3.0)
    e = extend_field(f, 20.0)
    assert e.grid.n == 199 and e.time == 3.0
    np.testing.assert_array_equal(e.values[: g.n], f.values)
    assert np.all(e.values[g.n:] == 1.0)
    with pytest.raises(ConfigurationError):
        extend_field(f, 20.05)


def test_csv_and_json_exports():
    g = Grid(2.0, 19)
    f = Field(g, np.linspace(0.05, 0.95, g.n), 1.5)
    rows = list(snapshots_csv_rows([f]))
    assert rows[0] == ("t", "x", "u") and len(rows) == g.n + 1
    assert list(steady_csv_rows(f))[0] == ("x", "U")
    rep = json.loads(residual_json(f, F3, SolverConfig(1.5, 1.0, 0.001)))
    assert set(rep) == {"max_residual", "l2_residual", "time"} and rep["time"] == 1.5


def test_field_interpolation_includes_boundaries():
    g = Grid(1.0, 19)
    f = Field(g, g.x.copy())
    assert f.at(0.0) == 0.0 and f.at(1.0) == 1.0
    assert f.at(0.525) == pytest.approx(0.525)
