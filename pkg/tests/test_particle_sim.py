import csv
import math

import numpy as np
import pytest
from scipy.special import erf

from abblab.errors import ConfigurationError, DomainError, PreconditionError
from abblab.nonlinearity import VotingRule, majority_rule
from abblab.particle_sim import (
    SimConfig,
    estimate_u,
    estimate_value_cdf,
    run_trials,
    simulate_value,
    simulate_vote,
    simulate_vote_cutoff,
    write_trials_csv,
)

MAJ3 = majority_rule({3: 1.0})
IDENT = majority_rule({1: 1.0})


def value_variance(zeta, gamma, t):
    # variance of the single-lineage position when every particle has one child
    g = zeta * (gamma**2 - 1)
    return t if g == 0 else math.expm1(g * t) / g


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SimConfig(0, 0.9, 1, 1)
    with pytest.raises(ConfigurationError):
        SimConfig(0, 1.2, 0, 1)
    with pytest.raises(ConfigurationError):
        SimConfig(0, 1.2, 1, -1)
    with pytest.raises(ConfigurationError):
        SimConfig(0, 1.2, 1, 1, cutoff_L=0)
    with pytest.raises(DomainError):
        run_trials(MAJ3, SimConfig(0, 1.2, 1, 1), 0)
    assert SimConfig(0, 1.0, 1, 1).gamma == 1.0


def test_same_seed_same_outcome():
    cfg = SimConfig(0.3, 1.3, 1.0, 3.0, seed=11)
    a = run_trials(MAJ3, cfg, 200)
    b = run_trials(MAJ3, cfg, 200)
    np.testing.assert_array_equal(a.votes, b.votes)
    np.testing.assert_array_equal(a.particles, b.particles)
    c = run_trials(MAJ3, cfg.replace(seed=12), 200)
    assert not np.array_equal(a.votes, c.votes)


def test_results_independent_of_thread_count_and_batching():
    cfg = SimConfig(0.2, 1.2, 1.0, 3.0, seed=3)
    one = run_trials(MAJ3, cfg, 300, threads=1)
    many = run_trials(MAJ3, cfg, 300, threads=4)
    np.testing.assert_array_equal(one.votes, many.votes)
    tail = run_trials(MAJ3, cfg, 100, first_trial=200)
    np.testing.assert_array_equal(one.votes[200:], tail.votes)


@pytest.mark.parametrize("x0, vote", [(0.7, 1), (-0.2, -1)])
def test_zero_horizon(x0, vote):
    cfg = SimConfig(x0, 1.5, 1.0, 0.0)
    out = simulate_vote(MAJ3, cfg)
    assert out.vote == vote and out.particles_peaked == 1 and out.leaves == 1
    assert simulate_value(MAJ3, cfg).value == x0


def test_zero_horizon_at_origin_is_fair_coin():
    est = estimate_u(MAJ3, SimConfig(0.0, 1.5, 1.0, 0.0), 20000)
    assert abs(est.mean) < 4 * est.std_error + 1e-3


def test_identity_rule_matches_erf():
    # with gamma = 1 the single lineage is a plain Brownian motion
    zeta, gamma, t = 1.0, 1.0, 1.5
    var = value_variance(zeta, gamma, t)
    for x in (-1.0, 0.4, 1.5):
        est = estimate_u(IDENT, SimConfig(x, gamma, zeta, t, seed=5), 40000)
        ref = erf(x / math.sqrt(2 * var))
        assert abs(est.mean - ref) < 4 * est.std_error


def test_identity_rule_value_variance():
    zeta, gamma, t = 2.0, 1.4, 1.0
    b = run_trials(IDENT, SimConfig(0.0, gamma, zeta, t, seed=9), 40000, mode="value")
    var = value_variance(zeta, gamma, t)
    assert b.values.var() == pytest.approx(var, rel=0.03)
    assert abs(b.values.mean()) < 4 * math.sqrt(var / 40000)


def test_mean_population_at_horizon():
    # p = (1/2, 0, 1/2): mean offspring 2, so E[leaves] = exp(zeta t)
    rule = majority_rule({1: 0.5, 3: 0.5})
    zeta, t = 1.0, 2.0
    b = run_trials(rule, SimConfig(0.0, 1.1, zeta, t, seed=2), 20000, lazy=False)
    ref = math.exp(zeta * t * (rule.mean_offspring - 1))
    se = b.leaves.std(ddof=1) / math.sqrt(len(b.leaves))
    assert abs(b.leaves.mean() - ref) < 4 * se


def test_odd_rule_antisymmetry():
    a = estimate_u(MAJ3, SimConfig(0.5, 1.3, 1.0, 2.0, seed=1), 20000)
    b = estimate_u(MAJ3, SimConfig(-0.5, 1.3, 1.0, 2.0, seed=2), 20000)
    assert abs(a.mean + b.mean) < 4 * math.hypot(a.std_error, b.std_error)


@pytest.mark.parametrize("ell", [-2, -1, 0, 1, 2])
def test_generation_rescaling(ell):
    # starting in generation ell at gamma**ell x is a pathwise rescaling of generation 0 at x
    gamma, x = 1.4, 0.6
    base = run_trials(MAJ3, SimConfig(x, gamma, 1.0, 2.0, seed=4), 500)
    shifted = run_trials(MAJ3, SimConfig(x * gamma**ell, gamma, 1.0, 2.0, seed=4, generation=ell), 500)
    assert np.mean(base.votes == shifted.votes) > 0.998


def test_lazy_and_exhaustive_agree_and_lazy_is_cheaper():
    cfg = SimConfig(0.1, 1.2, 1.0, 3.0, seed=8)
    lazy = run_trials(MAJ3, cfg, 300, lazy=True)
    full = run_trials(MAJ3, cfg, 300, lazy=False)
    np.testing.assert_array_equal(lazy.votes, full.votes)
    assert lazy.particles.sum() < full.particles.sum()


def test_vote_is_sign_of_value():
    rule = VotingRule({1: 0.2, 2: 0.3, 4: 0.5}, {1: (1.0,), 2: (0.25, 0.75), 4: (0.1, 0.2, 0.3, 0.4)})
    cfg = SimConfig(0.2, 1.3, 1.0, 2.0, seed=6)
    v = run_trials(rule, cfg, 400, lazy=False)
    x = run_trials(rule, cfg, 400, mode="value")
    np.testing.assert_array_equal(v.votes, np.where(x.values > 0, 1, -1))


def test_particle_cap_marks_truncation():
    cfg = SimConfig(0.0, 1.2, 2.0, 6.0, particle_cap=5, seed=1)
    b = run_trials(MAJ3, cfg, 50, lazy=False)
    assert b.truncated.any()
    est = estimate_u(MAJ3, cfg, 50)
    assert est.truncated > 0 and est.unreliable


def test_cutoff_freezes_particles():
    with pytest.raises(PreconditionError):
        simulate_vote_cutoff(MAJ3, SimConfig(0.0, 1.2, 1.0, 1.0))
    # starting beyond the barrier freezes immediately at +1
    out = simulate_vote_cutoff(MAJ3, SimConfig(3.0, 1.2, 1.0, 5.0, cutoff_L=1.0))
    assert out.vote == 1 and out.particles_peaked == 1
    # a wide barrier is rarely hit and leaves the estimate unchanged
    wide = estimate_u(IDENT, SimConfig(0.5, 1.0, 1.0, 1.0, cutoff_L=50.0, seed=3), 20000)
    ref = erf(0.5 / math.sqrt(2.0))
    assert abs(wide.mean - ref) < 4 * wide.std_error


def test_cutoff_with_identity_rule_matches_reflection_principle():
    # frozen at +-L: vote = +1 iff BM from x hits L before -L, or stays positive up to t
    L, x, t = 1.0, 0.3, 50.0
    est = estimate_u(IDENT, SimConfig(x, 1.0, 1.0, t, cutoff_L=L, seed=4), 20000)
    # by t = 50 essentially every path has been absorbed; P(hit L first) = (x + L) / 2L
    assert abs(est.mean - (2 * (x + L) / (2 * L) - 1)) < 4 * est.std_error + 0.01


def test_threshold_cdf_matches_value_cdf():
    cfg = SimConfig(0.0, 1.3, 1.0, 1.5, seed=12)
    xs = [-0.5, 0.0, 0.8]
    thr = estimate_value_cdf(MAJ3, cfg, 2000, xs)
    val = estimate_value_cdf(MAJ3, cfg, 2000, xs, method="value")
    for a, b in zip(thr, val):
        assert a.cdf == pytest.approx(b.cdf, abs=2e-3)
    with pytest.raises(PreconditionError):
        estimate_value_cdf(MAJ3, cfg.replace(x0=1.0), 10, [0.0])


def test_far_right_start_is_nearly_unanimous():
    est = estimate_u(MAJ3, SimConfig(30.0, 1.2, 1.0, 10.0, seed=0), 2000)
    assert est.mean >= 0.8


def test_write_trials_csv(tmp_path):
    b = run_trials(MAJ3, SimConfig(0.1, 1.2, 1.0, 1.0), 20)
    p = tmp_path / "trials.csv"
    write_trials_csv(p, b)
    rows = list(csv.reader(p.open()))
    assert rows[0] == ["trial", "vote_or_value", "peak_particles", "truncated"]
    assert len(rows) == 21 and {r[1] for r in rows[1:]} <= {"1", "-1"}


def test_identity_rule_gaussian_mixture_for_gamma_above_one():
    # independent numpy oracle: V = sum of gamma**(2k) times the time spent in generation k
    zeta, gamma, t, x = 1.0, 1.3, 1.5, 0.4
    rng = np.random.default_rng(0)
    n = 200_000
    life = rng.exponential(1 / zeta, size=(n, 40))
    start = np.concatenate([np.zeros((n, 1)), np.cumsum(life, axis=1)[:, :-1]], axis=1)
    spent = np.clip(t - start, 0, life)
    V = (spent * gamma ** (2 * np.arange(40))).sum(axis=1)
    ref = erf(x / np.sqrt(2 * V)).mean()
    est = estimate_u(IDENT, SimConfig(x, gamma, zeta, t, seed=5), 40000)
    assert abs(est.mean - ref) < 4 * est.std_error + 0.002
