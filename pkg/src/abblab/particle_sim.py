"""Monte Carlo simulation of the accelerated branching Brownian voting model.

A generation-``k`` particle diffuses with variance rate ``gamma**(2k)`` for an
exponential lifetime of rate ``zeta``, then is replaced by ``n ~ p_n``
children of generation ``k + 1`` at its location.  Particles alive at the
horizon vote ``sgn(position)``; votes propagate to the root through sampled
thresholds.  In value mode leaves carry their positions and a parent takes
the ``L``-th largest child value.

Trees are walked depth first with an explicit stack.  In vote mode the walk
is lazy: once a parent's vote is decided the remaining children are never
simulated.  Because every random draw is keyed by the node's path (see
:mod:`abblab.rng`), lazy and exhaustive walks return the same root vote,
and a vote is exactly ``sgn`` of the value computed from the same keys.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Iterable

import numba as nb
import numpy as np

from .errors import ConfigurationError, DomainError, PreconditionError
from .nonlinearity import VotingRule
from .rng import child_key, root_key, uniform

if "NUMBA_THREADING_LAYER" not in os.environ:
    # the bundled TBB is often too old; workqueue is always available
    nb.config.THREADING_LAYER = "workqueue"

DEFAULT_PARTICLE_CAP = 10**6
CUTOFF_SUBSTEP = 0.01
UNRELIABLE_FRACTION = 0.01

# draw indices within a node's stream
_D_LIFE, _D_G1, _D_G2, _D_ARITY, _D_THRESH, _D_TIE = 0, 1, 2, 3, 4, 5
_D_SUBSTEP = 8


@dataclass(frozen=True)
class SimConfig:
    """Parameters of one Monte Carlo experiment.

    ``generation`` is the starting generation label; starting in generation
    ``l`` multiplies every diffusivity by ``gamma**(2l)``.  ``gamma == 1`` is
    accepted as the local case.
    """

    x0: float
    gamma: float
    zeta: float
    horizon: float
    cutoff_L: float | None = None
    particle_cap: int = DEFAULT_PARTICLE_CAP
    seed: int = 0
    generation: int = 0

    def __post_init__(self):
        if not self.gamma >= 1:
            raise ConfigurationError(f"gamma must be >= 1, got {self.gamma}")
        if not self.zeta > 0:
            raise ConfigurationError(f"zeta must be > 0, got {self.zeta}")
        if not self.horizon >= 0:
            raise ConfigurationError(f"horizon must be >= 0, got {self.horizon}")
        if self.particle_cap < 1:
            raise ConfigurationError("particle_cap must be at least 1")
        if self.cutoff_L is not None and not self.cutoff_L > 0:
            raise ConfigurationError("cutoff_L must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must fit in 64 bits")

    def replace(self, **changes) -> "SimConfig":
        fields = {k: getattr(self, k) for k in self.__dataclass_fields__}
        fields.update(changes)
        return SimConfig(**fields)


@dataclass(frozen=True)
class TrialOutcome:
    """Result of one realisation.

    ``particles_peaked`` counts the particles the walk instantiated; for an
    exhaustive walk this is the whole tree, so it bounds the peak population.
    ``leaves`` counts instantiated particles that reached the horizon (or
    froze), which for an exhaustive walk is the population at the horizon.
    """

    vote: int
    value: float | None
    particles_peaked: int
    leaves: int
    truncated: bool


@dataclass(frozen=True)
class TrialBatch:
    trial_indices: np.ndarray
    values: np.ndarray
    votes: np.ndarray
    particles: np.ndarray
    leaves: np.ndarray
    truncated: np.ndarray


@dataclass(frozen=True)
class Estimate:
    mean: float
    std_error: float
    trials: int
    u_hat: float
    truncated: int = 0
    unreliable: bool = False


@dataclass(frozen=True)
class CdfPoint:
    x: float
    cdf: float
    std_error: float
    trials: int


@nb.njit(cache=True)
def _leaf_vote(pos, shift, key):
    d = pos - shift
    if d > 0.0:
        return 1.0
    if d < 0.0:
        return -1.0
    return 1.0 if uniform(key, _D_TIE) < 0.5 else -1.0


@nb.njit(cache=True)
def _move(key, pos, t0, t1, scale, barrier, substep):
    """Advance a particle over ``[t0, t1]``; returns ``(pos, frozen)``.

    ``frozen`` is +1/-1 if the particle hit the barrier ``+-barrier``
    (``barrier <= 0`` disables the cut-off) and 0 otherwise.
    """
    if barrier <= 0.0:
        dt = t1 - t0
        if dt <= 0.0:
            return pos, 0
        u1 = uniform(key, _D_G1)
        u2 = uniform(key, _D_G2)
        z = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        return pos + scale * math.sqrt(dt) * z, 0
    if pos >= barrier:
        return barrier, 1
    if pos <= -barrier:
        return -barrier, -1
    t = t0
    j = 0
    var_rate = scale * scale
    while t < t1:
        h = min(substep, t1 - t)
        d = _D_SUBSTEP + 3 * j
        u1 = uniform(key, d)
        u2 = uniform(key, d + 1)
        z = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        y = pos + scale * math.sqrt(h) * z
        if y >= barrier:
            return barrier, 1
        if y <= -barrier:
            return -barrier, -1
        # Brownian-bridge crossing probabilities for each barrier
        s2h = var_rate * h
        p_up = math.exp(-2.0 * (barrier - pos) * (barrier - y) / s2h)
        p_dn = math.exp(-2.0 * (barrier + pos) * (barrier + y) / s2h)
        u = uniform(key, d + 2)
        if u < p_up:
            return barrier, 1
        if u < p_up + p_dn:
            return -barrier, -1
        pos = y
        t += h
        j += 1
    return pos, 0


@nb.njit(cache=True)
def _run_trial(seed, trial, x0, gamma, zeta, horizon, generation, barrier0,
               substep, cap, cum_pmf, cum_thr, n_max, value_mode, lazy, shift,
               max_depth):
    """Walk one tree; returns ``(value, vote, particles, leaves, truncated)``."""
    keys = np.empty(max_depth, np.uint64)
    gens = np.empty(max_depth, np.int64)
    poss = np.empty(max_depth)
    times = np.empty(max_depth)
    arity = np.empty(max_depth, np.int64)
    thresh = np.empty(max_depth, np.int64)
    filled = np.empty(max_depth, np.int64)
    plus = np.empty(max_depth, np.int64)
    child_vals = np.empty((max_depth, n_max))

    particles = 0
    leaves = 0
    truncated = False
    sp = -1

    key = root_key(seed, trial)
    gen = 0
    pos = x0
    t0 = 0.0
    while True:
        # --- instantiate the particle (key, gen, pos, t0)
        particles += 1
        scale = gamma ** (generation + gen)
        barrier = barrier0 * scale if barrier0 > 0.0 else 0.0
        have_result = False
        result = 0.0
        if particles > cap or sp + 1 >= max_depth:
            truncated = True
            leaves += 1
            result = pos if value_mode else _leaf_vote(pos, shift, key)
            have_result = True
        else:
            life = -math.log(uniform(key, _D_LIFE)) / zeta
            t1 = min(t0 + life, horizon)
            pos, frozen = _move(key, pos, t0, t1, scale, barrier, substep)
            if frozen != 0 or t1 >= horizon:
                leaves += 1
                if value_mode:
                    result = pos
                elif frozen != 0:
                    result = float(frozen)
                else:
                    result = _leaf_vote(pos, shift, key)
                have_result = True
            else:
                ua = uniform(key, _D_ARITY)
                n = 1
                while n < n_max and cum_pmf[n] < ua:
                    n += 1
                ut = uniform(key, _D_THRESH)
                L = 1
                while L < n and cum_thr[n, L] < ut:
                    L += 1
                sp += 1
                keys[sp] = key
                gens[sp] = gen
                poss[sp] = pos
                times[sp] = t1
                arity[sp] = n
                thresh[sp] = L
                filled[sp] = 0
                plus[sp] = 0

        # --- fold finished results into ancestors until a child must be spawned
        while True:
            if have_result:
                if sp < 0:
                    if value_mode:
                        vote = 1 if result > 0.0 else -1
                        return result, vote, particles, leaves, truncated
                    return result, int(result), particles, leaves, truncated
                i = filled[sp]
                child_vals[sp, i] = result
                filled[sp] = i + 1
                if result > 0.0:
                    plus[sp] += 1
                n = arity[sp]
                L = thresh[sp]
                done = False
                if not value_mode and lazy:
                    if plus[sp] >= L:
                        result, done = 1.0, True
                    elif filled[sp] - plus[sp] > n - L:
                        result, done = -1.0, True
                if not done and filled[sp] == n:
                    done = True
                    if value_mode:
                        vals = np.sort(child_vals[sp, :n])
                        result = vals[n - L]
                    else:
                        result = 1.0 if plus[sp] >= L else -1.0
                if done:
                    sp -= 1
                    continue
                have_result = False
            # spawn the next child of the frame on top of the stack
            key = child_key(keys[sp], filled[sp])
            gen = gens[sp] + 1
            pos = poss[sp]
            t0 = times[sp]
            break


@nb.njit(cache=True, parallel=True)
def _run_batch(seed, first_trial, trials, x0, gamma, zeta, horizon, generation,
               barrier0, substep, cap, cum_pmf, cum_thr, n_max, value_mode,
               lazy, shift, max_depth):
    values = np.empty(trials)
    votes = np.empty(trials, np.int8)
    particles = np.empty(trials, np.int64)
    leaves = np.empty(trials, np.int64)
    truncated = np.empty(trials, np.bool_)
    for i in nb.prange(trials):
        v, s, p, lv, tr = _run_trial(
            seed, first_trial + i, x0, gamma, zeta, horizon, generation,
            barrier0, substep, cap, cum_pmf, cum_thr, n_max, value_mode, lazy,
            shift, max_depth,
        )
        values[i] = v
        votes[i] = s
        particles[i] = p
        leaves[i] = lv
        truncated[i] = tr
    return values, votes, particles, leaves, truncated


def _max_depth(cfg: SimConfig) -> int:
    # generations along a path are Poisson(zeta * horizon); this is far in the tail
    lam = cfg.zeta * cfg.horizon
    return int(lam + 12 * math.sqrt(lam + 1) + 64)


def set_threads(threads: int | None) -> None:
    if threads:
        nb.set_num_threads(max(1, min(int(threads), nb.config.NUMBA_NUM_THREADS)))


def run_trials(rule: VotingRule, cfg: SimConfig, trials: int, *,
               mode: str = "vote", lazy: bool = True, shift: float = 0.0,
               first_trial: int = 0, threads: int | None = None) -> TrialBatch:
    """Run ``trials`` independent realisations with streams ``first_trial..``."""
    if trials < 1:
        raise DomainError("trials must be >= 1")
    if mode not in ("vote", "value"):
        raise ConfigurationError(f"unknown mode {mode!r}")
    set_threads(threads)
    cum_pmf, cum_thr = rule.cumulative_tables()
    barrier0 = float(cfg.cutoff_L) if cfg.cutoff_L is not None else 0.0
    values, votes, particles, leaves, truncated = _run_batch(
        np.uint64(cfg.seed), np.int64(first_trial), int(trials), float(cfg.x0),
        float(cfg.gamma), float(cfg.zeta), float(cfg.horizon),
        int(cfg.generation), barrier0, CUTOFF_SUBSTEP, int(cfg.particle_cap),
        cum_pmf, cum_thr, rule.n_max, mode == "value", bool(lazy), float(shift),
        _max_depth(cfg),
    )
    return TrialBatch(
        np.arange(first_trial, first_trial + trials), values, votes, particles,
        leaves, truncated,
    )


def _single(rule, cfg, trial, mode, lazy, shift=0.0) -> TrialOutcome:
    b = run_trials(rule, cfg, 1, mode=mode, lazy=lazy, shift=shift, first_trial=trial)
    return TrialOutcome(
        vote=int(b.votes[0]),
        value=float(b.values[0]) if mode == "value" else None,
        particles_peaked=int(b.particles[0]),
        leaves=int(b.leaves[0]),
        truncated=bool(b.truncated[0]),
    )


def simulate_vote(rule: VotingRule, cfg: SimConfig, trial: int = 0, *,
                  lazy: bool = True) -> TrialOutcome:
    return _single(rule, cfg, trial, "vote", lazy)


def simulate_value(rule: VotingRule, cfg: SimConfig, trial: int = 0) -> TrialOutcome:
    return _single(rule, cfg, trial, "value", lazy=False)


def simulate_vote_cutoff(rule: VotingRule, cfg: SimConfig, trial: int = 0) -> TrialOutcome:
    """Vote with particles frozen on hitting ``+-gamma**k * cutoff_L``."""
    if cfg.cutoff_L is None:
        raise PreconditionError("simulate_vote_cutoff needs cfg.cutoff_L")
    return _single(rule, cfg, trial, "vote", lazy=True)


def _aggregate(votes: np.ndarray, truncated: np.ndarray, include_truncated: bool) -> Estimate:
    keep = votes if include_truncated else votes[~truncated]
    n_trunc = int(truncated.sum())
    unreliable = n_trunc > UNRELIABLE_FRACTION * len(votes)
    if len(keep) == 0:
        return Estimate(math.nan, math.nan, 0, math.nan, n_trunc, True)
    x = keep.astype(float)
    mean = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else math.inf
    return Estimate(mean, se, len(x), mean, n_trunc, unreliable)


def estimate_u(rule: VotingRule, cfg: SimConfig, trials: int, *,
               include_truncated: bool = False, threads: int | None = None) -> Estimate:
    """Estimate ``u(t, x0) = 2 P(vote = +1) - 1`` from independent trials."""
    batch = run_trials(rule, cfg, trials, threads=threads)
    return _aggregate(batch.votes, batch.truncated, include_truncated)


def estimate_value_cdf(rule: VotingRule, cfg: SimConfig, trials: int,
                       query_points: Iterable[float], *, method: str = "threshold",
                       threads: int | None = None) -> list[CdfPoint]:
    """Empirical ``P(X_t <= x)`` at each query point, started from ``x0 = 0``.

    ``method="threshold"`` decides ``{X_t > x}`` per trial as the lazy vote of
    leaves ``sgn(position - x)``, which equals the value-mode event for the
    same keys but costs far less; ``method="value"`` walks whole trees.
    """
    if cfg.x0 != 0:
        raise PreconditionError("the value cdf is defined for x0 = 0")
    xs = [float(x) for x in query_points]
    out = []
    if method == "value":
        b = run_trials(rule, cfg, trials, mode="value", threads=threads)
        keep = b.values[~b.truncated]
        for x in xs:
            out.append(_binomial_point(x, np.mean(keep <= x), len(keep)))
        return out
    if method != "threshold":
        raise ConfigurationError(f"unknown cdf method {method!r}")
    for x in xs:
        b = run_trials(rule, cfg, trials, shift=x, threads=threads)
        keep = b.votes[~b.truncated]
        out.append(_binomial_point(x, np.mean(keep < 0), len(keep)))
    return out


def _binomial_point(x, p, n) -> CdfPoint:
    p = float(p)
    se = math.sqrt(max(p * (1 - p), 0.0) / n) if n else math.nan
    return CdfPoint(x, p, se, int(n))


def write_trials_csv(path, batch: TrialBatch, mode: str = "vote") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial", "vote_or_value", "peak_particles", "truncated"])
        data = batch.votes if mode == "vote" else batch.values
        for i, v, p, t in zip(batch.trial_indices, data, batch.particles, batch.truncated):
            w.writerow([int(i), int(v) if mode == "vote" else repr(float(v)), int(p), int(t)])
