"""Trajectory sampling with reproducible counter-based randomness.

Each trajectory derives an independent random stream purely from the
seed and its own index, so results are bit-identical for any thread
count and any trajectory batching.  Streams are splitmix-style: a Weyl
sequence advanced per draw and finalized by a 64-bit mixer.  Kernels are
compiled with numba and parallelized over trajectories; each loop body
writes only its own output slot.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .chain import CONTINUOUS, FiniteChain, ProbabilityVector
from .errors import AllCensored, DimensionMismatch, EmptySample
from .hitting import _complement
from .measures import TrapPartition, quasi_stationary

GAMMA = np.uint64(0x9E3779B97F4A7C15)
MIX_A = np.uint64(0xBF58476D1CE4E5B9)
MIX_B = np.uint64(0x94D049BB133111EB)
SHIFT_30 = np.uint64(30)
SHIFT_27 = np.uint64(27)
SHIFT_31 = np.uint64(31)
SHIFT_11 = np.uint64(11)
ONE = np.uint64(1)
INV_2_53 = 1.0 / 9007199254740992.0

DEFAULT_HORIZON_SCALES = 50.0


@dataclass(frozen=True)
class SamplerConfig:
    """Seed, trajectory count, and censoring horizon for the samplers.

    ``max_time`` of None defers to fifty mean exit times of the chain at
    hand.
    """

    seed: int
    n_trajectories: int
    max_time: float | None = None

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**63:
            raise ValueError("seed must be a nonnegative 63-bit integer")
        if self.n_trajectories < 1:
            raise ValueError("need at least one trajectory")
        if self.max_time is not None and self.max_time <= 0:
            raise ValueError("censoring horizon must be positive")


@dataclass(frozen=True, eq=False)
class EmpiricalSurvival:
    """Sorted uncensored hitting times plus the censoring tally."""

    times: np.ndarray
    censored: int
    total: int
    cutoff: float

    def survival_at(self, t) -> np.ndarray | float:
        """Empirical P(tau > t); censored mass counts as surviving below the cutoff."""
        t = np.asarray(t, dtype=float)
        frac = np.searchsorted(self.times, t, side="right") / self.total
        out = 1.0 - frac
        return float(out) if out.ndim == 0 else out


@njit(cache=True)
def _mix(z):
    z = (z ^ (z >> SHIFT_30)) * MIX_A
    z = (z ^ (z >> SHIFT_27)) * MIX_B
    return z ^ (z >> SHIFT_31)


@njit(cache=True)
def _stream(seed, index):
    return _mix(seed + GAMMA * (index + ONE))


@njit(cache=True)
def _draw(state):
    state = state + GAMMA
    return state, float(_mix(state) >> SHIFT_11) * INV_2_53


@njit(cache=True)
def _pick(cdf, u):
    j = np.searchsorted(cdf, u, side="right")
    if j >= cdf.shape[0]:
        j = cdf.shape[0] - 1
    return j


@njit(parallel=True, cache=True)
def _hits_continuous(jump_cdf, exit_rates, goal, start_cdf, seed, n_traj, horizon):
    times = np.empty(n_traj)
    censored = np.zeros(n_traj, dtype=np.uint8)
    for i in prange(n_traj):
        state = _stream(seed, np.uint64(i))
        state, u = _draw(state)
        x = _pick(start_cdf, u)
        t = 0.0
        done = goal[x]
        while not done:
            rate = exit_rates[x]
            if rate <= 0.0:
                break
            state, u = _draw(state)
            t += -np.log(1.0 - u) / rate
            if t > horizon:
                break
            state, u = _draw(state)
            x = _pick(jump_cdf[x], u)
            done = goal[x]
        if done:
            times[i] = t
        else:
            times[i] = horizon
            censored[i] = 1
    return times, censored


@njit(parallel=True, cache=True)
def _hits_discrete(jump_cdf, goal, start_cdf, seed, n_traj, max_steps):
    times = np.empty(n_traj)
    censored = np.zeros(n_traj, dtype=np.uint8)
    for i in prange(n_traj):
        state = _stream(seed, np.uint64(i))
        state, u = _draw(state)
        x = _pick(start_cdf, u)
        steps = 0
        done = goal[x]
        while not done and steps < max_steps:
            state, u = _draw(state)
            x = _pick(jump_cdf[x], u)
            steps += 1
            done = goal[x]
        if done:
            times[i] = float(steps)
        else:
            times[i] = float(max_steps)
            censored[i] = 1
    return times, censored


@njit(parallel=True, cache=True)
def _occupation_continuous(jump_cdf, exit_rates, goal, start_cdf, seed, n_traj, horizon):
    n = jump_cdf.shape[0]
    occ = np.zeros((n_traj, n))
    tot = np.zeros(n_traj)
    censored = np.zeros(n_traj, dtype=np.uint8)
    for i in prange(n_traj):
        state = _stream(seed, np.uint64(i))
        state, u = _draw(state)
        x = _pick(start_cdf, u)
        t = 0.0
        done = goal[x]
        while not done:
            rate = exit_rates[x]
            if rate <= 0.0:
                break
            state, u = _draw(state)
            hold = -np.log(1.0 - u) / rate
            if t + hold > horizon:
                occ[i, x] += horizon - t
                t = horizon
                break
            occ[i, x] += hold
            t += hold
            state, u = _draw(state)
            x = _pick(jump_cdf[x], u)
            done = goal[x]
        tot[i] = t
        if not done:
            censored[i] = 1
    return occ, tot, censored


@njit(parallel=True, cache=True)
def _occupation_discrete(jump_cdf, goal, start_cdf, seed, n_traj, max_steps):
    n = jump_cdf.shape[0]
    occ = np.zeros((n_traj, n))
    tot = np.zeros(n_traj)
    censored = np.zeros(n_traj, dtype=np.uint8)
    for i in prange(n_traj):
        state = _stream(seed, np.uint64(i))
        state, u = _draw(state)
        x = _pick(start_cdf, u)
        steps = 0
        done = goal[x]
        while not done and steps < max_steps:
            occ[i, x] += 1.0
            state, u = _draw(state)
            x = _pick(jump_cdf[x], u)
            steps += 1
            done = goal[x]
        tot[i] = float(steps)
        if not done:
            censored[i] = 1
    return occ, tot, censored


def _jump_tables(chain: FiniteChain) -> tuple[np.ndarray, np.ndarray]:
    m = np.array(chain.matrix, dtype=float)
    if chain.time_kind == CONTINUOUS:
        np.fill_diagonal(m, 0.0)
        rates = m.sum(axis=1)
        safe = np.where(rates > 0.0, rates, 1.0)
        cdf = np.cumsum(m / safe[:, None], axis=1)
    else:
        rates = np.ones(chain.state_count)
        cdf = np.cumsum(m, axis=1)
    cdf[:, -1] = 1.0
    return np.ascontiguousarray(cdf), rates


def _goal_mask(chain: FiniteChain, goal) -> np.ndarray:
    trap, goal = _complement(chain, goal)
    mask = np.zeros(chain.state_count, dtype=np.bool_)
    mask[list(goal)] = True
    return mask


def _start_cdf(chain: FiniteChain, start: ProbabilityVector) -> np.ndarray:
    if len(start) != chain.state_count:
        raise DimensionMismatch("start measure does not match the chain")
    cdf = np.cumsum(start.weights)
    cdf[-1] = 1.0
    return cdf


def _horizon(chain: FiniteChain, goal, config: SamplerConfig) -> float:
    if config.max_time is not None:
        return float(config.max_time)
    part = TrapPartition.from_goal(chain.state_count, goal)
    return DEFAULT_HORIZON_SCALES * quasi_stationary(chain, part).mean_exit_time


def simulate_trajectories(
    chain: FiniteChain, start: ProbabilityVector, goal, config: SamplerConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Raw per-trajectory hitting times and censoring flags.

    Trajectory i is a pure function of (seed, i), so the arrays are
    reproducible bit for bit regardless of threading.
    """
    jump_cdf, rates = _jump_tables(chain)
    mask = _goal_mask(chain, goal)
    cdf = _start_cdf(chain, start)
    seed = np.uint64(config.seed)
    horizon = _horizon(chain, goal, config)
    if chain.time_kind == CONTINUOUS:
        times, censored = _hits_continuous(
            jump_cdf, rates, mask, cdf, seed, config.n_trajectories, horizon
        )
    else:
        times, censored = _hits_discrete(
            jump_cdf, mask, cdf, seed, config.n_trajectories, int(np.ceil(horizon))
        )
    return times, censored.astype(bool)


def sample_hitting_times(
    chain: FiniteChain, start: ProbabilityVector, goal, config: SamplerConfig
) -> EmpiricalSurvival:
    """Empirical survival of the goal-hitting time from a start measure."""
    times, censored = simulate_trajectories(chain, start, goal, config)
    kept = np.sort(times[~censored])
    if kept.size == 0:
        raise AllCensored(
            f"all {config.n_trajectories} trajectories exceeded the horizon"
        )
    cutoff = float(times[censored].min()) if censored.any() else float(times.max())
    return EmpiricalSurvival(kept, int(censored.sum()), len(times), cutoff)


def occupation_frequencies(
    chain: FiniteChain, x: int, goal, config: SamplerConfig, with_std: bool = False
):
    """Fraction of pre-escape time spent in each state, from sampled paths.

    Uses the ratio estimator: summed per-state occupation over summed
    path lengths, across uncensored trajectories.  With ``with_std`` the
    delta-method standard error per state is returned alongside.
    """
    jump_cdf, rates = _jump_tables(chain)
    mask = _goal_mask(chain, goal)
    if mask[int(x)]:
        raise ValueError(f"start {x} lies in the goal set")
    start = np.zeros(chain.state_count)
    start[int(x)] = 1.0
    cdf = np.cumsum(start)
    seed = np.uint64(config.seed)
    horizon = _horizon(chain, goal, config)
    if chain.time_kind == CONTINUOUS:
        occ, tot, censored = _occupation_continuous(
            jump_cdf, rates, mask, cdf, seed, config.n_trajectories, horizon
        )
    else:
        occ, tot, censored = _occupation_discrete(
            jump_cdf, mask, cdf, seed, config.n_trajectories, int(np.ceil(horizon))
        )
    keep = censored == 0
    if not keep.any():
        raise AllCensored(
            f"all {config.n_trajectories} trajectories exceeded the horizon"
        )
    occ, tot = occ[keep], tot[keep]
    count = occ.shape[0]
    mean_time = float(tot.mean())
    freq = occ.sum(axis=0) / tot.sum()
    measure = ProbabilityVector(np.clip(freq, 0.0, None) / freq.sum())
    if not with_std:
        return measure
    resid = occ - tot[:, None] * freq[None, :]
    std = np.sqrt((resid**2).mean(axis=0) / count) / mean_time
    return measure, std


def ks_statistic(sample: EmpiricalSurvival, mean: float) -> float:
    """Kolmogorov-Smirnov distance to the exponential law with the given mean.

    Censored mass sits above every uncensored time, so the supremum runs
    over the uncensored range with the full sample size in the
    denominator.
    """
    if sample.total == 0 or sample.times.size == 0:
        raise EmptySample("no uncensored hitting times to test")
    if mean <= 0:
        raise ValueError("reference mean must be positive")
    n = sample.total
    ref = 1.0 - np.exp(-sample.times / mean)
    upper = np.arange(1, sample.times.size + 1) / n
    lower = np.arange(0, sample.times.size) / n
    return float(np.maximum(np.abs(upper - ref), np.abs(ref - lower)).max())
