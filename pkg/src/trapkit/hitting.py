"""Exact hitting-time machinery.

Survival curves, mean hitting times, hitting-order probabilities and
expected local times all reduce to dense linear algebra on the killed
block of the chain.  Every system is solved with a partial-pivot LU
factorization, shared across starting states through a per-chain cache.
The one-dimensional resistance calculus for nearest-neighbour chains
lives here as well.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .chain import CONTINUOUS, FiniteChain, ProbabilityVector
from .errors import (
    DimensionMismatch,
    EmptySet,
    NotBirthDeath,
    SingularSystem,
)
from .semigroup import _cache, block_propagator

_MONOTONE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SurvivalCurve:
    """Sampled survival function t -> P(tau > t)."""

    times: np.ndarray
    survival: np.ndarray
    start_descriptor: str

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        s = np.asarray(self.survival, dtype=np.float64)
        if t.shape != s.shape:
            raise DimensionMismatch("times and survival must have equal length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        if s.size and s[0] > 1.0 + 1e-12:
            raise ValueError("survival cannot exceed 1")
        if np.any(np.diff(s) > _MONOTONE_TOL):
            raise ValueError("survival must be non-increasing within 1e-12")
        t.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "survival", s)

    def as_rows(self, mean: float | None = None):
        """Rows (t, survival, exp_reference, deviation) for CSV export."""
        for t, s in zip(self.times, self.survival):
            if mean is None:
                yield (t, s, "", "")
            else:
                ref = float(np.exp(-t / mean))
                yield (t, s, ref, s - ref)


@dataclass(frozen=True, eq=False)
class ResistanceProfile:
    """Edge resistances R(k, k+1) of a path and their prefix sums."""

    edge_resistances: np.ndarray
    cumulative: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.edge_resistances, dtype=np.float64)
        c = np.asarray(self.cumulative, dtype=np.float64)
        if np.any(e <= 0) or np.any(c <= 0):
            raise ValueError("resistances must be positive")
        if not np.allclose(c, np.cumsum(e), rtol=1e-12, atol=0.0):
            raise ValueError("cumulative must be the prefix sum of the edges")
        e.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "edge_resistances", e)
        object.__setattr__(self, "cumulative", c)

    def ratio(self, x: int) -> float:
        """Normalized series resistance R(0, x) / R(0, end)."""
        if not 1 <= x <= len(self.cumulative):
            raise IndexError(f"x must be in 1..{len(self.cumulative)}")
        return float(self.cumulative[x - 1] / self.cumulative[-1])


def _complement(chain: FiniteChain, goal) -> tuple[tuple[int, ...], tuple[int, ...]]:
    goal = tuple(sorted(set(int(g) for g in goal)))
    if not goal:
        raise EmptySet("goal set is empty")
    if any(g < 0 or g >= chain.state_count for g in goal):
        raise DimensionMismatch("goal set contains out-of-range states")
    trap = tuple(i for i in range(chain.state_count) if i not in set(goal))
    if not trap:
        raise EmptySet("goal set covers the whole space")
    return trap, goal


def survival_function(
    chain: FiniteChain,
    start: ProbabilityVector,
    goal,
    t_grid,
    start_descriptor: str | None = None,
) -> SurvivalCurve:
    """P(tau_goal > t) on a grid of times, via the killed semigroup.

    Parameters
    ----------
    chain : FiniteChain
    start : ProbabilityVector
        Starting measure; must carry no mass on the goal set.
    goal : index set
        Absorbing target.
    t_grid : sequence of float
        Strictly increasing evaluation times.
    start_descriptor : str, optional
        Free-text tag stored on the curve.
    """
    trap, goal = _complement(chain, goal)
    if start.mass(goal) > 1e-12:
        raise ValueError("start measure places mass on the goal set")
    times = np.asarray(list(t_grid), dtype=np.float64)
    prop = block_propagator(chain, trap)
    v = start.weights[np.asarray(trap, dtype=np.intp)]
    surv = np.empty(times.size)
    for i, t in enumerate(times):
        surv[i] = min(max(float(prop.survival(v, float(t))), 0.0), 1.0)
    if start_descriptor is None:
        sup = start.support()
        if sup.size == 1:
            start_descriptor = f"point:{chain.labels[int(sup[0])]}"
        else:
            start_descriptor = f"measure on {sup.size} states"
    return SurvivalCurve(times, surv, start_descriptor)


def _killed_system(chain: FiniteChain, trap: tuple[int, ...]):
    """LU factorization of -Q_A (continuous) or I - P_A (discrete)."""
    store = _cache(chain).setdefault("linsys", {})
    if trap not in store:
        idx = np.asarray(trap, dtype=np.intp)
        block = chain.matrix[np.ix_(idx, idx)]
        if chain.time_kind == CONTINUOUS:
            system = -block
        else:
            system = np.eye(len(trap)) - block
        try:
            store[trap] = scipy.linalg.lu_factor(system)
        except scipy.linalg.LinAlgError as exc:
            raise SingularSystem(f"killed system is singular: {exc}") from exc
    return store[trap]


def mean_hitting_time(chain: FiniteChain, x: int, goal) -> float:
    """E[tau_goal] from state ``x``, by one linear solve on the killed block."""
    trap, goal = _complement(chain, goal)
    if int(x) not in trap:
        raise ValueError(f"start {x} lies in the goal set")
    lu = _killed_system(chain, trap)
    m = scipy.linalg.lu_solve(lu, np.ones(len(trap)))
    if not np.all(np.isfinite(m)):
        raise SingularSystem("mean hitting times are not finite")
    return float(m[trap.index(int(x))])


def expected_local_time(chain: FiniteChain, x: int, goal) -> np.ndarray:
    """Expected local time in each trap state before absorption.

    Continuous time counts Lebesgue time in the state, discrete time
    counts visits (the start at time zero included).  The vector is
    indexed by the trap states in increasing order and sums to the mean
    hitting time.
    """
    trap, goal = _complement(chain, goal)
    if int(x) not in trap:
        raise ValueError(f"start {x} lies in the goal set")
    lu = _killed_system(chain, trap)
    unit = np.zeros(len(trap))
    unit[trap.index(int(x))] = 1.0
    return scipy.linalg.lu_solve(lu, unit, trans=1)


def hitting_probability_before(chain: FiniteChain, x: int, target, taboo) -> float:
    """P(tau_target < tau_taboo) from ``x``, by the harmonic linear system."""
    target = tuple(sorted(set(int(i) for i in target)))
    taboo = tuple(sorted(set(int(i) for i in taboo)))
    if not target or not taboo:
        raise EmptySet("target and taboo sets must be nonempty")
    if set(target) & set(taboo):
        raise ValueError("target and taboo sets must be disjoint")
    x = int(x)
    if x in target or x in taboo:
        raise ValueError("start must lie outside both boundary sets")
    h = _harmonic(chain, target, taboo)
    return float(min(max(h[x], 0.0), 1.0))


def _harmonic(chain: FiniteChain, target: tuple[int, ...], taboo: tuple[int, ...]) -> np.ndarray:
    """Full-length solution of the boundary problem: 1 on target, 0 on taboo."""
    n = chain.state_count
    boundary = set(target) | set(taboo)
    free = [i for i in range(n) if i not in boundary]
    h = np.zeros(n)
    h[list(target)] = 1.0
    if free:
        idx = np.asarray(free, dtype=np.intp)
        t_idx = np.asarray(target, dtype=np.intp)
        if chain.time_kind == CONTINUOUS:
            system = chain.matrix[np.ix_(idx, idx)]
            rhs = -chain.matrix[np.ix_(idx, t_idx)].sum(axis=1)
        else:
            system = chain.matrix[np.ix_(idx, idx)] - np.eye(len(free))
            rhs = -chain.matrix[np.ix_(idx, t_idx)].sum(axis=1)
        try:
            h[idx] = scipy.linalg.solve(system, rhs)
        except scipy.linalg.LinAlgError as exc:
            raise SingularSystem(f"harmonic system is singular: {exc}") from exc
    return h


def return_vs_hit_probability(chain: FiniteChain, k: int, target) -> float:
    """P(tau_target < first return to ``k``), by one-step decomposition.

    A discrete-time self-loop at ``k`` counts as a return; in continuous
    time the decomposition runs over the embedded jump chain.
    """
    target = tuple(sorted(set(int(i) for i in target)))
    if not target:
        raise EmptySet("target set is empty")
    k = int(k)
    if k in target:
        raise ValueError("start lies in the target set")
    h = _harmonic(chain, target, (k,))
    row = chain.matrix[k].copy()
    if chain.time_kind == CONTINUOUS:
        rate = -row[k]
        if rate <= 0:
            raise SingularSystem(f"state {k} has no outgoing transitions")
        row[k] = 0.0
        row /= rate
    else:
        row[k] = 0.0
    return float(min(max(float(row @ h), 0.0), 1.0))


def resistance_profile(chain: FiniteChain, weights, path_length: int) -> ResistanceProfile:
    """Series resistances along a nearest-neighbour path from state 0.

    The resistance of the edge (k, k+1) is 1 / (w(k) * rate(k, k+1)) for a
    reversing weight vector w.  The weights need not be normalized: any
    positive vector satisfying detailed balance gives the same normalized
    ratios, and unnormalized weights keep the absolute scale of the edge
    values meaningful.

    Raises
    ------
    NotBirthDeath
        If the chain has transitions beyond nearest neighbours.
    """
    w = np.asarray(getattr(weights, "weights", weights), dtype=np.float64)
    m = chain.matrix
    n = chain.state_count
    if w.shape != (n,):
        raise DimensionMismatch("weight vector length does not match the chain")
    off = np.abs(m.copy())
    for k in range(-1, 2):
        np.fill_diagonal(off[max(0, -k):, max(0, k):], 0.0)
    stray = np.argwhere(off > 0)
    if len(stray):
        i, j = stray[0]
        raise NotBirthDeath(f"entry ({i},{j}) is outside the tridiagonal band")
    if not 1 <= path_length < n:
        raise ValueError(f"path length must be in 1..{n - 1}")
    edges = np.empty(path_length)
    for k in range(path_length):
        rate = m[k, k + 1]
        if rate <= 0 or w[k] <= 0:
            raise NotBirthDeath(f"edge ({k},{k + 1}) has no forward flow")
        edges[k] = 1.0 / (w[k] * rate)
    return ResistanceProfile(edges, np.cumsum(edges))
