"""Reference model families: a double-well birth-death chain and a card shuffle.

The birth-death family has heavy wells at both ends of {0, ..., n} and a
polynomial barrier in the middle; helpers build the full chain, its left
half reflected at the midpoint, and an idealized one-sided barrier walk
whose resistances are exact power sums.  The shuffle family is the
move-to-random walk on permutations together with its last-descent
projection, whose invariant measure is known in closed form and whose
lumping onto descent classes is exact.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .chain import FiniteChain, ProbabilityVector, continuous_chain, discrete_chain
from .errors import BoundViolation, LumpingViolation, TooLarge
from .hitting import mean_hitting_time, hitting_probability_before, return_vs_hit_probability

FULL_SHUFFLE_LIMIT = 8
EXACT_CHECK_LIMIT = 64


@dataclass(frozen=True, eq=False)
class BirthDeathSpec:
    """Size, normalized well weights, and normalization constant Z(n)."""

    n: int
    stationary: ProbabilityVector
    normalization: float


@dataclass(frozen=True, eq=False)
class TiarSpec:
    """Size, projected invariant measure, and its exact rational form."""

    n: int
    stationary: ProbabilityVector
    exact: tuple[Fraction, ...]


@dataclass(frozen=True)
class ReturnBoundRow:
    """Escape-before-return data for one projected level."""

    k: int
    probability: float
    bound: float
    mean_visits: float


@dataclass(frozen=True)
class AsymptoticsRow:
    """Normalized time and probability scales for one chain size.

    Each entry divides a measured quantity by its predicted growth, so a
    family of rows with stable entries confirms the exponents: ``uphill``
    is the mean time to climb to level n**alpha from the well bottom over
    n**(5 alpha / 2), ``downhill`` the mean time to fall from the barrier
    top to the bottom on the reflected half chain over n**2, ``barrier``
    the probability of crossing from n/10 to n/2 before returning to 0 on
    the idealized barrier walk over (1/5)**(5/2).
    """

    n: int
    uphill: float
    downhill: float
    barrier: float


def _well_weights(n: int) -> np.ndarray:
    x = np.arange(n + 1, dtype=float)
    return np.maximum(x, 1.0) ** -1.5 * np.maximum(n - x, 1.0) ** -1.5


def birth_death_spec(n: int) -> BirthDeathSpec:
    """Stationary weights of the double-well chain and their normalization."""
    _check_even(n)
    raw = _well_weights(n)
    z = float(raw.sum())
    return BirthDeathSpec(n, ProbabilityVector(raw / z), z)


def _check_even(n: int) -> None:
    if n < 4 or n % 2:
        raise ValueError("size must be an even integer >= 4")


def _metropolis_chain(weights: np.ndarray, reflect_top: bool) -> FiniteChain:
    m = len(weights) - 1
    gen = np.zeros((m + 1, m + 1))
    for x in range(m):
        gen[x, x + 1] = min(1.0, weights[x + 1] / weights[x])
    for x in range(1, m + 1):
        gen[x, x - 1] = min(1.0, weights[x - 1] / weights[x])
    if reflect_top:
        gen[m, :] = 0.0
        gen[m, m - 1] = min(1.0, weights[m - 1] / weights[m])
    np.fill_diagonal(gen, 0.0)
    np.fill_diagonal(gen, -gen.sum(axis=1))
    return continuous_chain(gen, labels=tuple(str(x) for x in range(m + 1)))


def build_birth_death(n: int) -> FiniteChain:
    """Double-well Metropolis chain on {0, ..., n} in continuous time."""
    _check_even(n)
    return _metropolis_chain(_well_weights(n), reflect_top=False)


def build_birth_death_half(n: int) -> FiniteChain:
    """Left half {0, ..., n/2} of the double well, reflected at the top.

    Descent times from the barrier top are stable on this chain, unlike
    on the full chain where re-entries from the other well dominate.
    """
    _check_even(n)
    return _metropolis_chain(_well_weights(n)[: n // 2 + 1], reflect_top=True)


def barrier_weights(length: int) -> np.ndarray:
    """Unnormalized one-sided barrier weights max(k, 1)**-3/2 on {0, ..., length}."""
    if length < 2:
        raise ValueError("barrier walk needs at least three states")
    k = np.arange(length + 1, dtype=float)
    return np.maximum(k, 1.0) ** -1.5


def build_barrier_walk(length: int) -> FiniteChain:
    """Heat-bath walk on the one-sided barrier weights, in continuous time.

    Its edge resistances are exactly k**(3/2) + (k+1)**(3/2) for k >= 1,
    so crossing probabilities reproduce the power-sum calculus with no
    metropolis edge effects.
    """
    w = barrier_weights(length)
    gen = np.zeros((length + 1, length + 1))
    for k in range(length):
        total = w[k] + w[k + 1]
        gen[k, k + 1] = w[k + 1] / total
        gen[k + 1, k] = w[k] / total
    np.fill_diagonal(gen, -gen.sum(axis=1))
    return continuous_chain(gen, labels=tuple(str(x) for x in range(length + 1)))


def tiar_projection_invariant(n: int) -> tuple[Fraction, ...]:
    """Exact invariant measure of the last-descent projection.

    Level 0 carries 1/n! and level k carries (n-k)/(n-k+1)! for k >= 1.
    """
    if n < 2:
        raise ValueError("need at least two cards")
    out = [Fraction(1, math.factorial(n))]
    for k in range(1, n):
        out.append(Fraction(n - k, math.factorial(n - k + 1)))
    return tuple(out)


def tiar_spec(n: int) -> TiarSpec:
    exact = tiar_projection_invariant(n)
    weights = np.array([float(v) for v in exact])
    return TiarSpec(n, ProbabilityVector(weights / weights.sum()), exact)


def _projection_counts(n: int) -> np.ndarray:
    """Integer transition counts: n times the projection kernel."""
    counts = np.zeros((n, n), dtype=np.int64)
    counts[0, :] = 1
    for i in range(1, n):
        counts[i, i - 1] += 1
        counts[i, i] += i
        for j in range(i + 1, n):
            counts[i, j] += 1
    return counts


def build_tiar_projection(n: int) -> FiniteChain:
    """Projection of the move-to-random shuffle onto the last descent position.

    Levels are 0 (sorted deck) through n - 1.  From level 0 every level is
    reached with weight 1/n; from level i >= 1 the chain steps down to
    i - 1 with weight 1/n, stays with weight i/n, and jumps to any higher
    level below n with weight 1/n.  For moderate sizes the invariance of
    the closed-form measure is confirmed in exact rational arithmetic
    before the kernel is released.
    """
    counts = _projection_counts(n)
    if n <= EXACT_CHECK_LIMIT:
        mu = tiar_projection_invariant(n)
        kernel = [[Fraction(int(c), n) for c in row] for row in counts]
        for j in range(n):
            if sum(mu[i] * kernel[i][j] for i in range(n)) != mu[j]:
                raise LumpingViolation(
                    witness=j,
                    message=f"closed-form measure is not invariant at level {j}",
                )
        if sum(mu) != 1:
            raise LumpingViolation(witness=None, message="measure does not normalize")
    return discrete_chain(
        counts.astype(float) / n, labels=tuple(str(i) for i in range(n))
    )


def tiar_permutations(n: int) -> list[tuple[int, ...]]:
    """All permutations of (0, ..., n-1) in lexicographic order."""
    return list(itertools.permutations(range(n)))


def sigma(perm: tuple[int, ...]) -> int:
    """Position of the last descent of a permutation, zero when sorted.

    Positions are 1-based: the largest i with perm[i-1] > perm[i].
    """
    for i in range(len(perm) - 1, 0, -1):
        if perm[i - 1] > perm[i]:
            return i
    return 0


def build_tiar_full(n: int) -> FiniteChain:
    """Move-to-random shuffle on all n! permutations, in discrete time.

    The top card is removed and reinserted at a uniform position, the
    original top slot included, so the walk is lazy with rate 1/n.  Above
    eight cards the dense kernel no longer fits and TooLarge is raised.
    """
    if n < 2:
        raise ValueError("need at least two cards")
    if n > FULL_SHUFFLE_LIMIT:
        raise TooLarge(f"full shuffle kernel is dense in {n}! states; cap is 8 cards")
    perms = tiar_permutations(n)
    index = {p: i for i, p in enumerate(perms)}
    kernel = np.zeros((len(perms), len(perms)))
    step = 1.0 / n
    for i, x in enumerate(perms):
        top, rest = x[0], x[1:]
        for k in range(1, n + 1):
            y = rest[: k - 1] + (top,) + rest[k - 1 :]
            kernel[i, index[y]] += step
    labels = tuple("".join(str(c) for c in p) for p in perms)
    return discrete_chain(kernel, labels=labels)


def project_and_verify_lumping(full: FiniteChain, n: int) -> tuple[bool, float]:
    """Check that the full shuffle lumps exactly onto the descent projection.

    Transition probabilities are integer multiples of 1/n on both sides,
    so rows are compared as integer counts and any discrepancy is exact.
    Returns (True, 0.0) on success; a mismatch raises LumpingViolation
    whose witness names the permutation and the offending level.
    """
    perms = tiar_permutations(n)
    if full.state_count != len(perms):
        raise ValueError(f"chain does not have {n}! states")
    classes = np.array([sigma(p) for p in perms])
    counts = np.rint(full.matrix * n)
    if float(np.abs(full.matrix * n - counts).max()) > 1e-9:
        raise LumpingViolation(
            witness=None, message="kernel entries are not multiples of 1/n"
        )
    expected = _projection_counts(n)
    for i, p in enumerate(perms):
        agg = np.bincount(classes, weights=counts[i], minlength=n)
        row = expected[classes[i]]
        if not np.array_equal(agg, row.astype(float)):
            level = int(np.argmax(agg != row))
            raise LumpingViolation(
                witness=(p, level),
                message=(
                    f"permutation {p} sends aggregate weight {agg[level] / n:g} "
                    f"to level {level}, projection expects {row[level] / n:g}"
                ),
            )
    return True, 0.0


def return_bound_table(n: int) -> tuple[ReturnBoundRow, ...]:
    """Escape-before-return probabilities on the projection, with their bounds.

    For each level k >= 1 the probability of reaching the sorted state
    before returning to k (a held self-loop counts as a return) is at
    most (n-1) (n-k-1)!/n!, with equality at k = 1.  The implied mean
    number of visits per excursion satisfies the one-step recursion
    E_k >= n + (n-k) E_{k-1} and its closed-form unrolling; violations
    raise BoundViolation naming the level.
    """
    if n < 2:
        raise ValueError("need at least two cards")
    chain = build_tiar_projection(n)
    rows = []
    visits_prev = None
    for k in range(1, n):
        p = return_vs_hit_probability(chain, k, (0,))
        bound = float(
            Fraction((n - 1) * math.factorial(n - k - 1), math.factorial(n))
        )
        if p > bound + 1e-12:
            raise BoundViolation(
                f"escape probability {p:.12g} at level {k} exceeds bound {bound:.12g}"
            )
        visits = 1.0 / p
        if k >= 2:
            floor = n + (n - k) * visits_prev
            if visits * (1.0 + 1e-9) < floor:
                raise BoundViolation(
                    f"mean visits {visits:.12g} at level {k} fall below the "
                    f"recursion floor {floor:.12g}"
                )
        closed = float(
            n
            * sum(
                Fraction(math.factorial(n - j - 1), math.factorial(n - k - 1))
                for j in range(1, k + 1)
            )
        )
        if visits * (1.0 + 1e-9) < closed:
            raise BoundViolation(
                f"mean visits {visits:.12g} at level {k} fall below the "
                f"closed-form floor {closed:.12g}"
            )
        rows.append(ReturnBoundRow(k, p, bound, visits))
        visits_prev = visits
    return tuple(rows)


def birth_death_asymptotics_check(
    sizes, alpha: float = 0.5
) -> tuple[AsymptoticsRow, ...]:
    """Normalized climb, descent, and crossing scales across chain sizes.

    ``sizes`` must be strictly increasing even integers up to 2000.  The
    returned rows carry ratio-normalized values whose stability across
    sizes is the check; no absolute constant is asserted here.
    """
    sizes = [int(n) for n in sizes]
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("sizes must be strictly increasing")
    rows = []
    for n in sizes:
        _check_even(n)
        if n > 2000:
            raise TooLarge("dense solves are capped at 2000 states")
        level = max(2, int(round(n**alpha)))
        uphill = mean_hitting_time(build_birth_death(n), 0, (level,))
        uphill /= n ** (2.5 * alpha)
        half = build_birth_death_half(n)
        downhill = mean_hitting_time(half, n // 2, (0,)) / n**2
        walk = build_barrier_walk(n // 2)
        start = max(1, int(round(n / 10)))
        crossing = hitting_probability_before(walk, start, (n // 2,), (0,))
        rows.append(AsymptoticsRow(n, uphill, downhill, crossing / 0.2**2.5))
    return tuple(rows)
