"""The measure zoo of trapped dynamics.

For a partition of the state space into a trap A and its complement G,
this module computes the restricted invariant measure, the conditioned
and doubly conditioned evolutions, the quasi-stationary measure, and the
empirical (expected-occupation) measure, together with the total
variation distance functionals used to quantify thermalization.

All measures over subsets are returned as full-length probability
vectors carrying zero mass outside their support.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist, pdist

from .chain import CONTINUOUS, FiniteChain, ProbabilityVector
from .errors import (
    DimensionMismatch,
    DisconnectedTrap,
    EmptySet,
    ExtinctMass,
    InternalBoundViolation,
    NonConvergence,
    ZeroConditioning,
    ZeroMass,
)
from .hitting import expected_local_time
from .semigroup import (
    Propagator,
    block_propagator,
    cached_stationary,
    full_propagator,
    visit_propagator,
)

DENSE_EIG_LIMIT = 2000
POWER_BUDGET = 1_000_000
POWER_TOL = 1e-10
EXACT_EXP_TOL = 1e-8

# Grid (in units of the mean exit time) on which the exactness of the
# quasi-stationary exit law is verified before returning.
_CHECK_GRID = np.geomspace(0.01, 20.0, 212)


@dataclass(frozen=True)
class TrapPartition:
    """Partition of the state space into a trap, a goal set and a basin.

    The basin is the subset of the trap acting as the effective bottom of
    the well; it may be empty until computed by the certification layer.
    """

    trap: tuple[int, ...]
    goal: tuple[int, ...]
    basin: tuple[int, ...] = ()
    alpha: float = 0.5

    def __post_init__(self):
        trap = tuple(sorted(set(int(i) for i in self.trap)))
        goal = tuple(sorted(set(int(i) for i in self.goal)))
        basin = tuple(sorted(set(int(i) for i in self.basin)))
        if not trap or not goal:
            raise EmptySet("both the trap and the goal must be nonempty")
        if set(trap) & set(goal):
            raise ValueError("trap and goal sets overlap")
        if not set(basin) <= set(trap):
            raise ValueError("basin must lie inside the trap")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        object.__setattr__(self, "trap", trap)
        object.__setattr__(self, "goal", goal)
        object.__setattr__(self, "basin", basin)

    @property
    def state_count(self) -> int:
        return len(self.trap) + len(self.goal)

    @classmethod
    def from_goal(cls, state_count: int, goal, alpha: float = 0.5) -> "TrapPartition":
        goal = tuple(sorted(set(int(i) for i in goal)))
        trap = tuple(i for i in range(state_count) if i not in set(goal))
        return cls(trap, goal, (), alpha)

    def with_basin(self, basin) -> "TrapPartition":
        return TrapPartition(self.trap, self.goal, tuple(basin), self.alpha)


@dataclass(frozen=True, eq=False)
class ConditionedMeasureResult:
    """A conditioned law on the trap plus the probability of the conditioning event."""

    measure: ProbabilityVector
    survival_probability: float
    time: float


@dataclass(frozen=True, eq=False)
class QuasiStationaryResult:
    """Quasi-stationary measure with its exit-time scale.

    ``decay_rate`` is the spectral rate theta of absorption and
    ``mean_exit_time`` is 1/theta; exits from the measure are exactly
    exponential with that mean.
    """

    measure: ProbabilityVector
    mean_exit_time: float
    decay_rate: float


def _embed(values: np.ndarray, positions, n: int) -> np.ndarray:
    out = np.zeros(n)
    out[np.asarray(positions, dtype=np.intp)] = values
    return out


def tv_distance(p: ProbabilityVector, q: ProbabilityVector) -> float:
    """Total variation distance (1/2) sum |p - q|."""
    if len(p) != len(q):
        raise DimensionMismatch("measures live on different state spaces")
    return 0.5 * float(np.abs(p.weights - q.weights).sum())


def restricted_invariant(pi: ProbabilityVector, part: TrapPartition) -> ProbabilityVector:
    """The invariant measure renormalized on the trap."""
    mass = pi.mass(part.trap)
    if mass <= 0.0:
        raise ZeroMass("the invariant measure carries no mass on the trap")
    return ProbabilityVector(_embed(pi.weights[list(part.trap)] / mass, part.trap, len(pi)))


def conditioned_evolution(
    chain: FiniteChain, start: ProbabilityVector, part: TrapPartition, t: float
) -> ConditionedMeasureResult:
    """Law at time ``t`` conditioned on not having left the trap.

    Returns the normalized killed evolution together with the survival
    probability P(tau_goal > t).
    """
    if t < 0:
        raise ValueError("time must be nonnegative")
    if start.mass(part.goal) > 1e-12:
        raise ValueError("start measure places mass on the goal set")
    prop = block_propagator(chain, part.trap)
    v = start.weights[list(part.trap)]
    evolved = prop.act(v, t)
    surv = float(evolved.sum())
    if surv < 1e-300:
        raise ExtinctMass(f"survival probability underflowed at t={t!r}")
    surv = min(surv, 1.0)
    measure = ProbabilityVector(_embed(evolved / evolved.sum(), part.trap, len(start)))
    return ConditionedMeasureResult(measure, surv, float(t))


def doubly_conditioned_evolution(
    chain: FiniteChain, x: int, part: TrapPartition, t: float, R: float
) -> ConditionedMeasureResult:
    """Law at ``t`` conditioned on survival and on an early basin visit.

    The conditioning event is {tau_goal > t} intersected with
    {tau_(goal or basin) <= t - 2R}.  It is computed exactly by augmenting
    the killed chain with a visited bit.  For starts inside the basin the
    visit happens at time zero and the result coincides with
    :func:`conditioned_evolution`.
    """
    if not part.basin:
        raise EmptySet("basin has not been computed")
    if t < 2 * R:
        raise ValueError("need t >= 2R")
    x = int(x)
    if x not in part.trap:
        raise ValueError(f"start {x} is not in the trap")
    n = chain.state_count
    if x in part.basin or set(part.basin) == set(part.trap):
        return conditioned_evolution(chain, _unit(n, x), part, t)
    window = t - 2.0 * R
    if window <= 0.0:
        raise ZeroConditioning(
            f"start {x} cannot visit the basin within a window of length 0"
        )
    split = visit_propagator(chain, part.trap, part.basin)
    rows = split.start([part.trap.index(x)])
    visited = split.visited_mass(rows, window)
    final = np.clip(split.continue_killed(visited, 2.0 * R)[0], 0.0, None)
    weight = float(final.sum())
    # below the reconstruction noise of the spectral propagators the
    # normalized law would be meaningless
    if weight <= 1e-12:
        raise ZeroConditioning(
            f"conditioning event has vanishing probability for start {x} at t={t!r}"
        )
    measure = ProbabilityVector(_embed(final / final.sum(), part.trap, n))
    return ConditionedMeasureResult(measure, min(weight, 1.0), float(t))


def _unit(n: int, x: int) -> ProbabilityVector:
    w = np.zeros(n)
    w[x] = 1.0
    return ProbabilityVector(w)


def _trap_components(chain: FiniteChain, trap: tuple[int, ...]) -> list[tuple[int, ...]]:
    idx = np.asarray(trap, dtype=np.intp)
    block = chain.matrix[np.ix_(idx, idx)].copy()
    np.fill_diagonal(block, 0.0)
    n_comp, labels = connected_components(
        csr_matrix((np.abs(block) > 0).astype(np.int8)), directed=True, connection="strong"
    )
    return [
        tuple(trap[i] for i in np.flatnonzero(labels == c)) for c in range(n_comp)
    ]


def _perron_left(block: np.ndarray, prop: Propagator) -> tuple[float, np.ndarray]:
    """Dominant eigenvalue and positive left eigenvector of a killed block."""
    if prop.mode == "sym":
        lam = prop._lam[-1]
        vec = prop._u[:, -1] * prop._d
    else:
        values, vectors = scipy.linalg.eig(block.T)
        top = int(np.argmax(values.real))
        lam = values[top]
        if abs(lam.imag) > 1e-10 * max(1.0, abs(lam.real)):
            raise NonConvergence("dominant eigenvalue is not real")
        lam = float(lam.real)
        vec = vectors[:, top].real
    if vec.sum() < 0:
        vec = -vec
    if vec.min() < -1e-10:
        raise NonConvergence("dominant eigenvector is not nonnegative")
    vec = np.clip(vec, 0.0, None)
    return float(lam), vec / vec.sum()


def _power_iteration(kernel: np.ndarray) -> tuple[float, np.ndarray]:
    n = kernel.shape[0]
    v = np.full(n, 1.0 / n)
    lam = 0.0
    for _ in range(POWER_BUDGET):
        nxt = v @ kernel
        lam = float(nxt.sum())
        nxt /= lam
        if float(np.abs(v @ kernel - lam * v).max()) <= POWER_TOL:
            return lam, nxt
        v = nxt
    raise NonConvergence(
        f"power iteration did not reach residual {POWER_TOL} in {POWER_BUDGET} steps"
    )


def quasi_stationary(
    chain: FiniteChain, part: TrapPartition, per_class: bool = False
):
    """Quasi-stationary measure of the trap and its exit-time scale.

    The dominant left eigenvector of the killed block is computed by a
    dense eigensolver below 2000 states and by power iteration on the
    uniformized killed kernel above (deterministic uniform start, residual
    1e-10, budget 10^6 iterations).  Before returning, the exactness of
    the exponential exit law from the resulting measure is verified on a
    geometric time grid to 1e-8.

    Raises
    ------
    DisconnectedTrap
        If the trap splits into several communicating classes and
        ``per_class`` is false; with ``per_class`` set, a list of
        per-class results is returned instead.
    NonConvergence
        If the eigenproblem cannot be solved to residual 1e-10.
    """
    comps = _trap_components(chain, part.trap)
    if len(comps) > 1:
        if not per_class:
            raise DisconnectedTrap(
                f"trap splits into {len(comps)} communicating classes"
            )
        return [
            quasi_stationary(chain, TrapPartition.from_goal(
                chain.state_count,
                tuple(i for i in range(chain.state_count) if i not in set(comp)),
                part.alpha,
            ))
            for comp in comps
        ]
    trap = part.trap
    idx = np.asarray(trap, dtype=np.intp)
    block = chain.matrix[np.ix_(idx, idx)]
    prop = block_propagator(chain, trap)
    continuous = chain.time_kind == CONTINUOUS
    if len(trap) < DENSE_EIG_LIMIT:
        lam, vec = _perron_left(block, prop)
    else:
        rate = float(chain.uniformization_rate) if continuous else 1.0
        kernel = np.eye(len(trap)) + block / rate if continuous else block
        mu, vec = _power_iteration(kernel)
        lam = (mu - 1.0) * rate if continuous else mu
    if continuous:
        if lam >= 0:
            raise NonConvergence(f"killed block has nonnegative decay {lam!r}")
        theta = -lam
    else:
        if not 0.0 < lam < 1.0:
            raise NonConvergence(f"killed kernel has dominant eigenvalue {lam!r}")
        theta = -float(np.log(lam))
    mean_exit = 1.0 / theta
    residual = float(np.abs(vec @ block - lam * vec).max())
    if residual > POWER_TOL:
        raise NonConvergence(f"eigenvector residual {residual:.3e} exceeds 1e-10")
    _verify_exponential_exit(prop, vec, theta, continuous)
    measure = ProbabilityVector(_embed(vec, trap, chain.state_count))
    return QuasiStationaryResult(measure, mean_exit, theta)


def _verify_exponential_exit(
    prop: Propagator, vec: np.ndarray, theta: float, continuous: bool
) -> None:
    mean = 1.0 / theta
    if continuous:
        deviations = [
            abs(float(prop.survival(vec, u * mean)) - float(np.exp(-u)))
            for u in _CHECK_GRID
        ]
    else:
        steps = np.unique(np.round(_CHECK_GRID * mean).astype(np.int64))
        steps = steps[steps >= 0]
        deviations = [
            abs(float(prop.survival(vec, float(s))) - float(np.exp(-theta * s)))
            for s in steps
        ]
    worst = max(deviations)
    if worst > EXACT_EXP_TOL:
        raise InternalBoundViolation(
            f"exit law from the quasi-stationary measure deviates by {worst:.3e} "
            "from exponential"
        )


def empirical_measure(chain: FiniteChain, x: int, part: TrapPartition) -> ProbabilityVector:
    """Expected fraction of the pre-escape time spent in each trap state.

    Computed from the expected-local-time linear system, never by
    simulation; the result sums to one over the trap.
    """
    local = expected_local_time(chain, int(x), part.goal)
    return ProbabilityVector(_embed(local / local.sum(), part.trap, chain.state_count))


def _evolved_rows(chain: FiniteChain, states, t: float) -> np.ndarray:
    prop = full_propagator(chain)
    rows = np.zeros((len(states), chain.state_count))
    for k, s in enumerate(states):
        rows[k, int(s)] = 1.0
    return prop.act(rows, t)


def distance_profile(chain: FiniteChain, t: float) -> tuple[float, float]:
    """Worst-case distance to stationarity d(t) and pairwise spread d_bar(t).

    d(t) maximizes tv(law from x at t, stationary) over starts x; d_bar(t)
    maximizes the distance between two evolved point masses.  Both are
    computed by evolving every point mass exactly.
    """
    if t < 0:
        raise ValueError("time must be nonnegative")
    rows = _evolved_rows(chain, range(chain.state_count), t)
    pi = cached_stationary(chain)
    d = 0.5 * float(cdist(rows, pi[None, :], metric="cityblock").max())
    d_bar = 0.5 * float(pdist(rows, metric="cityblock").max()) if len(rows) > 1 else 0.0
    return d, d_bar


def pairwise_distance(chain: FiniteChain, subset, t: float) -> float:
    """Largest tv distance between evolutions started inside ``subset``.

    Unlike the full-space profile this quantity is not submultiplicative
    in ``t``.
    """
    subset = tuple(sorted(set(int(i) for i in subset)))
    if not subset:
        raise EmptySet("subset is empty")
    if t < 0:
        raise ValueError("time must be nonnegative")
    if len(subset) == 1:
        return 0.0
    rows = _evolved_rows(chain, subset, t)
    return 0.5 * float(pdist(rows, metric="cityblock").max())
