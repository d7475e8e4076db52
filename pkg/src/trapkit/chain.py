"""Finite-state Markov chains in continuous or discrete time.

A chain is stored as its full square matrix: a generator Q (rows sum to
zero) for continuous time, or a stochastic kernel P (rows sum to one) for
discrete time.  Continuous chains carry a uniformization rate Lambda with
Lambda >= max_x |Q(x,x)|, so that I + Q/Lambda is a stochastic kernel.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.stats import poisson

from .errors import (
    ChainFormatError,
    DimensionMismatch,
    EmptyComplement,
    EmptySet,
    InvalidChain,
    InvalidDistribution,
    NonIntegerTime,
    SingularSystem,
    ZeroMassState,
)

ROW_SUM_TOL = 1e-12
ENTRY_TOL = 1e-12
NEGATIVE_CLAMP = -1e-14
MASS_TOL = 1e-10
POISSON_TAIL = 1e-12

CONTINUOUS = "continuous"
DISCRETE = "discrete"


@dataclass(frozen=True, eq=False)
class ProbabilityVector:
    """A probability measure over the states of a chain.

    Entries in [-1e-14, 0) caused by roundoff are clamped to zero at
    construction; anything more negative is rejected.  The total mass must
    lie within 1e-10 of one.
    """

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        if w.size == 0:
            raise InvalidDistribution("empty weight vector")
        low = w.min()
        if low < NEGATIVE_CLAMP:
            raise InvalidDistribution(
                f"weight {low:.3e} at index {int(w.argmin())} is below the clamp threshold"
            )
        np.clip(w, 0.0, None, out=w)
        total = w.sum()
        if not (1.0 - MASS_TOL <= total <= 1.0 + MASS_TOL):
            raise InvalidDistribution(f"total mass {total!r} is not 1 within 1e-10")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.weights.size

    def __getitem__(self, idx):
        return self.weights[idx]

    def mass(self, indices) -> float:
        """Total weight carried by the given states."""
        return float(self.weights[np.asarray(indices, dtype=np.intp)].sum())

    def support(self) -> np.ndarray:
        return np.flatnonzero(self.weights > 0.0)


def point_mass(state_count: int, x: int) -> ProbabilityVector:
    """Dirac measure at state ``x``."""
    if not 0 <= x < state_count:
        raise DimensionMismatch(f"state {x} outside 0..{state_count - 1}")
    w = np.zeros(state_count)
    w[x] = 1.0
    return ProbabilityVector(w)


@dataclass(frozen=True, eq=False)
class FiniteChain:
    """An irreducible finite Markov chain.

    Use :func:`continuous_chain` or :func:`discrete_chain` to build a
    validated instance; direct construction skips validation and is meant
    for tests of :func:`validate` itself.
    """

    labels: tuple[str, ...]
    time_kind: str
    matrix: np.ndarray
    uniformization_rate: float | None = None

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InvalidChain([f"matrix must be square, got shape {m.shape}"])
        if m.shape[0] != len(self.labels):
            raise InvalidChain(
                [f"matrix size {m.shape[0]} does not match {len(self.labels)} labels"]
            )
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "labels", tuple(str(s) for s in self.labels))

    @property
    def state_count(self) -> int:
        return len(self.labels)

    def is_continuous(self) -> bool:
        return self.time_kind == CONTINUOUS


@dataclass(frozen=True, eq=False)
class SubChain:
    """Substochastic restriction of a chain to a kept subset of states."""

    parent: FiniteChain
    kept_states: tuple[int, ...]
    sub_generator: np.ndarray

    def __post_init__(self):
        g = np.array(self.sub_generator, dtype=np.float64)
        g.setflags(write=False)
        object.__setattr__(self, "sub_generator", g)


def _strong_components(matrix: np.ndarray) -> int:
    off = matrix.copy()
    np.fill_diagonal(off, 0.0)
    graph = csr_matrix((np.abs(off) > 0.0).astype(np.int8))
    n_comp, _ = connected_components(graph, directed=True, connection="strong")
    return int(n_comp)


def _report_entries(out: list[str], where: np.ndarray, m: np.ndarray, rule: str):
    for i, j in where[:10]:
        out.append(f"entry ({i},{j}) = {m[i, j]!r} {rule}")
    if len(where) > 10:
        out.append(f"...and {len(where) - 10} more entries {rule}")


def validate(chain: FiniteChain) -> list[str]:
    """Check every structural invariant; return the list of violations.

    An empty list means the chain is well formed.  Each entry names the
    offending row or matrix entry and the rule it breaks.
    """
    m = chain.matrix
    n = chain.state_count
    out: list[str] = []
    if chain.time_kind not in (CONTINUOUS, DISCRETE):
        out.append(f"unknown time kind {chain.time_kind!r}")
        return out
    scale = max(1.0, float(np.abs(m).max()))
    row_sums = m.sum(axis=1)
    if chain.time_kind == CONTINUOUS:
        off = m.copy()
        np.fill_diagonal(off, 0.0)
        _report_entries(out, np.argwhere(off < 0.0), m, "is a negative rate")
        for i in np.flatnonzero(np.abs(row_sums) > ROW_SUM_TOL * scale)[:10]:
            out.append(f"row {i} sum {row_sums[i]!r} is not 0")
        if chain.uniformization_rate is None:
            out.append("continuous chain lacks a uniformization rate")
        else:
            exit_max = float(np.abs(np.diag(m)).max())
            if chain.uniformization_rate < exit_max * (1.0 - 1e-12):
                out.append(
                    f"uniformization rate {chain.uniformization_rate!r} is below the "
                    f"largest exit rate {exit_max!r}"
                )
    else:
        _report_entries(
            out, np.argwhere((m < -ENTRY_TOL) | (m > 1.0 + ENTRY_TOL)), m,
            "is outside [0, 1]",
        )
        for i in np.flatnonzero(np.abs(row_sums - 1.0) > ROW_SUM_TOL * n)[:10]:
            out.append(f"row {i} sum {row_sums[i]!r} is not 1")
    n_comp = _strong_components(m)
    if n_comp > 1:
        out.append(f"transition graph is not strongly connected ({n_comp} components)")
    return out


def _checked(chain: FiniteChain) -> FiniteChain:
    violations = validate(chain)
    if violations:
        raise InvalidChain(violations)
    return chain


def continuous_chain(
    matrix, labels=None, uniformization_rate: float | None = None
) -> FiniteChain:
    """Build and validate a continuous-time chain from a rate matrix.

    Parameters
    ----------
    matrix : array_like
        Square generator; off-diagonal entries are rates, rows sum to zero.
    labels : sequence of str, optional
        State names; defaults to "0", "1", ...
    uniformization_rate : float, optional
        Lambda with Lambda >= max exit rate.  Defaults to the max exit rate.
    """
    m = np.array(matrix, dtype=np.float64)
    n = m.shape[0]
    if labels is None:
        labels = tuple(str(i) for i in range(n))
    if uniformization_rate is None:
        uniformization_rate = float(np.abs(np.diag(m)).max())
        if uniformization_rate == 0.0:
            uniformization_rate = 1.0
    return _checked(
        FiniteChain(tuple(labels), CONTINUOUS, m, float(uniformization_rate))
    )


def discrete_chain(matrix, labels=None) -> FiniteChain:
    """Build and validate a discrete-time chain from a stochastic kernel."""
    m = np.array(matrix, dtype=np.float64)
    n = m.shape[0]
    if labels is None:
        labels = tuple(str(i) for i in range(n))
    return _checked(FiniteChain(tuple(labels), DISCRETE, m, None))


def stationary_measure(chain: FiniteChain) -> ProbabilityVector:
    """Invariant measure, solved from the augmented balance system.

    One balance equation is replaced by the normalization constraint and
    the resulting square system is solved by LU.  The residual of the full
    balance system is checked against 1e-10.
    """
    n = chain.state_count
    if chain.time_kind == CONTINUOUS:
        balance = chain.matrix
    else:
        balance = chain.matrix - np.eye(n)
    system = balance.T.copy()
    system[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    try:
        pi = scipy.linalg.solve(system, rhs)
    except scipy.linalg.LinAlgError as exc:
        raise SingularSystem(f"stationary solve failed: {exc}") from exc
    residual = float(np.abs(pi @ balance).max())
    if residual > MASS_TOL:
        raise SingularSystem(f"stationary residual {residual:.3e} exceeds 1e-10")
    return ProbabilityVector(pi)


def adjoint(chain: FiniteChain, pi: ProbabilityVector | None = None) -> FiniteChain:
    """Time-reversed chain with respect to its stationary measure.

    The reversed matrix is M*(x, y) = pi(y) M(y, x) / pi(x).  Applying the
    operation twice returns the original chain within 1e-12 entrywise.

    Raises
    ------
    ZeroMassState
        If some stationary weight vanishes, making the reversal undefined.
    """
    if pi is None:
        pi = stationary_measure(chain)
    w = pi.weights
    if w.size != chain.state_count:
        raise DimensionMismatch("measure length does not match the chain")
    if np.any(w == 0.0):
        raise ZeroMassState(f"state {int(np.argmin(w))} has zero stationary mass")
    rev = (chain.matrix.T * w[None, :]) / w[:, None]
    if chain.time_kind == CONTINUOUS:
        # The diagonal of a generator is derived, so refit it exactly.
        np.fill_diagonal(rev, 0.0)
        np.fill_diagonal(rev, -rev.sum(axis=1))
        rate = max(
            float(chain.uniformization_rate), float(np.abs(np.diag(rev)).max())
        )
        return _checked(FiniteChain(chain.labels, CONTINUOUS, rev, rate))
    rev /= rev.sum(axis=1, keepdims=True)
    return _checked(FiniteChain(chain.labels, DISCRETE, rev, None))


def _poisson_window(mean: float) -> tuple[int, np.ndarray]:
    """Truncation point and weights covering all but <=1e-12 Poisson mass."""
    k_hi = int(poisson.isf(POISSON_TAIL / 2.0, mean)) + 2
    weights = poisson.pmf(np.arange(k_hi + 1), mean)
    return k_hi, weights


def evolve(chain: FiniteChain, nu: ProbabilityVector, t: float) -> ProbabilityVector:
    """Distribution at time ``t`` started from ``nu``.

    Continuous time uses uniformization: the Poisson(Lambda t) mixture of
    powers of I + Q/Lambda, truncated once the discarded tail is below
    1e-12.  Discrete time requires an integer step count.
    """
    if nu.weights.size != chain.state_count:
        raise DimensionMismatch("measure length does not match the chain")
    if t < 0:
        raise ValueError("time must be nonnegative")
    if chain.time_kind == DISCRETE:
        steps = int(round(t))
        if abs(t - steps) > 1e-9:
            raise NonIntegerTime(f"discrete chains require integer times, got {t!r}")
        v = nu.weights.copy()
        for _ in range(steps):
            v = v @ chain.matrix
        return ProbabilityVector(v)
    rate = float(chain.uniformization_rate)
    mean = rate * t
    if mean == 0.0:
        return ProbabilityVector(nu.weights.copy())
    kernel = np.eye(chain.state_count) + chain.matrix / rate
    k_hi, weights = _poisson_window(mean)
    acc = np.zeros(chain.state_count)
    v = nu.weights.copy()
    for k in range(k_hi + 1):
        if weights[k] > 0.0:
            acc += weights[k] * v
        if k < k_hi:
            v = v @ kernel
    return ProbabilityVector(acc / acc.sum())


def restrict(chain: FiniteChain, kept) -> SubChain:
    """Substochastic restriction to the index set ``kept``.

    The killed mass of each row equals the total rate (or probability)
    into the discarded states.
    """
    kept = tuple(sorted(set(int(i) for i in kept)))
    if not kept:
        raise EmptySet("kept set is empty")
    if any(i < 0 or i >= chain.state_count for i in kept):
        raise DimensionMismatch("kept set contains out-of-range states")
    if len(kept) == chain.state_count:
        raise EmptyComplement("kept set is the whole space; nothing is killed")
    idx = np.asarray(kept, dtype=np.intp)
    block = chain.matrix[np.ix_(idx, idx)].copy()
    return SubChain(chain, kept, block)


def chain_to_dict(chain: FiniteChain) -> dict:
    """Serializable chain-spec dictionary; the diagonal is derived, not stored."""
    entries = []
    m = chain.matrix
    for i in range(chain.state_count):
        for j in range(chain.state_count):
            if i != j and m[i, j] != 0.0:
                entries.append([i, j, float(m[i, j])])
    return {
        "time": chain.time_kind,
        "states": list(chain.labels),
        "entries": entries,
    }


def chain_from_dict(obj) -> FiniteChain:
    """Build a chain from a chain-spec dictionary.

    Violations are rejected with a message naming the offending field or
    entry index.
    """
    if not isinstance(obj, dict):
        raise ChainFormatError("top-level value must be an object")
    for key in ("time", "states", "entries"):
        if key not in obj:
            raise ChainFormatError(f'missing required field "{key}"')
    kind = obj["time"]
    if kind not in (CONTINUOUS, DISCRETE):
        raise ChainFormatError(
            f'field "time" must be "continuous" or "discrete", got {kind!r}'
        )
    states = obj["states"]
    if not isinstance(states, list) or not states:
        raise ChainFormatError('field "states" must be a nonempty list of labels')
    n = len(states)
    matrix = np.zeros((n, n))
    seen: set[tuple[int, int]] = set()
    entries = obj["entries"]
    if not isinstance(entries, list):
        raise ChainFormatError('field "entries" must be a list')
    for pos, entry in enumerate(entries):
        where = f"entries[{pos}]"
        if not isinstance(entry, (list, tuple)) or len(entry) != 3:
            raise ChainFormatError(f"{where}: expected [from, to, rate]")
        i, j, rate = entry
        if not isinstance(i, int) or not isinstance(j, int):
            raise ChainFormatError(f"{where}: state indices must be integers")
        if not 0 <= i < n or not 0 <= j < n:
            raise ChainFormatError(f"{where}: index outside 0..{n - 1}")
        if i == j:
            raise ChainFormatError(f"{where}: diagonal entries are derived, not stored")
        if not isinstance(rate, (int, float)) or isinstance(rate, bool):
            raise ChainFormatError(f"{where}: rate must be a number")
        if rate < 0:
            raise ChainFormatError(f"{where}: rate must be nonnegative, got {rate!r}")
        if (i, j) in seen:
            raise ChainFormatError(f"{where}: duplicate entry for ({i},{j})")
        seen.add((i, j))
        matrix[i, j] = float(rate)
    if kind == CONTINUOUS:
        np.fill_diagonal(matrix, -matrix.sum(axis=1))
        return continuous_chain(matrix, labels=states)
    row_out = matrix.sum(axis=1)
    if np.any(row_out > 1.0 + ENTRY_TOL):
        bad = int(np.argmax(row_out))
        raise ChainFormatError(
            f"row {bad}: outgoing probability {row_out[bad]!r} exceeds 1"
        )
    np.fill_diagonal(matrix, 1.0 - row_out)
    return discrete_chain(matrix, labels=states)


def save_chain(chain: FiniteChain, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(chain_to_dict(chain), fh, indent=1)
        fh.write("\n")


def load_chain(path) -> FiniteChain:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ChainFormatError(
            f"line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from exc
    return chain_from_dict(obj)
