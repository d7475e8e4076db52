"""Certification of trapped dynamics and verification of its guarantees.

The certificate for a trap rests on three measured quantities over a
reference time R: the stationarily averaged escape probability within a
2R window (slow escape), the worst pairwise distance between basin
starts after R (fast thermalization), and the worst probability of
avoiding both basin and goal for R (fast recurrence).  When the combined
smallness condition holds, explicit total variation and exponentiality
bounds follow; this module computes the certificate, checks the bounds
on concrete time grids, and reports the measured exponentiality defect.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .chain import CONTINUOUS, FiniteChain, ProbabilityVector, adjoint
from .errors import (
    BoundViolation,
    EmptySet,
    InternalBoundViolation,
    NotApplicable,
    ZeroConditioning,
)
from .hitting import _killed_system
from .measures import (
    TrapPartition,
    doubly_conditioned_evolution,
    empirical_measure,
    pairwise_distance,
    quasi_stationary,
    restricted_invariant,
    tv_distance,
)
from .semigroup import _cache, block_propagator, cached_stationary, visit_propagator

REVERSAL_TOL = 1e-10
MASS_SLACK = 1e-12
BOUND_SLACK = 1e-12
APPLICABILITY_LIMIT = 0.25
POINTS_PER_DECADE = 64


@dataclass(frozen=True)
class CertificateParameters:
    """Reference time R and interpolation exponent alpha for certification.

    ``t_grid``, when set, is the evaluation grid later verification and
    reporting stages should use instead of their defaults.
    """

    R: float
    alpha: float = 0.5
    t_grid: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.R <= 0:
            raise ValueError("reference time R must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.t_grid is not None:
            grid = tuple(float(t) for t in self.t_grid)
            if not grid or any(t <= 0 for t in grid):
                raise ValueError("t_grid must contain positive times")
            if any(b <= a for a, b in zip(grid, grid[1:])):
                raise ValueError("t_grid must be strictly increasing")
            object.__setattr__(self, "t_grid", grid)


@dataclass(frozen=True, eq=False)
class TrapCertificate:
    """Measured certificate for a trap at reference time R.

    ``c`` is the recurrence-plus-escape combination whose smallness
    (c < 1/4) makes the guarantees applicable; ``c_bar``, ``epsilon1``
    and ``epsilon2`` are NaN when they are not.  ``epsilon1`` bounds the
    distance of the doubly conditioned law from the restricted invariant
    measure, ``epsilon2`` the distance of the conditioned mixture.
    """

    R: float
    alpha: float
    f: float
    d: float
    r: float
    c: float
    c_bar: float
    epsilon1: float
    epsilon2: float
    applicable: bool
    basin: tuple[int, ...]

    def to_dict(self) -> dict:
        def opt(v: float):
            return float(v) if math.isfinite(v) else None

        return {
            "R": float(self.R),
            "alpha": float(self.alpha),
            "f": float(self.f),
            "d": float(self.d),
            "r": float(self.r),
            "c_bar": opt(self.c_bar),
            "epsilon1": opt(self.epsilon1),
            "epsilon2": opt(self.epsilon2),
            "applicable": bool(self.applicable),
            "B_alpha": [int(i) for i in self.basin],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrapCertificate":
        f, d, r = float(data["f"]), float(data["d"]), float(data["r"])
        alpha = float(data["alpha"])
        c = certificate_arithmetic(f, d, r, alpha)[0]

        def num(key: str) -> float:
            v = data.get(key)
            return float("nan") if v is None else float(v)

        return cls(
            R=float(data["R"]),
            alpha=alpha,
            f=f,
            d=d,
            r=r,
            c=c,
            c_bar=num("c_bar"),
            epsilon1=num("epsilon1"),
            epsilon2=num("epsilon2"),
            applicable=bool(data["applicable"]),
            basin=tuple(int(i) for i in data["B_alpha"]),
        )


@dataclass(frozen=True, eq=False)
class CertificateVerification:
    """Measured suprema behind a verified certificate.

    ``skipped`` lists (state, time) pairs whose doubly conditioned law is
    undefined because the conditioning event has probability zero; those
    pairs impose no constraint.
    """

    t_grid: np.ndarray
    conditioned_sup: float
    mixture_sup: float
    stationary_vs_qsd: float
    conditioned_vs_qsd_sup: float
    empirical_sup: float
    delta: float
    skipped: tuple[tuple[int, float], ...]


@dataclass(frozen=True, eq=False)
class ExponentialityReport:
    """Measured deviation of scaled exit times from the unit exponential.

    ``per_start`` rows are (state, reference weight, deviation): basin
    starts are compared against exp(-t) itself, starts outside the basin
    against their defective reference weight times exp(-t).  Deviations
    are relative, already multiplied by exp(t).
    """

    time_scale: float
    scaled_grid: np.ndarray
    mixture_deviation: float
    per_start: tuple[tuple[int, float, float], ...]
    epsilon_measured: float
    bound_reference: float | None
    bound_satisfied: bool | None
    survivals: np.ndarray

    @property
    def per_start_deviations(self) -> dict[int, float]:
        """Deviation per starting state, keyed by state index."""
        return {state: dev for state, _, dev in self.per_start}

    @property
    def prefactors(self) -> dict[int, float]:
        """Defective reference weight per starting state (1 inside the basin)."""
        return {state: weight for state, weight, _ in self.per_start}

    def curves(self):
        """Yield (start, scaled time, survival, reference, weighted deviation) rows.

        ``start`` is -1 for the stationary mixture, the state index
        otherwise; the reference is the start's weight times exp(-t).
        """
        starts = [(-1, 1.0)] + [(x, w) for x, w, _ in self.per_start]
        for k, (x, w) in enumerate(starts):
            for j, t in enumerate(self.scaled_grid):
                surv = float(self.survivals[j, k])
                ref = w * math.exp(-t)
                yield x, float(t), surv, ref, math.exp(t) * abs(surv - ref)


def certificate_arithmetic(
    f: float, d: float, r: float, alpha: float
) -> tuple[float, float, float, float, bool]:
    """Combine measured (f, d, r) into (c, c_bar, epsilon1, epsilon2, applicable).

    The arithmetic is a fixed expression so that recomputing it from a
    serialized certificate reproduces the stored values bit for bit.
    """
    c = r + 2.0 * f**alpha
    applicable = c < APPLICABILITY_LIMIT
    if not applicable:
        nan = float("nan")
        return c, nan, nan, nan, False
    c_bar = 0.5 - math.sqrt(0.25 - c)
    epsilon1 = 4.0 * (c_bar + 2.0 * f + f**alpha + d)
    epsilon2 = epsilon1 + f ** (1.0 - alpha)
    return c, c_bar, epsilon1, epsilon2, True


def geometric_grid(
    start: float, stop: float, points_per_decade: int = POINTS_PER_DECADE, integer: bool = False
) -> np.ndarray:
    """Geometric time grid with a fixed point density per decade.

    With ``integer`` set the grid is rounded to whole steps and
    deduplicated, for discrete-time evaluation.
    """
    if start <= 0 or stop <= 0:
        raise ValueError("grid endpoints must be positive")
    if stop < start:
        raise ValueError("grid endpoints are out of order")
    decades = math.log10(stop / start)
    count = max(int(math.ceil(decades * points_per_decade)) + 1, 2)
    grid = np.geomspace(start, stop, count)
    if integer:
        grid = np.unique(np.round(grid)).astype(float)
        grid = grid[grid >= 1.0]
    return grid


def _round_reference_time(chain: FiniteChain, R: float) -> float:
    if chain.time_kind == CONTINUOUS:
        return float(R)
    return float(max(round(R), 1))


def _adjoint_cached(chain: FiniteChain) -> FiniteChain:
    store = _cache(chain)
    if "adjoint" not in store:
        store["adjoint"] = adjoint(chain)
    return store["adjoint"]


def _escape_scores(
    chain: FiniteChain, part: TrapPartition, window: float, pi: np.ndarray | None = None
) -> tuple[np.ndarray, float, np.ndarray]:
    """Per-state symmetrized escape probabilities within ``window``.

    Returns (scores, f, pi_A-block) where scores[i] averages the forward
    and time-reversed probabilities of reaching the goal within the
    window from trap state i, and f is their stationary average.  The
    forward and reversed stationary averages agree by time reversal;
    a mismatch beyond 1e-10 signals a computation bug.
    """
    if pi is None:
        pi = cached_stationary(chain)
    idx = np.asarray(part.trap, dtype=np.intp)
    pi_a = pi[idx] / pi[idx].sum()
    eye = np.eye(len(part.trap))
    fwd = 1.0 - np.asarray(block_propagator(chain, part.trap).survival(eye, window))
    rev_chain = _adjoint_cached(chain)
    bwd = 1.0 - np.asarray(block_propagator(rev_chain, part.trap).survival(eye, window))
    fwd = np.clip(fwd, 0.0, 1.0)
    bwd = np.clip(bwd, 0.0, 1.0)
    gap = abs(float(pi_a @ fwd) - float(pi_a @ bwd))
    if gap > REVERSAL_TOL:
        raise InternalBoundViolation(
            f"time-reversal identity for the escape functional fails by {gap:.3e}"
        )
    scores = 0.5 * (fwd + bwd)
    return scores, float(pi_a @ scores), pi_a


def escape_functional(chain: FiniteChain, pi, part: TrapPartition, t: float) -> float:
    """Stationarily averaged symmetrized escape probability within ``t``.

    ``pi`` is the stationary measure of the full chain (a
    ProbabilityVector or a weight array); the average runs over its
    restriction to the trap.
    """
    weights = np.asarray(getattr(pi, "weights", pi), dtype=float)
    if chain.time_kind != CONTINUOUS:
        t = float(max(round(t), 1))
    return _escape_scores(chain, part, float(t), weights)[1]


def check_escape(
    chain: FiniteChain, part: TrapPartition, R: float, threshold: float | None = None
) -> tuple[float, bool]:
    """Escape functional at window 2R, optionally tested against a threshold.

    Returns (f, passed); ``passed`` is True when no threshold is given.
    """
    R = _round_reference_time(chain, R)
    f = _escape_scores(chain, part, 2.0 * R)[1]
    return f, (True if threshold is None else f <= threshold)


def _basin_from_scores(
    part: TrapPartition, scores: np.ndarray, f: float, pi_a: np.ndarray, alpha: float
) -> tuple[int, ...]:
    mask = scores <= f**alpha
    basin = tuple(part.trap[i] for i in np.flatnonzero(mask))
    mass = float(pi_a[mask].sum())
    floor = 1.0 - f ** (1.0 - alpha)
    if mass < floor - MASS_SLACK:
        raise InternalBoundViolation(
            f"basin mass {mass:.12g} undercuts its guaranteed floor {floor:.12g}"
        )
    return basin


def compute_basin(
    chain: FiniteChain, part: TrapPartition, R: float, alpha: float | None = None
) -> tuple[int, ...]:
    """States whose symmetrized escape score within 2R is at most f**alpha.

    The cut is inclusive.  The restricted invariant mass of the result is
    at least 1 - f**(1 - alpha) unconditionally; failure of that floor
    raises InternalBoundViolation.
    """
    alpha = part.alpha if alpha is None else float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    R = _round_reference_time(chain, R)
    scores, f, pi_a = _escape_scores(chain, part, 2.0 * R)
    return _basin_from_scores(part, scores, f, pi_a, alpha)


def check_thermalization(chain: FiniteChain, part: TrapPartition, R: float) -> float:
    """Worst pairwise distance at time R between full-chain runs from the basin."""
    if not part.basin:
        raise EmptySet("basin has not been computed")
    R = _round_reference_time(chain, R)
    return pairwise_distance(chain, part.basin, R)


def check_recurrence(chain: FiniteChain, part: TrapPartition, R: float) -> float:
    """Worst probability over all starts of avoiding basin and goal for time R."""
    if not part.basin:
        raise EmptySet("basin has not been computed")
    R = _round_reference_time(chain, R)
    avoid = tuple(sorted(set(part.trap) - set(part.basin)))
    if not avoid:
        return 0.0
    prop = block_propagator(chain, avoid)
    surv = np.asarray(prop.survival(np.eye(len(avoid)), R))
    return float(np.clip(surv, 0.0, 1.0).max())


def certify(
    chain: FiniteChain,
    part: TrapPartition,
    params: CertificateParameters,
    strict: bool = False,
) -> TrapCertificate:
    """Measure (f, d, r) for the trap at reference time R and combine them.

    The returned certificate carries the basin and the derived bounds;
    ``applicable`` records whether the smallness condition c < 1/4 holds.
    With ``strict`` set, an inapplicable certificate raises NotApplicable
    instead of being returned.
    """
    R = _round_reference_time(chain, params.R)
    scores, f, pi_a = _escape_scores(chain, part, 2.0 * R)
    basin = _basin_from_scores(part, scores, f, pi_a, params.alpha)
    staged = TrapPartition(part.trap, part.goal, basin, params.alpha)
    d = check_thermalization(chain, staged, R)
    r = check_recurrence(chain, staged, R)
    c, c_bar, epsilon1, epsilon2, applicable = certificate_arithmetic(
        f, d, r, params.alpha
    )
    if strict and not applicable:
        raise NotApplicable(f, d, r)
    return TrapCertificate(
        R=R,
        alpha=params.alpha,
        f=f,
        d=d,
        r=r,
        c=c,
        c_bar=c_bar,
        epsilon1=epsilon1,
        epsilon2=epsilon2,
        applicable=applicable,
        basin=basin,
    )


def _default_grid(chain: FiniteChain, R: float, horizon: float) -> np.ndarray:
    start = 2.0 * R
    stop = max(horizon, start)
    if chain.time_kind == CONTINUOUS:
        return geometric_grid(start, stop)
    grid = geometric_grid(start, stop, integer=True)
    return grid[grid >= start - 0.5]


def _conditioned_rows(chain: FiniteChain, part: TrapPartition, t: float) -> np.ndarray:
    """Normalized killed evolutions from every trap state, stacked as rows."""
    prop = block_propagator(chain, part.trap)
    rows = np.asarray(prop.act(np.eye(len(part.trap)), t))
    rows = np.clip(rows, 0.0, None)
    sums = rows.sum(axis=1, keepdims=True)
    if np.any(sums <= 0.0):
        raise ZeroConditioning("a conditioned evolution lost all mass")
    return rows / sums


def verify_certificate_bounds(
    chain: FiniteChain,
    part: TrapPartition,
    cert: TrapCertificate,
    t_grid=None,
) -> CertificateVerification:
    """Check every guaranteed bound of an applicable certificate on a grid.

    For each grid time t and each trap start, the doubly conditioned law
    must be within epsilon1 of the restricted invariant measure; the
    conditioned mixture started from it must be within epsilon2; the
    restricted invariant measure must be within epsilon2 of the
    quasi-stationary one (hence doubly conditioned laws within
    epsilon1 + epsilon2 of it); and for basin starts the empirical
    measure must be within epsilon1.  The default grid is geometric from
    2R to twenty mean exit times, 64 points per decade.  Any failure
    raises BoundViolation naming the offending state and time.
    """
    if not cert.applicable:
        raise NotApplicable(cert.f, cert.d, cert.r)
    part = TrapPartition(part.trap, part.goal, cert.basin, cert.alpha)
    R = cert.R
    pi_a = restricted_invariant(
        _stationary_vector(chain), part
    )
    qsd = quasi_stationary(chain, part)
    mu_star = qsd.measure
    if t_grid is None:
        grid = _default_grid(chain, R, 20.0 * qsd.mean_exit_time)
    else:
        grid = np.asarray(t_grid, dtype=float)
        if np.any(grid < 2.0 * R):
            raise ValueError("grid times must be at least 2R")
    eps1 = cert.epsilon1 + BOUND_SLACK
    eps2 = cert.epsilon2 + BOUND_SLACK
    idx = np.asarray(part.trap, dtype=np.intp)
    pi_block = pi_a.weights[idx]
    skipped: list[tuple[int, float]] = []
    conditioned_sup = 0.0
    mixture_sup = 0.0
    cross_sup = 0.0
    for t in grid:
        t = float(t)
        for x in part.trap:
            try:
                law = doubly_conditioned_evolution(chain, x, part, t, R).measure
            except ZeroConditioning:
                skipped.append((x, t))
                continue
            dv = tv_distance(law, pi_a)
            if dv > eps1:
                raise BoundViolation(
                    f"doubly conditioned law from state {x} at t={t:g} is "
                    f"{dv:.6g} from the restricted invariant measure, above "
                    f"epsilon1={cert.epsilon1:.6g}"
                )
            conditioned_sup = max(conditioned_sup, dv)
            cross = tv_distance(law, mu_star)
            if cross > eps1 + eps2:
                raise BoundViolation(
                    f"doubly conditioned law from state {x} at t={t:g} is "
                    f"{cross:.6g} from the quasi-stationary measure, above "
                    f"epsilon1+epsilon2={cert.epsilon1 + cert.epsilon2:.6g}"
                )
            cross_sup = max(cross_sup, cross)
        mixture_block = pi_block @ _conditioned_rows(chain, part, t)
        mixture = _full_vector(mixture_block, part.trap, chain.state_count)
        dv = tv_distance(mixture, pi_a)
        if dv > eps2:
            raise BoundViolation(
                f"conditioned mixture at t={t:g} is {dv:.6g} from the "
                f"restricted invariant measure, above epsilon2={cert.epsilon2:.6g}"
            )
        mixture_sup = max(mixture_sup, dv)
    gap = tv_distance(pi_a, mu_star)
    if gap > eps2:
        raise BoundViolation(
            f"restricted invariant measure is {gap:.6g} from the "
            f"quasi-stationary one, above epsilon2={cert.epsilon2:.6g}"
        )
    empirical_sup = 0.0
    for x in part.basin:
        dv = tv_distance(empirical_measure(chain, x, part), pi_a)
        if dv > eps1:
            raise BoundViolation(
                f"empirical measure from basin state {x} is {dv:.6g} from the "
                f"restricted invariant measure, above epsilon1={cert.epsilon1:.6g}"
            )
        empirical_sup = max(empirical_sup, dv)
    delta = 0.0
    for y in part.trap:
        try:
            law = doubly_conditioned_evolution(chain, y, part, 2.0 * R, R).measure
        except ZeroConditioning:
            continue
        delta = max(delta, 2.0 * tv_distance(law, mu_star))
    return CertificateVerification(
        t_grid=grid,
        conditioned_sup=conditioned_sup,
        mixture_sup=mixture_sup,
        stationary_vs_qsd=gap,
        conditioned_vs_qsd_sup=cross_sup,
        empirical_sup=empirical_sup,
        delta=delta,
        skipped=tuple(skipped),
    )


def _stationary_vector(chain: FiniteChain) -> ProbabilityVector:
    return ProbabilityVector(cached_stationary(chain).copy())


def _full_vector(block: np.ndarray, positions, n: int) -> ProbabilityVector:
    out = np.zeros(n)
    out[np.asarray(positions, dtype=np.intp)] = np.clip(block, 0.0, None)
    return ProbabilityVector(out / out.sum())


def _exit_reference_weights(
    chain: FiniteChain, part: TrapPartition, R: float
) -> dict[int, float]:
    """P(stay clear of the goal for 2R but visit the basin within R), per start.

    For basin starts the visit is immediate and the weight is taken as 1,
    matching the clean exponential reference.
    """
    weights = {x: 1.0 for x in part.basin}
    outside = [x for x in part.trap if x not in set(part.basin)]
    if not outside:
        return weights
    split = visit_propagator(chain, part.trap, part.basin)
    rows = split.start([part.trap.index(x) for x in outside])
    visited = split.visited_mass(rows, R)
    final = split.continue_killed(visited, R)
    mass = np.clip(np.asarray(final).sum(axis=1), 0.0, 1.0)
    for x, p in zip(outside, mass):
        weights[x] = float(p)
    return weights


def exponentiality_report(
    chain: FiniteChain,
    part: TrapPartition,
    cert: TrapCertificate,
    t_grid=None,
    comparison_constant: float = 10.0,
) -> ExponentialityReport:
    """Measure how far scaled exit times are from the unit exponential.

    The time scale is the mean exit time from the quasi-stationary
    measure.  Deviations exp(t) * |P(tau/T > t) - w * exp(-t)| are taken
    over a scaled grid (default geometric on [0.01, 20]), with reference
    weight w = 1 for the conditioned mixture and basin starts, and the
    defective weight from :func:`_exit_reference_weights` for starts
    outside the basin.  The worst deviation is compared against
    ``comparison_constant * (r + epsilon2)`` when the certificate is
    applicable; otherwise the reference and the verdict are None and the
    measured deviations are still reported.
    """
    part = TrapPartition(part.trap, part.goal, cert.basin, cert.alpha)
    qsd = quasi_stationary(chain, part)
    lu = _killed_system(chain, part.trap)
    means = scipy.linalg.lu_solve(lu, np.ones(len(part.trap)))
    idx = np.asarray(part.trap, dtype=np.intp)
    scale = float(qsd.measure.weights[idx] @ means)
    if t_grid is None:
        # the defective reference needs both certification windows to fit
        # inside t, so the guarantee starts at 2R on the absolute axis
        lo = max(2.0 * cert.R / scale, 1e-8)
        hi = max(20.0, 2.0 * lo)
        scaled = geometric_grid(lo, hi)
    else:
        scaled = np.asarray(t_grid, dtype=float)
        if np.any(scaled <= 0):
            raise ValueError("scaled grid times must be positive")
    if chain.time_kind != CONTINUOUS:
        steps = np.unique(np.round(scaled * scale))
        steps = steps[steps >= 1.0]
        times = steps
        scaled = steps / scale
    else:
        times = scaled * scale
    pi = cached_stationary(chain)
    pi_block = pi[idx] / pi[idx].sum()
    prop = block_propagator(chain, part.trap)
    rows = np.vstack([pi_block, np.eye(len(part.trap))])
    survival = np.empty((len(times), len(part.trap) + 1))
    for j, u in enumerate(times):
        survival[j] = np.clip(np.asarray(prop.survival(rows, float(u))), 0.0, 1.0)
    reference = np.exp(-scaled)
    amplify = np.exp(scaled)
    weights = _exit_reference_weights(chain, part, cert.R)
    mixture_dev = float((amplify * np.abs(survival[:, 0] - reference)).max())
    per_start = []
    worst = mixture_dev
    for k, x in enumerate(part.trap):
        w = weights[x]
        dev = float((amplify * np.abs(survival[:, k + 1] - w * reference)).max())
        per_start.append((x, w, dev))
        worst = max(worst, dev)
    if cert.applicable:
        bound = comparison_constant * (cert.r + cert.epsilon2)
        satisfied = worst <= bound
    else:
        bound = None
        satisfied = None
    return ExponentialityReport(
        time_scale=scale,
        scaled_grid=scaled,
        mixture_deviation=mixture_dev,
        per_start=tuple(per_start),
        epsilon_measured=worst,
        bound_reference=bound,
        bound_satisfied=satisfied,
        survivals=survival,
    )
