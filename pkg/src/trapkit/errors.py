"""Exception types shared across the package."""
from __future__ import annotations


class TrapkitError(Exception):
    """Base class for all package-specific errors."""


class InvalidChain(TrapkitError):
    """Raised at construction when a chain violates its structural invariants.

    Carries the full list of violations produced by :func:`trapkit.chain.validate`.
    """

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ChainFormatError(TrapkitError):
    """A chain-spec file or dictionary is malformed; the message names the field."""


class InvalidDistribution(TrapkitError):
    """A weight vector is not a probability distribution within tolerance."""


class DimensionMismatch(TrapkitError):
    """Two vectors defined over different state spaces were combined."""


class SingularSystem(TrapkitError):
    """A linear system that should be regular could not be solved."""


class ZeroMassState(TrapkitError):
    """A stationary weight of zero makes time reversal undefined."""


class NonIntegerTime(TrapkitError):
    """Discrete-time chains can only be evolved by whole step counts."""


class EmptySet(TrapkitError):
    """An index set that must be nonempty is empty."""


class EmptyComplement(TrapkitError):
    """Restriction requires a proper subset of the state space."""


class ZeroMass(TrapkitError):
    """A measure places no mass on the requested subset."""


class ExtinctMass(TrapkitError):
    """Survival probability underflowed; the conditioned measure is meaningless."""


class ZeroConditioning(TrapkitError):
    """The conditioning event has probability zero."""


class NonConvergence(TrapkitError):
    """An iterative solver exhausted its budget before reaching tolerance."""


class DisconnectedTrap(TrapkitError):
    """The trap splits into several communicating classes."""


class NotBirthDeath(TrapkitError):
    """Resistance calculus requires a tridiagonal (nearest-neighbour) chain."""


class InternalBoundViolation(TrapkitError):
    """A mathematically guaranteed bound failed, indicating a computation bug."""


class BoundViolation(TrapkitError):
    """A certified bound failed when re-measured."""


class NotApplicable(TrapkitError):
    """Certification failed its smallness constraint.

    Carries the measured parameters so callers can retry with a longer
    reference time.
    """

    def __init__(self, f: float, d: float, r: float, message: str | None = None):
        self.f = float(f)
        self.d = float(d)
        self.r = float(r)
        super().__init__(
            message
            or f"certificate not applicable: f={f:.6g}, d={d:.6g}, r={r:.6g}"
        )


class TooLarge(TrapkitError):
    """The requested model exceeds the supported size."""


class LumpingViolation(TrapkitError):
    """A projected row disagrees with the reference kernel; carries a witness."""

    def __init__(self, witness, message: str):
        self.witness = witness
        super().__init__(message)


class AllCensored(TrapkitError):
    """Every sampled trajectory exceeded the time cutoff."""


class EmptySample(TrapkitError):
    """A statistic was requested on an empty sample."""
