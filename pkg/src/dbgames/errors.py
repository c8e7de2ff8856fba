"""Exception types shared across the package."""


class DbgamesError(Exception):
    """Base class for all package errors."""


class NotStochastic(DbgamesError):
    """Weight matrix is not a zero-diagonal row-stochastic matrix."""


class NotIrreducible(DbgamesError):
    """Support digraph of the kernel is not strongly connected."""


class NotReversible(DbgamesError):
    """Kernel violates detailed balance with respect to its stationary law."""


class SizeLimit(DbgamesError):
    """Problem size exceeds the documented cap for an exact method."""


class InfeasibleDegree(DbgamesError):
    """Requested regular-graph degree sequence cannot exist."""


class RetryLimit(DbgamesError):
    """Rejection sampling exhausted its retry budget."""


class SelectionTooStrong(DbgamesError):
    """Selection intensity exceeds the positive-fitness bound."""


class NegativeFitness(DbgamesError):
    """A fitness bracket became nonpositive (caller passed an invalid w)."""


class NotNeighbor(DbgamesError):
    """Requested an edge quantity for a pair with q(x, y) = 0."""


class SelectionNotZero(DbgamesError):
    """The coalescing duality holds for the neutral (w = 0) model only."""


class LogMismatch(DbgamesError):
    """Replaying an event log from its initial state diverged."""


class GridMismatch(DbgamesError):
    """Time grids of two trajectories cannot be aligned."""


class ComponentsMissing(DbgamesError):
    """Trajectory lacks the semimartingale components required here."""


class KappaMissing(DbgamesError):
    """Replicator parameters lack a required meeting-tail constant."""


class StepTooLarge(DbgamesError):
    """ODE integration left the simplex by more than the tolerance."""


class InsufficientSamples(DbgamesError):
    """Monte Carlo estimate requested with too few samples."""


class SchemaError(DbgamesError):
    """An input file does not match the documented schema."""
