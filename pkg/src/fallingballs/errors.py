"""Exception hierarchy shared by all modules."""


class FallingBallsError(Exception):
    """Base class for every error raised by this package."""


class InvariantViolation(FallingBallsError):
    """A checked physical or geometric invariant does not hold."""


class OrderingViolation(InvariantViolation, ValueError):
    """Positions left the cone 0 <= q1 <= q2 <= q3, or masses are not strictly ordered."""


class ContactViolation(InvariantViolation):
    """A collision law was applied away from its contact face."""


class NonApproaching(InvariantViolation):
    """Pre-collision velocities do not approach each other (or the floor)."""


class InternalInconsistency(InvariantViolation):
    """Event search produced an impossible result (e.g. no real floor root)."""


class Unlabeled(FallingBallsError):
    """State lies strictly inside the configuration cone: no partition label."""


class AmbiguousLabel(Unlabeled):
    """State lies on more than one collision face."""


class SingularEncounter(FallingBallsError):
    """Two collision candidates are closer than the singularity threshold.

    ``branches`` holds one ``(event, post_state)`` pair per candidate ordering,
    so callers can continue on either branch. A candidate that cannot be
    reached without crossing another event (possible only when the threshold
    is large) has no entry.
    """

    def __init__(self, message, branches=(), partial=None):
        super().__init__(message)
        self.branches = tuple(branches)
        self.partial = partial


class SignViolation(InvariantViolation):
    """A monodromy coefficient (beta or alpha) came out non-positive."""


class SubspaceViolation(InvariantViolation):
    """A matrix does not preserve the cone subspace {dxi_1 = deta_1 = 0}."""


class NotMonotone(InvariantViolation):
    """The Q-form decreased under a map that should be Q-monotone."""


class NotFound(FallingBallsError):
    """A searched-for index was not reached within the available data."""

    def __init__(self, message, n_max=None):
        super().__init__(message)
        self.n_max = n_max


class NoSegments(FallingBallsError):
    """Orbit too short to contain any usable collision windows."""


class DegenerateConstraints(FallingBallsError):
    """Linear constraint rows are parallel; the null space is not a line."""


class NextEventNotFloor(FallingBallsError):
    """A triple-contact sample does not reach the floor first."""


class WrongFace(FallingBallsError):
    """The next collision is not on the requested wedge face."""


class MassRelationViolated(InvariantViolation):
    """Masses do not satisfy the wide-wedge relation within tolerance."""


class NotUnit(FallingBallsError, ValueError):
    """Generator vectors are not unit length."""


class NotIndependent(FallingBallsError, ValueError):
    """Generator vectors are linearly dependent."""


class ConfigError(FallingBallsError, ValueError):
    """Malformed or inconsistent run configuration."""
