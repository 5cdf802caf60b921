"""Exception hierarchy.  Hypothesis violations map to CLI exit code 2."""


class TailforgeError(Exception):
    exit_code = 1


class HypothesisViolation(TailforgeError):
    """The model does not satisfy a standing assumption of the theory."""

    exit_code = 2


class DomainError(TailforgeError, ValueError):
    pass


class NoCramerRoot(HypothesisViolation):
    pass


class NoBetaMargin(HypothesisViolation):
    pass


class NotNormalized(TailforgeError, ValueError):
    pass


class ThetaViolated(TailforgeError, ValueError):
    pass


class LatticeModel(HypothesisViolation):
    pass


class UnsupportedFamily(TailforgeError, TypeError):
    pass


class EmptyWindow(TailforgeError, ValueError):
    pass


class PoolMismatch(TailforgeError):
    exit_code = 3


class ConfigError(TailforgeError, ValueError):
    exit_code = 64


class ZeroTailMass(TailforgeError):
    """No usable mass of R beyond the W-event threshold."""
