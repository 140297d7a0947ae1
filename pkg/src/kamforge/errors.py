"""Exception hierarchy shared across the package.

Every failure mode that can abort an iteration carries a process exit code so
the command line tool can translate exceptions into shell-visible status.
"""


class KamforgeError(Exception):
    """Base class; exit_code is what the CLI returns when this escapes."""

    exit_code = 1


class ConfigError(KamforgeError):
    """Malformed or inconsistent configuration input."""

    exit_code = 1


class ResonanceError(KamforgeError):
    """A small-divisor threshold was violated for the current frequencies."""

    exit_code = 2

    def __init__(self, message, k=None, l=None, value=None, threshold=None):
        super().__init__(message)
        self.k = k
        self.l = l
        self.value = value
        self.threshold = threshold


class HypothesisError(KamforgeError):
    """An iteration-step inequality failed in strict mode."""

    exit_code = 3


class DivergenceError(KamforgeError):
    """The coordinate-change series stopped contracting."""

    exit_code = 3


class EquilibriumNotFoundError(KamforgeError):
    """No verified root of the shifted gradient field inside the search ball."""

    exit_code = 4


class SmallnessError(KamforgeError):
    """Initial perturbation norm exceeds the admissible bound."""

    exit_code = 5


class BlowUpError(KamforgeError):
    """Numerical trajectory left the representable range."""

    exit_code = 1

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class IllPosedBoundaryError(KamforgeError):
    """Degree computation rejected: the field nearly vanishes on the box boundary."""

    exit_code = 1
