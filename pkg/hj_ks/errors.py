"""Exception hierarchy shared by the engines and the runner."""

from typing import Any, List, Optional


class HjKsError(Exception):
    """Base class for all hj_ks errors"""


class ConfigError(HjKsError):
    """A run file or override set failed validation.

    Carries every problem found, not just the first one.
    """

    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class NumericalError(HjKsError):
    """Linear-algebra kernel failure"""


class EigenConvergenceError(NumericalError):
    pass


class SingularMatrixError(NumericalError):
    """Exactly singular input where an inverse or log-determinant was requested"""


class WindowTooShortError(HjKsError):
    pass


class DiagnosticFailure(HjKsError):
    """An engine stopped early; ``partial`` holds whatever was computed so far."""

    def __init__(self, message: str, partial: Optional[Any] = None):
        super().__init__(message)
        self.partial = partial


class OrbitEscapeError(DiagnosticFailure):
    pass


class NonFiniteStateError(DiagnosticFailure):
    pass


class TangentOverflowError(DiagnosticFailure):
    pass


class KickSingularityError(DiagnosticFailure):
    """I + T*sigma exactly singular: a pole of the free flight lands on a kick."""

    def __init__(self, n: int, partial: Optional[Any] = None):
        super().__init__(f"I + T*sigma singular at kick n={n}", partial)
        self.n = n


class NodeEncounterError(DiagnosticFailure):
    def __init__(self, time: float, partial: Optional[Any] = None):
        super().__init__(f"wavefunction node encountered at t={time:.6g}", partial)
        self.time = time
