"""Exception types shared across the toolkit.

The CLI maps these onto its exit-code contract: precondition failures
exit 2, search-cap exhaustion exits 3, verification failures exit 4 and
malformed inputs exit 64.
"""


class WavesetError(Exception):
    pass


class PreconditionError(WavesetError):
    """A documented hypothesis of an operation does not hold for the input."""


class SearchCapExhausted(WavesetError):
    """An exhaustive search hit its configured cap before succeeding.

    Carries ``best`` (the best candidate found, may be None) so callers can
    report how close the search got.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class VerificationFailed(WavesetError):
    """An independent check rejected a candidate object."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class InputFormatError(WavesetError):
    """Malformed JSON/CSV input."""


class EigenSolveError(WavesetError):
    """Eigenvalue computation did not converge; never silently classified."""
