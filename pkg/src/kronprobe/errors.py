"""Exception types shared across the package."""


class OutOfValidityRegion(ValueError):
    """A bound was evaluated outside the parameter region where it holds.

    An out-of-region "bound" is mathematically meaningless, so this is a hard
    error rather than a silent clamp.  The message names the violated
    precondition.
    """


class IncompatibleCertificate(ValueError):
    """The requested certificate does not exist for this estimator setup.

    Canonical case: an upper spectral-norm certificate for Rademacher-family
    probes, which no tail bound supports.
    """


class UnreachableConfidence(ValueError):
    """No parameter choice attains the requested confidence level."""


class PsdAssertionError(ValueError):
    """A trace estimate was requested on an operator not asserted PSD."""


class NonConvergenceError(RuntimeError):
    """An iteration failed to converge within its budget.

    Carries the best estimate seen so far in ``best_estimate`` when the caller
    may still want it.
    """

    def __init__(self, message, best_estimate=None):
        super().__init__(message)
        self.best_estimate = best_estimate


class MatrixMarketFormatError(ValueError):
    """Malformed Matrix Market input; ``line`` is the 1-based offending line."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
