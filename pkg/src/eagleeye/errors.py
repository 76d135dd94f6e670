"""Exception types shared across the package.

Every error carries an ``exit_code`` so the command line layer can map
failures to process status without inspecting types one by one:
2 for input/validation problems, 3 for an unreachable extremeness request.
"""


class EagleEyeError(Exception):
    exit_code = 2


class ValidationError(EagleEyeError):
    """Input rejected before any computation ran."""

    exit_code = 2


class DimensionMismatch(ValidationError):
    pass


class KMaxTooLarge(ValidationError):
    pass


class ParseError(ValidationError):
    """Malformed dataset or scenario text. ``line`` is 1-based."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NonFiniteInput(ParseError):
    """NaN or infinity where a finite coordinate is required."""

    def __init__(self, message, line=None):
        super().__init__(message, line=line)


class SpecError(ValidationError):
    """Scenario description is inconsistent or incomplete."""


class DomainError(EagleEyeError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class EmptyInput(ValidationError):
    pass


class EmptySample(ValidationError):
    pass


class ZeroAnomaly(EagleEyeError):
    """No candidate anomalous points, so a purity has no denominator."""


class ZeroBackground(EagleEyeError):
    """Estimated background count is zero; significance is undefined."""


class DivisionByZero(EagleEyeError):
    """A reweighting denominator vanished (every point was pruned)."""


class UnreachableExtremeness(EagleEyeError):
    """No achievable score is rare enough for the requested tail mass.

    ``max_achievable_probability`` is the null probability of the most
    extreme score the configuration can produce.
    """

    exit_code = 3

    def __init__(self, message, max_achievable_probability=None):
        super().__init__(message)
        self.max_achievable_probability = max_achievable_probability


class NonTermination(EagleEyeError, RuntimeError):
    """Internal sanity bound exceeded; indicates a bug, not bad input."""
