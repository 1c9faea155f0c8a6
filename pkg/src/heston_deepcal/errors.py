"""Exception hierarchy.

Validation problems derive from :class:`ValidationError` (a ``ValueError``),
numerical breakdowns from :class:`NumericalError`. The CLI maps the two
families onto distinct exit codes.
"""


class HestonDeepCalError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(HestonDeepCalError, ValueError):
    pass


class NumericalError(HestonDeepCalError, ArithmeticError):
    pass


class RowError(ValidationError):
    """A validation error tied to one data row (1-based, header excluded)."""

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class MissingColumn(ValidationError):
    pass


class NonPositiveStrike(RowError):
    pass


class NegativePrice(RowError):
    pass


class NonPositiveMaturity(RowError):
    pass


class DuplicateQuote(RowError):
    pass


class EmptyChain(ValidationError):
    pass


class DomainError(ValidationError):
    pass


class TooFewQuotes(ValidationError):
    pass


class ZeroFanIn(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class StaleCache(ValidationError):
    pass


class NumericalOverflow(NumericalError):
    pass


class QuadratureFailure(NumericalError):
    pass


class TooManyFailures(NumericalError):
    pass


class PricingError(NumericalError):
    """One or more quotes in a chain failed to price."""

    def __init__(self, failures):
        self.failures = list(failures)
        detail = "; ".join(f"quote {i} (K={k:g}, T={t:g}): {e}" for i, k, t, e in self.failures)
        super().__init__(f"{len(self.failures)} quote(s) failed to price: {detail}")


class ExtrapolationWarning(UserWarning):
    """A quote lies outside the range a surrogate network was trained on."""
