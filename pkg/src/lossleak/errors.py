"""Exception hierarchy for the lossleak toolkit.

Every failure mode that a caller is expected to handle has its own class;
generic ValueError/TypeError are reserved for plain misuse of the API.
"""


class LossleakError(Exception):
    """Base class for all lossleak-specific errors."""


# --- arbitrary-precision arithmetic -------------------------------------

class NonPositiveArgument(LossleakError):
    """A logarithm (or similar) argument could not be certified positive."""


class OverflowBudget(LossleakError):
    """A result's magnitude exceeds the configured digit budget."""


class AmbiguousRounding(LossleakError):
    """A value's error bound straddles a rounding decision."""


# --- losses ---------------------------------------------------------------

class DomainError(LossleakError):
    """A prediction entry is outside the loss's admissible domain."""


# --- attack construction / decoding --------------------------------------

class BudgetExceeded(LossleakError):
    """A construction needs exponents beyond the configured budget."""


class IrrationalTau(LossleakError):
    """The noise bound must be a rational number in this artifact."""


class Infeasible(LossleakError):
    """No admissible prediction vector exists for the requested parameters."""


class UnsupportedLoss(LossleakError):
    """The requested operation is not defined for this loss family."""


class DecodingFailed(LossleakError):
    """The observed loss value could not be mapped back to a labeling."""


class NoValidCodeword(DecodingFailed):
    """No block-valid codeword lies within snapping distance."""


class NotSquarefreeProduct(DecodingFailed):
    """An integer is not a product of distinct primes from the given list."""


class TooLarge(LossleakError):
    """An exhaustive enumeration exceeds its configured cap."""


class NotMonotone(LossleakError):
    """A set function claimed monotone was caught decreasing."""


# --- oracle ---------------------------------------------------------------

class BudgetExhausted(LossleakError):
    """The oracle's query budget is spent."""


class MalformedPayload(LossleakError):
    """A submitted payload does not fit the oracle's configured loss."""


class ParseError(LossleakError):
    """A CSV/JSON input could not be parsed."""


class UnknownClass(LossleakError):
    """A label value falls outside the declared class set."""


# --- mutnet ---------------------------------------------------------------

class DomainViolation(LossleakError):
    """A network input violates the declared input domain."""
