"""Exception hierarchy shared across the package."""


class QueryGuardError(Exception):
    """Base class for all queryguard errors."""


class ContractViolation(QueryGuardError):
    """A caller broke a documented precondition (dimension/kind mismatch, bad range)."""


class ConfigError(QueryGuardError):
    """An invalid configuration value, reported before any work starts."""


class DegenerateInputError(QueryGuardError):
    """Input too small for the requested operation (e.g. image smaller than one window)."""


class LookupMissError(QueryGuardError):
    """A key was not found in a preloaded embedding file."""


class TransportError(QueryGuardError):
    """The external encoder round trip failed; the caller decides the fallback."""


class BankFullError(QueryGuardError):
    """Append on a capacity-limited bank with eviction disabled."""


class NoHistoryError(QueryGuardError):
    """A per-user query has no history to compare against (callers treat as benign)."""


class AttackInitError(QueryGuardError):
    """A decision-based attack could not find an initial adversarial point."""


class BudgetExhausted(QueryGuardError):
    """Raised by a query oracle when the attack's query budget is spent."""


class DetectBatchError(QueryGuardError):
    """A batched detection run aborted; verdicts produced so far are attached.

    Attributes:
        partial: list of Verdict objects for the queries served before the failure.
    """

    def __init__(self, message, partial):
        super().__init__(message)
        self.partial = partial
