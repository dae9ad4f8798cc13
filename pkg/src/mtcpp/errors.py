"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: schema problems exit 1,
resource-guard breaches exit 2, statistical validation failures exit 3,
and I/O errors (plain OSError) exit 4.
"""


class SchemaError(ValueError):
    """Malformed model, parameter, or config input."""


class GuardError(RuntimeError):
    """A resource guard tripped (node cap, rejection cap, enumeration guard)."""


class ValidationFailure(RuntimeError):
    """A Monte Carlo estimate disagreed with its analytic reference."""


class ImpossibleConditioningError(ValueError):
    """Requested conditioning event has probability below 1e-14."""


class CensoredError(RuntimeError):
    """A coalescence time is censored at the working horizon."""


class InconsistentStateError(ValueError):
    """A reduced-chain state sequence cannot come from one ancestral tree."""


class NumericConsistencyError(RuntimeError):
    """Two supposedly equivalent computation routes disagreed beyond tolerance."""
