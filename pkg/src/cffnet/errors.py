"""Exception types shared across the package.

Each maps to one CLI exit code (see ``cffnet.cli``).
"""


class ContractError(ValueError):
    """A precondition on an argument was violated (bad shape, bad range, ...)."""


class ConfigError(ContractError):
    """Invalid experiment configuration. ``field`` names the offending key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class FormatError(ValueError):
    """Malformed or inconsistent dataset file."""


class NumericError(ArithmeticError):
    """A non-finite value showed up where training cannot continue."""


class DegenerateSampleError(ValueError):
    """A statistic is undefined for the given sample (e.g. zero variance)."""
