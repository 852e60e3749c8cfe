"""Exception types raised across the package."""


class InvalidInputError(ValueError):
    """An argument violates a documented precondition."""


class AliasingError(InvalidInputError):
    """Eigenvalue phase wrapped: the frequency step is too large for the DGD."""


class SolverError(RuntimeError):
    """A numerical inversion failed to reach its tolerance."""


class UndefinedQBERError(ValueError):
    """QBER requested from records with no clicks at all."""


class ConfigError(ValueError):
    """Scenario configuration is malformed or contains unknown keys."""
