"""Exception types shared across the package."""


class InvarcError(Exception):
    """Base class for all invarc errors."""


class DimensionError(InvarcError):
    """Operands have incompatible or invalid shapes."""


class ContractError(InvarcError):
    """An operation precondition was violated (e.g. asymmetric Gram matrix)."""


class ConfigError(InvarcError):
    """Invalid configuration value (e.g. non-positive mass)."""


class DomainError(InvarcError):
    """State outside the admissible domain of a reference system."""


class ViabilityError(InvarcError):
    """State left the constraint set beyond tolerance (integrator drift)."""


class ConditioningError(InvarcError):
    """A matrix required for a coordinate change is numerically singular."""


class DivergenceError(InvarcError):
    """NaN/Inf encountered during integration.

    `where` names the RK4 stage or rollout step at which it appeared.
    """

    def __init__(self, message: str, where: str = ""):
        super().__init__(message if not where else f"{message} [{where}]")
        self.where = where


class SpecError(InvarcError):
    """One or more errors in a system spec; `errors` is a list of
    (line, column, message) tuples."""

    def __init__(self, errors):
        self.errors = list(errors)
        lines = "; ".join(f"{ln}:{col}: {msg}" for ln, col, msg in self.errors)
        super().__init__(lines)
