"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid geometry, controller or scenario parameters."""


class DomainError(ValueError):
    """A query that makes no sense for the given route or table."""


class CoordinationError(RuntimeError):
    """The coordinator tables reached an inconsistent state."""


class SolverError(RuntimeError):
    """The unconstrained trajectory solve did not converge."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class SimulationError(RuntimeError):
    """Simulation aborted; carries the event log needed to replay it."""

    def __init__(self, message: str, events: list | None = None):
        super().__init__(message)
        self.events = events or []
