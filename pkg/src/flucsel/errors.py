"""Exception types shared across the package."""


class FlucselError(Exception):
    """Base class for all package errors."""


class ConfigError(FlucselError):
    """Invalid or inconsistent simulation parameters."""


class DomainError(FlucselError):
    """A position or field does not fit the spatial domain."""


class KernelError(FlucselError):
    """An environment kernel is inadmissible (regularity or PSD failure)."""


class StateError(FlucselError):
    """A simulator state violates its invariants (e.g. tracer above total)."""


class SimulationError(FlucselError):
    """A run exceeded its event budget or hit an internal inconsistency."""
