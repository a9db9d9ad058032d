"""Exception types raised by the co-simulation."""
from __future__ import annotations


class PhilError(Exception):
    """Base class for all errors raised by philsim."""


class ConfigError(PhilError, ValueError):
    """Invalid scenario or component configuration."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        super().__init__(message)
        self.field = field
        self.line = line

    def __str__(self) -> str:
        msg = super().__str__()
        where = []
        if self.line is not None:
            where.append(f"line {self.line}")
        if self.field:
            where.append(f"field {self.field!r}")
        return f"{', '.join(where)}: {msg}" if where else msg


class SimulationError(PhilError):
    """Runtime failure; ``step`` is the global step index where it happened."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


class DivergenceError(SimulationError):
    pass


class ItmInstabilityError(SimulationError):
    pass


class TransportError(SimulationError):
    pass


class FrameError(PhilError, ValueError):
    """Malformed or corrupted interface frame."""
