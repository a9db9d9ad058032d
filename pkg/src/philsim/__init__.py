"""Software power-hardware-in-the-loop co-simulation of a campus grid and a microgrid.

The grid is a swing-equation frequency model behind a radial feeder; the
microgrid is a quantized load bank, a heat-pump house and a droop-controlled
battery.  They are coupled through an Ideal Transformer Model interface that
exchanges one frame per step over an in-process or UDP lock-step transport.
"""
from .errors import (
    ConfigError,
    DivergenceError,
    FrameError,
    ItmInstabilityError,
    PhilError,
    SimulationError,
    TransportError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DivergenceError",
    "FrameError",
    "ItmInstabilityError",
    "PhilError",
    "SimulationError",
    "TransportError",
]
