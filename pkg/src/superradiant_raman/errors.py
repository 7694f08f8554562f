from typing import Optional

import numpy as np


class SimulationError(Exception):
    """Base class for every error raised by the simulation package."""


class StructuralError(SimulationError):
    """Operands or systems do not fit together (subsystems, dimensions, variables)."""


class UnsupportedError(SimulationError):
    """The request is well formed but outside what the engine implements."""


class CompletionError(SimulationError):
    """Moment completion did not reach a fixed point below the variable cap."""


class SingularityError(SimulationError):
    """A formula was evaluated at a singular point."""


class SingularEliminationError(SingularityError):
    """Adiabatic elimination is singular (zero detuning and zero linewidth)."""


class StiffnessError(SimulationError):
    """The explicit integrator could not take a step above the float resolution."""


class SteadyStateError(SimulationError):
    """No fixed point was reached within the allowed integration time."""

    def __init__(self, message: str, last_state: Optional[np.ndarray] = None):
        super().__init__(message)
        self.last_state = last_state


class NoPulseError(SimulationError):
    """The trajectory has no interior maximum or never crosses half maximum."""


class NoSteadySpectrumError(SimulationError):
    """The regression correlation does not decay, so no stationary spectrum exists."""


class FitQualityError(SimulationError):
    """A spectral line fit was attempted on data without a single clean peak."""

    def __init__(self, message: str, residual: Optional[float] = None):
        super().__init__(message)
        self.residual = residual


class DickeError(SimulationError):
    """Collective spin moments are inconsistent beyond tolerance."""


class CutoffError(SimulationError):
    """The truncated Fock space is too small for the exact evolution."""


class InvalidStateError(SimulationError):
    """A density matrix violates trace, Hermiticity or positivity bounds."""


class ConfigError(SimulationError):
    """Configuration could not be parsed or validated."""

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
