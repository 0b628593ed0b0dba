"""Rate-equation simulation of pulsed sideband cooling outside the Lamb-Dicke regime."""

from .dynamics import Cycle, Pulse, SimulationTrace, run_sequence, simulate
from .errors import ConfigError, NoFeasibleDetuning, NumericalError, QuadratureError, TailMassError, TruncationError
from .fock import displacement_block, displacement_element, real_block
from .protocol import OptimizationProblem, PulseBounds, build_cycle, optimize_sequence, select_blue_detunings
from .rates import PhysicalParams, build_rate_matrix, emptying_rates, rate_nm

__version__ = "0.1.0"

__all__ = [
    "Cycle",
    "Pulse",
    "SimulationTrace",
    "run_sequence",
    "simulate",
    "ConfigError",
    "NoFeasibleDetuning",
    "NumericalError",
    "QuadratureError",
    "TailMassError",
    "TruncationError",
    "displacement_block",
    "displacement_element",
    "real_block",
    "OptimizationProblem",
    "PulseBounds",
    "build_cycle",
    "optimize_sequence",
    "select_blue_detunings",
    "PhysicalParams",
    "build_rate_matrix",
    "emptying_rates",
    "rate_nm",
]
