"""Physics-informed neural networks for swing-equation transient stability.

Ground-truth trajectories come from an adaptive Dormand-Prince integrator;
PINNs recover rotor angles and unknown inertia coefficients, and an ensemble
of diversified PINNs turns the inertia estimates into a Gaussian posterior
with a confidence interval.
"""

from .system import BusSystem, GenState, preset_system
from .pinn import PinnModel, TrainConfig
from .ensemble import EnsembleReport

__version__ = "0.1.0"

__all__ = ["BusSystem", "GenState", "preset_system", "PinnModel", "TrainConfig",
           "EnsembleReport", "__version__"]
