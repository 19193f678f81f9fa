"""Simulation toolkit for anomalous thermal relaxation of a dissipative qubit."""

from .errors import *  # noqa: F401,F403
from .qstate import DensityMatrix, PureStateEnsemble, SystemParams, thermal_state

__all__ = ["DensityMatrix", "PureStateEnsemble", "SystemParams", "thermal_state"]
__version__ = "0.1.0"
