"""Simulation and analysis tools for a transmon quantum Otto engine driven by a tunable NIS reservoir."""

__version__ = "0.1.0"

from .config import (CALIBRATED_BATH, CycleSchedule, DeviceParams, EngineConfig, InitialState,
                     SimulationSettings, default_config, load_config)
from .errors import ConfigError, DataError, NumericalError, OttoError
from .lindblad import Trajectory, simulate
from .thermo import ThermoReport, cycle_report, effective_temperature, otto_efficiency

__all__ = [
    "CALIBRATED_BATH", "ConfigError", "CycleSchedule", "DataError", "DeviceParams", "EngineConfig",
    "InitialState", "NumericalError", "OttoError", "SimulationSettings", "ThermoReport", "Trajectory",
    "cycle_report", "default_config", "effective_temperature", "load_config", "otto_efficiency",
    "simulate", "__version__",
]
