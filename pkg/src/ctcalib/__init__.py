"""Continuous-time spatiotemporal calibration of a camera and an IMU from grid-board observations."""

from .data_io import CalibConfig, CalibrationReport, load_config, load_grid_observations, load_imu
from .estimator import FullState, SolverOptions, batch_optimize
from .initializer import InitializerState, initialize
from .params import CalibParams

__all__ = [
    "CalibConfig", "CalibParams", "CalibrationReport", "FullState", "InitializerState",
    "SolverOptions", "batch_optimize", "initialize", "load_config", "load_grid_observations",
    "load_imu",
]
