"""Loosely coupled GNSS/INS fusion with an error-state EKF and an initial-attitude sweep harness."""

from .alignment import InitialAttitude, align_static, inject_epsilon, level_from_accel
from .ekf import FuseConfig, FuseResult, GnssAccuracy, GnssFix, fuse_run
from .geo import Attitude, GeodeticPosition, attitude_to_euler, euler_to_attitude
from .ins import NavState, inverse_mechanize, mechanize, mechanize_step
from .scenario import Scenario, SweepConfig, SweepResult, epsilon_sweep, gen_trajectory, report
from .sensors import AxisNoiseParams, BiasState, ImuLog, ImuSample, SensorParams, estimate_params

__all__ = [
    "Attitude",
    "AxisNoiseParams",
    "BiasState",
    "FuseConfig",
    "FuseResult",
    "GeodeticPosition",
    "GnssAccuracy",
    "GnssFix",
    "ImuLog",
    "ImuSample",
    "InitialAttitude",
    "NavState",
    "Scenario",
    "SensorParams",
    "SweepConfig",
    "SweepResult",
    "align_static",
    "attitude_to_euler",
    "epsilon_sweep",
    "estimate_params",
    "euler_to_attitude",
    "fuse_run",
    "gen_trajectory",
    "inject_epsilon",
    "inverse_mechanize",
    "level_from_accel",
    "mechanize",
    "mechanize_step",
    "report",
]
