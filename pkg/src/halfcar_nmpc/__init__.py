"""Nonlinear MPC of an active-suspension half car with sensitivity updates."""

from .mpc import ControllerMode, DisturbanceConfig, MpcConfig, Scenario, run_closed_loop
from .nlp_solver import SolverConfig, solve
from .ocp import HorizonOcp, OcpConfig, gradient, objective
from .road_profile import AxleDelay, RoadMeasurement, SyntheticProfile, reconstruct
from .sensitivity import apply_update, compute_sensitivities, detect_structure_change
from .simulation import IntegratorConfig, rollout, step_sample
from .vehicle_model import (
    DamperControl,
    HalfCarParams,
    HalfCarState,
    RoadPoint,
    chassis_jerk,
    dynamics_rhs,
    static_equilibrium,
    suspension_forces,
)

__all__ = [
    "AxleDelay", "ControllerMode", "DamperControl", "DisturbanceConfig", "HalfCarParams",
    "HalfCarState", "HorizonOcp", "IntegratorConfig", "MpcConfig", "OcpConfig",
    "RoadMeasurement", "RoadPoint", "Scenario", "SolverConfig", "SyntheticProfile",
    "apply_update", "chassis_jerk", "compute_sensitivities", "detect_structure_change",
    "dynamics_rhs", "gradient", "objective", "reconstruct", "rollout", "run_closed_loop",
    "solve", "static_equilibrium", "step_sample", "suspension_forces",
]
__version__ = "0.1.0"
