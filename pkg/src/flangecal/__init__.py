"""Flange-based hand-eye calibration and tactile seam-tracking simulation."""

from .calib import CalibConfig, CalibOutcome, compensate, fit_all, run
from .circle_fit import CircleFit, RansacParams, detect_flange, ransac_circle
from .cloud import PointCloud
from .flange_sim import FlangeModel, SimScenario, generate_flange_cloud, run_sweep
from .icp import CloudVerifier, CostKind, IcpErrorMetric, SimulationVerifier, icp_register
from .rigid_fit import SamplePair, fit_rigid
from .se3 import H_TRUE, PoseError, RigidTransform

__version__ = "0.1.0"

__all__ = [
    "CalibConfig",
    "CalibOutcome",
    "CircleFit",
    "CloudVerifier",
    "CostKind",
    "FlangeModel",
    "H_TRUE",
    "IcpErrorMetric",
    "PointCloud",
    "PoseError",
    "RansacParams",
    "RigidTransform",
    "SamplePair",
    "SimScenario",
    "SimulationVerifier",
    "compensate",
    "detect_flange",
    "fit_all",
    "fit_rigid",
    "generate_flange_cloud",
    "icp_register",
    "ransac_circle",
    "run",
    "run_sweep",
]
