"""Channel estimation for RIS-aided mmWave MIMO uplink via hierarchically
structured matrix recovery (UAMP + bilinear mean-field + SBL message passing).
"""
from .numerics import (
    DftOperators,
    UnitaryFactorization,
    factorize_phi,
    kron,
    khatri_rao,
    unitary_dft,
)
from .channel import ChannelRealization, SystemDims, generate_channel
from .system import MeasurementSet, make_measurements
from .estimator import EstimatorConfig, EstimateReport, run_estimator
from .evaluation import oracle_ls, remove_scale, run_sweep, run_trial

__version__ = "0.1.0"

__all__ = [
    "ChannelRealization",
    "DftOperators",
    "EstimateReport",
    "EstimatorConfig",
    "MeasurementSet",
    "SystemDims",
    "UnitaryFactorization",
    "factorize_phi",
    "generate_channel",
    "khatri_rao",
    "kron",
    "make_measurements",
    "oracle_ls",
    "remove_scale",
    "run_estimator",
    "run_sweep",
    "run_trial",
    "unitary_dft",
]
