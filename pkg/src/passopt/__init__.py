"""Transmit power minimization for pinching-antenna NOMA downlinks.

Modules: ``channel`` (geometry and channel model), ``grouping`` (user
clustering), ``metrics`` (SINR, rates, feasibility), ``mmpdd`` and ``psozf``
(the two optimizers) and ``harness`` (experiments and CLI plumbing).
"""

from .channel import PhysConstants, Scenario, UserLayout, WaveguideLayout
from .grouping import group_users
from .metrics import BeamAllocation, SolverResult, check_feasibility
from .mmpdd import MmPddConfig, run_mm_pdd
from .psozf import PsoConfig, fixed_uniform, run_pso_zf

__version__ = "0.1.0"

__all__ = [
    "PhysConstants",
    "Scenario",
    "UserLayout",
    "WaveguideLayout",
    "group_users",
    "BeamAllocation",
    "SolverResult",
    "check_feasibility",
    "MmPddConfig",
    "run_mm_pdd",
    "PsoConfig",
    "fixed_uniform",
    "run_pso_zf",
]
