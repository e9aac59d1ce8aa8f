"""Coupled porous-medium/thin-channel flow on a curved-interface
reference domain, its dimensionally reduced interface limit, and the
channel-scale sweep harness that checks the limiting structure."""

from .geometry import (
    DomainSpec,
    InterfaceChart,
    LocalFrame,
    interface_normal,
    map_from_reference,
    map_to_reference,
    normal_lower_bound,
    stream_frame,
    surface_measure,
)
from .discretization import Mesh, build_mesh
from .eps_solver import (
    EpsSolution,
    ProblemCoefficients,
    assemble_eps,
    infsup_estimate,
    mms_verify,
    solve_eps,
)
from .limit_solver import (
    LimitSolution,
    assemble_limit,
    mixed_operator_blocks,
    reconstruct_xi,
    solve_limit,
)
from .asymptotics import SweepReport, fit_slope, limit_relation_residuals, run_sweep

__version__ = "0.1.0"

__all__ = [
    "DomainSpec",
    "EpsSolution",
    "InterfaceChart",
    "LimitSolution",
    "LocalFrame",
    "Mesh",
    "ProblemCoefficients",
    "SweepReport",
    "assemble_eps",
    "assemble_limit",
    "build_mesh",
    "fit_slope",
    "infsup_estimate",
    "interface_normal",
    "limit_relation_residuals",
    "map_from_reference",
    "map_to_reference",
    "mixed_operator_blocks",
    "mms_verify",
    "normal_lower_bound",
    "reconstruct_xi",
    "run_sweep",
    "solve_eps",
    "solve_limit",
    "stream_frame",
    "surface_measure",
]
