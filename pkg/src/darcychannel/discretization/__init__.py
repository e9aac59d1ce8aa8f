"""Meshes, finite-element spaces, quadrature, and sparse assembly."""

from .assembly import SparseSystem, assemble_form
from .elements import gauss_interval, tri_quadrature
from .meshing import Mesh, build_mesh
from .norms import (
    frame_poincare_check,
    norm_bundle,
    poincare_inequality_check,
    trace_inequality_check,
)
from .spaces import (
    FeField,
    FeKind,
    P0Space,
    P1ChannelSpace,
    P2VectorChannelSpace,
    RT0Space,
    SurfaceP1Space,
    SurfaceP2TangentSpace,
)
from .vtkio import write_surface_vtk, write_triangulation_vtk

__all__ = [
    "FeField",
    "FeKind",
    "Mesh",
    "P0Space",
    "P1ChannelSpace",
    "P2VectorChannelSpace",
    "RT0Space",
    "SparseSystem",
    "SurfaceP1Space",
    "SurfaceP2TangentSpace",
    "assemble_form",
    "build_mesh",
    "frame_poincare_check",
    "gauss_interval",
    "norm_bundle",
    "poincare_inequality_check",
    "trace_inequality_check",
    "tri_quadrature",
    "write_surface_vtk",
    "write_triangulation_vtk",
]
