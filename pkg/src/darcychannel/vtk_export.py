"""Field export helpers shared by the CLI commands."""

import numpy as np

from .discretization.vtkio import write_surface_vtk, write_triangulation_vtk
from .geometry import stream_frame


def _rt0_cell_vectors(field):
    """Cell-centroid values of an RT0 field (for plotting only)."""
    tables = field.space.tables(order=2)
    vals = field.space.values(field.coeffs, tables)
    return vals.mean(axis=1)


def export_eps_solution(out_dir, sol):
    mesh = sol.mesh
    write_triangulation_vtk(
        out_dir / "eps_omega1.vtk",
        mesh.vertices,
        mesh.tri1,
        cell_data={"v1": _rt0_cell_vectors(sol.v1), "p1": sol.p1.coeffs},
    )
    n_vert = (mesh.n_t + 1) * (mesh.n_z + 1)
    offset = mesh.n_1 * (mesh.n_t + 1)
    verts = mesh.vertices[offset : offset + n_vert]
    v2 = sol.v2.coeffs.reshape(-1, 2)[:n_vert]
    write_triangulation_vtk(
        out_dir / "eps_omega2.vtk",
        verts,
        mesh.tri2 - offset,
        point_data={"v2": v2, "p2": sol.p2.coeffs},
    )


def export_limit_solution(out_dir, sol):
    mesh = sol.mesh
    write_triangulation_vtk(
        out_dir / "limit_omega1.vtk",
        mesh.vertices,
        mesh.tri1,
        cell_data={"v1": _rt0_cell_vectors(sol.v1), "p1": sol.p1.coeffs},
    )
    xs = mesh.x_nodes
    pts = np.stack([xs, mesh.chart.zeta(xs)], axis=-1)
    tau = stream_frame(mesh.chart, xs)[..., :, 0]
    profile = sol.v2.coeffs[: len(xs)]
    flux = sol.gamma_flux()
    flux_nodes = np.concatenate([[flux[0]], 0.5 * (flux[:-1] + flux[1:]), [flux[-1]]])
    chi_nodes = np.concatenate([[sol.chi_n[0]], 0.5 * (sol.chi_n[:-1] + sol.chi_n[1:]), [sol.chi_n[-1]]])
    write_surface_vtk(
        out_dir / "limit_gamma.vtk",
        pts,
        point_data={
            "v2": profile[:, None] * tau,
            "p2": sol.p2.coeffs,
            "v1_normal_trace": flux_nodes,
            "chi_normal": chi_nodes,
        },
    )
