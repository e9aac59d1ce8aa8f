"""Conforming triangulation of the porous block and the reference channel.

The mesh is a tensor lattice in (x, z): ``n_t`` columns, ``n_1`` porous
layers below the interface and ``n_z`` channel layers above it, each quad
split into two counterclockwise triangles.  Interface vertices are shared
between the two subdomains, every vertical lattice line is complete, and
facet groups (interface, channel top, channel walls, outer porous
boundary) are recorded explicitly.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import ParameterError
from ..geometry import DomainSpec, normal_lower_bound


def _edge_structure(tris):
    """Unique undirected edges plus per-cell (edge id, orientation sign).

    Local edge i is opposite local vertex i.  The sign is +1 when the
    global edge normal (left-hand perpendicular of the low-to-high vertex
    direction) points out of the cell; valid for counterclockwise cells.
    """
    traversed = np.stack(
        [tris[:, [1, 2]], tris[:, [2, 0]], tris[:, [0, 1]]], axis=1
    )  # (nc, 3, 2) in traversal order
    pairs = np.sort(traversed, axis=-1).reshape(-1, 2)
    edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
    cell_edges = inverse.reshape(-1, 3)
    signs = np.where(traversed[..., 0] > traversed[..., 1], 1.0, -1.0)
    return edges, cell_edges, signs


@dataclass(frozen=True)
class FacetLine:
    """A lattice-aligned facet row: one facet per x-interval."""

    vertices: np.ndarray  # (n_t, 2) endpoint vertex ids, left then right
    cell: np.ndarray  # (n_t,) adjacent cell on the owning side
    edge: np.ndarray  # (n_t,) edge index within the owning subdomain

    def __len__(self):
        return self.vertices.shape[0]


@dataclass(frozen=True)
class Mesh:
    ndim = 2  # ambient dimension; the data model is dimension-generic,
    # but only the planar build is exercised

    spec: DomainSpec
    n_t: int
    n_z: int
    n_1: int
    refinement_level: int
    vertices: np.ndarray  # (nv, 2)
    tri1: np.ndarray  # (nc1, 3) porous triangles
    tri2: np.ndarray  # (nc2, 3) channel triangles
    x_nodes: np.ndarray  # (n_t + 1,)
    v_porous: np.ndarray  # (n_t + 1, n_1 + 1) global vertex ids, bottom to interface
    v_channel: np.ndarray  # (n_t + 1, n_z + 1) global vertex ids, interface to top
    edges1: np.ndarray  # (ne1, 2) porous edges (sorted vertex pairs)
    cell_edges1: np.ndarray  # (nc1, 3)
    edge_signs1: np.ndarray  # (nc1, 3)
    edges2: np.ndarray  # (ne2, 2) channel edges
    cell_edges2: np.ndarray  # (nc2, 3)
    gamma: FacetLine = None  # interface facets; cell/edge refer to the channel side
    gamma_porous_cell: np.ndarray = None
    gamma_porous_edge: np.ndarray = None  # RT0 dof indices on the interface
    top: FacetLine = None
    wall_edges2: np.ndarray = None  # channel edge ids on the lateral walls
    wall_vertices: np.ndarray = None  # vertex ids on the lateral channel walls

    @property
    def chart(self):
        return self.spec.chart

    def refined(self):
        """Uniformly refined mesh (doubles every resolution)."""
        m = build_mesh(self.spec, 2 * self.n_t, 2 * self.n_z, 2 * self.n_1)
        object.__setattr__(m, "refinement_level", self.refinement_level + 1)
        return m


def build_mesh(spec: DomainSpec, n_t: int, n_z: int, n_1: int) -> Mesh:
    """Mesh the porous block and reference channel of a domain spec.

    Vertices on the interface are placed exactly at (x_i, zeta(x_i)).
    Raises the chart's invalid-chart error when the normal lower bound
    fails, and a parameter error for resolutions below 2.
    """
    if min(n_t, n_z, n_1) < 2:
        raise ParameterError(f"mesh resolutions must be >= 2, got {(n_t, n_z, n_1)}")
    chart = spec.chart
    normal_lower_bound(chart)  # rejects invalid charts before any meshing

    xs = np.linspace(chart.g_lo, chart.g_hi, n_t + 1)
    zeta = chart.zeta(xs)
    depth = spec.omega1_depth

    n_rows = n_1 + n_z + 1
    verts = np.empty(((n_t + 1) * n_rows, 2))
    row_ids = np.arange(n_t + 1)
    for j in range(n_1 + 1):  # porous rows, bottom (j=0) to interface (j=n_1)
        ids = j * (n_t + 1) + row_ids
        verts[ids, 0] = xs
        verts[ids, 1] = zeta - depth * (1.0 - j / n_1)
    for k in range(1, n_z + 1):  # channel rows above the shared interface row
        ids = (n_1 + k) * (n_t + 1) + row_ids
        verts[ids, 0] = xs
        verts[ids, 1] = zeta + k / n_z

    v_porous = np.arange((n_t + 1) * (n_1 + 1)).reshape(n_1 + 1, n_t + 1).T
    v_channel = (
        np.arange((n_t + 1) * (n_z + 1)) + n_1 * (n_t + 1)
    ).reshape(n_z + 1, n_t + 1).T

    def lattice_triangles(vmap, n_layers):
        tris = np.empty((2 * n_layers * n_t, 3), dtype=np.int64)
        c = 0
        for layer in range(n_layers):
            for i in range(n_t):
                a = vmap[i, layer]
                b = vmap[i + 1, layer]
                cc = vmap[i + 1, layer + 1]
                d = vmap[i, layer + 1]
                tris[c] = (a, b, cc)
                tris[c + 1] = (a, cc, d)
                c += 2
        return tris

    tri1 = lattice_triangles(v_porous, n_1)
    tri2 = lattice_triangles(v_channel, n_z)

    edges1, cell_edges1, edge_signs1 = _edge_structure(tri1)
    edges2, cell_edges2, _ = _edge_structure(tri2)

    lookup1 = {tuple(e): i for i, e in enumerate(edges1)}
    lookup2 = {tuple(e): i for i, e in enumerate(edges2)}

    def edge_ids(lookup, pairs):
        return np.array([lookup[tuple(sorted(p))] for p in pairs], dtype=np.int64)

    # interface facets: left-to-right pairs on the shared row
    gamma_pairs = np.stack([v_porous[:-1, n_1], v_porous[1:, n_1]], axis=1)
    gamma = FacetLine(
        vertices=gamma_pairs,
        cell=np.array([2 * i for i in range(n_t)], dtype=np.int64),
        edge=edge_ids(lookup2, gamma_pairs),
    )
    gamma_porous_cell = np.array(
        [2 * ((n_1 - 1) * n_t + i) + 1 for i in range(n_t)], dtype=np.int64
    )
    gamma_porous_edge = edge_ids(lookup1, gamma_pairs)

    top_pairs = np.stack([v_channel[:-1, n_z], v_channel[1:, n_z]], axis=1)
    top = FacetLine(
        vertices=top_pairs,
        cell=np.array(
            [2 * ((n_z - 1) * n_t + i) + 1 for i in range(n_t)], dtype=np.int64
        ),
        edge=edge_ids(lookup2, top_pairs),
    )

    wall_pairs = [
        (v_channel[i, k], v_channel[i, k + 1])
        for i in (0, n_t)
        for k in range(n_z)
    ]
    wall_edges2 = edge_ids(lookup2, wall_pairs)
    wall_vertices = np.unique(np.concatenate([v_channel[0, :], v_channel[n_t, :]]))

    return Mesh(
        spec=spec,
        n_t=n_t,
        n_z=n_z,
        n_1=n_1,
        refinement_level=0,
        vertices=verts,
        tri1=tri1,
        tri2=tri2,
        x_nodes=xs,
        v_porous=v_porous,
        v_channel=v_channel,
        edges1=edges1,
        cell_edges1=cell_edges1,
        edge_signs1=edge_signs1,
        edges2=edges2,
        cell_edges2=cell_edges2,
        gamma=gamma,
        gamma_porous_cell=gamma_porous_cell,
        gamma_porous_edge=gamma_porous_edge,
        top=top,
        wall_edges2=wall_edges2,
        wall_vertices=wall_vertices,
    )
