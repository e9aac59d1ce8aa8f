"""Finite-element spaces on the two subdomains and on the interface.

Element choices: lowest-order Raviart-Thomas x piecewise constants for
the porous (filtration) pair, Taylor-Hood P2-vector x continuous P1 for
the channel pair, and tangent-directed P2 x continuous P1 on the
interface lattice for the reduced problem.  Essential conditions are
realized by sparse reduction matrices (columns = free degrees of
freedom), so every bilinear form is assembled on the unconstrained
space first.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp

from ..errors import StructuralError
from ..geometry import stream_frame
from .elements import (
    affine_maps,
    gauss_interval,
    p1_shape,
    p1_grad,
    p2_edge_trace,
    p2_grad,
    p2_shape,
    tri_quadrature,
)


class FeKind(Enum):
    HDIV_DARCY = "HDIV_DARCY"
    H1_VECTOR_STOKES = "H1_VECTOR_STOKES"
    L2_PRESSURE_BULK = "L2_PRESSURE_BULK"
    L2_PRESSURE_CHANNEL = "L2_PRESSURE_CHANNEL"
    SURFACE_H1_VECTOR = "SURFACE_H1_VECTOR"
    SURFACE_L2 = "SURFACE_L2"


@dataclass
class CellTables:
    """Per-cell quadrature data for one scalar element family."""

    points: np.ndarray  # (nc, nq, 2) physical quadrature points
    weights: np.ndarray  # (nc, nq) physical weights
    basis: np.ndarray  # (n_loc, nq) reference values (affine cells)
    grads: np.ndarray  # (nc, n_loc, nq, 2) physical gradients
    dofs: np.ndarray  # (nc, n_loc)

    @property
    def xt(self):
        return self.points[..., 0]


@dataclass
class FacetTables:
    """Quadrature data on a lattice-aligned facet row, parametrized by x."""

    xt: np.ndarray  # (nf, nq)
    ref_points: np.ndarray  # (nq,) abscissae on [0, 1]
    ref_weights: np.ndarray  # (nq,) weights on [0, 1]
    dx: float  # x-interval per facet
    length: np.ndarray  # (nf,) straight-facet euclidean length
    facet_normal: np.ndarray  # (nf, 2) unit normal of the straight facet, upward
    trace_nodes: np.ndarray  # (nf, 3) scalar P2 nodes: left, right, mid
    p1_nodes: np.ndarray  # (nf, 2) vertex nodes: left, right
    trace: np.ndarray  # (3, nq) P2 trace shape values
    p1_trace: np.ndarray  # (2, nq)
    metric: np.ndarray  # (nf, nq) chart area factor at xt


def _scalar_tables(vertices, triangles, dofs, order, family):
    pts, wts = tri_quadrature(order)
    jac, inv_t, det, p0 = affine_maps(vertices, triangles)
    phys = p0[:, None, :] + np.einsum("cij,qj->cqi", jac, pts)
    weights = det[:, None] * wts[None, :]
    if family == "p1":
        basis = p1_shape(pts)
        ref_grads = np.broadcast_to(p1_grad()[:, None, :], (3, pts.shape[0], 2))
    elif family == "p2":
        basis = p2_shape(pts)
        ref_grads = p2_grad(pts)
    else:
        raise ValueError(family)
    grads = np.einsum("cij,lqj->clqi", inv_t, ref_grads)
    return CellTables(points=phys, weights=weights, basis=basis, grads=grads, dofs=dofs)


class _TriSpace:
    """Shared behavior of triangle-based spaces."""

    ndim = 2

    def __init__(self, mesh):
        self.mesh = mesh

    def tables(self, order=None):
        order = self.default_order if order is None else order
        return self._tables_cached(order)


class P0Space(_TriSpace):
    """Piecewise constants; one dof per cell of the owning subdomain."""

    degree = 0

    def __init__(self, mesh, region):
        super().__init__(mesh)
        self.region = region
        self.kind = FeKind.L2_PRESSURE_BULK if region == 1 else None
        self.tri = mesh.tri1 if region == 1 else mesh.tri2
        self.n_dofs = self.tri.shape[0]
        self.default_order = 4 if region == 1 else 6
        self._cache = {}

    def _tables_cached(self, order):
        if order not in self._cache:
            pts, wts = tri_quadrature(order)
            jac, _, det, p0 = affine_maps(self.mesh.vertices, self.tri)
            phys = p0[:, None, :] + np.einsum("cij,qj->cqi", jac, pts)
            self._cache[order] = CellTables(
                points=phys,
                weights=det[:, None] * wts[None, :],
                basis=np.ones((1, pts.shape[0])),
                grads=np.zeros((self.tri.shape[0], 1, pts.shape[0], 2)),
                dofs=np.arange(self.n_dofs, dtype=np.int64)[:, None],
            )
        return self._cache[order]

    def cell_areas(self):
        _, _, det, _ = affine_maps(self.mesh.vertices, self.tri)
        return 0.5 * det


class P1ChannelSpace(_TriSpace):
    """Continuous P1 on the channel; dofs indexed by channel vertices.

    Channel vertex local index = global vertex id minus the porous-block
    offset (the shared interface row is local row 0).
    """

    kind = FeKind.L2_PRESSURE_CHANNEL
    degree = 1
    default_order = 6

    def __init__(self, mesh):
        super().__init__(mesh)
        self.offset = mesh.n_1 * (mesh.n_t + 1)
        self.l_tri = mesh.tri2 - self.offset
        self.n_dofs = (mesh.n_t + 1) * (mesh.n_z + 1)
        self._cache = {}

    def _tables_cached(self, order):
        if order not in self._cache:
            self._cache[order] = _scalar_tables(
                self.mesh.vertices, self.mesh.tri2, self.l_tri, order, "p1"
            )
        return self._cache[order]

    def vertex_grid(self):
        """Dof ids arranged as (n_t+1, n_z+1): column i, layer k."""
        return self.mesh.v_channel - self.offset

    def node_coordinates(self):
        return self.mesh.vertices[self.offset + np.arange(self.n_dofs)]

    def interpolate(self, f):
        xy = self.node_coordinates()
        return np.asarray(f(xy[:, 0], xy[:, 1]), dtype=float)

    def values(self, coeffs, tables):
        return np.einsum("lq,cl->cq", tables.basis, coeffs[tables.dofs])

    def gradients(self, coeffs, tables):
        return np.einsum("clqi,cl->cqi", tables.grads, coeffs[tables.dofs])


class P2ScalarChannelSpace(_TriSpace):
    """Continuous P2 scalars on the channel (building block for vectors)."""

    degree = 2
    default_order = 6

    def __init__(self, mesh):
        super().__init__(mesh)
        self.offset = mesh.n_1 * (mesh.n_t + 1)
        self.n_vertex = (mesh.n_t + 1) * (mesh.n_z + 1)
        self.n_dofs = self.n_vertex + mesh.edges2.shape[0]
        lv = mesh.tri2 - self.offset
        ce = mesh.cell_edges2
        # p2 node order: vertices, then midpoints of local edges (0,1),(1,2),(2,0);
        # mesh local edge i sits opposite vertex i, so those are edges 2, 0, 1.
        self.cell_dofs = np.column_stack(
            [
                lv,
                self.n_vertex + ce[:, 2],
                self.n_vertex + ce[:, 0],
                self.n_vertex + ce[:, 1],
            ]
        )
        self._cache = {}

    def _tables_cached(self, order):
        if order not in self._cache:
            self._cache[order] = _scalar_tables(
                self.mesh.vertices, self.mesh.tri2, self.cell_dofs, order, "p2"
            )
        return self._cache[order]

    def node_coordinates(self):
        verts = self.mesh.vertices
        coords = np.empty((self.n_dofs, 2))
        coords[: self.n_vertex] = verts[self.offset + np.arange(self.n_vertex)]
        mids = 0.5 * (verts[self.mesh.edges2[:, 0]] + verts[self.mesh.edges2[:, 1]])
        coords[self.n_vertex :] = mids
        return coords

    def interpolate(self, f):
        xy = self.node_coordinates()
        return np.asarray(f(xy[:, 0], xy[:, 1]), dtype=float)

    def values(self, coeffs, tables):
        return np.einsum("lq,cl->cq", tables.basis, coeffs[tables.dofs])

    def gradients(self, coeffs, tables):
        return np.einsum("clqi,cl->cqi", tables.grads, coeffs[tables.dofs])

    def wall_nodes(self):
        mesh = self.mesh
        nodes = list(mesh.wall_vertices - self.offset)
        nodes += list(self.n_vertex + mesh.wall_edges2)
        return np.array(sorted(nodes), dtype=np.int64)

    def top_nodes(self):
        mesh = self.mesh
        nodes = list(np.unique(mesh.top.vertices) - self.offset)
        nodes += list(self.n_vertex + mesh.top.edge)
        return np.array(sorted(nodes), dtype=np.int64)


class P2VectorChannelSpace(_TriSpace):
    """Taylor-Hood velocity space on the channel.

    Dof layout: ``2 * node + component``.  Essential conditions: both
    components vanish at lateral-wall nodes; at channel-top nodes only
    the chart-tangential direction is free.
    """

    kind = FeKind.H1_VECTOR_STOKES
    degree = 2
    default_order = 6

    def __init__(self, mesh):
        super().__init__(mesh)
        self.scalar = P2ScalarChannelSpace(mesh)
        self.n_nodes = self.scalar.n_dofs
        self.n_dofs = 2 * self.n_nodes

    def tables(self, order=None):
        return self.scalar.tables(order)

    def interpolate(self, f):
        """Nodal interpolation of a callable f(x, z) -> (..., 2)."""
        xy = self.scalar.node_coordinates()
        vals = np.asarray(f(xy[:, 0], xy[:, 1]), dtype=float)
        coeffs = np.empty(self.n_dofs)
        coeffs[0::2] = vals[..., 0]
        coeffs[1::2] = vals[..., 1]
        return coeffs

    def values(self, coeffs, tables):
        """Field values at quadrature points, (nc, nq, 2)."""
        per_node = coeffs.reshape(-1, 2)
        return np.einsum("lq,cld->cqd", tables.basis, per_node[tables.dofs])

    def gradients(self, coeffs, tables):
        """d w_d / d x_e at quadrature points, (nc, nq, 2, 2) [d, e]."""
        per_node = coeffs.reshape(-1, 2)
        return np.einsum("clqe,cld->cqde", tables.grads, per_node[tables.dofs])

    def reduction(self):
        """Sparse map from free dofs to the full dof vector.

        Free layout: two canonical components per interior node, one
        tangential component per top node, nothing at wall nodes.
        """
        chart = self.mesh.chart
        wall = set(self.scalar.wall_nodes().tolist())
        top = [n for n in self.scalar.top_nodes().tolist() if n not in wall]
        coords = self.scalar.node_coordinates()
        rows, cols, vals = [], [], []
        col = 0
        node_kind = np.zeros(self.n_nodes, dtype=np.int64)  # 0 free, 1 top, 2 wall
        node_kind[list(wall)] = 2
        node_kind[top] = 1
        for node in range(self.n_nodes):
            kind = node_kind[node]
            if kind == 2:
                continue
            if kind == 1:
                tau = stream_frame(chart, coords[node, 0])[:, 0]
                rows += [2 * node, 2 * node + 1]
                cols += [col, col]
                vals += [tau[0], tau[1]]
                col += 1
            else:
                rows += [2 * node, 2 * node + 1]
                cols += [col, col + 1]
                vals += [1.0, 1.0]
                col += 2
        R = sp.csr_matrix((vals, (rows, cols)), shape=(self.n_dofs, col))
        return R

    def gamma_tables(self, n_quad=6):
        return _facet_tables(self, self.mesh.gamma, n_quad)

    def top_tables(self, n_quad=6):
        return _facet_tables(self, self.mesh.top, n_quad)


def _facet_tables(space, facet_line, n_quad):
    mesh = space.mesh
    s, w = gauss_interval(n_quad)
    left = facet_line.vertices[:, 0]
    right = facet_line.vertices[:, 1]
    xl = mesh.vertices[left, 0]
    dx = float(mesh.vertices[right[0], 0] - xl[0])
    xt = xl[:, None] + dx * s[None, :]
    tvec = mesh.vertices[right] - mesh.vertices[left]
    length = np.linalg.norm(tvec, axis=1)
    normal = np.stack([-tvec[:, 1], tvec[:, 0]], axis=1) / length[:, None]
    scalar = space.scalar if isinstance(space, P2VectorChannelSpace) else space
    if hasattr(scalar, "n_vertex"):
        trace_nodes = np.column_stack(
            [
                left - scalar.offset,
                right - scalar.offset,
                scalar.n_vertex + facet_line.edge,
            ]
        )
    else:
        trace_nodes = None  # linear space: only vertex traces exist
    p1_nodes = np.column_stack([left - scalar.offset, right - scalar.offset])
    slope = mesh.chart.dzeta(xt)
    return FacetTables(
        xt=xt,
        ref_points=s,
        ref_weights=w,
        dx=dx,
        length=length,
        facet_normal=normal,
        trace_nodes=trace_nodes,
        p1_nodes=p1_nodes,
        trace=p2_edge_trace(s),
        p1_trace=np.stack([1.0 - s, s]),
        metric=np.sqrt(1.0 + slope * slope),
    )


def gamma_trace_values(coeffs, ft):
    """P2 vector trace on a facet row, (nf, nq, 2)."""
    per_node = coeffs.reshape(-1, 2)
    return np.einsum("lq,fld->fqd", ft.trace, per_node[ft.trace_nodes])


class RT0Space:
    """Lowest-order Raviart-Thomas on the porous block.

    Dofs are integrated normal fluxes across porous edges, with a global
    orientation (left-hand perpendicular of the low-to-high vertex
    direction); interface-edge dofs count upward flux.
    """

    kind = FeKind.HDIV_DARCY
    ndim = 2
    degree = 1
    default_order = 4

    def __init__(self, mesh):
        self.mesh = mesh
        self.n_dofs = mesh.edges1.shape[0]
        self._cache = {}

    def tables(self, order=None):
        order = self.default_order if order is None else order
        if order not in self._cache:
            mesh = self.mesh
            pts, wts = tri_quadrature(order)
            jac, _, det, p0 = affine_maps(mesh.vertices, mesh.tri1)
            phys = p0[:, None, :] + np.einsum("cij,qj->cqi", jac, pts)
            weights = det[:, None] * wts[None, :]
            corners = mesh.vertices[mesh.tri1]  # (nc, 3, 2)
            # basis_i = sign_i * (x - p_i) / det ;  div = 2 * sign_i / det
            basis = (
                phys[:, None, :, :] - corners[:, :, None, :]
            ) * (mesh.edge_signs1 / det[:, None])[:, :, None, None]
            div = 2.0 * mesh.edge_signs1 / det[:, None]
            self._cache[order] = RT0Tables(
                points=phys,
                weights=weights,
                basis=basis,
                div=div,
                dofs=mesh.cell_edges1,
            )
        return self._cache[order]

    def gamma_facets(self):
        """Interface facet data for the porous side: (dof, straight length)."""
        mesh = self.mesh
        left = mesh.gamma.vertices[:, 0]
        right = mesh.gamma.vertices[:, 1]
        tvec = mesh.vertices[right] - mesh.vertices[left]
        return mesh.gamma_porous_edge, np.linalg.norm(tvec, axis=1)

    def values(self, coeffs, tables):
        return np.einsum("clqi,cl->cqi", tables.basis, coeffs[tables.dofs])

    def divergence(self, coeffs, tables):
        return np.einsum("cl,cl->c", tables.div, coeffs[tables.dofs])[:, None] * np.ones(
            tables.weights.shape[1]
        )


@dataclass
class RT0Tables:
    points: np.ndarray  # (nc, nq, 2)
    weights: np.ndarray  # (nc, nq)
    basis: np.ndarray  # (nc, 3, nq, 2)
    div: np.ndarray  # (nc, 3) constant per basis function
    dofs: np.ndarray  # (nc, 3)

    @property
    def xt(self):
        return self.points[..., 0]


# -- interface (surface) spaces --------------------------------------


@dataclass
class SurfaceTables:
    xt: np.ndarray  # (nseg, nq)
    weights: np.ndarray  # (nseg, nq) plain dx-weights (no metric)
    shape: np.ndarray  # (n_loc, nq)
    dshape: np.ndarray  # (n_loc, nq) d/dx
    dofs: np.ndarray  # (nseg, n_loc)
    metric: np.ndarray  # (nseg, nq) chart area factor


class SurfaceP2TangentSpace:
    """Tangent-directed quadratic velocities on the interface lattice.

    A scalar quadratic profile per segment (endpoints + midpoint) scales
    the chart tangent, so fields are pointwise tangent by construction;
    endpoint values at the lattice ends are constrained to zero.
    """

    kind = FeKind.SURFACE_H1_VECTOR
    degree = 2
    default_order = 6

    def __init__(self, mesh):
        self.mesh = mesh
        self.n_seg = mesh.n_t
        self.n_vertex = mesh.n_t + 1
        self.n_dofs = self.n_vertex + self.n_seg  # vertex then midpoint nodes
        self._cache = {}

    def node_positions(self):
        xs = self.mesh.x_nodes
        mids = 0.5 * (xs[:-1] + xs[1:])
        return np.concatenate([xs, mids])

    def cell_dofs(self):
        i = np.arange(self.n_seg)
        return np.column_stack([i, i + 1, self.n_vertex + i])

    def tables(self, n_quad=6):
        if n_quad not in self._cache:
            xs = self.mesh.x_nodes
            dx = float(xs[1] - xs[0])
            s, w = gauss_interval(n_quad)
            xt = xs[:-1, None] + dx * s[None, :]
            shape = p2_edge_trace(s)
            ds = np.stack([4.0 * s - 3.0, 4.0 * s - 1.0, 4.0 - 8.0 * s])
            slope = self.mesh.chart.dzeta(xt)
            self._cache[n_quad] = SurfaceTables(
                xt=xt,
                weights=np.broadcast_to(dx * w, xt.shape),
                shape=shape,
                dshape=ds / dx,
                dofs=self.cell_dofs(),
                metric=np.sqrt(1.0 + slope * slope),
            )
        return self._cache[n_quad]

    def reduction(self):
        """Drop the two endpoint dofs (zero on the interface boundary)."""
        free = [n for n in range(self.n_dofs) if n not in (0, self.n_vertex - 1)]
        R = sp.csr_matrix(
            (np.ones(len(free)), (free, np.arange(len(free)))),
            shape=(self.n_dofs, len(free)),
        )
        return R

    def profile_values(self, coeffs, st):
        return np.einsum("lq,cl->cq", st.shape, coeffs[st.dofs])

    def profile_derivatives(self, coeffs, st):
        return np.einsum("lq,cl->cq", st.dshape, coeffs[st.dofs])

    def vector_values(self, coeffs, st):
        """Tangent field values (nseg, nq, 2)."""
        tau = stream_frame(self.mesh.chart, st.xt)[..., :, 0]
        return self.profile_values(coeffs, st)[..., None] * tau

    def interpolate_profile(self, f):
        return np.asarray(f(self.node_positions()), dtype=float)


class SurfaceP1Space:
    """Continuous piecewise-linear scalars on the interface lattice."""

    kind = FeKind.SURFACE_L2
    degree = 1
    default_order = 6

    def __init__(self, mesh):
        self.mesh = mesh
        self.n_dofs = mesh.n_t + 1
        self._cache = {}

    def cell_dofs(self):
        i = np.arange(self.mesh.n_t)
        return np.column_stack([i, i + 1])

    def tables(self, n_quad=6):
        if n_quad not in self._cache:
            xs = self.mesh.x_nodes
            dx = float(xs[1] - xs[0])
            s, w = gauss_interval(n_quad)
            xt = xs[:-1, None] + dx * s[None, :]
            shape = np.stack([1.0 - s, s])
            ds = np.stack([-np.ones_like(s), np.ones_like(s)])
            slope = self.mesh.chart.dzeta(xt)
            self._cache[n_quad] = SurfaceTables(
                xt=xt,
                weights=np.broadcast_to(dx * w, xt.shape),
                shape=shape,
                dshape=ds / dx,
                dofs=self.cell_dofs(),
                metric=np.sqrt(1.0 + slope * slope),
            )
        return self._cache[n_quad]

    def values(self, coeffs, st):
        return np.einsum("lq,cl->cq", st.shape, coeffs[st.dofs])

    def interpolate(self, f):
        return np.asarray(f(self.mesh.x_nodes), dtype=float)


@dataclass
class FeField:
    """Coefficients attached to a space; the package's field currency."""

    space: object
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.n_dofs,):
            raise StructuralError(
                f"coefficient length {self.coeffs.shape} does not match "
                f"{self.space.n_dofs} dofs of {type(self.space).__name__}"
            )

    @property
    def mesh(self):
        return self.space.mesh

    def same_mesh(self, other):
        return self.space.mesh is other.space.mesh
