"""The dimensionally reduced limiting problem on the porous block and
the interface, plus reconstruction of the higher-order channel fields.

Unknowns: the filtration flux (RT0, its interface trace now free), a
tangent-directed quadratic velocity on the interface lattice, and the
two pressures (P0 bulk, continuous P1 on the interface).  Interface
integrals written against the surface measure carry the chart area
factor in quadrature; the terms inherited from unit-height channel
integrals use the plain projected measure.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .discretization.assembly import (
    Reducer,
    SparseSystem,
    scaled_min_singular_value,
    scatter,
    scatter_vector,
    solve_saddle,
)
from .discretization.spaces import (
    FeField,
    P0Space,
    RT0Space,
    SurfaceP1Space,
    SurfaceP2TangentSpace,
)
from .errors import SingularSystemError, SizeError, StructuralError
from .eps_solver import ProblemCoefficients, sqrtm_spd
from .geometry import frame_curvature, interface_normal, stream_frame
from .discretization.elements import gauss_interval


@dataclass
class _LimitWork:
    mesh: object
    chart: object
    rt: RT0Space
    p0: P0Space
    sv: SurfaceP2TangentSpace
    sp1: SurfaceP1Space
    rt_tables: object
    st: object  # surface quadrature tables (P2 grid)
    sp_tables: object  # surface P1 tables


def _limit_workspace(mesh, chart):
    from .eps_solver import channel_quadrature_order

    rt = RT0Space(mesh)
    p0 = P0Space(mesh, region=1)
    sv = SurfaceP2TangentSpace(mesh)
    sp1 = SurfaceP1Space(mesh)
    n_quad = channel_quadrature_order(chart)  # denser rule for steep charts
    return _LimitWork(
        mesh=mesh,
        chart=chart,
        rt=rt,
        p0=p0,
        sv=sv,
        sp1=sp1,
        rt_tables=rt.tables(),
        st=sv.tables(n_quad),
        sp_tables=sp1.tables(n_quad),
    )


def _mu_bar(coeffs):
    """z-average of the viscosity over the unit-height channel.

    With a scalar viscosity the unit height makes the average the
    viscosity itself, exactly.
    """
    return coeffs.mu


def _surface_vector_basis(work):
    """Tangent-profile basis as interface vector fields and gradients.

    Returns (vec (nseg, 3, nq, 2), dvec (nseg, 3, nq, 2)) where dvec is
    the x-derivative of profile * tangent, including frame rotation.
    """
    st = work.st
    chart = work.chart
    frame = stream_frame(chart, st.xt)
    tau, nrm = frame[..., :, 0], frame[..., :, 1]
    kappa = frame_curvature(chart, st.xt)
    shape = st.shape  # (3, nq)
    dshape = st.dshape
    vec = shape[None, :, :, None] * tau[:, None, :, :]
    dvec = (
        dshape[None, :, :, None] * tau[:, None, :, :]
        + (shape[None, :, :] * kappa[:, None, :])[..., None] * nrm[:, None, :, :]
    )
    return vec, dvec


def assemble_limit(coeffs: ProblemCoefficients, mesh, chart=None) -> SparseSystem:
    """Assemble the reduced interface/porous saddle-point system."""
    chart = mesh.chart if chart is None else chart
    work = _limit_workspace(mesh, chart)
    rt_t, st = work.rt_tables, work.st
    ne1 = work.rt.n_dofs
    nsv = work.sv.n_dofs
    nc1 = work.p0.n_dofs
    nsp = work.sp1.n_dofs
    mu_bar = _mu_bar(coeffs)

    terms = {}

    # -- A block -------------------------------------------------------
    qvals = coeffs.q(rt_t.points[..., 0], rt_t.points[..., 1])
    local = np.einsum("cq,clqi,cqij,ckqj->clk", rt_t.weights, rt_t.basis, qvals, rt_t.basis)
    terms["darcy_mass"] = scatter(local, rt_t.dofs, rt_t.dofs, (ne1, ne1))

    edge_dofs, seglen = work.rt.gamma_facets()
    surf = np.sum(st.weights * st.metric, axis=1)  # per-facet surface area
    robin_local = ((coeffs.alpha + mu_bar) * surf / seglen**2)[:, None, None]
    terms["robin_gamma"] = scatter(
        robin_local, edge_dofs[:, None], edge_dofs[:, None], (ne1, ne1)
    )

    vec, dvec = _surface_vector_basis(work)
    local = mu_bar * np.einsum("cq,clqd,ckqd->clk", st.weights, dvec, dvec)
    sdofs = work.sv.cell_dofs()
    terms["surface_viscous"] = scatter(local, sdofs, sdofs, (nsv, nsv))

    zg = chart.zeta(st.xt)
    q_surf = coeffs.q(st.xt, zg)
    sq = sqrtm_spd(q_surf)
    local = coeffs.beta * np.einsum(
        "cq,clqd,cqde,ckqe->clk", st.weights * st.metric, vec, sq, vec
    )
    terms["surface_slip"] = scatter(local, sdofs, sdofs, (nsv, nsv))

    a_full = sp.bmat(
        [
            [terms["darcy_mass"] + terms["robin_gamma"], None],
            [None, terms["surface_viscous"] + terms["surface_slip"]],
        ],
        format="csr",
    )

    # -- B block ---------------------------------------------------------
    areas = work.p0.cell_areas()
    local = (areas[:, None] * rt_t.div)[:, None, :]
    terms["div_porous"] = scatter(
        local, np.arange(nc1, dtype=np.int64)[:, None], rt_t.dofs, (nc1, ne1)
    )

    # surface divergence of the first canonical component of the tangent field
    div_t = dvec[..., 0]  # (nseg, 3, nq)
    p1_shape = work.sp_tables.shape  # (2, nq)
    local = np.einsum("cq,lq,ckq->clk", st.weights, p1_shape, div_t)
    pdofs = work.sp1.cell_dofs()
    terms["surface_div"] = scatter(local, pdofs, sdofs, (nsp, nsv))

    # metric-weighted trace coupling: - int m^2 (w1.n) phi2 dx
    wq = st.weights * st.metric**2
    local = -np.einsum("cq,lq->cl", wq, p1_shape)[:, :, None] / seglen[:, None, None]
    terms["trace_coupling"] = scatter(
        local, pdofs, edge_dofs[:, None], (nsp, ne1)
    )

    b_full = sp.bmat(
        [
            [terms["div_porous"], None],
            [terms["trace_coupling"], terms["surface_div"]],
        ],
        format="csr",
    )

    # -- right-hand side ---------------------------------------------------
    fbar = _forcing_z_average(coeffs, chart, st.xt)  # (nseg, nq, 2)
    local = np.einsum("cq,clqd,cqd->cl", st.weights, vec, fbar)
    f_sv = scatter_vector(local, sdofs, nsv)
    f_full = np.concatenate([np.zeros(ne1), f_sv])

    hvals = coeffs.h1(rt_t.points[..., 0], rt_t.points[..., 1])
    g_vec = np.concatenate(
        [np.einsum("cq,cq->c", rt_t.weights, hvals), np.zeros(nsp)]
    )

    r_sv = work.sv.reduction()
    E = sp.bmat([[sp.eye(ne1, format="csr"), None], [None, r_sv]], format="csr")
    reducer = Reducer(E=E, n_full=ne1 + nsv, n_reduced=ne1 + r_sv.shape[1])

    system = SparseSystem(
        a=reducer.reduce_matrix(a_full),
        b=(b_full @ E).tocsr(),
        c=sp.csr_matrix((nc1 + nsp, nc1 + nsp)),
        f=reducer.reduce_vector(f_full),
        g=g_vec,
        reducer=reducer,
        velocity_slices={"v1": slice(0, ne1), "v2": slice(ne1, ne1 + nsv)},
        pressure_slices={"p1": slice(0, nc1), "p2": slice(nc1, nc1 + nsp)},
        meta={"work": work, "coeffs": coeffs, "kind": "limit", "p2_pinned": False},
        terms=terms,
    )
    return system


def _forcing_z_average(coeffs, chart, xt, n_quad=8):
    """Channel forcing averaged over the unit-height reference channel."""
    s, w = gauss_interval(n_quad)
    base = chart.zeta(xt)
    out = np.zeros(xt.shape + (2,))
    for sq, wq in zip(s, w):
        out += wq * coeffs.f2(xt, base + sq)
    return out


class XiField:
    """Reconstructed channel profile of the limiting normal velocity.

    Linear in z on every vertical line: equals the interface filtration
    flux at the interface and vanishes on the channel top.
    """

    def __init__(self, chart, x_nodes, flux_trace):
        self.chart = chart
        self.x_nodes = np.asarray(x_nodes)
        self.flux_trace = np.asarray(flux_trace)  # per-facet v1 . n

    def facet_of(self, xt):
        dx = self.x_nodes[1] - self.x_nodes[0]
        idx = np.floor((np.asarray(xt) - self.x_nodes[0]) / dx).astype(int)
        return np.clip(idx, 0, len(self.flux_trace) - 1)

    def trace_gamma(self, xt):
        return self.flux_trace[self.facet_of(xt)]

    def __call__(self, xt, z):
        profile = self.chart.zeta(xt) + 1.0 - np.asarray(z, dtype=float)
        return self.trace_gamma(xt) * profile

    def dz(self, xt, z=None):
        return -self.trace_gamma(xt) * np.ones_like(np.asarray(xt, dtype=float))


@dataclass
class LimitSolution:
    """Discrete limiting state plus reconstructed higher-order fields."""

    v1: FeField
    v2: FeField  # tangential profile coefficients on the interface lattice
    p1: FeField
    p2: FeField
    xi: XiField
    chi_n: np.ndarray  # per-facet normal component of the higher-order limit
    mu_bar: np.ndarray  # per-facet averaged viscosity
    residual_norm: float
    coeffs: ProblemCoefficients = None

    @property
    def mesh(self):
        return self.v1.space.mesh

    def gamma_flux(self):
        """Interface filtration trace v1 . n, constant per facet."""
        mesh = self.mesh
        seglen = np.linalg.norm(
            mesh.vertices[mesh.gamma.vertices[:, 1]]
            - mesh.vertices[mesh.gamma.vertices[:, 0]],
            axis=1,
        )
        return self.v1.coeffs[mesh.gamma_porous_edge] / seglen


def solve_limit(system: SparseSystem) -> LimitSolution:
    """Direct solve plus reconstruction of xi, chi.n, and mu-bar.

    Falls back to a zero-mean pin on the interface pressure if the
    factorization reports a pressure nullspace, and records the pin.
    """
    work = system.meta["work"]
    coeffs = system.meta["coeffs"]
    try:
        v_red, p, residual = solve_saddle(system)
    except SingularSystemError:
        from .discretization.assembly import solve_with_pressure_pin

        weights = np.zeros(system.n_p)
        spt = work.sp_tables
        lumped = scatter_vector(
            np.einsum("cq,lq->cl", spt.weights * spt.metric, spt.shape),
            work.sp1.cell_dofs(),
            work.sp1.n_dofs,
        )
        weights[system.pressure_slices["p2"]] = lumped
        v_red, p, residual = solve_with_pressure_pin(system, weights)
        system.meta["p2_pinned"] = True
    v_full = system.reducer.expand(v_red)
    sl_v, sl_p = system.velocity_slices, system.pressure_slices
    v1 = FeField(work.rt, v_full[sl_v["v1"]])
    v2 = FeField(work.sv, v_full[sl_v["v2"]])
    p1 = FeField(work.p0, p[sl_p["p1"]])
    p2 = FeField(work.sp1, p[sl_p["p2"]])
    edge_dofs, seglen = work.rt.gamma_facets()
    flux = v1.coeffs[edge_dofs] / seglen
    xi = XiField(work.chart, work.mesh.x_nodes, flux)
    return LimitSolution(
        v1=v1,
        v2=v2,
        p1=p1,
        p2=p2,
        xi=xi,
        chi_n=-flux,
        mu_bar=np.full(len(flux), _mu_bar(coeffs)),
        residual_norm=residual,
        coeffs=coeffs,
    )


def reconstruct_xi(limit: LimitSolution, chart) -> XiField:
    """Channel profile of the limiting normal velocity (linear in z).

    The profile is (zeta(x) + 1 - z) times the interface filtration
    trace, which meets both boundary conditions on every vertical line.
    """
    return XiField(chart, limit.mesh.x_nodes, limit.gamma_flux())


@dataclass
class MixedBlocks:
    """Velocity operator and conservation pairing of the reduced system."""

    a: sp.csr_matrix
    b: sp.csr_matrix

    def kernel_coercivity_sample(self, n_samples=20, seed=0, dof_limit=5000):
        """Smallest Rayleigh quotient of A over sampled kernel directions.

        Dense null-space computation; desk-scale sizes only.
        """
        if self.b.shape[0] + self.b.shape[1] > dof_limit:
            raise SizeError("kernel sampling limited to desk-scale systems")
        import scipy.linalg as la

        null = la.null_space(self.b.toarray())
        if null.shape[1] == 0:
            return float("inf")
        rng = np.random.default_rng(seed)
        coeffs = rng.standard_normal((null.shape[1], n_samples))
        vecs = null @ coeffs
        num = np.einsum("ij,ij->j", vecs, self.a @ vecs)
        den = np.einsum("ij,ij->j", vecs, vecs)
        return float(np.min(num / den))

    def min_singular_value(self, gram_v, gram_p):
        return scaled_min_singular_value(self.b, gram_v, gram_p)


def mixed_operator_blocks(system: SparseSystem) -> MixedBlocks:
    """Expose the reduced velocity operator and conservation pairing."""
    if system.meta.get("kind") != "limit":
        raise StructuralError("mixed_operator_blocks expects a limit system")
    return MixedBlocks(a=system.a, b=system.b)


def limit_velocity_gram(system):
    """Natural norm of the limit velocity space on reduced dofs.

    Flux block: L2 + divergence seminorm + interface-trace L2 (the
    trace-augmented flux norm of the reduced setting); interface block:
    full H1 of the tangent field.
    """
    work = system.meta["work"]
    rt_t, st = work.rt_tables, work.st
    ne1, nsv = work.rt.n_dofs, work.sv.n_dofs
    local = np.einsum("cq,clqi,ckqi->clk", rt_t.weights, rt_t.basis, rt_t.basis)
    areas = work.p0.cell_areas()
    local += areas[:, None, None] * rt_t.div[:, :, None] * rt_t.div[:, None, :]
    s_rt = scatter(local, rt_t.dofs, rt_t.dofs, (ne1, ne1))
    edge_dofs, seglen = work.rt.gamma_facets()
    surf = np.sum(st.weights * st.metric, axis=1)
    s_rt += scatter(
        (surf / seglen**2)[:, None, None],
        edge_dofs[:, None],
        edge_dofs[:, None],
        (ne1, ne1),
    )
    vec, dvec = _surface_vector_basis(work)
    sdofs = work.sv.cell_dofs()
    local = np.einsum("cq,clqd,ckqd->clk", st.weights, vec, vec)
    local += np.einsum("cq,clqd,ckqd->clk", st.weights, dvec, dvec)
    s_sv = scatter(local, sdofs, sdofs, (nsv, nsv))
    s_full = sp.bmat([[s_rt, None], [None, s_sv]], format="csr")
    return system.reducer.reduce_matrix(s_full)


def limit_pressure_gram(system):
    work = system.meta["work"]
    nc1, nsp = work.p0.n_dofs, work.sp1.n_dofs
    m_p0 = sp.diags(work.p0.cell_areas())
    spt = work.sp_tables
    shape = spt.shape
    local = np.einsum("cq,lq,kq->clk", spt.weights * spt.metric, shape, shape)
    m_sp = scatter(local, work.sp1.cell_dofs(), work.sp1.cell_dofs(), (nsp, nsp))
    return sp.bmat([[m_p0, None], [None, m_sp]], format="csr")


def infsup_estimate_limit(system: SparseSystem) -> float:
    return scaled_min_singular_value(
        system.b, limit_velocity_gram(system), limit_pressure_gram(system)
    )


def limit_energy_terms(system: SparseSystem, sol: LimitSolution) -> dict:
    """Named quadrature values of the reduced problem's energy terms."""
    work = system.meta["work"]
    coeffs = system.meta["coeffs"]
    rt_t, st = work.rt_tables, work.st
    mu_bar = _mu_bar(coeffs)

    v1_vals = sol.v1.space.values(sol.v1.coeffs, rt_t)
    qvals = coeffs.q(rt_t.points[..., 0], rt_t.points[..., 1])
    darcy = float(
        np.sum(rt_t.weights * np.einsum("cqi,cqij,cqj->cq", v1_vals, qvals, v1_vals))
    )
    flux = sol.gamma_flux()
    surf = np.sum(st.weights * st.metric, axis=1)
    robin = (coeffs.alpha + mu_bar) * float(np.sum(surf * flux**2))

    vec, dvec = _surface_vector_basis(work)
    coeff = sol.v2.coeffs[work.sv.cell_dofs()]
    dv = np.einsum("cl,clqd->cqd", coeff, dvec)
    viscous = mu_bar * float(np.sum(st.weights * np.sum(dv**2, axis=-1)))
    v = np.einsum("cl,clqd->cqd", coeff, vec)
    zg = work.chart.zeta(st.xt)
    sq = sqrtm_spd(coeffs.q(st.xt, zg))
    slip = coeffs.beta * float(
        np.sum(st.weights * st.metric * np.einsum("cqd,cqde,cqe->cq", v, sq, v))
    )

    fbar = _forcing_z_average(coeffs, work.chart, st.xt)
    load = float(np.sum(st.weights * np.einsum("cqd,cqd->cq", fbar, v)))
    hvals = coeffs.h1(rt_t.points[..., 0], rt_t.points[..., 1])
    load += float(np.sum(np.einsum("cq,cq->c", rt_t.weights, hvals) * sol.p1.coeffs))
    return {
        "darcy": darcy,
        "interface_robin": robin,
        "interface_viscous": viscous,
        "interface_slip": slip,
        "load": load,
    }


def energy_identity_residual_limit(system: SparseSystem, sol: LimitSolution) -> float:
    """Relative defect of the reduced problem's diagonal energy identity."""
    terms = limit_energy_terms(system, sol)
    energy = terms["darcy"] + terms["interface_robin"] + terms["interface_viscous"] + terms["interface_slip"]
    load = terms["load"]
    scale = max(abs(load), abs(energy), 1e-300)
    return abs(energy - load) / scale


# -- manufactured-solution verification ---------------------------------


def limit_mms_rhs(system, fields):
    """Load functionals of a manufactured reduced state."""
    work = system.meta["work"]
    coeffs = system.meta["coeffs"]
    chart = work.chart
    rt_t, st = work.rt_tables, work.st
    ne1, nsv = work.rt.n_dofs, work.sv.n_dofs
    nc1, nsp = work.p0.n_dofs, work.sp1.n_dofs
    mu_bar = _mu_bar(coeffs)

    x1, z1 = rt_t.points[..., 0], rt_t.points[..., 1]
    qvals = coeffs.q(x1, z1)
    qv = np.einsum("cqij,cqj->cqi", qvals, fields.v1(x1, z1))
    local = np.einsum("cq,clqi,cqi->cl", rt_t.weights, rt_t.basis, qv)
    p1_cell = np.einsum("cq,cq->c", rt_t.weights, fields.p1(x1, z1))
    local -= rt_t.div * p1_cell[:, None]
    f_rt = scatter_vector(local, rt_t.dofs, ne1)

    edge_dofs, seglen = work.rt.gamma_facets()
    zg = chart.zeta(st.xt)
    nrm = interface_normal(chart, st.xt)
    v1_n = np.einsum("fqd,fqd->fq", fields.v1(st.xt, zg), nrm)
    wsurf = st.weights * st.metric
    f_rt[edge_dofs] += (coeffs.alpha + mu_bar) * np.sum(wsurf * v1_n, axis=1) / seglen
    # metric-weighted pressure coupling (from -b(w, p))
    p2_vals = fields.p2(st.xt)
    f_rt[edge_dofs] += (
        np.sum(st.weights * st.metric**2 * p2_vals, axis=1) / seglen
    )

    vec, dvec = _surface_vector_basis(work)
    dv_exact = fields.dv2_dx(st.xt)
    local = mu_bar * np.einsum("cq,clqd,cqd->cl", st.weights, dvec, dv_exact)
    sq = sqrtm_spd(coeffs.q(st.xt, zg))
    v_exact = fields.v2(st.xt)
    sqv = np.einsum("cqde,cqe->cqd", sq, v_exact)
    local += coeffs.beta * np.einsum("cq,clqd,cqd->cl", wsurf, vec, sqv)
    local -= np.einsum("cq,clq->cl", st.weights * p2_vals, dvec[..., 0])
    f_sv = scatter_vector(local, work.sv.cell_dofs(), nsv)

    f_full = np.concatenate([f_rt, f_sv])

    g_p0 = np.einsum("cq,cq->c", rt_t.weights, fields.div_v1(x1, z1))
    div_t = dv_exact[..., 0]
    local = np.einsum("cq,lq->cl", st.weights * div_t, work.sp_tables.shape)
    local -= np.einsum(
        "cq,lq->cl", st.weights * st.metric**2 * v1_n, work.sp_tables.shape
    )
    g_sp = scatter_vector(local, work.sp1.cell_dofs(), nsp)
    return f_full, np.concatenate([g_p0, g_sp])


def limit_mms_errors(sol: LimitSolution, fields):
    work = sol.v1.space
    rt_t = work.tables()
    x1, z1 = rt_t.points[..., 0], rt_t.points[..., 1]
    dv1 = work.values(sol.v1.coeffs, rt_t) - fields.v1(x1, z1)
    sv = sol.v2.space
    st = sv.tables()
    dv2 = sv.vector_values(sol.v2.coeffs, st) - fields.v2(st.xt)
    wsurf = st.weights * st.metric
    dp1 = sol.p1.coeffs[:, None] - fields.p1(x1, z1)
    spt = sol.p2.space.tables()
    dp2 = sol.p2.space.values(sol.p2.coeffs, spt) - fields.p2(spt.xt)
    return {
        "v1": float(np.sqrt(np.sum(rt_t.weights * np.sum(dv1**2, axis=-1)))),
        "v2": float(np.sqrt(np.sum(wsurf * np.sum(dv2**2, axis=-1)))),
        "p1": float(np.sqrt(np.sum(rt_t.weights * dp1**2))),
        "p2": float(np.sqrt(np.sum(spt.weights * spt.metric * dp2**2))),
    }


def mms_verify_limit(chart, levels=3, base=(8, 5, 4), depth=1.0, coeffs=None):
    """Convergence study of the reduced solver on manufactured data."""
    from .asymptotics import fit_slope
    from .discretization.meshing import build_mesh
    from .geometry import DomainSpec
    from .mms import LimitManufactured

    if coeffs is None:
        coeffs = ProblemCoefficients.create(alpha=0.5, beta=0.5)
    spec = DomainSpec(chart=chart, omega1_depth=depth)
    fields = LimitManufactured(chart=chart, depth=depth)
    hs, errs = [], {"v1": [], "v2": [], "p1": [], "p2": []}
    rels = {k: [] for k in errs}
    for level in range(levels):
        scale = 2**level
        mesh = build_mesh(spec, base[0] * scale, base[1] * scale, base[2] * scale)
        system = assemble_limit(coeffs, mesh)
        f_full, g = limit_mms_rhs(system, fields)
        system.f = system.reducer.reduce_vector(f_full)
        system.g = g
        sol = solve_limit(system)
        e = limit_mms_errors(sol, fields)
        ref = _limit_mms_reference(system, fields)
        hs.append(chart.length / (base[0] * scale))
        for k in errs:
            errs[k].append(e[k])
            rels[k].append(e[k] / ref[k])
    from .eps_solver import MmsReport

    if len(hs) >= 3:
        orders = {k: fit_slope(hs, v) for k, v in errs.items()}
    else:
        orders = {k: None for k in errs}
    return MmsReport(eps=0.0, h=hs, errors=errs, orders=orders, relative=rels)


def _limit_mms_reference(system, fields):
    work = system.meta["work"]
    rt_t, st, spt = work.rt_tables, work.st, work.sp_tables
    x1, z1 = rt_t.points[..., 0], rt_t.points[..., 1]
    wsurf = st.weights * st.metric
    return {
        "v1": float(np.sqrt(np.sum(rt_t.weights * np.sum(fields.v1(x1, z1) ** 2, -1)))),
        "v2": float(np.sqrt(np.sum(wsurf * np.sum(fields.v2(st.xt) ** 2, -1)))),
        "p1": float(np.sqrt(np.sum(rt_t.weights * fields.p1(x1, z1) ** 2))),
        "p2": float(np.sqrt(np.sum(spt.weights * spt.metric * fields.p2(spt.xt) ** 2))),
    }
