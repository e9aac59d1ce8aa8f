"""Assembly and direct solution of the coupled channel/porous problem.

The fixed-geometry weak form is discretized on the reference domain for
any channel scale ``eps`` in (0, 1]: the scale enters only through
coefficients, so one mesh serves a whole sweep.  Unknowns are the
filtration flux (RT0), the channel velocity (P2 vector), and the two
pressures (P0, continuous P1).  The flux-matching constraint on the
interface is eliminated algebraically: each interface flux dof is slaved
to the least-squares (mean) normal trace of the channel velocity on that
facet.
"""

from dataclasses import dataclass, replace

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
from .discretization.meshing import build_mesh
from .discretization.spaces import (
    FeField,
    P0Space,
    P1ChannelSpace,
    P2VectorChannelSpace,
    RT0Space,
    gamma_trace_values,
)
from .errors import ParameterError, SingularSystemError
from .geometry import stream_frame
from .operators import d_epsilon_values


def sqrtm_spd(q):
    """Principal square root of SPD 2x2 tensors, vectorized."""
    tr = q[..., 0, 0] + q[..., 1, 1]
    det = q[..., 0, 0] * q[..., 1, 1] - q[..., 0, 1] * q[..., 1, 0]
    if np.any(det <= 0.0) or np.any(tr <= 0.0):
        raise ParameterError("permeability-resistance tensor is not positive definite")
    s = np.sqrt(det)
    t = np.sqrt(tr + 2.0 * s)
    out = q.copy()
    out[..., 0, 0] += s
    out[..., 1, 1] += s
    return out / t[..., None, None]


def _as_tensor(q):
    """Normalize a scalar / 2x2 array / callable into a tensor callable."""
    if callable(q):
        return q
    q = np.asarray(q, dtype=float)
    if q.ndim == 0:
        mat = float(q) * np.eye(2)
    elif q.shape == (2, 2):
        mat = q
    else:
        raise ParameterError(f"q must be a scalar or 2x2 tensor, got shape {q.shape}")

    def const(x, z):
        return np.broadcast_to(mat, np.shape(x) + (2, 2))

    return const


def _zero_vector(x, z):
    return np.zeros(np.shape(x) + (2,))


def _zero_scalar(x, z):
    return np.zeros(np.shape(x))


@dataclass(frozen=True)
class ProblemCoefficients:
    """Material data and the channel scale for one solve.

    ``q`` is the (position-dependent) resistance tensor, ``mu`` the
    viscosity, ``alpha`` the fluid entry resistance on the interface,
    ``beta`` the tangential-slip coefficient, ``f2`` the channel body
    force, ``h1`` the porous source.
    """

    q: object
    mu: float
    alpha: float
    beta: float
    f2: object
    h1: object
    eps: float

    @classmethod
    def create(cls, q=1.0, mu=1.0, alpha=0.0, beta=0.0, f2=None, h1=None, eps=1.0):
        if not mu > 0.0:
            raise ParameterError(f"mu must be positive, got {mu}")
        if alpha < 0.0 or beta < 0.0:
            raise ParameterError("alpha and beta must be nonnegative")
        if not 0.0 < eps <= 1.0:
            raise ParameterError(f"eps must lie in (0, 1], got {eps}")
        return cls(
            q=_as_tensor(q),
            mu=float(mu),
            alpha=float(alpha),
            beta=float(beta),
            f2=f2 if f2 is not None else _zero_vector,
            h1=h1 if h1 is not None else _zero_scalar,
            eps=float(eps),
        )

    def with_eps(self, eps):
        if not 0.0 < eps <= 1.0:
            raise ParameterError(f"eps must lie in (0, 1], got {eps}")
        return replace(self, eps=float(eps))


@dataclass
class EpsSolution:
    """Discrete solution of the coupled problem at one channel scale.

    ``flux_mismatch`` is the largest per-facet least-squares residual of
    the interface matching (how far the channel's normal trace is from
    the constant it was fitted to; a discretization quality indicator).
    """

    v1: FeField
    v2: FeField
    p1: FeField
    p2: FeField
    eps: float
    residual_norm: float
    flux_mismatch: float = 0.0

    @property
    def mesh(self):
        return self.v1.space.mesh


def flux_matching_mismatch(sol: EpsSolution):
    """Per-facet least-squares defect of the interface flux matching."""
    ft = sol.v2.space.gamma_tables()
    trace = gamma_trace_values(sol.v2.coeffs, ft)
    v_n = np.einsum("fqd,fd->fq", trace, ft.facet_normal)
    mean = np.sum(ft.ref_weights[None, :] * v_n, axis=1)
    dev = v_n - mean[:, None]
    return np.sqrt(ft.length * np.sum(ft.ref_weights[None, :] * dev**2, axis=1))


@dataclass
class _EpsWork:
    """Spaces and precomputed tables shared by assembly and diagnostics."""

    mesh: object
    chart: object
    rt: RT0Space
    v2: P2VectorChannelSpace
    p0: P0Space
    p1c: P1ChannelSpace
    rt_tables: object
    t2: object
    t1c: object
    gamma_ft: object


def channel_quadrature_order(chart, base=6):
    """Channel quadrature order, inflated for nearly degenerate charts.

    Steep charts (small normal lower bound) make the twisted and metric
    coefficients vary fast across a cell; two extra orders absorb that.
    """
    from .geometry import normal_lower_bound

    return base if normal_lower_bound(chart) >= 0.2 else base + 2


def _workspace(mesh, chart):
    rt = RT0Space(mesh)
    v2 = P2VectorChannelSpace(mesh)
    p0 = P0Space(mesh, region=1)
    p1c = P1ChannelSpace(mesh)
    order = channel_quadrature_order(chart)
    return _EpsWork(
        mesh=mesh,
        chart=chart,
        rt=rt,
        v2=v2,
        p0=p0,
        p1c=p1c,
        rt_tables=rt.tables(),
        t2=v2.tables(order),
        t1c=p1c.tables(order),
        gamma_ft=v2.gamma_tables(order),
    )


def _twisted_basis(work, eps):
    """Per-basis twisted tangential derivative g = dx + (1-1/eps) zeta' dz.

    Returns (nc, 6, nq) scalar factors shared by the two components.
    """
    grads = work.t2.grads  # (nc, 6, nq, 2)
    factor = 1.0 - 1.0 / eps
    if factor == 0.0:
        return grads[..., 0]
    slope = work.chart.dzeta(work.t2.xt)  # (nc, nq)
    return grads[..., 0] + factor * slope[:, None, :] * grads[..., 1]


def _pressure_pairing_factors(work, eps):
    """Per-basis channel conservation factors, one per component.

    Component 0: eps*dx + (eps-1)*zeta'*dz; component 1: dz.  These are
    eps times the transformed divergence contributions.
    """
    grads = work.t2.grads
    comp0 = eps * grads[..., 0]
    factor = eps - 1.0
    if factor != 0.0:
        slope = work.chart.dzeta(work.t2.xt)
        comp0 = comp0 + factor * slope[:, None, :] * grads[..., 1]
    return comp0, grads[..., 1]


def _interleave_pairs(trace, direction):
    """Combine facet trace shapes (3, nq) with a direction (nf, nq, 2)
    into per-dof factors ordered like the vector dof layout, (nf, 6, nq)."""
    nf, nq = direction.shape[:2]
    out = np.empty((nf, 6, nq))
    for l in range(3):
        out[:, 2 * l, :] = trace[l][None, :] * direction[..., 0]
        out[:, 2 * l + 1, :] = trace[l][None, :] * direction[..., 1]
    return out


def _vector_dofs(nodes):
    """(nf, 3) node ids -> (nf, 6) interleaved vector dof ids."""
    nf = nodes.shape[0]
    out = np.empty((nf, 6), dtype=np.int64)
    out[:, 0::2] = 2 * nodes
    out[:, 1::2] = 2 * nodes + 1
    return out


def _gamma_q_tau(work, coeffs):
    """beta-term coefficient on the interface: tau . sqrt(Q) tau."""
    ft = work.gamma_ft
    z = work.chart.zeta(ft.xt)
    qvals = coeffs.q(ft.xt, z)
    tau = stream_frame(work.chart, ft.xt)[..., :, 0]
    return np.einsum("fqi,fqij,fqj->fq", tau, sqrtm_spd(qvals), tau), tau


def _check_q_elliptic(coeffs, points):
    q = coeffs.q(points[..., 0], points[..., 1])
    tr = q[..., 0, 0] + q[..., 1, 1]
    det = q[..., 0, 0] * q[..., 1, 1] - q[..., 0, 1] * q[..., 1, 0]
    lam_min = 0.5 * (tr - np.sqrt(np.maximum(tr**2 - 4.0 * det, 0.0)))
    if np.any(lam_min <= 0.0):
        raise ParameterError(
            f"q is not elliptic: smallest eigenvalue {float(lam_min.min()):.3e} <= 0 "
            "at a quadrature point"
        )


def _coupling_reducer(work):
    """Constraint elimination for the coupled velocity space.

    Full layout: [flux dofs | channel vector dofs].  Wall/top conditions
    reduce the channel block; each interface flux dof is replaced by the
    facet-mean normal trace of the channel velocity (least-squares fit of
    a constant at the facet quadrature points).
    """
    mesh, v2 = work.mesh, work.v2
    ne1 = work.rt.n_dofs
    r2 = v2.reduction()
    n2red = r2.shape[1]
    gamma_edges = mesh.gamma_porous_edge
    slaved = np.zeros(ne1, dtype=bool)
    slaved[gamma_edges] = True
    free_rt = np.where(~slaved)[0]
    n_rt_free = free_rt.size

    rows, cols, vals = [], [], []
    rows += list(free_rt)
    cols += list(range(n_rt_free))
    vals += [1.0] * n_rt_free

    # constraint coefficients: flux dof = integral of (v2 . facet normal)
    ft = work.gamma_ft
    coeff = _interleave_pairs(ft.trace, np.broadcast_to(ft.facet_normal[:, None, :], ft.xt.shape + (2,)))
    coeff = coeff * (ft.length[:, None, None] * ft.ref_weights[None, None, :])
    coeff = coeff.sum(axis=2)  # (nf, 6)
    dofs = _vector_dofs(ft.trace_nodes)
    c_full = sp.coo_matrix(
        (coeff.ravel(), (np.repeat(np.arange(len(mesh.gamma)), 6), dofs.ravel())),
        shape=(len(mesh.gamma), v2.n_dofs),
    ).tocsr()
    c_red = (c_full @ r2).tocoo()
    rows += list(gamma_edges[c_red.row])
    cols += list(n_rt_free + c_red.col)
    vals += list(c_red.data)

    r2_coo = r2.tocoo()
    rows += list(ne1 + r2_coo.row)
    cols += list(n_rt_free + r2_coo.col)
    vals += list(r2_coo.data)

    n_full = ne1 + v2.n_dofs
    n_red = n_rt_free + n2red
    E = sp.csr_matrix((vals, (rows, cols)), shape=(n_full, n_red))
    return Reducer(E=E, n_full=n_full, n_reduced=n_red)


def assemble_eps(coeffs: ProblemCoefficients, mesh, chart=None) -> SparseSystem:
    """Assemble the coupled saddle-point system at the coefficients' eps.

    The blocks are exactly the summands of the fixed-geometry weak form;
    each named term is kept in ``system.terms`` (full, unreduced spaces)
    for diagnostics and oracle tests.
    """
    eps = coeffs.eps
    if eps <= 0.0:
        raise ParameterError(f"eps must be positive, got {eps}")
    chart = mesh.chart if chart is None else chart
    work = _workspace(mesh, chart)
    rt_t, t2, t1c, ft = work.rt_tables, work.t2, work.t1c, work.gamma_ft
    ne1, nv2 = work.rt.n_dofs, work.v2.n_dofs
    nc1, nnp = work.p0.n_dofs, work.p1c.n_dofs
    _check_q_elliptic(coeffs, rt_t.points)

    terms = {}

    # -- A block ------------------------------------------------------
    qvals = coeffs.q(rt_t.points[..., 0], rt_t.points[..., 1])
    local = np.einsum("cq,clqi,cqij,ckqj->clk", rt_t.weights, rt_t.basis, qvals, rt_t.basis)
    terms["darcy_mass"] = scatter(local, rt_t.dofs, rt_t.dofs, (ne1, ne1))

    g = _twisted_basis(work, eps)  # (nc, 6, nq)
    local = (eps**2 * coeffs.mu) * np.einsum("cq,clq,ckq->clk", t2.weights, g, g)
    terms["viscous_twisted"] = _embed_components(local, t2.dofs, nv2)

    dz = t2.grads[..., 1]
    local = coeffs.mu * np.einsum("cq,clq,ckq->clk", t2.weights, dz, dz)
    terms["viscous_dz"] = _embed_components(local, t2.dofs, nv2)

    # interface entry-resistance on flux traces (constant per facet)
    edge_dofs, seglen = work.rt.gamma_facets()
    surf = ft.dx * np.einsum("q,fq->f", ft.ref_weights, ft.metric)
    alpha_local = (coeffs.alpha * surf / seglen**2)[:, None, None]
    terms["alpha_gamma"] = scatter(
        alpha_local, edge_dofs[:, None], edge_dofs[:, None], (ne1, ne1)
    )

    # interface slip term on tangential channel traces
    q_tau, tau = _gamma_q_tau(work, coeffs)
    tfac = _interleave_pairs(ft.trace, tau)  # (nf, 6, nq)
    wq = ft.dx * ft.ref_weights[None, :] * ft.metric * q_tau
    local = (eps**2 * coeffs.beta) * np.einsum("fq,flq,fkq->flk", wq, tfac, tfac)
    vdofs = _vector_dofs(ft.trace_nodes)
    terms["beta_gamma"] = scatter(local, vdofs, vdofs, (nv2, nv2))

    a_full = sp.bmat(
        [
            [terms["darcy_mass"] + terms["alpha_gamma"], None],
            [None, terms["viscous_twisted"] + terms["viscous_dz"] + terms["beta_gamma"]],
        ],
        format="csr",
    )

    # -- B block (conservation pairing) --------------------------------
    areas = work.p0.cell_areas()
    local = (areas[:, None] * rt_t.div)[:, None, :]
    terms["div_porous"] = scatter(
        local, np.arange(nc1, dtype=np.int64)[:, None], rt_t.dofs, (nc1, ne1)
    )

    comp0, comp1 = _pressure_pairing_factors(work, eps)
    blocks = []
    for comp, fac in ((0, comp0), (1, comp1)):
        local = np.einsum("cq,lq,ckq->clk", t1c.weights, t1c.basis, fac)
        blocks.append(
            scatter(local, t1c.dofs, 2 * t2.dofs + comp, (nnp, nv2))
        )
    terms["div_channel"] = blocks[0] + blocks[1]

    b_full = sp.bmat(
        [[terms["div_porous"], None], [None, terms["div_channel"]]], format="csr"
    )

    # -- right-hand side ------------------------------------------------
    fvals = coeffs.f2(t2.points[..., 0], t2.points[..., 1])
    f_v2 = np.zeros(nv2)
    for comp in range(2):
        local = eps * np.einsum("cq,lq->cl", t2.weights * fvals[..., comp], t2.basis)
        f_v2 += scatter_vector(local, 2 * t2.dofs + comp, nv2)
    f_full = np.concatenate([np.zeros(ne1), f_v2])

    hvals = coeffs.h1(rt_t.points[..., 0], rt_t.points[..., 1])
    g_p = np.concatenate(
        [np.einsum("cq,cq->c", rt_t.weights, hvals), np.zeros(nnp)]
    )

    reducer = _coupling_reducer(work)
    system = SparseSystem(
        a=reducer.reduce_matrix(a_full),
        b=(b_full @ reducer.E).tocsr(),
        c=sp.csr_matrix((nc1 + nnp, nc1 + nnp)),
        f=reducer.reduce_vector(f_full),
        g=g_p,
        reducer=reducer,
        velocity_slices={"v1": slice(0, ne1), "v2": slice(ne1, ne1 + nv2)},
        pressure_slices={"p1": slice(0, nc1), "p2": slice(nc1, nc1 + nnp)},
        meta={"eps": eps, "work": work, "coeffs": coeffs, "kind": "eps"},
        terms=terms,
    )
    return system


def _embed_components(local_scalar, scalar_dofs, n_dofs):
    """Scatter a scalar-block local matrix identically into both vector
    components (dof layout 2*node + component)."""
    out = None
    for comp in range(2):
        dofs = 2 * scalar_dofs + comp
        m = scatter(local_scalar, dofs, dofs, (n_dofs, n_dofs))
        out = m if out is None else out + m
    return out


def split_solution(system, v_reduced, p):
    """Expand a reduced solve into per-unknown fields."""
    work = system.meta["work"]
    v_full = system.reducer.expand(v_reduced)
    sl_v, sl_p = system.velocity_slices, system.pressure_slices
    return (
        FeField(work.rt, v_full[sl_v["v1"]]),
        FeField(work.v2, v_full[sl_v["v2"]]),
        FeField(work.p0, p[sl_p["p1"]]),
        FeField(work.p1c, p[sl_p["p2"]]),
    )


def solve_eps(system: SparseSystem) -> EpsSolution:
    """Direct sparse factorization solve of an assembled system.

    Falls back to a zero-mean pin on the channel pressure if the
    factorization reports a pressure nullspace, and records the pin.
    """
    eps = system.meta["eps"]
    try:
        v_red, p, residual = solve_saddle(system, eps=eps)
    except SingularSystemError:
        from .discretization.assembly import solve_with_pressure_pin

        work = system.meta["work"]
        t1c = work.t1c
        lumped = scatter_vector(
            np.einsum("cq,lq->cl", t1c.weights, t1c.basis), t1c.dofs, work.p1c.n_dofs
        )
        weights = np.zeros(system.n_p)
        weights[system.pressure_slices["p2"]] = lumped
        v_red, p, residual = solve_with_pressure_pin(system, weights, eps=eps)
        system.meta["p2_pinned"] = True
    v1, v2, p1, p2 = split_solution(system, v_red, p)
    sol = EpsSolution(v1=v1, v2=v2, p1=p1, p2=p2, eps=eps, residual_norm=residual)
    sol.flux_mismatch = float(np.max(flux_matching_mismatch(sol)))
    return sol


def velocity_gram(system):
    """Natural velocity-space norm matrix on the reduced dofs.

    Flux block: L2 + divergence seminorm; channel block: full H1.
    """
    work = system.meta["work"]
    rt_t, t2 = work.rt_tables, work.t2
    ne1, nv2 = work.rt.n_dofs, work.v2.n_dofs
    local = np.einsum("cq,clqi,ckqi->clk", rt_t.weights, rt_t.basis, rt_t.basis)
    areas = work.p0.cell_areas()
    local += (areas[:, None, None]) * rt_t.div[:, :, None] * rt_t.div[:, None, :]
    s_rt = scatter(local, rt_t.dofs, rt_t.dofs, (ne1, ne1))
    local = np.einsum("cq,lq,kq->clk", t2.weights, t2.basis, t2.basis)
    local += np.einsum("cq,clqi,ckqi->clk", t2.weights, t2.grads, t2.grads)
    s_v2 = _embed_components(local, t2.dofs, nv2)
    s_full = sp.bmat([[s_rt, None], [None, s_v2]], format="csr")
    return system.reducer.reduce_matrix(s_full)


def pressure_gram(system):
    work = system.meta["work"]
    t1c = work.t1c
    nc1, nnp = work.p0.n_dofs, work.p1c.n_dofs
    m_p0 = sp.diags(work.p0.cell_areas())
    local = np.einsum("cq,lq,kq->clk", t1c.weights, t1c.basis, t1c.basis)
    m_p1 = scatter(local, t1c.dofs, t1c.dofs, (nnp, nnp))
    return sp.bmat([[m_p0, None], [None, m_p1]], format="csr")


def infsup_estimate(system: SparseSystem) -> float:
    """Smallest singular value of the norm-scaled conservation pairing."""
    return scaled_min_singular_value(system.b, velocity_gram(system), pressure_gram(system))


def energy_identity_residual(system: SparseSystem, sol: EpsSolution) -> float:
    """Relative defect of the diagonal energy identity.

    The bilinear energy of the solution, recomputed term by term from
    the fields by quadrature, must equal the load functional value.
    """
    work = system.meta["work"]
    coeffs = system.meta["coeffs"]
    eps = sol.eps
    chart = work.chart
    rt_t, t2, ft = work.rt_tables, work.t2, work.gamma_ft

    v1_vals = sol.v1.space.values(sol.v1.coeffs, rt_t)
    qvals = coeffs.q(rt_t.points[..., 0], rt_t.points[..., 1])
    energy = float(np.sum(rt_t.weights * np.einsum("cqi,cqij,cqj->cq", v1_vals, qvals, v1_vals)))

    grads = sol.v2.space.gradients(sol.v2.coeffs, t2)
    slope = chart.dzeta(t2.xt)
    deps = d_epsilon_values(grads[..., 0], grads[..., 1], slope, eps)
    energy += eps**2 * coeffs.mu * float(np.sum(t2.weights * np.sum(deps**2, axis=-1)))
    energy += coeffs.mu * float(np.sum(t2.weights * np.sum(grads[..., 1] ** 2, axis=-1)))

    edge_dofs, seglen = work.rt.gamma_facets()
    traces = sol.v1.coeffs[edge_dofs] / seglen
    surf = ft.dx * np.einsum("q,fq->f", ft.ref_weights, ft.metric)
    energy += coeffs.alpha * float(np.sum(surf * traces**2))

    q_tau, tau = _gamma_q_tau(work, coeffs)
    tr = gamma_trace_values(sol.v2.coeffs, ft)
    v_tau = np.einsum("fqd,fqd->fq", tr, tau)
    wq = ft.dx * ft.ref_weights[None, :] * ft.metric * q_tau
    energy += eps**2 * coeffs.beta * float(np.sum(wq * v_tau**2))

    v2_vals = sol.v2.space.values(sol.v2.coeffs, t2)
    fvals = coeffs.f2(t2.points[..., 0], t2.points[..., 1])
    load = eps * float(np.sum(t2.weights * np.einsum("cqd,cqd->cq", fvals, v2_vals)))
    hvals = coeffs.h1(rt_t.points[..., 0], rt_t.points[..., 1])
    p1_cell = sol.p1.coeffs
    load += float(np.sum(np.einsum("cq,cq->c", rt_t.weights, hvals) * p1_cell))

    scale = max(abs(load), abs(energy), 1e-300)
    return abs(energy - load) / scale


# -- manufactured-solution verification --------------------------------


def mms_rhs(system, fields):
    """Load functionals produced by a manufactured state.

    Evaluates the weak form on the exact fields at the assembly
    quadrature points (sharing the basis-side factor arrays with the
    assembled operator), so the discrete solution converges to the
    manufactured one at the element rate.  Returns (f_full, g).
    """
    work = system.meta["work"]
    coeffs = system.meta["coeffs"]
    eps = system.meta["eps"]
    chart = work.chart
    rt_t, t2, t1c, ft = work.rt_tables, work.t2, work.t1c, work.gamma_ft
    ne1, nv2 = work.rt.n_dofs, work.v2.n_dofs
    nc1, nnp = work.p0.n_dofs, work.p1c.n_dofs

    x1, z1 = rt_t.points[..., 0], rt_t.points[..., 1]
    x2, z2 = t2.points[..., 0], t2.points[..., 1]

    # flux rows: resistance term, porous pressure term, interface term
    qvals = coeffs.q(x1, z1)
    qv = np.einsum("cqij,cqj->cqi", qvals, fields.v1(x1, z1))
    local = np.einsum("cq,clqi,cqi->cl", rt_t.weights, rt_t.basis, qv)
    p1_cell = np.einsum("cq,cq->c", rt_t.weights, fields.p1(x1, z1))
    local -= rt_t.div * p1_cell[:, None]
    f_rt = scatter_vector(local, rt_t.dofs, ne1)

    edge_dofs, seglen = work.rt.gamma_facets()
    zg = chart.zeta(ft.xt)
    v1_gamma = fields.v1(ft.xt, zg)
    flux = np.einsum("fqd,fd->fq", v1_gamma, ft.facet_normal)
    wq_m = ft.dx * ft.ref_weights[None, :] * ft.metric
    f_rt[edge_dofs] += coeffs.alpha * np.sum(wq_m * flux, axis=1) / seglen

    # channel rows: viscous terms, slip term, channel pressure term
    slope = chart.dzeta(x2)
    deps = d_epsilon_values(fields.dv2_dx(x2, z2), fields.dv2_dz(x2, z2), slope, eps)
    dvz = fields.dv2_dz(x2, z2)
    g = _twisted_basis(work, eps)
    comp0, comp1 = _pressure_pairing_factors(work, eps)
    p2_vals = fields.p2(x2, z2)
    f_v2 = np.zeros(nv2)
    for comp, fac in ((0, comp0), (1, comp1)):
        local = (eps**2 * coeffs.mu) * np.einsum(
            "cq,clq->cl", t2.weights * deps[..., comp], g
        )
        local += coeffs.mu * np.einsum(
            "cq,clq->cl", t2.weights * dvz[..., comp], t2.grads[..., 1]
        )
        local -= np.einsum("cq,clq->cl", t2.weights * p2_vals, fac)
        f_v2 += scatter_vector(local, 2 * t2.dofs + comp, nv2)

    q_tau, tau = _gamma_q_tau(work, coeffs)
    v2_gamma = fields.v2(ft.xt, zg)
    v_tau = np.einsum("fqd,fqd->fq", v2_gamma, tau)
    tfac = _interleave_pairs(ft.trace, tau)
    local = (eps**2 * coeffs.beta) * np.einsum("fq,flq->fl", wq_m * q_tau * v_tau, tfac)
    f_v2 += scatter_vector(local, _vector_dofs(ft.trace_nodes), nv2)

    f_full = np.concatenate([f_rt, f_v2])

    # conservation rows
    g_p0 = np.einsum("cq,cq->c", rt_t.weights, fields.div_v1(x1, z1))
    tdiv = fields.twisted_div_v2(x2, z2, eps)
    local = np.einsum("cq,lq->cl", t1c.weights * tdiv, t1c.basis)
    g_p1 = scatter_vector(local, t1c.dofs, nnp)
    return f_full, np.concatenate([g_p0, g_p1])


def mms_errors(sol: EpsSolution, fields):
    """L2 errors of a discrete solution against the manufactured state."""
    rt_t = sol.v1.space.tables()
    t2 = sol.v2.space.tables()
    t1 = sol.p2.space.tables()
    x1, z1 = rt_t.points[..., 0], rt_t.points[..., 1]
    x2, z2 = t2.points[..., 0], t2.points[..., 1]
    dv1 = sol.v1.space.values(sol.v1.coeffs, rt_t) - fields.v1(x1, z1)
    dv2 = sol.v2.space.values(sol.v2.coeffs, t2) - fields.v2(x2, z2)
    dp1 = sol.p1.coeffs[:, None] - fields.p1(x1, z1)
    dp2 = sol.p2.space.values(sol.p2.coeffs, t1) - fields.p2(
        t1.points[..., 0], t1.points[..., 1]
    )
    return {
        "v1": float(np.sqrt(np.sum(rt_t.weights * np.sum(dv1**2, axis=-1)))),
        "v2": float(np.sqrt(np.sum(t2.weights * np.sum(dv2**2, axis=-1)))),
        "p1": float(np.sqrt(np.sum(rt_t.weights * dp1**2))),
        "p2": float(np.sqrt(np.sum(t1.weights * dp2**2))),
    }


def mms_reference_norms(mesh, fields):
    """L2 magnitudes of the manufactured fields (for relative errors)."""
    rt = RT0Space(mesh)
    v2 = P2VectorChannelSpace(mesh)
    rt_t, t2 = rt.tables(), v2.tables()
    x1, z1 = rt_t.points[..., 0], rt_t.points[..., 1]
    x2, z2 = t2.points[..., 0], t2.points[..., 1]
    return {
        "v1": float(np.sqrt(np.sum(rt_t.weights * np.sum(fields.v1(x1, z1) ** 2, -1)))),
        "v2": float(np.sqrt(np.sum(t2.weights * np.sum(fields.v2(x2, z2) ** 2, -1)))),
        "p1": float(np.sqrt(np.sum(rt_t.weights * fields.p1(x1, z1) ** 2))),
        "p2": float(np.sqrt(np.sum(t2.weights * fields.p2(x2, z2) ** 2))),
    }


@dataclass
class MmsReport:
    """Refinement study of manufactured-solution recovery."""

    eps: float
    h: list
    errors: dict  # field name -> per-level L2 error
    orders: dict  # field name -> fitted log-log slope vs h
    relative: dict  # field name -> per-level relative error

    def format_table(self):
        names = sorted(self.errors)
        lines = ["h        " + "".join(f"{n:>12s}" for n in names)]
        for k, h in enumerate(self.h):
            row = f"{h:<9.4g}" + "".join(f"{self.errors[n][k]:12.3e}" for n in names)
            lines.append(row)
        lines.append(
            "order    " + "".join(f"{self.orders[n]:12.2f}" for n in names)
        )
        return "\n".join(lines)


def mms_verify(chart, eps, levels=3, base=(8, 5, 4), depth=1.0, coeffs=None):
    """Convergence study of the coupled solver on manufactured data."""
    from .asymptotics import fit_slope
    from .geometry import DomainSpec

    if coeffs is None:
        coeffs = ProblemCoefficients.create(alpha=0.5, beta=0.5, eps=eps)
    else:
        coeffs = coeffs.with_eps(eps)
    spec = DomainSpec(chart=chart, omega1_depth=depth, epsilon=eps)
    fields = None
    hs, errs = [], {"v1": [], "v2": [], "p1": [], "p2": []}
    rels = {k: [] for k in errs}
    from .mms import EpsManufactured

    fields = EpsManufactured(chart=chart, depth=depth)
    for level in range(levels):
        scale = 2**level
        mesh = build_mesh(spec, base[0] * scale, base[1] * scale, base[2] * scale)
        system = assemble_eps(coeffs, mesh)
        f_full, g = mms_rhs(system, fields)
        system.f = system.reducer.reduce_vector(f_full)
        system.g = g
        sol = solve_eps(system)
        e = mms_errors(sol, fields)
        ref = mms_reference_norms(mesh, fields)
        hs.append(chart.length / (base[0] * scale))
        for k in errs:
            errs[k].append(e[k])
            rels[k].append(e[k] / ref[k])
    if len(hs) >= 3:
        orders = {k: fit_slope(hs, v) for k, v in errs.items()}
    else:
        orders = {k: None for k in errs}
    return MmsReport(eps=eps, h=hs, errors=errs, orders=orders, relative=rels)
