"""Independent physical-domain twin of the coupled solver.

The package discretizes the fixed-geometry form on the unit-height
reference strip, with the channel scale folded into coefficients.  This
test assembles the *physical* problem instead: a mesh of the actual
thin channel (height eps) and the standard weak form (plain gradients,
standard divergence, scale-weighted viscosity), sharing only generic
machinery with the package (quadrature tables, boundary reduction, the
sparse solver).  The two discrete solutions must agree up to
discretization error, and the gap must shrink under refinement; this
checks the change of variables end to end at the solver level.
"""

import dataclasses

import numpy as np
import scipy.sparse as sp

from conftest import make_mesh
from darcychannel.discretization.assembly import SparseSystem, scatter, scatter_vector, solve_saddle
from darcychannel.discretization.spaces import gamma_trace_values
from darcychannel.eps_solver import (
    ProblemCoefficients,
    _coupling_reducer,
    _embed_components,
    _gamma_q_tau,
    _vector_dofs,
    _interleave_pairs,
    _workspace,
    assemble_eps,
    solve_eps,
    split_solution,
)
from darcychannel.geometry import interface_normal


def physical_mesh(reference_mesh, eps):
    """Squeeze the reference channel to its physical height.

    Topology, facet groups, and the porous block are unchanged; channel
    rows move from zeta + k/n_z to zeta + eps*k/n_z.
    """
    mesh = reference_mesh
    verts = mesh.vertices.copy()
    chart = mesh.chart
    for k in range(1, mesh.n_z + 1):
        ids = mesh.v_channel[:, k]
        base = chart.zeta(verts[ids, 0])
        verts[ids, 1] = base + eps * k / mesh.n_z
    return dataclasses.replace(mesh, vertices=verts)


def assemble_physical(coeffs, mesh_phys, chart):
    """Standard-form assembly on the physical thin-channel mesh."""
    eps = coeffs.eps
    work = _workspace(mesh_phys, chart)
    rt_t, t2, t1c, ft = work.rt_tables, work.t2, work.t1c, work.gamma_ft
    ne1, nv2 = work.rt.n_dofs, work.v2.n_dofs
    nc1, nnp = work.p0.n_dofs, work.p1c.n_dofs

    # porous block: identical physics on an identical mesh
    qvals = coeffs.q(rt_t.points[..., 0], rt_t.points[..., 1])
    local = np.einsum("cq,clqi,cqij,ckqj->clk", rt_t.weights, rt_t.basis, qvals, rt_t.basis)
    a_rt = scatter(local, rt_t.dofs, rt_t.dofs, (ne1, ne1))
    edge_dofs, seglen = work.rt.gamma_facets()
    surf = ft.dx * np.einsum("q,fq->f", ft.ref_weights, ft.metric)
    a_rt += scatter(
        (coeffs.alpha * surf / seglen**2)[:, None, None],
        edge_dofs[:, None],
        edge_dofs[:, None],
        (ne1, ne1),
    )

    # channel: scale-weighted viscosity on the full standard gradient
    local = (eps * coeffs.mu) * np.einsum(
        "cq,clqi,ckqi->clk", t2.weights, t2.grads, t2.grads
    )
    a_v2 = _embed_components(local, t2.dofs, nv2)
    q_tau, tau = _gamma_q_tau(work, coeffs)
    tfac = _interleave_pairs(ft.trace, tau)
    wq = ft.dx * ft.ref_weights[None, :] * ft.metric * q_tau
    local = (eps**2 * coeffs.beta) * np.einsum("fq,flq,fkq->flk", wq, tfac, tfac)
    vdofs = _vector_dofs(ft.trace_nodes)
    a_v2 = a_v2 + scatter(local, vdofs, vdofs, (nv2, nv2))

    a_full = sp.bmat([[a_rt, None], [None, a_v2]], format="csr")

    # conservation rows: standard divergence everywhere
    areas = work.p0.cell_areas()
    local = (areas[:, None] * rt_t.div)[:, None, :]
    b_p0 = scatter(local, np.arange(nc1, dtype=np.int64)[:, None], rt_t.dofs, (nc1, ne1))
    blocks = []
    for comp in range(2):
        local = np.einsum("cq,lq,ckq->clk", t1c.weights, t1c.basis, t2.grads[..., comp])
        blocks.append(scatter(local, t1c.dofs, 2 * t2.dofs + comp, (nnp, nv2)))
    b_full = sp.bmat([[b_p0, None], [None, blocks[0] + blocks[1]]], format="csr")

    # loads: reference-domain data pulled onto the physical points
    xq, zq = t2.points[..., 0], t2.points[..., 1]
    z_ref = (zq - chart.zeta(xq)) / eps + chart.zeta(xq)
    fvals = coeffs.f2(xq, z_ref)
    f_v2 = np.zeros(nv2)
    for comp in range(2):
        local = np.einsum("cq,lq->cl", t2.weights * fvals[..., comp], t2.basis)
        f_v2 += scatter_vector(local, 2 * t2.dofs + comp, nv2)
    f_full = np.concatenate([np.zeros(ne1), f_v2])
    hvals = coeffs.h1(rt_t.points[..., 0], rt_t.points[..., 1])
    g_vec = np.concatenate([np.einsum("cq,cq->c", rt_t.weights, hvals), np.zeros(nnp)])

    reducer = _coupling_reducer(work)
    return SparseSystem(
        a=reducer.reduce_matrix(a_full),
        b=(b_full @ reducer.E).tocsr(),
        c=sp.csr_matrix((nc1 + nnp, nc1 + nnp)),
        f=reducer.reduce_vector(f_full),
        g=g_vec,
        reducer=reducer,
        velocity_slices={"v1": slice(0, ne1), "v2": slice(ne1, ne1 + nv2)},
        pressure_slices={"p1": slice(0, nc1), "p2": slice(nc1, nc1 + nnp)},
        meta={"eps": eps, "work": work, "coeffs": coeffs, "kind": "physical-twin"},
    )


def _column_average(p2_field, height):
    grid = p2_field.space.vertex_grid()
    vals = p2_field.coeffs[grid]
    h = height / p2_field.space.mesh.n_z
    return np.sum(0.5 * h * (vals[:, :-1] + vals[:, 1:]), axis=1) / height


def _twin_gaps(chart, resolution, eps, coeffs):
    mesh_ref = make_mesh(chart, *resolution)
    ref = solve_eps(assemble_eps(coeffs, mesh_ref))

    mesh_phys = physical_mesh(mesh_ref, eps)
    system = assemble_physical(coeffs, mesh_phys, chart)
    v_red, p, _ = solve_saddle(system, eps=eps)
    phys = split_solution(system, v_red, p)
    v1p, v2p, p1p, p2p = phys

    rt_t = ref.v1.space.tables()
    ref_v1 = ref.v1.space.values(ref.v1.coeffs, rt_t)
    dv1 = ref.v1.space.values(ref.v1.coeffs - v1p.coeffs, rt_t)
    gap_v1 = np.sqrt(np.sum(rt_t.weights * np.sum(dv1**2, -1))) / np.sqrt(
        np.sum(rt_t.weights * np.sum(ref_v1**2, -1))
    )

    areas = ref.p1.space.cell_areas()
    gap_p1 = np.sqrt(np.sum(areas * (ref.p1.coeffs - p1p.coeffs) ** 2)) / np.sqrt(
        np.sum(areas * ref.p1.coeffs**2)
    )

    # interface traces live on the same facets in both formulations
    ft = ref.v2.space.gamma_tables()
    tr_ref = gamma_trace_values(ref.v2.coeffs, ft)
    ft_p = v2p.space.gamma_tables()
    tr_phys = gamma_trace_values(v2p.coeffs, ft_p)
    nrm = interface_normal(chart, ft.xt)
    wq = ft.dx * ft.ref_weights[None, :] * ft.metric
    n_ref = np.einsum("fqd,fqd->fq", tr_ref, nrm)
    n_phys = np.einsum("fqd,fqd->fq", tr_phys, nrm)
    gap_trace = np.sqrt(np.sum(wq * (n_ref - n_phys) ** 2)) / max(
        np.sqrt(np.sum(wq * n_ref**2)), 1e-300
    )

    avg_ref = _column_average(ref.p2, 1.0)
    avg_phys = _column_average(p2p, eps)
    gap_p2 = np.linalg.norm(avg_ref - avg_phys) / max(np.linalg.norm(avg_ref), 1e-300)

    # channel kinetic content transforms with the thin-domain Jacobian
    t2 = ref.v2.space.tables()
    e_ref = eps * np.sum(t2.weights * np.sum(ref.v2.space.values(ref.v2.coeffs, t2) ** 2, -1))
    t2p = v2p.space.tables()
    e_phys = np.sum(t2p.weights * np.sum(v2p.space.values(v2p.coeffs, t2p) ** 2, -1))
    gap_energy = abs(e_ref - e_phys) / e_ref
    return {
        "v1": gap_v1,
        "p1": gap_p1,
        "trace": gap_trace,
        "p2_avg": gap_p2,
        "volume": gap_energy,
    }


class TestPhysicalTwin:
    def test_formulations_agree_and_converge(self, curved_chart):
        f2 = lambda x, z: np.stack(
            [np.ones_like(x) + 0.3 * np.sin(np.pi * x), 0.4 * np.cos(np.pi * x)], axis=-1
        )
        h1 = lambda x, z: 0.3 * np.sin(np.pi * x)
        coeffs = ProblemCoefficients.create(alpha=1.0, beta=1.0, f2=f2, h1=h1, eps=0.5)
        coarse = _twin_gaps(curved_chart, (8, 5, 4), 0.5, coeffs)
        fine = _twin_gaps(curved_chart, (16, 10, 8), 0.5, coeffs)
        for name, value in fine.items():
            assert value < 0.05, (name, value)
        # the two discretizations converge to the same continuous solution
        for name in ("v1", "trace", "p2_avg", "volume"):
            assert fine[name] < 0.6 * coarse[name], (name, coarse[name], fine[name])

    def test_exact_agreement_at_unit_scale(self, curved_chart):
        # at unit width the map is the identity and the standard form is
        # the twisted form, so the twin must reproduce the package solve
        f2 = lambda x, z: np.stack([np.cos(np.pi * z), 0.2 * x], axis=-1)
        coeffs = ProblemCoefficients.create(alpha=0.7, beta=0.4, f2=f2, eps=1.0)
        mesh = make_mesh(curved_chart, 6, 4, 3)
        ref = solve_eps(assemble_eps(coeffs, mesh))
        system = assemble_physical(coeffs, physical_mesh(mesh, 1.0), curved_chart)
        v_red, p, _ = solve_saddle(system, eps=1.0)
        v1p, v2p, p1p, p2p = split_solution(system, v_red, p)
        assert np.max(np.abs(ref.v1.coeffs - v1p.coeffs)) < 1e-11
        assert np.max(np.abs(ref.v2.coeffs - v2p.coeffs)) < 1e-11
        assert np.max(np.abs(ref.p2.coeffs - p2p.coeffs)) < 1e-11
