import numpy as np
import pytest

from conftest import make_mesh
from oracles import edge_trace_p2, oracle_interval_rule
from darcychannel.eps_solver import ProblemCoefficients, sqrtm_spd
from darcychannel.errors import StructuralError
from darcychannel.geometry import interface_normal
from darcychannel.limit_solver import (
    XiField,
    assemble_limit,
    energy_identity_residual_limit,
    infsup_estimate_limit,
    limit_energy_terms,
    limit_mms_rhs,
    mixed_operator_blocks,
    mms_verify_limit,
    reconstruct_xi,
    solve_limit,
)


def smooth_coeffs(alpha=1.0, beta=1.0, q=1.0):
    f2 = lambda x, z: np.stack([np.ones_like(x) + 0.3 * np.sin(np.pi * x), 0.4 * np.cos(np.pi * x)], axis=-1)
    h1 = lambda x, z: 0.3 * np.sin(np.pi * x)
    return ProblemCoefficients.create(q=q, alpha=alpha, beta=beta, f2=f2, h1=h1)


class TestAssembly:
    def test_zero_data_zero_solution(self, curved_chart):
        mesh = make_mesh(curved_chart)
        sol = solve_limit(assemble_limit(ProblemCoefficients.create(alpha=1.0, beta=1.0), mesh))
        for field in (sol.v1, sol.v2, sol.p1, sol.p2):
            assert np.all(field.coeffs == 0.0)
        assert np.all(sol.chi_n == 0.0)

    def test_flat_chart_metric_factors_unity(self, flat_chart):
        mesh = make_mesh(flat_chart)
        system = assemble_limit(smooth_coeffs(), mesh)
        st = system.meta["work"].st
        assert np.all(st.metric == 1.0)
        # coupling term then reduces to the plain pairing of traces
        coupling = system.terms["trace_coupling"].toarray()
        spt = system.meta["work"].sp_tables
        plain = np.zeros_like(coupling)
        edge_dofs, seglen = system.meta["work"].rt.gamma_facets()
        local = -np.einsum("cq,lq->cl", spt.weights, spt.shape)[:, :, None] / seglen[:, None, None]
        for f in range(mesh.n_t):
            for m in range(2):
                plain[f + m, edge_dofs[f]] += local[f, m, 0]
        assert np.max(np.abs(coupling - plain)) < 1e-14

    def test_block_symmetry(self, curved_chart):
        mesh = make_mesh(curved_chart)
        system = assemble_limit(smooth_coeffs(), mesh)
        assert system.asymmetry() < 1e-12

    def test_mu_bar_equals_constant_viscosity(self, curved_chart):
        mesh = make_mesh(curved_chart)
        coeffs = ProblemCoefficients.create(mu=3.7, alpha=1.0, f2=smooth_coeffs().f2)
        sol = solve_limit(assemble_limit(coeffs, mesh))
        assert np.all(sol.mu_bar == 3.7)


class TestSurfaceTermOracle:
    """Independent high-order quadrature of each interface integral."""

    Q = np.array([[2.0, 0.3], [0.3, 1.0]])

    def test_terms_match_independent_quadrature(self, parabola_chart):
        chart = parabola_chart
        mesh = make_mesh(chart, 3, 2, 2)
        coeffs = ProblemCoefficients.create(q=self.Q, alpha=0.7, beta=1.3, mu=2.0)
        system = assemble_limit(coeffs, mesh)
        work = system.meta["work"]
        sv, sp1 = work.sv, work.sp1
        n_sv, n_sp = sv.n_dofs, sp1.n_dofs
        ne1 = work.rt.n_dofs

        s, w = oracle_interval_rule(16)
        dx = mesh.x_nodes[1] - mesh.x_nodes[0]
        sq = sqrtm_spd(self.Q[None, None])[0, 0]
        mu_bar = 2.0

        viscous = np.zeros((n_sv, n_sv))
        slip = np.zeros((n_sv, n_sv))
        sdiv = np.zeros((n_sp, n_sv))
        robin = np.zeros((ne1, ne1))
        coupling = np.zeros((n_sp, ne1))
        tr = edge_trace_p2(s)
        dtr = np.stack([4 * s - 3.0, 4 * s - 1.0, 4.0 - 8.0 * s]) / dx
        p1tr = np.stack([1 - s, s])
        for f in range(mesh.n_t):
            xs = mesh.x_nodes[f] + dx * s
            slope = chart.dzeta(xs)
            curv = chart.d2zeta(xs)
            m = np.sqrt(1 + slope**2)
            kappa = curv / m**2
            tau = np.stack([1 / m, slope / m], axis=-1)
            nrm = np.stack([-slope / m, 1 / m], axis=-1)
            nodes = [f, f + 1, mesh.n_t + 1 + f]
            pnodes = [f, f + 1]
            vec = [tr[l][:, None] * tau for l in range(3)]
            dvec = [dtr[l][:, None] * tau + (tr[l] * kappa)[:, None] * nrm for l in range(3)]
            for l in range(3):
                for k in range(3):
                    viscous[nodes[l], nodes[k]] += mu_bar * dx * np.sum(
                        w * np.einsum("qd,qd->q", dvec[l], dvec[k])
                    )
                    slip[nodes[l], nodes[k]] += 1.3 * dx * np.sum(
                        w * m * np.einsum("qd,de,qe->q", vec[l], sq, vec[k])
                    )
            for mm in range(2):
                for l in range(3):
                    sdiv[pnodes[mm], nodes[l]] += dx * np.sum(w * p1tr[mm] * dvec[l][:, 0])
            edge = mesh.gamma_porous_edge[f]
            left, right = mesh.gamma.vertices[f]
            seg = np.linalg.norm(mesh.vertices[right] - mesh.vertices[left])
            robin[edge, edge] += (0.7 + mu_bar) * dx * np.sum(w * m) / seg**2
            for mm in range(2):
                coupling[pnodes[mm], edge] += -dx * np.sum(w * m**2 * p1tr[mm]) / seg

        pairs = {
            "surface_viscous": viscous,
            "surface_slip": slip,
            "surface_div": sdiv,
            "robin_gamma": robin,
            "trace_coupling": coupling,
        }
        for name, expected in pairs.items():
            got = system.terms[name].toarray()
            # metric terms carry sqrt(1 + x^2): both rules approximate, so
            # tolerance tracks the shared quadrature accuracy
            assert np.max(np.abs(got - expected)) < 1e-9, name

    def test_terms_exact_on_constant_slope(self, linear_chart):
        chart = linear_chart
        mesh = make_mesh(chart, 3, 2, 2)
        coeffs = ProblemCoefficients.create(q=self.Q, alpha=0.7, beta=1.3, mu=2.0)
        system = assemble_limit(coeffs, mesh)
        # with constant slope every surface integrand is polynomial
        s, w = oracle_interval_rule(16)
        dx = mesh.x_nodes[1] - mesh.x_nodes[0]
        sq = sqrtm_spd(self.Q[None, None])[0, 0]
        m = np.sqrt(2.0)
        tau = np.array([1 / m, 1 / m])
        q_tt = tau @ sq @ tau
        tr = edge_trace_p2(s)
        expected = np.zeros((mesh.n_t + 1 + mesh.n_t,) * 2)
        for f in range(mesh.n_t):
            nodes = [f, f + 1, mesh.n_t + 1 + f]
            for l in range(3):
                for k in range(3):
                    expected[nodes[l], nodes[k]] += 1.3 * dx * m * q_tt * np.sum(
                        w * tr[l] * tr[k]
                    )
        assert np.max(np.abs(system.terms["surface_slip"].toarray() - expected)) < 1e-13


class TestSolve:
    def test_deterministic(self, curved_chart):
        mesh = make_mesh(curved_chart)
        a = solve_limit(assemble_limit(smooth_coeffs(), mesh))
        b = solve_limit(assemble_limit(smooth_coeffs(), mesh))
        for fa, fb in ((a.v1, b.v1), (a.v2, b.v2), (a.p1, b.p1), (a.p2, b.p2)):
            assert np.array_equal(fa.coeffs, fb.coeffs)

    def test_linearity_scaling(self, curved_chart):
        mesh = make_mesh(curved_chart)
        base = smooth_coeffs()
        scale = 3.5
        scaled = ProblemCoefficients.create(
            alpha=1.0,
            beta=1.0,
            f2=lambda x, z: scale * base.f2(x, z),
            h1=lambda x, z: scale * base.h1(x, z),
        )
        a = solve_limit(assemble_limit(base, mesh))
        b = solve_limit(assemble_limit(scaled, mesh))
        for fa, fb in ((a.v1, b.v1), (a.v2, b.v2), (a.p1, b.p1), (a.p2, b.p2)):
            denom = max(np.max(np.abs(fb.coeffs)), 1e-30)
            assert np.max(np.abs(scale * fa.coeffs - fb.coeffs)) / denom < 1e-9

    def test_residual_and_conservation_row(self, curved_chart):
        mesh = make_mesh(curved_chart)
        system = assemble_limit(smooth_coeffs(), mesh)
        sol = solve_limit(system)
        assert sol.residual_norm < 1e-10
        v_red = np.linalg.lstsq(
            system.reducer.E.toarray(),
            np.concatenate([sol.v1.coeffs, sol.v2.coeffs]),
            rcond=None,
        )[0]
        res = system.b @ v_red - system.g
        assert np.linalg.norm(res) / max(np.linalg.norm(system.g), 1e-300) < 1e-10

    def test_tangency_is_exact(self, curved_chart):
        mesh = make_mesh(curved_chart)
        sol = solve_limit(assemble_limit(smooth_coeffs(), mesh))
        st = sol.v2.space.tables()
        vals = sol.v2.space.vector_values(sol.v2.coeffs, st)
        nrm = interface_normal(curved_chart, st.xt)
        assert np.max(np.abs(np.einsum("cqd,cqd->cq", vals, nrm))) < 1e-13

    def test_energy_identity(self, curved_chart):
        mesh = make_mesh(curved_chart, 8, 5, 4)
        system = assemble_limit(smooth_coeffs(), mesh)
        sol = solve_limit(system)
        assert energy_identity_residual_limit(system, sol) < 1e-9
        terms = limit_energy_terms(system, sol)
        assert terms["darcy"] >= 0 and terms["interface_viscous"] >= 0

    def test_chi_n_is_negated_interface_flux(self, curved_chart):
        mesh = make_mesh(curved_chart)
        sol = solve_limit(assemble_limit(smooth_coeffs(), mesh))
        assert np.allclose(sol.chi_n, -sol.gamma_flux(), atol=1e-15)


class TestXiReconstruction:
    def test_zero_flux_gives_zero_profile(self, curved_chart):
        xi = XiField(curved_chart, np.linspace(0, 1, 7), np.zeros(6))
        assert np.all(xi(np.array([0.1, 0.6]), np.array([0.3, 0.9])) == 0.0)

    def test_flat_unit_flux_profile(self, flat_chart):
        # flat chart, unit flux: profile is 1 - z, one at the interface,
        # zero on the channel top (both profile readings coincide here)
        xi = XiField(flat_chart, np.linspace(0, 1, 7), np.ones(6))
        x = np.array([0.15, 0.5, 0.85])
        assert np.allclose(xi(x, np.zeros(3)), 1.0)
        assert np.allclose(xi(x, np.ones(3)), 0.0)
        assert np.allclose(xi(x, 0.25 * np.ones(3)), 0.75)

    def test_profile_slope_constant_in_z(self, curved_chart):
        mesh = make_mesh(curved_chart)
        sol = solve_limit(assemble_limit(smooth_coeffs(), mesh))
        xi = reconstruct_xi(sol, curved_chart)
        x = np.full(5, 0.31)
        z = curved_chart.zeta(0.31) + np.linspace(0.1, 0.9, 5)
        vals = xi(x, z)
        slopes = np.diff(vals) / np.diff(z)
        assert np.max(np.abs(slopes - xi.dz(x[:4]))) < 1e-12
        assert np.max(np.abs(xi.dz(x) + xi.trace_gamma(x))) < 1e-15

    def test_boundary_values_on_curved_chart(self, curved_chart):
        mesh = make_mesh(curved_chart)
        sol = solve_limit(assemble_limit(smooth_coeffs(), mesh))
        xi = reconstruct_xi(sol, curved_chart)
        x = np.array([0.2, 0.5, 0.8])
        assert np.max(np.abs(xi(x, curved_chart.zeta(x)) - xi.trace_gamma(x))) < 1e-14
        assert np.max(np.abs(xi(x, curved_chart.zeta(x) + 1.0))) < 1e-14


class TestMixedBlocks:
    def test_requires_limit_system(self, curved_chart):
        from darcychannel.eps_solver import assemble_eps

        mesh = make_mesh(curved_chart)
        eps_system = assemble_eps(smooth_coeffs().with_eps(0.5), mesh)
        with pytest.raises(StructuralError):
            mixed_operator_blocks(eps_system)

    def test_kernel_coercivity_positive(self, curved_chart):
        mesh = make_mesh(curved_chart, 4, 3, 2)
        blocks = mixed_operator_blocks(assemble_limit(smooth_coeffs(), mesh))
        assert blocks.kernel_coercivity_sample(n_samples=25, seed=1) > 0.0

    def test_block_sparsity_of_conservation_rows(self, curved_chart):
        # a surface velocity with zero porous flux hits only the surface
        # divergence rows
        mesh = make_mesh(curved_chart, 4, 3, 2)
        system = assemble_limit(smooth_coeffs(), mesh)
        work = system.meta["work"]
        v_red = np.zeros(system.n_v)
        v_red[work.rt.n_dofs :] = 1.0  # constant-in-interface tangential profile
        out = system.b @ v_red
        p1_rows = out[system.pressure_slices["p1"]]
        assert np.all(p1_rows == 0.0)
        expected = system.terms["surface_div"] @ system.reducer.E[
            work.rt.n_dofs :, work.rt.n_dofs :
        ] @ np.ones(system.n_v - work.rt.n_dofs)
        assert np.allclose(out[system.pressure_slices["p2"]], expected)

    def test_sigma_min_positive(self, curved_chart):
        mesh = make_mesh(curved_chart, 6, 4, 3)
        system = assemble_limit(smooth_coeffs(), mesh)
        assert infsup_estimate_limit(system) > 0.0


class TestLimitMms:
    def test_exactly_representable_state(self, curved_chart):
        mesh = make_mesh(curved_chart, 5, 4, 3)
        coeffs = ProblemCoefficients.create(alpha=0.3, beta=0.8)
        system = assemble_limit(coeffs, mesh)

        class ConstPressure:
            def v1(self, x, z):
                return np.zeros(np.shape(x) + (2,))

            def div_v1(self, x, z):
                return np.zeros(np.shape(x))

            def v2(self, x):
                return np.zeros(np.shape(x) + (2,))

            def dv2_dx(self, x):
                return np.zeros(np.shape(x) + (2,))

            def p1(self, x, z):
                return np.full(np.shape(x), 0.6)

            def p2(self, x):
                return np.full(np.shape(x), -0.2)

        state = ConstPressure()
        f_full, g = limit_mms_rhs(system, state)
        system.f = system.reducer.reduce_vector(f_full)
        system.g = g
        sol = solve_limit(system)
        assert np.max(np.abs(sol.v1.coeffs)) < 1e-9
        assert np.max(np.abs(sol.v2.coeffs)) < 1e-9
        assert np.max(np.abs(sol.p1.coeffs - 0.6)) < 1e-9
        assert np.max(np.abs(sol.p2.coeffs + 0.2)) < 1e-9

    def test_errors_fall_under_refinement(self, curved_chart):
        rep = mms_verify_limit(curved_chart, levels=2, base=(6, 4, 3))
        for name in ("v1", "v2"):
            assert rep.errors[name][1] < rep.errors[name][0]


class TestFlatNormalForcing:
    def test_purely_normal_forcing_gives_zero_reduced_solution(self, flat_chart):
        # on a flat interface the tangent is horizontal, so a purely
        # vertical channel force has no tangential average and (with no
        # porous source) the whole reduced state must vanish
        mesh = make_mesh(flat_chart, 8, 5, 4)
        coeffs = ProblemCoefficients.create(
            alpha=1.0,
            beta=1.0,
            f2=lambda x, z: np.stack([np.zeros_like(x), np.sin(np.pi * x) + 0.5], axis=-1),
        )
        sol = solve_limit(assemble_limit(coeffs, mesh))
        for field in (sol.v1, sol.v2, sol.p1, sol.p2):
            assert np.max(np.abs(field.coeffs)) < 1e-12

    def test_coupled_solution_approaches_zero_limit(self, flat_chart):
        # the same data drives a nonzero exchange flow at finite width
        # (peaking at intermediate widths), but the porous part must decay
        # toward the zero limit along the small-width tail
        from darcychannel.eps_solver import assemble_eps, solve_eps

        mesh = make_mesh(flat_chart, 12, 6, 5)
        coeffs = ProblemCoefficients.create(
            alpha=1.0,
            beta=1.0,
            f2=lambda x, z: np.stack([np.zeros_like(x), np.sin(np.pi * x) + 0.5], axis=-1),
        )
        norms = []
        for eps in (0.25, 0.0625, 0.015625):
            sol = solve_eps(assemble_eps(coeffs.with_eps(eps), mesh))
            rt_t = sol.v1.space.tables()
            vals = sol.v1.space.values(sol.v1.coeffs, rt_t)
            norms.append(float(np.sqrt(np.sum(rt_t.weights * np.sum(vals**2, -1)))))
        assert norms[0] > 0.0
        assert norms[2] < norms[1] < norms[0]
