"""Property suites behind the ``verify`` subcommand and the acceptance
gate: operator-transform oracles, frame isometries, trace/confinement
inequalities, and the coupling operator's scaled singular values."""

from dataclasses import dataclass

import numpy as np

from .discretization.meshing import build_mesh
from .discretization.norms import (
    frame_poincare_check,
    poincare_inequality_check,
    trace_inequality_check,
)
from .discretization.spaces import FeField, P2ScalarChannelSpace, P2VectorChannelSpace
from .eps_solver import ProblemCoefficients, assemble_eps, infsup_estimate
from .geometry import DomainSpec, InterfaceChart, LocalFrame, map_from_reference
from .limit_solver import assemble_limit, infsup_estimate_limit
from .operators import d_epsilon, d_epsilon_values, decompose_frame, recompose_frame


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    detail: str


def default_charts():
    """Flat, linear, and gently curved verification charts."""
    return {
        "flat": InterfaceChart.flat(0.0, 1.0),
        "linear": InterfaceChart(
            0.0,
            1.0,
            lambda x: np.asarray(x, dtype=float),
            lambda x: np.ones_like(np.asarray(x, dtype=float)),
            lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        ),
        "curved": InterfaceChart(
            0.0,
            1.0,
            lambda x: 0.1 * np.sin(2 * np.pi * np.asarray(x, dtype=float)),
            lambda x: 0.2 * np.pi * np.cos(2 * np.pi * np.asarray(x, dtype=float)),
            lambda x: -0.4 * np.pi**2 * np.sin(2 * np.pi * np.asarray(x, dtype=float)),
        ),
    }


class _BiasedChart(InterfaceChart):
    """Test hook: a chart whose reported slope is deliberately wrong."""

    def __init__(self, chart, bias=0.05):
        super().__init__(
            chart.g_lo,
            chart.g_hi,
            chart._zeta,
            lambda x, _d=chart._dzeta, _b=bias: np.asarray(_d(x), dtype=float) + _b,
            chart._d2zeta,
            chart.n_samples,
        )


class _RandomPoly:
    """Random bivariate polynomial field with analytic partials."""

    def __init__(self, rng, degree=3, components=2):
        self.degree = degree
        self.coeffs = rng.uniform(-1.0, 1.0, size=(components, degree + 1, degree + 1))
        for i in range(degree + 1):
            for j in range(degree + 1):
                if i + j > degree:
                    self.coeffs[:, i, j] = 0.0

    def __call__(self, x, z):
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        out = np.zeros(x.shape + (self.coeffs.shape[0],))
        for i in range(self.degree + 1):
            for j in range(self.degree + 1):
                term = (x**i * z**j)[..., None] * self.coeffs[:, i, j]
                out += term
        return out

    def grad_x(self, x, z):
        shifted = _RandomPoly.__new__(_RandomPoly)
        shifted.degree = self.degree
        shifted.coeffs = np.zeros_like(self.coeffs)
        for i in range(1, self.degree + 1):
            shifted.coeffs[:, i - 1, :] = i * self.coeffs[:, i, :]
        return shifted(x, z)

    def grad_z(self, x, z):
        shifted = _RandomPoly.__new__(_RandomPoly)
        shifted.degree = self.degree
        shifted.coeffs = np.zeros_like(self.coeffs)
        for j in range(1, self.degree + 1):
            shifted.coeffs[:, :, j - 1] = j * self.coeffs[:, :, j]
        return shifted(x, z)


def _fd_physical_gradient(w, chart, eps, points, h=1e-5):
    """Central-difference gradient of w composed with the channel map,
    taken on the physical domain; the independent oracle for the
    transformed operators."""
    y = map_from_reference(chart, eps, points)
    out = np.empty(points.shape[:-1] + (2, 2))
    for direction in range(2):
        step = np.zeros(2)
        step[direction] = h
        # the physical field is w after mapping back to the reference domain
        def phys(yy):
            zt = (yy[..., 1] - chart.zeta(yy[..., 0])) / eps + chart.zeta(yy[..., 0])
            return w(yy[..., 0], zt)

        out[..., direction] = (phys(y + step) - phys(y - step)) / (2.0 * h)
    return out


def suite_operators(seed=0, n_fields=20, eps_values=(1.0, 0.5, 0.1), tol=1e-6, chart_bias=0.0):
    """Chain-rule oracle for the transformed gradient plus the exact
    eps = 1 reduction."""
    rng = np.random.default_rng(seed)
    results = []
    charts = default_charts()
    if chart_bias:
        charts = {k: _BiasedChart(c, chart_bias) for k, c in charts.items()}
    worst = 0.0
    for cname, chart in charts.items():
        for eps in eps_values:
            for _ in range(n_fields):
                w = _RandomPoly(rng)
                xt = rng.uniform(chart.g_lo + 0.05, chart.g_hi - 0.05, size=8)
                t = rng.uniform(0.05, 0.95, size=8)
                pts = np.stack([xt, chart.zeta(xt) + t], axis=-1)
                slope = chart.dzeta(xt)
                gx = w.grad_x(xt, pts[..., 1])
                gz = w.grad_z(xt, pts[..., 1])
                transformed = np.empty(pts.shape[:-1] + (2, 2))
                transformed[..., 0] = d_epsilon_values(gx, gz, slope, eps)
                transformed[..., 1] = gz / eps
                fd = _fd_physical_gradient(w, chart, eps, pts)
                worst = max(worst, float(np.max(np.abs(transformed - fd))))
    results.append(
        CheckResult(
            "operators",
            "transformed_gradient_matches_physical_fd",
            worst < tol,
            f"max deviation {worst:.3e} (tol {tol:g})",
        )
    )

    # coefficient-level identity at eps = 1
    chart = default_charts()["curved"]
    mesh = build_mesh(DomainSpec(chart=chart), 6, 4, 3)
    space = P2VectorChannelSpace(mesh)
    w = FeField(space, rng.standard_normal(space.n_dofs))
    deps = d_epsilon(w, chart, 1.0)
    plain = space.gradients(w.coeffs, space.tables())[..., 0]
    exact = bool(np.array_equal(deps, plain))
    results.append(
        CheckResult(
            "operators",
            "unit_eps_reduces_to_plain_tangential_gradient",
            exact,
            "arrays identical" if exact else "coefficient mismatch",
        )
    )
    return results


def suite_isometry(seed=0, n_fields=30, tol_point=1e-12, tol_parseval=1e-10):
    """Frame isometries, decomposition round trips, and the z-derivative
    norm split checked by quadrature on both sides."""
    rng = np.random.default_rng(seed)
    chart = default_charts()["curved"]
    mesh = build_mesh(DomainSpec(chart=chart), 8, 5, 4)
    space = P2VectorChannelSpace(mesh)
    frame = LocalFrame(chart)
    tables = space.tables()
    results = []
    worst = {"roundtrip": 0.0, "pointwise": 0.0, "parseval": 0.0, "pairing": 0.0, "commute": 0.0}
    for _ in range(n_fields):
        w = FeField(space, rng.standard_normal(space.n_dofs))
        u = FeField(space, rng.standard_normal(space.n_dofs))
        dec_w = decompose_frame(w, frame)
        dec_u = decompose_frame(u, frame)
        vals_w = space.values(w.coeffs, tables)
        vals_u = space.values(u.coeffs, tables)
        back = recompose_frame(dec_w)
        worst["roundtrip"] = max(worst["roundtrip"], float(np.max(np.abs(back - vals_w))))
        sq = np.sum(vals_w**2, axis=-1) - (dec_w.w_tau**2 + dec_w.w_n**2)
        worst["pointwise"] = max(worst["pointwise"], float(np.max(np.abs(sq))))
        pair = np.einsum("cqd,cqd->cq", vals_w, vals_u) - (
            dec_w.w_tau * dec_u.w_tau + dec_w.w_n * dec_u.w_n
        )
        worst["pairing"] = max(worst["pairing"], float(np.max(np.abs(pair))))
        grads = space.gradients(w.coeffs, tables)
        lhs = np.sum(tables.weights * np.sum(grads[..., 1] ** 2, axis=-1))
        rhs = np.sum(tables.weights * (dec_w.dz_tau**2 + dec_w.dz_n**2))
        scale = max(abs(lhs), 1.0)
        worst["parseval"] = max(worst["parseval"], abs(lhs - rhs) / scale)
        # z-independence of the frame: central-difference commutation probe
        # (the same frame direction is used above and below the point)
        quot = _z_difference_quotient(space, w.coeffs, mesh)
        umat = frame.matrix(tables.points[..., 0])
        fd_tau = np.einsum("cqd,cqd->cq", quot, umat[..., :, 0])
        worst["commute"] = max(
            worst["commute"], float(np.max(np.abs(fd_tau - dec_w.dz_tau)))
        )
    results.append(
        CheckResult(
            "isometry",
            "decompose_recompose_roundtrip",
            worst["roundtrip"] < tol_point,
            f"max error {worst['roundtrip']:.3e}",
        )
    )
    results.append(
        CheckResult(
            "isometry",
            "pointwise_norm_split",
            worst["pointwise"] < tol_point,
            f"max error {worst['pointwise']:.3e}",
        )
    )
    results.append(
        CheckResult(
            "isometry",
            "pointwise_pairing_split",
            worst["pairing"] < tol_point,
            f"max error {worst['pairing']:.3e}",
        )
    )
    results.append(
        CheckResult(
            "isometry",
            "z_derivative_norm_split",
            worst["parseval"] < tol_parseval,
            f"relative error {worst['parseval']:.3e}",
        )
    )
    results.append(
        CheckResult(
            "isometry",
            "z_derivative_commutes_with_decomposition",
            worst["commute"] < 1e-6,
            f"max FD deviation {worst['commute']:.3e}",
        )
    )
    return results


def _z_difference_quotient(space, coeffs, mesh, h=1e-6):
    """Cell-local central difference of a channel vector field in the
    vertical direction, evaluated at the standard quadrature points.

    The perturbation is applied in reference coordinates, so the
    quotient is exact (up to roundoff) for the piecewise-quadratic
    field."""
    from .discretization.elements import affine_maps, p2_shape, tri_quadrature

    scalar = space.scalar
    order = space.default_order
    pts, _ = tri_quadrature(order)
    _, inv_t, _, _ = affine_maps(mesh.vertices, mesh.tri2)
    # reference displacement representing a physical step h * e_z
    dref = h * inv_t[:, 1, :]  # (nc, 2): row of invJ^T times e_z -> invJ @ e_z
    per_node = coeffs.reshape(-1, 2)[scalar.cell_dofs]  # (nc, 6, 2)
    nc = mesh.tri2.shape[0]
    quot = np.empty((nc, pts.shape[0], 2))
    for c in range(nc):
        up = p2_shape(pts + dref[c])
        dn = p2_shape(pts - dref[c])
        quot[c] = np.einsum("lq,ld->qd", (up - dn) / (2.0 * h), per_node[c])
    return quot


def suite_trace(seed=0, n_fields=200):
    """Trace and confinement inequalities on random discrete fields."""
    rng = np.random.default_rng(seed)
    chart = default_charts()["curved"]
    mesh = build_mesh(DomainSpec(chart=chart), 8, 5, 4)
    scalar = P2ScalarChannelSpace(mesh)
    vector = P2VectorChannelSpace(mesh)
    frame = LocalFrame(chart)
    margins = {"trace": np.inf, "poincare": np.inf, "frame_n": np.inf, "frame_tau": np.inf}
    for _ in range(n_fields):
        w = FeField(scalar, rng.standard_normal(scalar.n_dofs))
        lhs, rhs = trace_inequality_check(w)
        margins["trace"] = min(margins["trace"], rhs - lhs)
        lhs, rhs = poincare_inequality_check(w)
        margins["poincare"] = min(margins["poincare"], rhs - lhs)
        v = FeField(vector, rng.standard_normal(vector.n_dofs))
        pairs = frame_poincare_check(v, frame)
        margins["frame_n"] = min(margins["frame_n"], pairs["normal"][1] - pairs["normal"][0])
        margins["frame_tau"] = min(
            margins["frame_tau"], pairs["tangential"][1] - pairs["tangential"][0]
        )
    out = []
    for name, margin in margins.items():
        out.append(
            CheckResult(
                "trace",
                f"{name}_inequality_holds",
                bool(margin >= 0.0),
                f"smallest margin {margin:.3e} over {n_fields} fields",
            )
        )
    return out


def suite_infsup(eps=0.5, dof_limit=5000, max_variation=0.2, asym_tol=1e-12):
    """Scaled singular-value estimates for both systems on a refinement
    family, plus the symmetry check of the velocity blocks."""
    chart = default_charts()["curved"]
    coeffs = ProblemCoefficients.create(alpha=1.0, beta=1.0, eps=eps)
    results = []
    sigmas_eps, sigmas_lim = [], []
    sizes = [(6, 4, 3), (9, 6, 5), (12, 8, 6)]
    worst_asym = 0.0
    for n_t, n_z, n_1 in sizes:
        mesh = build_mesh(DomainSpec(chart=chart), n_t, n_z, n_1)
        system = assemble_eps(coeffs, mesh)
        total = system.n_v + system.n_p
        if total > dof_limit:
            raise RuntimeError(f"inf-sup mesh too large: {total} dofs")
        sigmas_eps.append(infsup_estimate(system))
        worst_asym = max(worst_asym, system.asymmetry())
        lsystem = assemble_limit(coeffs, mesh)
        sigmas_lim.append(infsup_estimate_limit(lsystem))
        worst_asym = max(worst_asym, lsystem.asymmetry())

    def variation(vals):
        return max(vals) / min(vals) - 1.0

    results.append(
        CheckResult(
            "infsup",
            "coupled_system_sigma_min_positive",
            all(s > 0 for s in sigmas_eps),
            "sigmas " + ", ".join(f"{s:.4f}" for s in sigmas_eps),
        )
    )
    results.append(
        CheckResult(
            "infsup",
            "coupled_system_sigma_min_stable",
            variation(sigmas_eps) < max_variation,
            f"variation {variation(sigmas_eps):.2%}",
        )
    )
    results.append(
        CheckResult(
            "infsup",
            "limit_system_sigma_min_positive",
            all(s > 0 for s in sigmas_lim),
            "sigmas " + ", ".join(f"{s:.4f}" for s in sigmas_lim),
        )
    )
    results.append(
        CheckResult(
            "infsup",
            "limit_system_sigma_min_stable",
            variation(sigmas_lim) < max_variation,
            f"variation {variation(sigmas_lim):.2%}",
        )
    )
    results.append(
        CheckResult(
            "infsup",
            "velocity_blocks_symmetric",
            worst_asym < asym_tol,
            f"max asymmetry {worst_asym:.3e}",
        )
    )
    return results


SUITES = {
    "operators": suite_operators,
    "isometry": suite_isometry,
    "trace": suite_trace,
    "infsup": suite_infsup,
}


def run_suites(names=None, seed=0, chart_bias=0.0):
    """Run the named suites (all by default); returns (results, ok)."""
    names = list(SUITES) if not names else list(names)
    results = []
    for name in names:
        if name not in SUITES:
            raise KeyError(f"unknown suite {name!r}")
        if name == "operators":
            results.extend(suite_operators(seed=seed, chart_bias=chart_bias))
        elif name == "infsup":
            results.extend(suite_infsup())
        else:
            results.extend(SUITES[name](seed=seed))
    return results, all(r.passed for r in results)
