"""Channel-scale sweeps and limit-structure diagnostics.

``run_sweep`` solves the coupled problem for a decreasing list of
channel scales on one shared mesh, solves the reduced problem once, and
records the quantities whose trends encode the limiting structure:
z-derivative decay, channel-pressure z-variance, distances to the
reduced solution, and the tangential/normal speed ratio.  Slopes are
reported as observations only; no convergence rate is asserted.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .discretization.norms import norm_bundle
from .discretization.spaces import gamma_trace_values
from .errors import ParameterError, StructuralError
from .eps_solver import assemble_eps, solve_eps
from .geometry import LocalFrame, interface_normal
from .limit_solver import assemble_limit, reconstruct_xi, solve_limit
from .operators import decompose_frame

#: Default per-step slack when asserting monotone trends (fraction).
MONOTONE_SLACK = 0.02

#: Default cap on bundle growth relative to the largest-scale solve.
BUNDLE_CEILING = 50.0


def fit_slope(xs, ys):
    """Least-squares slope of log(ys) against log(xs).

    Requires at least three points, all strictly positive.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1 or xs.size < 3:
        raise ValueError("fit_slope needs two equal-length 1-d arrays, length >= 3")
    if np.any(xs <= 0.0) or np.any(ys <= 0.0):
        raise ValueError("fit_slope needs strictly positive entries")
    lx, ly = np.log(xs), np.log(ys)
    lx = lx - lx.mean()
    return float(np.dot(lx, ly - ly.mean()) / np.dot(lx, lx))


def decreasing_with_slack(values, slack=MONOTONE_SLACK):
    values = np.asarray(values, dtype=float)
    return bool(np.all(values[1:] <= values[:-1] * (1.0 + slack)))


def increasing_with_slack(values, slack=MONOTONE_SLACK):
    values = np.asarray(values, dtype=float)
    return bool(np.all(values[1:] >= values[:-1] * (1.0 - slack)))


def _safe_slope(eps_list, values):
    values = np.asarray(values, dtype=float)
    if values.size < 3 or np.any(values <= 0.0):
        return None
    return fit_slope(eps_list, values)


def _column_z_stats(sol):
    """Per-column z-average and z-variance of the channel pressure.

    The pressure is piecewise linear along every vertical lattice line,
    so segment integrals are exact.
    """
    mesh = sol.mesh
    space = sol.p2.space
    grid = space.vertex_grid()  # (n_t+1, n_z+1) dof ids
    vals = sol.p2.coeffs[grid]  # (n_t+1, n_z+1)
    h = 1.0 / mesh.n_z
    a = vals[:, :-1]
    b = vals[:, 1:]
    mean = np.sum(0.5 * h * (a + b), axis=1)  # unit column height
    sq = np.sum(h * (a * a + a * b + b * b) / 3.0, axis=1)
    variance = np.maximum(sq - mean**2, 0.0)
    return mean, variance


def _gamma_weights(mesh):
    """Surface quadrature weights per (facet, q) including the metric."""
    from .discretization.spaces import P2VectorChannelSpace

    ft = P2VectorChannelSpace(mesh).gamma_tables()
    return ft, ft.dx * ft.ref_weights[None, :] * ft.metric


def sweep_diagnostics(eps_sol, limit_sol, chart):
    """Named scalar diagnostics comparing one coupled solve to the limit."""
    mesh = eps_sol.mesh
    if mesh is not limit_sol.mesh:
        raise StructuralError("coupled and limit solutions live on different meshes")
    t2 = eps_sol.v2.space.tables()
    grads = eps_sol.v2.space.gradients(eps_sol.v2.coeffs, t2)
    dz_norm = np.sqrt(np.sum(t2.weights * np.sum(grads[..., 1] ** 2, axis=-1)))

    mean_p2, variance = _column_z_stats(eps_sol)

    ft, wsurf = _gamma_weights(mesh)
    trace = gamma_trace_values(eps_sol.v2.coeffs, ft)
    nrm = interface_normal(chart, ft.xt)
    v2n = np.einsum("fqd,fqd->fq", trace, nrm)
    flux_lim = limit_sol.gamma_flux()
    flux_gap = np.sqrt(np.sum(wsurf * (v2n - flux_lim[:, None]) ** 2))

    rt_t = eps_sol.v1.space.tables()
    dv1 = eps_sol.v1.space.values(
        eps_sol.v1.coeffs - limit_sol.v1.coeffs, rt_t
    )
    v1_gap = np.sqrt(np.sum(rt_t.weights * np.sum(dv1**2, axis=-1)))
    dp1 = eps_sol.p1.coeffs - limit_sol.p1.coeffs
    areas = eps_sol.p1.space.cell_areas()
    p1_gap = np.sqrt(np.sum(areas * dp1**2))

    p2_gap = _p2_average_gap(eps_sol, limit_sol, ft, wsurf, mean_p2)

    frame = LocalFrame(chart)
    dec = decompose_frame(eps_sol.v2, frame)
    tau_norm = np.sqrt(np.sum(t2.weights * dec.w_tau**2))
    n_norm = np.sqrt(np.sum(t2.weights * dec.w_n**2))
    ratio = float(tau_norm / n_norm) if n_norm > 0.0 else None

    return {
        "dz_eps_v2": float(eps_sol.eps * dz_norm),
        "p2_z_variance": float(np.sqrt(np.mean(variance))),
        "flux_trace_gap": float(flux_gap),
        "v1_gap": float(v1_gap),
        "p1_gap": float(p1_gap),
        "p2_avg_gap": float(p2_gap),
        "velocity_ratio": ratio,
    }


def _p2_average_gap(eps_sol, limit_sol, ft, wsurf, mean_p2):
    """L2 interface distance between the channel pressure's z-average and
    the limit interface pressure (both piecewise linear over the lattice)."""
    nf = ft.xt.shape[0]
    left = np.arange(nf)
    sq = ft.ref_points[None, :]  # facet-local coordinate of each abscissa
    avg_vals = (1.0 - sq) * mean_p2[left][:, None] + sq * mean_p2[left + 1][:, None]
    lim = limit_sol.p2.coeffs
    lim_vals = (1.0 - sq) * lim[left][:, None] + sq * lim[left + 1][:, None]
    return np.sqrt(np.sum(wsurf * (avg_vals - lim_vals) ** 2))


def limit_relation_residuals(eps_sol, limit_sol, chart):
    """Residuals of the higher-order limit relations.

    r1: channel normal velocity against the reconstructed linear
    profile; r2: its z-derivative against the (negated) interface flux;
    r3: z-averaged channel pressure against the interface pressure;
    r4: interface norm of the pointwise normal-stress balance assembled
    from the limit fields alone.
    """
    mesh = eps_sol.mesh
    if mesh is not limit_sol.mesh:
        raise StructuralError("solutions live on different meshes")
    xi = reconstruct_xi(limit_sol, chart)

    t2 = eps_sol.v2.space.tables()
    vals = eps_sol.v2.space.values(eps_sol.v2.coeffs, t2)
    grads = eps_sol.v2.space.gradients(eps_sol.v2.coeffs, t2)
    xq, zq = t2.points[..., 0], t2.points[..., 1]
    nrm = interface_normal(chart, xq)
    v2n = np.einsum("cqd,cqd->cq", vals, nrm)
    r1 = np.sqrt(np.sum(t2.weights * (v2n - xi(xq, zq)) ** 2))
    dzn = np.einsum("cqd,cqd->cq", grads[..., 1], nrm)
    r2 = np.sqrt(np.sum(t2.weights * (dzn + xi.trace_gamma(xq)) ** 2))

    ft, wsurf = _gamma_weights(mesh)
    mean_p2, _ = _column_z_stats(eps_sol)
    r3 = _p2_average_gap(eps_sol, limit_sol, ft, wsurf, mean_p2)

    r4 = normal_stress_residual(limit_sol, chart)
    return {"r1": float(r1), "r2": float(r2), "r3": float(r3), "r4": float(r4)}


def normal_stress_residual(limit_sol, chart, coeffs=None):
    """Interface L2 norm of the limiting normal-stress balance.

    Assembled pointwise from the limit fields: bulk pressure trace,
    entry resistance times the interface flux, interface pressure, the
    normal derivative of the tangential velocity, and the reconstructed
    profile slope.
    """
    mesh = limit_sol.mesh
    work, vec, dvec = _surface_basis_for(limit_sol)
    st = work.st
    sys_coeffs = coeffs if coeffs is not None else limit_sol.coeffs
    alpha, mu = sys_coeffs.alpha, sys_coeffs.mu

    slope = chart.dzeta(st.xt)
    m = np.sqrt(1.0 + slope * slope)
    nrm = interface_normal(chart, st.xt)
    flux = limit_sol.gamma_flux()[:, None]
    p1_trace = limit_sol.p1.coeffs[mesh.gamma_porous_cell][:, None]
    lim = limit_sol.p2.coeffs
    dx = mesh.x_nodes[1] - mesh.x_nodes[0]
    sq = (st.xt - mesh.x_nodes[:-1, None]) / dx  # facet-local coordinate
    left = np.arange(len(mesh.gamma))
    p2_vals = (1.0 - sq) * lim[left][:, None] + sq * lim[left + 1][:, None]

    coeff = limit_sol.v2.coeffs[work.sv.cell_dofs()]
    dv = np.einsum("cl,clqd->cqd", coeff, dvec)  # x-derivative of the tangent field
    grad_n = np.einsum("cqd,cqd->cq", dv, nrm) * nrm[..., 0]  # (grad v2 . n) . n

    residual = (
        (1.0 / m) * (-p1_trace + alpha * flux)
        + (1.0 / m) * p2_vals
        - (mu / m**2) * grad_n
        + mu * flux  # - mu * dz(xi) with dz(xi) = -flux
    )
    wsurf = st.weights * st.metric
    return float(np.sqrt(np.sum(wsurf * residual**2)))


def _surface_basis_for(limit_sol):
    from .limit_solver import _limit_workspace, _surface_vector_basis

    mesh = limit_sol.mesh
    work = _limit_workspace(mesh, mesh.chart)
    vec, dvec = _surface_vector_basis(work)
    return work, vec, dvec


@dataclass
class SweepReport:
    """Machine-readable record of one channel-scale sweep."""

    eps_list: list
    bundles: list  # per-eps norm bundles (dicts of squared norms)
    diagnostics: dict  # name -> list over eps
    relations: dict  # residuals at the smallest eps
    slopes: dict  # diagnostic name -> log-log slope vs eps (or None)
    bundle_bounded: dict  # bundle entry -> bool (ceiling harness)
    bundle_slope_ok: dict  # bundle entry -> bool (no blow-up trend)
    limit_residual: float
    slack: float
    ceiling: float
    config_echo: dict = field(default_factory=dict)
    wall_times: dict = field(default_factory=dict)

    def diagnostic_ok(self):
        """Trend checks for the recorded diagnostics."""
        d = self.diagnostics
        out = {
            "dz_eps_v2_decreasing": decreasing_with_slack(d["dz_eps_v2"], self.slack),
            "p2_z_variance_decreasing": decreasing_with_slack(
                d["p2_z_variance"], self.slack
            ),
            "p2_avg_gap_decreasing": decreasing_with_slack(d["p2_avg_gap"], self.slack),
            "v1_gap_decreasing": decreasing_with_slack(d["v1_gap"], self.slack),
        }
        ratios = d["velocity_ratio"]
        if any(r is None for r in ratios):
            out["velocity_ratio_increasing"] = None
        else:
            out["velocity_ratio_increasing"] = increasing_with_slack(ratios, self.slack)
        return out


def run_sweep(
    coeffs,
    chart,
    mesh,
    eps_list,
    slack=MONOTONE_SLACK,
    ceiling=BUNDLE_CEILING,
    jobs=1,
    config_echo=None,
    forcing_hook=None,
):
    """Solve the coupled problem along a decreasing scale list, solve the
    reduced problem once, and collect the limit-structure diagnostics.

    Forcing data is scale-independent by default; ``forcing_hook(eps)``
    may supply scale-indexed coefficients for experimentation (the
    reduced problem always uses the base coefficients).
    """
    eps_list = [float(e) for e in eps_list]
    if len(eps_list) < 2:
        raise ParameterError("eps_list needs at least two entries")
    if any(not 0.0 < e <= 1.0 for e in eps_list):
        raise ParameterError("every eps must lie in (0, 1]")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ParameterError("eps_list must be strictly decreasing")

    wall = {}
    t0 = time.perf_counter()
    limit_system = assemble_limit(coeffs, mesh, chart)
    limit_sol = solve_limit(limit_system)
    wall["limit_solve"] = time.perf_counter() - t0

    def one(eps):
        t = time.perf_counter()
        at_eps = coeffs.with_eps(eps) if forcing_hook is None else forcing_hook(eps)
        system = assemble_eps(at_eps, mesh, chart)
        sol = solve_eps(system)
        return sol, time.perf_counter() - t

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            solved = list(pool.map(one, eps_list))
    else:
        solved = [one(e) for e in eps_list]

    bundles, diag_rows = [], []
    for eps, (sol, dt) in zip(eps_list, solved):
        wall[f"eps={eps:g}"] = dt
        bundles.append(norm_bundle(sol, chart))
        diag_rows.append(sweep_diagnostics(sol, limit_sol, chart))

    names = list(diag_rows[0])
    diagnostics = {n: [row[n] for row in diag_rows] for n in names}
    for name, series in diagnostics.items():
        for value in series:
            if value is not None and not np.isfinite(value):
                raise ParameterError(f"diagnostic {name} is not finite")

    finest_sol = solved[-1][0]
    relations = limit_relation_residuals(finest_sol, limit_sol, chart)

    slopes = {}
    for name in (
        "dz_eps_v2",
        "p2_z_variance",
        "flux_trace_gap",
        "v1_gap",
        "p1_gap",
        "p2_avg_gap",
    ):
        slopes[name] = _safe_slope(eps_list, diagnostics[name])

    bundle_bounded, bundle_slope_ok = {}, {}
    floor = 1e-14
    tail = max(len(eps_list) // 2, 3)  # blow-up shows in the small-eps tail;
    # bounded sequences may still be in their transient near eps = 1
    for key in bundles[0]:
        series = np.array([b[key] for b in bundles])
        ref = max(series[0], floor)
        bundle_bounded[key] = bool(np.max(series) <= ceiling * ref)
        slope = _safe_slope(eps_list[-tail:], series[-tail:])
        bundle_slope_ok[key] = True if slope is None else bool(slope >= -0.1)

    return SweepReport(
        eps_list=eps_list,
        bundles=bundles,
        diagnostics=diagnostics,
        relations=relations,
        slopes=slopes,
        bundle_bounded=bundle_bounded,
        bundle_slope_ok=bundle_slope_ok,
        limit_residual=limit_sol.residual_norm,
        slack=slack,
        ceiling=ceiling,
        config_echo=config_echo or {},
        wall_times=wall,
    )
