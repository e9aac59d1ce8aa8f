"""Norm bundles and the trace/confinement inequality probes."""

import numpy as np

from ..geometry import interface_normal, stream_frame
from .spaces import FeField, P2VectorChannelSpace, _facet_tables, gamma_trace_values


def channel_l2sq(values_sq, weights):
    return float(np.sum(weights * values_sq))


def gamma_l2sq(vals_sq, ft):
    """Squared interface norm of per-(facet, q) values, with the chart
    area factor as the surface measure."""
    return float(np.sum(ft.dx * ft.ref_weights[None, :] * ft.metric * vals_sq))


def norm_bundle(sol, chart, eps=None):
    """All terms of the channel-scaling energy bundle, as squared norms.

    ``sol`` carries RT0 ``v1`` and channel ``v2`` fields plus the solved
    channel scale; any object with those attributes works.
    """
    eps = sol.eps if eps is None else eps
    from ..operators import d_epsilon

    v1, v2 = sol.v1, sol.v2
    rt = v1.space.tables()
    v1_vals = v1.space.values(v1.coeffs, rt)
    t2 = v2.space.tables()
    grads = v2.space.gradients(v2.coeffs, t2)
    deps = d_epsilon(v2, chart, eps)

    ft = v2.space.gamma_tables()
    trace = gamma_trace_values(v2.coeffs, ft)
    nrm = interface_normal(chart, ft.xt)
    tau = stream_frame(chart, ft.xt)[..., :, 0]
    v_n = np.einsum("fqd,fqd->fq", trace, nrm)
    v_tau = np.einsum("fqd,fqd->fq", trace, tau)

    return {
        "v1_L2_Omega1_sq": channel_l2sq(np.sum(v1_vals**2, axis=-1), rt.weights),
        "Deps_of_eps_v2_L2_Omega2_sq": eps**2
        * channel_l2sq(np.sum(deps**2, axis=-1), t2.weights),
        "dz_v2_T_L2_Omega2_sq": channel_l2sq(grads[..., 0, 1] ** 2, t2.weights),
        "dz_v2_N_L2_Omega2_sq": channel_l2sq(grads[..., 1, 1] ** 2, t2.weights),
        "v2_n_L2_Gamma_sq": gamma_l2sq(v_n**2, ft),
        "eps_v2_tau_L2_Gamma_sq": eps**2 * gamma_l2sq(v_tau**2, ft),
    }


def _scalar_channel_norms(w: FeField):
    space = w.space
    tables = space.tables()
    vals = space.values(w.coeffs, tables)
    grads = space.gradients(w.coeffs, tables)
    vol = np.sqrt(channel_l2sq(vals**2, tables.weights))
    dz = np.sqrt(channel_l2sq(grads[..., 1] ** 2, tables.weights))
    ft = _facet_tables(space, space.mesh.gamma, 6)
    if ft.trace_nodes is not None:
        tr = np.einsum("lq,fl->fq", ft.trace, w.coeffs[ft.trace_nodes])
    else:
        tr = np.einsum("lq,fl->fq", ft.p1_trace, w.coeffs[ft.p1_nodes])
    gamma = np.sqrt(gamma_l2sq(tr**2, ft))
    return vol, dz, gamma


def trace_inequality_check(w: FeField):
    """(interface norm, sqrt(2) * (volume norm + z-derivative norm)).

    The caller asserts lhs <= rhs; holds for every field with a
    square-integrable z-derivative.
    """
    vol, dz, gamma = _scalar_channel_norms(w)
    return gamma, np.sqrt(2.0) * (vol + dz)


def poincare_inequality_check(w: FeField):
    """(volume norm, sqrt(2) * (z-derivative norm + interface norm))."""
    vol, dz, gamma = _scalar_channel_norms(w)
    return vol, np.sqrt(2.0) * (dz + gamma)


def frame_poincare_check(w: FeField, frame):
    """Frame-component confinement pairs with constants (1, 2).

    Returns ``{"normal": (lhs, rhs), "tangential": (lhs, rhs)}`` where
    ``lhs = |w_c|_{0,channel}`` and
    ``rhs = |dz w_c|_{0,channel} + 2 |w_c|_{0,interface}``.
    """
    from ..operators import decompose_frame

    if not isinstance(w.space, P2VectorChannelSpace):
        raise TypeError("frame_poincare_check expects a channel vector field")
    dec = decompose_frame(w, frame)
    tables = w.space.tables()
    ft = w.space.gamma_tables()
    trace = gamma_trace_values(w.coeffs, ft)
    chart = w.space.mesh.chart
    nrm = interface_normal(chart, ft.xt)
    tau = stream_frame(chart, ft.xt)[..., :, 0]
    out = {}
    for name, comp, dz_comp, direction in (
        ("normal", dec.w_n, dec.dz_n, nrm),
        ("tangential", dec.w_tau, dec.dz_tau, tau),
    ):
        lhs = np.sqrt(channel_l2sq(comp**2, tables.weights))
        dz = np.sqrt(channel_l2sq(dz_comp**2, tables.weights))
        tr = np.einsum("fqd,fqd->fq", trace, direction)
        gamma = np.sqrt(gamma_l2sq(tr**2, ft))
        out[name] = (lhs, dz + 2.0 * gamma)
    return out
