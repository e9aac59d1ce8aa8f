"""Transformed differential operators and frame decomposition.

The channel change of variables turns the physical gradient into the
block ``[ D_eps w | (1/eps) dz w ]`` where the twisted tangential
derivative is ``D_eps w = dx w + (1 - 1/eps) dz w  dzeta``.  All
operators here act on channel velocity fields and are evaluated at
quadrature points (element-local polynomial differentiation); the
finite-difference versions live in the verification suites only.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, StructuralError
from .geometry import LocalFrame


def _check_eps(eps):
    if not eps > 0.0:
        raise ParameterError(f"eps must be positive, got {eps}")


def d_epsilon_values(grad_x, grad_z, slope, eps):
    """Pointwise twisted tangential derivative.

    ``grad_x``/``grad_z``: (..., 2) partial derivatives of the field;
    ``slope``: (...,) chart slope at the same points.  At eps = 1 this
    returns ``grad_x`` itself (coefficient-level equality).
    """
    _check_eps(eps)
    factor = 1.0 - 1.0 / eps
    if factor == 0.0:
        return np.array(grad_x, copy=True)
    return grad_x + factor * slope[..., None] * grad_z


def _field_tables(w, order=None):
    tables = w.space.tables(order)
    grads = w.space.gradients(w.coeffs, tables)  # (nc, nq, 2, 2): [component, direction]
    return tables, grads


def d_epsilon(w, chart, eps, order=None):
    """Twisted tangential derivative of a channel field at quadrature
    points, shape (nc, nq, 2) (one column in two dimensions)."""
    _check_eps(eps)
    tables, grads = _field_tables(w, order)
    slope = chart.dzeta(tables.xt)
    return d_epsilon_values(grads[..., 0], grads[..., 1], slope, eps)


def transformed_gradient(w, chart, eps, order=None):
    """Physical-domain gradient seen from the reference domain.

    Returns (nc, nq, 2, 2): first column the twisted tangential
    derivative, last column (1/eps) dz w.
    """
    _check_eps(eps)
    tables, grads = _field_tables(w, order)
    slope = chart.dzeta(tables.xt)
    out = np.empty_like(grads)
    out[..., 0] = d_epsilon_values(grads[..., 0], grads[..., 1], slope, eps)
    out[..., 1] = grads[..., 1] / eps
    return out


def transformed_divergence(w, chart, eps, order=None):
    """Trace of the transformed gradient, shape (nc, nq)."""
    _check_eps(eps)
    tables, grads = _field_tables(w, order)
    slope = chart.dzeta(tables.xt)
    factor = 1.0 - 1.0 / eps
    div = grads[..., 0, 0] + grads[..., 1, 1] / eps
    if factor != 0.0:
        div = div + factor * slope * grads[..., 0, 1]
    return div


@dataclass
class FrameDecomposition:
    """Channel field in interface coordinates at quadrature points.

    ``w_tau``/``w_n`` are the tangential and normal components,
    ``dz_tau``/``dz_n`` their z-derivatives (the frame is z-independent,
    so decomposition and z-differentiation commute pointwise).
    """

    w_tau: np.ndarray  # (nc, nq)
    w_n: np.ndarray  # (nc, nq)
    dz_tau: np.ndarray
    dz_n: np.ndarray
    frame: LocalFrame
    mesh: object
    xt: np.ndarray  # (nc, nq) evaluation abscissae


def decompose_frame(w, frame, order=None):
    """Project a channel field onto the interface frame."""
    if frame.chart is not w.space.mesh.chart:
        raise StructuralError("frame chart does not match the field's mesh chart")
    tables = w.space.tables(order)
    values = w.space.values(w.coeffs, tables)
    grads = w.space.gradients(w.coeffs, tables)
    u = frame.matrix(tables.xt)  # (nc, nq, 2, 2), columns (tau, n)
    tau, nrm = u[..., :, 0], u[..., :, 1]
    return FrameDecomposition(
        w_tau=np.einsum("cqd,cqd->cq", values, tau),
        w_n=np.einsum("cqd,cqd->cq", values, nrm),
        dz_tau=np.einsum("cqd,cqd->cq", grads[..., 1], tau),
        dz_n=np.einsum("cqd,cqd->cq", grads[..., 1], nrm),
        frame=frame,
        mesh=w.space.mesh,
        xt=tables.xt,
    )


def recompose_frame(d, mesh=None):
    """Invert a frame decomposition back to canonical components.

    Returns values (nc, nq, 2) at the decomposition's own points.
    """
    if mesh is not None and mesh is not d.mesh:
        raise StructuralError("decomposition belongs to a different mesh")
    u = d.frame.matrix(d.xt)
    return d.w_tau[..., None] * u[..., :, 0] + d.w_n[..., None] * u[..., :, 1]
