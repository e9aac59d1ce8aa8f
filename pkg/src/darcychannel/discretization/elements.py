"""Reference-element shape functions and quadrature rules.

Reference triangle: vertices (0,0), (1,0), (0,1).  Triangle rules come
from a Duffy-collapsed Gauss-Legendre product, which is exact for
polynomials of total degree <= order and has strictly positive weights.
"""

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def gauss_interval(n):
    """n-point Gauss-Legendre rule on [0, 1]; exact to degree 2n-1."""
    pts, wts = np.polynomial.legendre.leggauss(int(n))
    return 0.5 * (pts + 1.0), 0.5 * wts


@lru_cache(maxsize=None)
def tri_quadrature(order):
    """Quadrature on the reference triangle, exact for total degree <= order.

    Returns (points (nq, 2), weights (nq,)); weights sum to the reference
    area 1/2.
    """
    k = max(int(order) // 2 + 1, 1)
    u, wu = gauss_interval(k)
    v, wv = gauss_interval(k)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    ww = np.outer(wu, wv) * (1.0 - vv)
    pts = np.stack([(uu * (1.0 - vv)).ravel(), vv.ravel()], axis=-1)
    return pts, ww.ravel()


def p1_shape(pts):
    """P1 basis values, shape (3, nq)."""
    xi, eta = pts[:, 0], pts[:, 1]
    return np.stack([1.0 - xi - eta, xi, eta])


def p1_grad():
    """Constant P1 reference gradients, shape (3, 2)."""
    return np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


# P2 node order: 3 vertices, then midpoints of edges (0,1), (1,2), (2,0).
P2_EDGE_VERTICES = ((0, 1), (1, 2), (2, 0))


def p2_shape(pts):
    """P2 basis values, shape (6, nq)."""
    xi, eta = pts[:, 0], pts[:, 1]
    lam = np.stack([1.0 - xi - eta, xi, eta])
    vals = [lam[i] * (2.0 * lam[i] - 1.0) for i in range(3)]
    vals += [4.0 * lam[a] * lam[b] for a, b in P2_EDGE_VERTICES]
    return np.stack(vals)


def p2_grad(pts):
    """P2 reference gradients, shape (6, nq, 2)."""
    xi, eta = pts[:, 0], pts[:, 1]
    lam = np.stack([1.0 - xi - eta, xi, eta])
    dlam = p1_grad()  # (3, 2)
    grads = np.empty((6, pts.shape[0], 2))
    for i in range(3):
        grads[i] = (4.0 * lam[i] - 1.0)[:, None] * dlam[i]
    for k, (a, b) in enumerate(P2_EDGE_VERTICES):
        grads[3 + k] = 4.0 * (lam[a][:, None] * dlam[b] + lam[b][:, None] * dlam[a])
    return grads


def p2_edge_trace(s):
    """P2 trace on one edge, parametrized by s in [0,1] from the first
    endpoint: rows (first endpoint, second endpoint, edge midnode)."""
    s = np.asarray(s, dtype=float)
    return np.stack([(1.0 - s) * (1.0 - 2.0 * s), s * (2.0 * s - 1.0), 4.0 * s * (1.0 - s)])


def p1_edge_trace(s):
    """P1 trace on one edge: rows (first endpoint, second endpoint)."""
    s = np.asarray(s, dtype=float)
    return np.stack([1.0 - s, s])


def affine_maps(vertices, triangles):
    """Per-cell affine data: Jacobians (nc,2,2), inverse-transpose, |detJ|.

    The map is x = v0 + J @ (xi, eta)."""
    p0 = vertices[triangles[:, 0]]
    p1 = vertices[triangles[:, 1]]
    p2 = vertices[triangles[:, 2]]
    jac = np.stack([p1 - p0, p2 - p0], axis=-1)  # columns are edge vectors
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    inv_t = np.empty_like(jac)
    inv_t[:, 0, 0] = jac[:, 1, 1]
    inv_t[:, 0, 1] = -jac[:, 1, 0]
    inv_t[:, 1, 0] = -jac[:, 0, 1]
    inv_t[:, 1, 1] = jac[:, 0, 0]
    inv_t /= det[:, None, None]
    return jac, inv_t, np.abs(det), p0
