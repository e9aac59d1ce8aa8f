"""Test-local numerical oracles, independent of the package's assembly:
a differently collapsed triangle rule, from-scratch shape functions, and
brute-force term integrators for the saddle-point forms."""

import numpy as np


def oracle_tri_rule(k=8):
    u, wu = np.polynomial.legendre.leggauss(k)
    u, wu = 0.5 * (u + 1.0), 0.5 * wu
    uu, vv = np.meshgrid(u, u, indexing="ij")
    x = uu
    y = vv * (1.0 - uu)
    w = np.outer(wu, wu) * (1.0 - uu)
    return np.stack([x.ravel(), y.ravel()], axis=-1), w.ravel()


def oracle_interval_rule(k=12):
    s, w = np.polynomial.legendre.leggauss(k)
    return 0.5 * (s + 1.0), 0.5 * w


def oracle_cell_integral(vertices, f):
    pts, wts = oracle_tri_rule()
    p0 = vertices[0]
    jac = np.stack([vertices[1] - p0, vertices[2] - p0], axis=-1)
    det = abs(np.linalg.det(jac))
    phys = p0 + pts @ jac.T
    return det * np.sum(wts * f(phys[:, 0], phys[:, 1]))


def p2_values_ref(pts):
    lam = np.stack([1 - pts[:, 0] - pts[:, 1], pts[:, 0], pts[:, 1]])
    vals = [lam[i] * (2 * lam[i] - 1) for i in range(3)]
    for a, b in ((0, 1), (1, 2), (0, 2)):
        vals.append(4 * lam[a] * lam[b])
    return np.stack(vals)


def p2_grads_phys(vertices, pts):
    lam = np.stack([1 - pts[:, 0] - pts[:, 1], pts[:, 0], pts[:, 1]])
    lam_grad = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    dref = np.empty((6, pts.shape[0], 2))
    for i in range(3):
        dref[i] = (4 * lam[i] - 1)[:, None] * lam_grad[i]
    for idx, (a, b) in enumerate(((0, 1), (1, 2), (0, 2))):
        dref[3 + idx] = 4 * (lam[a][:, None] * lam_grad[b] + lam[b][:, None] * lam_grad[a])
    jac = np.stack([vertices[1] - vertices[0], vertices[2] - vertices[0]], axis=-1)
    inv_t = np.linalg.inv(jac).T
    return np.einsum("ij,lqj->lqi", inv_t, dref)


def p1_values_ref(pts):
    return np.stack([1 - pts[:, 0] - pts[:, 1], pts[:, 0], pts[:, 1]])


def edge_trace_p2(s):
    return np.stack([(1 - s) * (1 - 2 * s), s * (2 * s - 1), 4 * s * (1 - s)])


def rt0_basis_phys(mesh, cell, pts_phys):
    """Package-convention RT0 basis evaluated from scratch: sign * (x - p_i)/det."""
    tri = mesh.tri1[cell]
    verts = mesh.vertices[tri]
    e1, e2 = verts[1] - verts[0], verts[2] - verts[0]
    det = abs(e1[0] * e2[1] - e1[1] * e2[0])
    out = np.empty((3,) + pts_phys.shape)
    for i in range(3):
        out[i] = mesh.edge_signs1[cell, i] * (pts_phys - verts[i]) / det
    return out, det
