"""Sparse block assembly and the saddle-point container.

Systems are stored as blocks A (velocity-velocity, symmetric), B (the
conservation pairing, so the equations read ``A v - B^T p = f`` and
``B v = g``), and C (pressure-pressure, zero here).  ``matrix()`` returns
the symmetric indefinite arrangement used by the direct solver.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import (
    ConditioningError,
    ParameterError,
    SingularSystemError,
    SizeError,
    StructuralError,
)
from .spaces import P0Space, RT0Space


def scatter(local, rows, cols, shape):
    """Accumulate per-cell local matrices into a CSR matrix.

    ``local``: (nc, nr, nk); ``rows``: (nc, nr); ``cols``: (nc, nk).
    """
    nc, nr, nk = local.shape
    i = np.repeat(rows[:, :, None], nk, axis=2).ravel()
    j = np.repeat(cols[:, None, :], nr, axis=1).ravel()
    return sp.coo_matrix((local.ravel(), (i, j)), shape=shape).tocsr()


def scatter_vector(local, rows, size):
    """Accumulate per-cell local vectors (nc, nr) into a dense vector."""
    out = np.zeros(size)
    np.add.at(out, rows.ravel(), local.ravel())
    return out


def assemble_form(space_pair, form_spec, coefficients=None, order=None):
    """Generic assembly of a named bilinear form into a sparse block.

    Supported ``form_spec`` values: ``"mass"`` (optionally weighted by a
    scalar callable), ``"stiffness"`` (scalar spaces), ``"darcy_mass"``
    (flux space with a tensor coefficient ``q(x, z) -> (..., 2, 2)``),
    ``"divergence"`` (pressure rows against a flux space).  Quadrature
    defaults to ``2 * degree + 2`` per the curvature allowance.
    """
    test, trial = space_pair if isinstance(space_pair, tuple) else (space_pair, space_pair)
    if getattr(test, "mesh", None) is not getattr(trial, "mesh", None):
        raise StructuralError("test and trial spaces live on different meshes")
    if order is None:
        order = 2 * max(test.degree, trial.degree) + 2

    if form_spec == "mass":
        tt = test.tables(order)
        ut = trial.tables(order)
        w = tt.weights
        if coefficients is not None:
            w = w * coefficients(tt.points[..., 0], tt.points[..., 1])
        local = np.einsum("cq,lq,kq->clk", w, tt.basis, ut.basis)
        return scatter(local, tt.dofs, ut.dofs, (test.n_dofs, trial.n_dofs))

    if form_spec == "stiffness":
        tt = test.tables(order)
        ut = trial.tables(order)
        w = tt.weights
        if coefficients is not None:
            w = w * coefficients(tt.points[..., 0], tt.points[..., 1])
        local = np.einsum("cq,clqi,ckqi->clk", w, tt.grads, ut.grads)
        return scatter(local, tt.dofs, ut.dofs, (test.n_dofs, trial.n_dofs))

    if form_spec == "darcy_mass":
        if not isinstance(trial, RT0Space):
            raise StructuralError("darcy_mass expects a flux space")
        rt = trial.tables(order)
        if coefficients is None:
            qvals = np.broadcast_to(np.eye(2), rt.points.shape[:2] + (2, 2))
        else:
            qvals = coefficients(rt.points[..., 0], rt.points[..., 1])
        local = np.einsum("cq,clqi,cqij,ckqj->clk", rt.weights, rt.basis, qvals, rt.basis)
        return scatter(local, rt.dofs, rt.dofs, (trial.n_dofs, trial.n_dofs))

    if form_spec == "divergence":
        # rows: P0 pressures, cols: RT0 fluxes;  integral of div(phi) * psi
        if not (isinstance(test, P0Space) and isinstance(trial, RT0Space)):
            raise StructuralError("divergence expects (P0, RT0)")
        rt = trial.tables(order)
        areas = test.cell_areas()
        local = (areas[:, None] * rt.div)[:, None, :]  # (nc, 1, 3)
        return scatter(local, test.tables(order).dofs, rt.dofs, (test.n_dofs, trial.n_dofs))

    raise ParameterError(f"unknown form_spec {form_spec!r}")


@dataclass
class Reducer:
    """Velocity-space constraint elimination: full = E @ reduced."""

    E: sp.csr_matrix
    n_full: int
    n_reduced: int

    def reduce_matrix(self, m):
        return (self.E.T @ m @ self.E).tocsr()

    def reduce_rows(self, m):
        return (m @ self.E).tocsr()

    def reduce_vector(self, v):
        return self.E.T @ v

    def expand(self, v):
        return self.E @ v


@dataclass
class SparseSystem:
    """Reduced saddle-point system with block bookkeeping.

    ``a``: (n_v, n_v) symmetric; ``b``: (n_p, n_v) conservation pairing;
    ``c``: (n_p, n_p); equations: A v - B^T p = f, B v + C p = g.
    ``velocity_slices`` / ``pressure_slices`` address the *full* (not
    reduced) velocity vector and the pressure vector by unknown name.
    """

    a: sp.csr_matrix
    b: sp.csr_matrix
    c: sp.csr_matrix
    f: np.ndarray
    g: np.ndarray
    reducer: Reducer
    velocity_slices: dict
    pressure_slices: dict
    meta: dict = field(default_factory=dict)
    terms: dict = field(default_factory=dict)

    @property
    def n_v(self):
        return self.a.shape[0]

    @property
    def n_p(self):
        return self.b.shape[0]

    def matrix(self):
        """Symmetric indefinite arrangement [[A, -B^T], [-B, -C]]."""
        return sp.bmat([[self.a, -self.b.T], [-self.b, -self.c]], format="csc")

    def rhs(self):
        return np.concatenate([self.f, -self.g])

    def asymmetry(self):
        d = (self.a - self.a.T).tocoo()
        return float(np.max(np.abs(d.data))) if d.nnz else 0.0


#: Relative factor-diagonal spread above which a small-epsilon solve is refused.
PIVOT_GROWTH_LIMIT = 1e14

#: Channel scales below this trigger the conditioning gate.
MIN_EPS = 1.0 / 256.0


def solve_saddle(system, eps=None, residual_tol=1e-10):
    """Direct sparse solve of a SparseSystem.

    Returns (reduced velocity, pressure, relative residual).  Raises a
    singularity error on zero pivots and a conditioning error when a
    below-minimum ``eps`` fails the pivot-growth gate.
    """
    K = system.matrix()
    rhs = system.rhs()
    try:
        lu = spla.splu(K)
    except RuntimeError as exc:
        raise SingularSystemError(
            f"direct factorization failed: {exc}",
            block_hint=_singularity_hint(system),
        ) from None
    diag = np.abs(lu.U.diagonal())
    if np.any(diag == 0.0) or not np.all(np.isfinite(diag)):
        raise SingularSystemError(
            "zero pivot in factorization", block_hint=_singularity_hint(system)
        )
    if eps is not None and eps < MIN_EPS:
        growth = float(diag.max() / diag.min())
        if growth > PIVOT_GROWTH_LIMIT:
            raise ConditioningError(
                f"eps={eps:g} below {MIN_EPS:g} and pivot growth {growth:.2e} "
                f"exceeds {PIVOT_GROWTH_LIMIT:.0e}; solve refused"
            )
    u = lu.solve(rhs)
    scale = float(np.linalg.norm(rhs))
    residual = float(np.linalg.norm(K @ u - rhs)) / (scale if scale > 0.0 else 1.0)
    if residual > residual_tol:
        raise SingularSystemError(
            f"direct solve residual {residual:.2e} exceeds {residual_tol:g}",
            block_hint=_singularity_hint(system),
        )
    return u[: system.n_v], u[system.n_v :], residual


def solve_with_pressure_pin(system, weights, eps=None, residual_tol=1e-10):
    """Solve with an extra zero-weighted-mean constraint on the pressure.

    ``weights`` is a vector over the pressure dofs (zero outside the
    pinned block); used as a fallback when the plain factorization finds
    the pressure nullspace.
    """
    K = system.matrix().tocsr()
    n = K.shape[0]
    col = np.zeros((n, 1))
    col[system.n_v :, 0] = weights
    K_aug = sp.bmat(
        [[K, sp.csr_matrix(col)], [sp.csr_matrix(col.T), None]], format="csc"
    )
    rhs = np.concatenate([system.rhs(), [0.0]])
    try:
        lu = spla.splu(K_aug)
    except RuntimeError as exc:
        raise SingularSystemError(
            f"factorization still singular after the pressure pin: {exc}",
            block_hint=_singularity_hint(system),
        ) from None
    u = lu.solve(rhs)
    # the pin is only legitimate when the original equations still hold
    # (multiplier ~ 0); otherwise the system was not pressure-singular
    residual = float(np.linalg.norm(K @ u[:-1] - rhs[:-1])) / max(
        np.linalg.norm(rhs[:-1]), 1e-300
    )
    if residual > residual_tol:
        raise SingularSystemError(
            f"pinned solve leaves original residual {residual:.2e} "
            f"(> {residual_tol:g}); breakdown is not a pressure nullspace",
            block_hint=_singularity_hint(system),
        )
    return u[: system.n_v], u[system.n_v : -1], residual


def _singularity_hint(system):
    """Name the block that most plausibly caused a breakdown."""
    K = system.matrix().tocsr()
    row_max = np.zeros(K.shape[0])
    coo = K.tocoo()
    np.maximum.at(row_max, coo.row, np.abs(coo.data))
    empty = np.where(row_max == 0.0)[0]
    if empty.size == 0:
        return "no structurally empty rows; suspect pressure nullspace (pinning)"
    idx = int(empty[0])
    if idx < system.n_v:
        return f"velocity row {idx} is empty; suspect broken interface coupling"
    pdx = idx - system.n_v
    for name, sl in system.pressure_slices.items():
        if sl.start <= pdx < sl.stop:
            return f"pressure block '{name}' row {pdx} is empty; suspect missing pinning"
    return f"pressure row {pdx} is empty"


def scaled_min_singular_value(b, gram_v, gram_p, dof_limit=5000):
    """Smallest singular value of the norm-scaled coupling operator.

    ``b`` maps velocities to pressure functionals; the scaling uses the
    Cholesky factors of the velocity- and pressure-space Gram matrices.
    Dense computation, guarded by a desk-scale dof limit.
    """
    import scipy.linalg as la

    n_p, n_v = b.shape
    if n_p + n_v > dof_limit:
        raise SizeError(
            f"{n_p + n_v} dofs exceed the desk-scale limit {dof_limit} "
            "for the dense singular-value estimate"
        )
    b = b.toarray() if sp.issparse(b) else np.asarray(b, dtype=float)
    lv = la.cholesky(_dense(gram_v), lower=True)
    lp = la.cholesky(_dense(gram_p), lower=True)
    t = la.solve_triangular(lv, b.T, lower=True)  # L_v^{-1} B^T
    t = la.solve_triangular(lp, t.T, lower=True)  # L_p^{-1} B L_v^{-T}
    return float(np.linalg.svd(t, compute_uv=False)[-1])


def _dense(m):
    return m.toarray() if sp.issparse(m) else np.asarray(m, dtype=float)
