"""Curved interface charts, the local frame field, and the channel maps.

The interface is the graph of a C² function ``zeta`` over an interval
``G = (g_lo, g_hi)``.  Everything downstream (meshes, transformed
operators, the channel maps) consumes the chart through this module.
All objects here are immutable after construction and safe to share
between workers.
"""

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DomainError, InvalidChartError, ParameterError
from .expr import compile_expression

#: Fraction of |G| by which the chart must stay twice differentiable
#: beyond each end of G (see the chart admissibility requirement, which
#: asks for regularity on a strictly larger open set).
DOMAIN_MARGIN = 0.05

#: Charts whose normal lower bound falls below this are rejected.
DELTA_TOLERANCE = 1e-6


class InterfaceChart:
    """Graph description of the coupling interface.

    Parameters
    ----------
    g_lo, g_hi : float
        Endpoints of the projection interval G.
    zeta, dzeta, d2zeta : callable
        Height function and its first two derivatives, vectorized over
        numpy arrays.  They must be evaluable on G widened by
        ``DOMAIN_MARGIN * (g_hi - g_lo)`` on each side.
    n_samples : int
        Resolution used when the chart is built from samples, and the
        base resolution of the normal-lower-bound scan.
    """

    ndim = 2  # ambient dimension N; the chart parametrizes an (N-1)-graph

    def __init__(self, g_lo, g_hi, zeta, dzeta, d2zeta, n_samples=400):
        if not g_hi > g_lo:
            raise InvalidChartError(f"empty interval G: ({g_lo}, {g_hi})")
        self.g_lo = float(g_lo)
        self.g_hi = float(g_hi)
        self._zeta = zeta
        self._dzeta = dzeta
        self._d2zeta = d2zeta
        self.n_samples = int(n_samples)
        # fail fast if the margin is not covered
        margin = DOMAIN_MARGIN * self.length
        probe = np.array([self.g_lo - margin, self.g_hi + margin])
        for f in (zeta, dzeta, d2zeta):
            values = np.asarray(f(probe), dtype=float)
            if not np.all(np.isfinite(values)):
                raise InvalidChartError(
                    "chart is not evaluable on the widened interval "
                    f"[{probe[0]}, {probe[1]}]"
                )

    # -- constructors -------------------------------------------------

    @classmethod
    def flat(cls, g_lo=0.0, g_hi=1.0, n_samples=400):
        zero = lambda x: np.zeros_like(np.asarray(x, dtype=float))
        return cls(g_lo, g_hi, zero, zero, zero, n_samples)

    @classmethod
    def from_table(cls, x, z, g_lo=None, g_hi=None, n_samples=400):
        """Cubic-spline chart through sample points (C² by construction)."""
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        if x.ndim != 1 or x.shape != z.shape:
            raise InvalidChartError("table chart needs matching 1-d x and z arrays")
        if x.size < 4:
            raise InvalidChartError(f"table chart needs at least 4 knots, got {x.size}")
        if np.any(np.diff(x) <= 0):
            raise InvalidChartError("table chart knots must be strictly increasing")
        spline = CubicSpline(x, z, extrapolate=True)
        lo = x[0] if g_lo is None else float(g_lo)
        hi = x[-1] if g_hi is None else float(g_hi)
        return cls(lo, hi, spline, spline.derivative(1), spline.derivative(2), n_samples)

    @classmethod
    def from_expression(cls, expr, g_lo, g_hi, n_samples=400, key="chart.zeta.expr"):
        """Chart from an expression string in the config grammar.

        The expression is densely sampled over G plus the C² margin and
        represented by a cubic spline, so derivatives come from the
        spline rather than from symbolic differentiation.
        """
        f = compile_expression(expr, variables=("x",), key=key)
        margin = DOMAIN_MARGIN * (float(g_hi) - float(g_lo))
        xs = np.linspace(g_lo - margin, g_hi + margin, max(int(n_samples), 4))
        chart = cls.from_table(xs, f(xs), g_lo=g_lo, g_hi=g_hi, n_samples=n_samples)
        chart.expression = expr
        return chart

    # -- evaluation ----------------------------------------------------

    @property
    def length(self):
        return self.g_hi - self.g_lo

    def zeta(self, xt):
        return np.asarray(self._zeta(np.asarray(xt, dtype=float)), dtype=float)

    def dzeta(self, xt):
        return np.asarray(self._dzeta(np.asarray(xt, dtype=float)), dtype=float)

    def d2zeta(self, xt):
        return np.asarray(self._d2zeta(np.asarray(xt, dtype=float)), dtype=float)

    def contains(self, xt, slack=None):
        xt = np.asarray(xt, dtype=float)
        if slack is None:
            slack = 1e-12 * max(1.0, abs(self.g_lo), abs(self.g_hi))
        return (xt >= self.g_lo - slack) & (xt <= self.g_hi + slack)

    def require_inside(self, xt):
        if not np.all(self.contains(xt)):
            raise DomainError(
                f"point(s) outside the projection interval [{self.g_lo}, {self.g_hi}]"
            )


def interface_normal(chart, xt):
    """Upward unit normal (-zeta', 1)/|(-zeta', 1)| at xt in G."""
    chart.require_inside(xt)
    slope = chart.dzeta(xt)
    measure = np.sqrt(1.0 + slope * slope)
    return np.stack([-slope / measure, np.ones_like(slope) / measure], axis=-1)


def surface_measure(chart, xt):
    """Area factor |(-zeta', 1)| of the graph parametrization; always >= 1."""
    chart.require_inside(xt)
    slope = chart.dzeta(xt)
    return np.sqrt(1.0 + slope * slope)


def stream_frame(chart, xt):
    """Orthogonal frame matrix with columns (tangent, normal) at xt.

    The tangent is oriented with positive first component.  Returns a
    (..., 2, 2) array; ``[..., :, 0]`` is the tangent, ``[..., :, 1]``
    the upward normal.
    """
    chart.require_inside(xt)
    slope = chart.dzeta(xt)
    measure = np.sqrt(1.0 + slope * slope)
    one = np.ones_like(slope)
    # columns: tau = (1, zeta')/m, n = (-zeta', 1)/m
    u = np.stack(
        [
            np.stack([one / measure, -slope / measure], axis=-1),
            np.stack([slope / measure, one / measure], axis=-1),
        ],
        axis=-2,
    )
    return u


def frame_curvature(chart, xt):
    """Rotation rate of the frame: tau' = kappa * n, n' = -kappa * tau.

    kappa = zeta'' / (1 + zeta'^2) in the graph parametrization.
    """
    chart.require_inside(xt)
    slope = chart.dzeta(xt)
    return chart.d2zeta(xt) / (1.0 + slope * slope)


class LocalFrame:
    """Frame field U(xt) = [tangent | normal] attached to a chart.

    Depends on xt only (constant along the channel direction), which is
    what makes frame decomposition commute with z-differentiation.
    """

    def __init__(self, chart):
        self.chart = chart

    def matrix(self, xt):
        return stream_frame(self.chart, xt)

    def tangent(self, xt):
        return stream_frame(self.chart, xt)[..., :, 0]

    def normal(self, xt):
        return interface_normal(self.chart, xt)

    def block(self, xt, row, col):
        """Named sub-block of U: row in {'T','N'}, col in {'tau','n'}."""
        rows = {"T": slice(0, self.chart.ndim - 1), "N": slice(-1, None)}
        cols = {"tau": slice(0, self.chart.ndim - 1), "n": slice(-1, None)}
        try:
            r, c = rows[row], cols[col]
        except KeyError:
            raise KeyError(f"unknown frame block ({row!r}, {col!r})") from None
        return self.matrix(xt)[..., r, c]

    def matrix_derivative(self, xt):
        """d/dxt of the frame matrix, from the chart's second derivative."""
        kappa = frame_curvature(self.chart, xt)
        u = self.matrix(xt)
        tau, nrm = u[..., :, 0], u[..., :, 1]
        du = np.empty_like(u)
        du[..., :, 0] = kappa[..., None] * nrm
        du[..., :, 1] = -kappa[..., None] * tau
        return du


@dataclass(frozen=True)
class DomainSpec:
    """Reference geometry: the chart, the porous depth, the channel scale.

    The reference channel always has unit height; ``epsilon`` only
    describes the physical channel when mapping to/from it.
    """

    chart: InterfaceChart
    omega1_depth: float = 1.0
    epsilon: float = 1.0

    def __post_init__(self):
        if self.omega1_depth <= 0.0:
            raise ParameterError(f"omega1_depth must be positive, got {self.omega1_depth}")
        if not 0.0 < self.epsilon <= 1.0:
            raise ParameterError(f"epsilon must lie in (0, 1], got {self.epsilon}")


def _require_band(chart, xt, height, width, what):
    chart.require_inside(xt)
    base = chart.zeta(xt)
    slack = 1e-12 * max(1.0, float(np.max(np.abs(base))) + width)
    if np.any(height < base - slack) or np.any(height > base + width + slack):
        raise DomainError(f"point(s) outside {what}")


def map_to_reference(chart, eps, y):
    """Channel change of variables: (yt, yN) -> (yt, (yN - zeta)/eps + zeta)."""
    if eps <= 0.0:
        raise ParameterError(f"eps must be positive, got {eps}")
    y = np.asarray(y, dtype=float)
    yt, yN = y[..., 0], y[..., 1]
    _require_band(chart, yt, yN, eps, "the physical channel")
    base = chart.zeta(yt)
    return np.stack([yt, (yN - base) / eps + base], axis=-1)


def map_from_reference(chart, eps, x):
    """Inverse channel map: (xt, z) -> (xt, eps*(z - zeta) + zeta)."""
    if eps <= 0.0:
        raise ParameterError(f"eps must be positive, got {eps}")
    x = np.asarray(x, dtype=float)
    xt, z = x[..., 0], x[..., 1]
    _require_band(chart, xt, z, 1.0, "the reference channel")
    base = chart.zeta(xt)
    return np.stack([xt, eps * (z - base) + base], axis=-1)


def normal_lower_bound(chart, oversample=10):
    """Smallest sampled value of normal . e_N over G.

    Approximates the infimum on a dense grid (``oversample`` times the
    chart's sample resolution, at least 1001 points).  Rejects the chart
    if the bound does not clear ``DELTA_TOLERANCE``.
    """
    n = max(oversample * chart.n_samples + 1, 1001)
    xs = np.linspace(chart.g_lo, chart.g_hi, n)
    slope = chart.dzeta(xs)
    delta = float(np.min(1.0 / np.sqrt(1.0 + slope * slope)))
    if not np.isfinite(delta) or delta <= DELTA_TOLERANCE:
        raise InvalidChartError(
            f"normal lower bound {delta:.3e} <= {DELTA_TOLERANCE:.0e}; "
            "the chart has a (near-)vertical tangent"
        )
    return delta
