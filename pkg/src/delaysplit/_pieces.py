"""Piecewise-cubic helpers shared by segments, trajectories and tables.

Coefficient arrays follow scipy's PPoly layout: ``c[k, i, ...]`` multiplies
``(x - x[i])**(3 - k)``.  Trailing axes carry components and batches.
"""
import numpy as np
from scipy.interpolate import PPoly

_FACT = np.array([1.0, 1.0, 2.0, 6.0])


def merge_breaks(*arrays, rtol=1e-12):
    """Sorted union of breakpoint arrays with near-duplicates collapsed."""
    x = np.unique(np.concatenate([np.asarray(a, dtype=float).ravel() for a in arrays]))
    if x.size < 2:
        return x
    span = x[-1] - x[0]
    keep = np.concatenate([[True], np.diff(x) > rtol * max(span, 1.0)])
    x = x[keep]
    # the final point must stay exactly on the right end
    x[-1] = np.max(np.concatenate([np.asarray(a, dtype=float).ravel() for a in arrays]))
    return x


def taylor_coeffs(pp, new_x):
    """Re-express a piecewise cubic on a refinement ``new_x`` of its domain.

    Derivatives are taken at interval midpoints, so the piece selected is never
    ambiguous, then shifted back to the left endpoint.  Exact for cubics.
    """
    new_x = np.asarray(new_x, dtype=float)
    a = new_x[:-1]
    h = np.diff(new_x)
    mid = a + 0.5 * h
    d = np.stack([pp(mid, nu=k) for k in range(4)])  # (4, m, ...)
    shape = (-1,) + (1,) * (d.ndim - 2)
    s = (-0.5 * h).reshape(shape)
    # derivatives at the left endpoint
    d0 = d[0] + s * (d[1] + s * (d[2] / 2 + s * d[3] / 6))
    d1 = d[1] + s * (d[2] + s * d[3] / 2)
    d2 = d[2] + s * d[3]
    d3 = d[3]
    return np.stack([d3 / _FACT[3], d2 / _FACT[2], d1, d0])


def restrict(pp, lo, hi, extra_breaks=()):
    """PPoly of ``pp`` on [lo, hi], breakpoints clipped to that interval."""
    x = pp.x
    inner = x[(x > lo) & (x < hi)]
    new_x = merge_breaks([lo, hi], inner, extra_breaks)
    new_x = new_x[(new_x >= lo) & (new_x <= hi)]
    return PPoly(taylor_coeffs(pp, new_x), new_x, extrapolate=True)


def hermite_coeffs(x, y, dy):
    """Cubic Hermite coefficients from node values and slopes (axis 0 = nodes)."""
    x = np.asarray(x, dtype=float)
    h = np.diff(x).reshape((-1,) + (1,) * (np.ndim(y) - 1))
    y0, y1 = y[:-1], y[1:]
    d0, d1 = dy[:-1], dy[1:]
    delta = (y1 - y0) / h
    c3 = (d0 + d1 - 2 * delta) / h**2
    c2 = (3 * delta - 2 * d0 - d1) / h
    return np.stack([c3, c2, d0, y0])


def linear_coeffs(x, y):
    x = np.asarray(x, dtype=float)
    h = np.diff(x).reshape((-1,) + (1,) * (np.ndim(y) - 1))
    slope = (y[1:] - y[:-1]) / h
    z = np.zeros_like(slope)
    return np.stack([z, z, slope, y[:-1]])


def _horner(c, s):
    return ((c[0] * s + c[1]) * s + c[2]) * s + c[3]


def sup_abs(x, c):
    """Exact sup of |p| over the domain, per trailing index.

    Checks piece endpoints and the real critical points of each cubic piece.
    Returns an array with the trailing shape of ``c`` (pieces axis reduced).
    """
    c = np.asarray(c, dtype=float)
    h = np.diff(np.asarray(x, dtype=float)).reshape((-1,) + (1,) * (c.ndim - 2))
    h = np.broadcast_to(h, c.shape[1:])
    best = np.maximum(np.abs(c[3]), np.abs(_horner(c, h)))
    A, B, C = 3 * c[0], 2 * c[1], c[2]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        scale = np.abs(B) + np.abs(C) * np.where(h > 0, 1 / h, 0) + 1e-300
        quad = np.abs(A) * h > 1e-14 * scale
        disc = B * B - 4 * A * C
        sq = np.sqrt(np.where(disc >= 0, disc, 0.0))
        q = -0.5 * (B + np.where(B >= 0, sq, -sq))
        r1 = np.where(quad, q / A, np.where(B != 0, -C / B, np.nan))
        r2 = np.where(quad & (q != 0), C / q, np.nan)
        for root in (r1, r2):
            ok = np.isfinite(root) & (root > 0) & (root < h) & (~quad | (disc >= 0))
            val = np.abs(_horner(c, np.where(ok, root, 0.0)))
            best = np.where(ok, np.maximum(best, val), best)
    return best.max(axis=0)
