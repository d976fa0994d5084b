"""The special matrix solution Phi(t, t0) on a finite window.

Each column solves x(t) = e_j + int_{t0}^t L(u, x_u) du in both time
directions.  The integral equation is iterated on a uniform grid (step r/m)
until successive iterates agree; left of the window the iterate is continued
linearly from its first node.  Errors from that closure decay like the fast
modes, so accuracy near t0 is governed by the backward window length.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.interpolate import PPoly

from . import _pieces
from .constants import DichotomyConstants, solve_lambda
from .errors import ConvergenceError, WindowError
from .model import DelayKernel, eval_coefficient, mat_norm, require_hypothesis

DEFAULT_SPLIT = 16  # grid steps per delay


@dataclass(frozen=True, eq=False)
class SpecialSolutionTable:
    t0: float
    h: float
    times: np.ndarray  # (K,)
    values: np.ndarray  # (K, n, n): Phi(t_k, t0)
    derivs: np.ndarray  # (K, n, n): d/dt Phi(t_k, t0)
    residual: float
    iterations: int
    converged: bool = True
    m: int = DEFAULT_SPLIT  # grid steps per delay

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def window(self) -> tuple:
        return float(self.times[0]), float(self.times[-1])

    @property
    def base_index(self) -> int:
        return int(np.argmin(np.abs(self.times - self.t0)))

    def __post_init__(self):
        c = _pieces.hermite_coeffs(self.times, self.values, self.derivs)
        object.__setattr__(self, "poly", PPoly(c, self.times))

    def covers(self, lo: float, hi: float) -> bool:
        a, b = self.window
        tol = 1e-12 * max(1.0, abs(a), abs(b))
        return lo >= a - tol and hi <= b + tol

    def phi(self, t):
        """Phi(t, t0), shape (..., n, n); node values are returned exactly."""
        t = np.asarray(t, dtype=float)
        if not self.covers(float(np.min(t)), float(np.max(t))):
            raise WindowError(f"t outside table window {self.window}")
        k = (t - self.times[0]) / self.h
        on_node = np.abs(k - np.round(k)) < 1e-9
        out = self.poly(t)
        if np.any(on_node):
            idx = np.clip(np.round(k).astype(int), 0, self.times.size - 1)
            out = np.where(on_node[..., None, None], self.values[idx], out)
        return out

    def derivative(self, t):
        return self.poly(np.asarray(t, dtype=float), nu=1)

    def segment_poly(self, s: float, right=None) -> PPoly:
        """theta -> Phi(s + theta, t0) @ right on [-r, 0] as a piecewise cubic."""
        r = self.h * self.m
        pp = _pieces.restrict(self.poly, s - r, s, extra_breaks=())
        c = pp.c if right is None else pp.c @ right
        return PPoly(c, pp.x - s)

    def to_csv(self, path):
        n = self.dim
        idx = [(i, j) for i in range(n) for j in range(n)]
        if hasattr(path, "write"):
            self._write_rows(path, idx)
            return
        with open(path, "w", newline="", encoding="utf-8") as fh:
            self._write_rows(fh, idx)

    def _write_rows(self, fh, idx):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"phi_{i + 1}{j + 1}" for i, j in idx] + [f"dphi_{i + 1}{j + 1}" for i, j in idx])
        for t, V, D in zip(self.times, self.values, self.derivs):
            w.writerow([repr(float(t))] + [repr(float(V[i, j])) for i, j in idx] + [repr(float(D[i, j])) for i, j in idx])

    @classmethod
    def from_csv(cls, path, r: float, t0: Optional[float] = None) -> "SpecialSolutionTable":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        head, data = rows[0], np.array(rows[1:], dtype=float)
        nphi = sum(1 for hname in head if hname.startswith("phi_"))
        n = int(round(math.sqrt(nphi)))
        times = data[:, 0]
        values = data[:, 1 : 1 + nphi].reshape(-1, n, n)
        derivs = data[:, 1 + nphi : 1 + 2 * nphi].reshape(-1, n, n)
        if t0 is None:
            dev = np.abs(values - np.eye(n)).max(axis=(1, 2))
            t0 = float(times[np.argmin(dev)])
        h = float(times[1] - times[0])
        return cls(t0, h, times, values, derivs, float("nan"), 0, True, int(round(r / h)))


def _cumulative(D, h):
    """Fourth-order cumulative integral of uniform samples along axis 0."""
    K = D.shape[0]
    if K < 4:
        raise WindowError("window too short for the table grid")
    inc = np.empty((K - 1,) + D.shape[1:])
    inc[1:-1] = (-D[:-3] + 13 * D[1:-2] + 13 * D[2:-1] - D[3:]) * (h / 24)
    inc[0] = (9 * D[0] + 19 * D[1] - 5 * D[2] + D[3]) * (h / 24)
    inc[-1] = (D[-4] - 5 * D[-3] + 19 * D[-2] + 9 * D[-1]) * (h / 24)
    out = np.zeros_like(D)
    out[1:] = np.cumsum(inc, axis=0)
    return out


class _Functional:
    """Vectorized L(t_k, X_{t_k}) over all grid nodes for a matrix iterate."""

    def __init__(self, kernel: DelayKernel, times, h, m):
        self.k = kernel
        self.times = times
        self.h = h
        self.m = m
        self.lag_mats = kernel.term_matrices(times)
        self.lags = kernel.lags
        if kernel.density is not None:
            j = np.arange(m + 1)
            theta = -j * h
            w = np.full(m + 1, 2.0)
            w[1::2] = 4.0
            w[0] = w[-1] = 1.0
            self.simpson = w * h / 3
            self.dens = kernel.density_matrix(times[:, None], theta[None, :])  # (K, m+1, n, n)
            self.offsets = j

    def _at(self, X, D, q):
        """Hermite interpolation of the iterate at times q, closure to the left."""
        t = self.times
        u = (q - t[0]) / self.h
        k = np.clip(np.floor(u).astype(int), 0, t.size - 2)
        out = np.empty(q.shape + X.shape[1:])
        left = q < t[0]
        if np.any(left):
            out[left] = X[0] + (q[left] - t[0])[:, None, None] * D[0]
        inn = ~left
        if np.any(inn):
            kk = k[inn]
            s = (q[inn] - t[kk])[:, None, None]
            c = _pieces.hermite_coeffs(np.array([0.0, self.h]), np.stack([X[kk], X[kk + 1]]), np.stack([D[kk], D[kk + 1]]))[:, 0]
            out[inn] = ((c[0] * s + c[1]) * s + c[2]) * s + c[3]
        return out

    def __call__(self, X, D):
        out = np.zeros_like(X)
        for lag, A in zip(self.lags, self.lag_mats):
            if lag == 0.0:
                Xq = X
            else:
                steps = lag / self.h
                if abs(steps - round(steps)) < 1e-9:
                    idx = np.arange(X.shape[0]) - int(round(steps))
                    Xq = np.where((idx >= 0)[:, None, None], X[np.clip(idx, 0, None)], 0.0)
                    if np.any(idx < 0):
                        q = self.times[idx < 0] - lag
                        Xq[idx < 0] = X[0] + (q - self.times[0])[:, None, None] * D[0]
                else:
                    Xq = self._at(X, D, self.times - lag)
            out += A @ Xq
        if self.k.density is not None:
            K = X.shape[0]
            idx = np.arange(K)[:, None] - self.offsets[None, :]
            Xs = X[np.clip(idx, 0, None)]
            neg = idx < 0
            if np.any(neg):
                dt = (self.times[:, None] - self.offsets[None, :] * self.h - self.times[0])[neg]
                Xs[neg] = X[0] + dt[:, None, None] * D[0]
            out += np.einsum("j,kjab,kjbc->kac", self.simpson, self.dens, Xs)
        return out


def build_special_solution(
    kernel: DelayKernel,
    t0: float = 0.0,
    window: Optional[tuple] = None,
    tol: float = 1e-12,
    m: int = DEFAULT_SPLIT,
    max_iter: int = 1000,
    check: bool = True,
) -> SpecialSolutionTable:
    """Iterate the integral equation for Phi(., t0) on [t0 - T-, t0 + T+].

    ``window`` defaults to (10 r, 10 r).  The grid step is r/m (m even).
    """
    if check:
        require_hypothesis(kernel)
    if m % 2 or m < 8:
        raise ValueError("grid split m must be an even integer >= 8")
    r = kernel.r
    Tm, Tp = window if window is not None else (10 * r, 10 * r)
    lam, _ = solve_lambda(kernel.M, r)
    if lam * max(Tm, Tp) > 600 or max(Tm, Tp) / r > 600:
        raise WindowError("window too large: weighted values overflow; shrink the window")
    h = r / m
    nm, np_ = int(math.ceil(Tm / h - 1e-9)), int(math.ceil(Tp / h - 1e-9))
    times = t0 + h * np.arange(-nm, np_ + 1)
    times[nm] = t0
    n = kernel.dim
    L = _Functional(kernel, times, h, m)
    X = np.broadcast_to(np.eye(n), (times.size, n, n)).copy()
    D = np.zeros_like(X)
    weight = np.exp(-np.abs(times - t0) / r)[:, None, None]
    change, history = np.inf, []
    it = 0
    for it in range(1, max_iter + 1):
        D = L(X, D)
        F = _cumulative(D, h)
        Xn = np.eye(n) + (F - F[nm])
        Xn[nm] = np.eye(n)
        scale = np.maximum(1.0, mat_norm(X))[:, None, None]
        change = float(np.max(np.abs(Xn - X) / scale))
        weighted = float(np.max(np.abs(Xn - X) * weight))
        X = Xn
        history.append(change)
        if change <= tol and weighted <= tol:
            break
        if it > 40 and change >= 0.999 * min(history[-40:-20]):
            break  # stalled
    D = L(X, D)
    converged = change <= tol
    return SpecialSolutionTable(float(t0), h, times, X, D, change, it, converged, m)


def phi_value(table: SpecialSolutionTable, t: float, s: float) -> np.ndarray:
    """Phi(t, s) = Phi(t, t0) Phi(s, t0)^{-1}."""
    A = table.phi(t)
    if s == table.t0:
        return A
    B = table.phi(s)
    if np.linalg.cond(B) > 1e12:
        raise ConvergenceError(f"Phi({s:g}, t0) is numerically singular")
    return A @ np.linalg.inv(B)


@dataclass(frozen=True)
class PropertyReport:
    identity_error: float
    min_abs_det: float
    group_residual: float
    growth_ratio: float  # max |Phi(t,t0)| e^{-lam|t - t0|}
    backward_constant: float  # sup_{t<=t0} |Phi(t,t0)| e^{(t - t0)/r}
    derivative_residual: float
    derivative_order: float
    residual: float
    tol: float

    @property
    def identity_ok(self) -> bool:
        return self.identity_error == 0.0

    @property
    def nonsingular_ok(self) -> bool:
        return self.min_abs_det > 0.0

    @property
    def group_ok(self) -> bool:
        return self.group_residual <= 1e-7

    @property
    def growth_ok(self) -> bool:
        return self.growth_ratio <= 1.0 + self.tol

    @property
    def backward_ok(self) -> bool:
        return math.isfinite(self.backward_constant) and self.backward_constant <= 1.0 + self.tol

    @property
    def derivative_ok(self) -> bool:
        return self.derivative_residual <= 1e-9 or self.derivative_order >= 1.5

    @property
    def passed(self) -> bool:
        return all((self.identity_ok, self.nonsingular_ok, self.group_ok, self.growth_ok,
                    self.backward_ok, self.derivative_ok))

    def flags(self) -> dict:
        return {
            "identity": self.identity_ok,
            "nonsingular": self.nonsingular_ok,
            "group": self.group_ok,
            "growth": self.growth_ok,
            "backward": self.backward_ok,
            "derivative": self.derivative_ok,
        }


def check_driver_properties(table: SpecialSolutionTable, constants: DichotomyConstants, tol: float = 1e-6,
                            seed: int = 0, triples: int = 200) -> PropertyReport:
    t, X, D = table.times, table.values, table.derivs
    b = table.base_index
    n = table.dim
    r = constants.r
    ident = float(np.max(np.abs(X[b] - np.eye(n))))
    dets = np.abs(np.linalg.det(X))
    rng = np.random.default_rng(seed)
    lo, hi = table.window
    g = 0.0
    for _ in range(triples):
        t1, t2, t3 = rng.uniform(lo, hi, 3)
        lhs = phi_value(table, t3, t2) @ phi_value(table, t2, t1)
        rhs = phi_value(table, t3, t1)
        g = max(g, float(np.max(np.abs(lhs - rhs)) / max(1.0, np.max(np.abs(rhs)))))
    norms = mat_norm(X)
    growth = float(np.max(norms * np.exp(-constants.lambda_r * np.abs(t - table.t0))))
    back = norms[: b + 1] * np.exp((t[: b + 1] - table.t0) / r)
    backward = float(np.max(back))
    inv = np.linalg.inv(X)
    rhs = -inv @ D @ inv
    h = table.h
    k = np.arange(2, t.size - 2)
    fd1 = (inv[k + 1] - inv[k - 1]) / (2 * h)
    fd2 = (inv[k + 2] - inv[k - 2]) / (4 * h)
    scale = np.maximum(1.0, mat_norm(rhs[k]))
    res1 = float(np.max(mat_norm(fd1 - rhs[k]) / scale))
    res2 = float(np.max(mat_norm(fd2 - rhs[k]) / scale))
    order = math.log2(res2 / res1) if res1 > 0 and res2 > 0 else float("inf")
    return PropertyReport(ident, float(dets.min()), g, growth, backward, res1, order, table.residual, tol)
