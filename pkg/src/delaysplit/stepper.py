"""Method-of-steps integrator with cubic Hermite dense output.

Classic RK4 stages; the continuous extension is the Hermite cubic through
(y_n, f_n, y_{n+1}, f_{n+1}).  Lookups behind the current step read finished
history.  Lags shorter than the step and the density near theta=0 read a
provisional Hermite polynomial for the current step, refined by fixed-point
sweeps until it stops moving.  A single integration may carry a batch of
initial segments; everything is linear, so they share one step sequence.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import PPoly

from . import _pieces
from .errors import DimensionError, IntegrationError, WindowError
from .model import DelayKernel, HistorySegment, segment_norm, stack_segments

__all__ = ["DenseSolution", "integrate", "integrate_batch", "evolve_segment", "segment_norm"]

_GL_X, _GL_W = np.polynomial.legendre.leggauss(4)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


@dataclass(frozen=True, eq=False)
class DenseSolution:
    """Trajectory on [t0 - r, T]: initial history plus one Hermite cubic per step.

    Arrays carry a trailing batch axis; ``batched=False`` squeezes it on output.
    """

    t0: float
    T: float
    r: float
    initial: tuple  # HistorySegment per batch member
    t: np.ndarray  # (N+1,)
    y: np.ndarray  # (N+1, n, B)
    f: np.ndarray  # (N+1, n, B)
    traj: PPoly  # combined piecewise cubic, c shape (4, m, n, B)
    batched: bool = False

    @property
    def dim(self) -> int:
        return self.y.shape[1]

    @property
    def batch(self) -> int:
        return self.y.shape[2]

    @property
    def step_sizes(self) -> np.ndarray:
        return np.diff(self.t)

    def _out(self, v):
        return v if self.batched else v[..., 0]

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        self._check(t)
        return self._out(self.traj(t))

    def derivative(self, t):
        """Right derivative of the trajectory (initial slope for t < t0)."""
        t = np.asarray(t, dtype=float)
        self._check(t)
        return self._out(self.traj(t, nu=1))

    def _check(self, t):
        lo, hi = self.t0 - self.r, self.T
        tol = 1e-12 * max(1.0, abs(hi), abs(lo))
        if np.any(t < lo - tol) or np.any(t > hi + tol):
            raise WindowError(f"time outside computed window [{lo:g}, {hi:g}]")

    def segment_coeffs(self, t: float):
        """Breakpoints on [-r, 0] and coefficients (4, m, n, B) of x_t."""
        pp = _pieces.restrict(self.traj, t - self.r, t)
        return pp.x - t, pp.c

    def segment_norms(self, times) -> np.ndarray:
        """|x_t| for each time, shape (len(times),) or (len(times), B)."""
        out = []
        for s in np.atleast_1d(times):
            self._check(np.asarray([s - self.r, s]))
            x, c = self.segment_coeffs(float(s))
            out.append(_pieces.sup_abs(x, c).max(axis=0))
        out = np.array(out)
        return out if self.batched else out[:, 0]

    def to_csv(self, path, member: int = 0):
        """Write node values (history grid, then step times) as t, x_1..x_n."""
        seg = self.initial[member]
        times = np.concatenate([self.t0 + seg.grid[:-1], self.t])
        vals = self.traj(times)[..., member]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x_{i + 1}" for i in range(self.dim)])
            for s, row in zip(times, vals):
                w.writerow([repr(float(s))] + [repr(float(v)) for v in row])


def _breakpoints(kernel: DelayKernel, t0: float, T: float, kinks=(), breaks=()) -> np.ndarray:
    """Times where the solution loses smoothness.

    t0 shifted by sums of up to three lags, every interior history break
    shifted by one lag, and derivative jumps of the history by up to two.
    """
    lags = {lag for lag in kernel.lags if lag > 0}
    if kernel.density is not None:
        lags.add(kernel.r)  # the window edge t - r acts like a lag
    lags = sorted(lags)
    pts = set()
    for k in (1, 2, 3):
        for combo in itertools.combinations_with_replacement(lags, k):
            pts.add(sum(combo))
    for th in breaks:
        for lag in lags:
            pts.add(th + lag)
    for th in kinks:
        for k in (1, 2):
            for combo in itertools.combinations_with_replacement(lags, k):
                pts.add(th + sum(combo))
    pts = np.array(sorted(p for p in pts if 0 < p < T - t0), dtype=float)
    return t0 + _pieces.merge_breaks(pts) if pts.size else pts


def _kinks(x, c, rtol=1e-10) -> np.ndarray:
    """Interior breakpoints where the first derivative of the history jumps."""
    if x.size < 3:
        return np.empty(0)
    h = np.diff(x)[:-1].reshape((-1,) + (1,) * (c.ndim - 2))
    left = (3 * c[0, :-1] * h + 2 * c[1, :-1]) * h + c[2, :-1]
    right = c[2, 1:]
    scale = 1.0 + np.abs(c[2]).max()
    jump = np.abs(left - right).reshape(left.shape[0], -1).max(axis=1)
    return x[1:-1][jump > rtol * scale]


class _Stepper:
    def __init__(self, kernel, t0, hx, hc, max_step, fp_tol, fp_iter):
        self.k = kernel
        self.t0 = t0
        self.r = kernel.r
        self.hist = PPoly(hc, hx + t0)
        self.hist_breaks = hx + t0
        self.n, self.B = hc.shape[2], hc.shape[3]
        self.h_max = min(max_step, kernel.r / 8)
        self.fp_tol = fp_tol
        self.fp_iter = fp_iter
        self.lags = kernel.lags
        self.zero = [i for i, lag in enumerate(self.lags) if lag == 0.0]
        self.pos = [i for i, lag in enumerate(self.lags) if lag > 0.0]

    # storage ---------------------------------------------------------------
    def _alloc(self, cap):
        self.ts = np.empty(cap)
        self.ys = np.empty((cap, self.n, self.B))
        self.fs = np.empty((cap, self.n, self.B))
        self.cs = np.empty((cap, 4, self.n, self.B))  # per-step Hermite coefficients
        self.count = 0  # completed nodes

    def _grow(self):
        cap = 2 * self.ts.size
        for name in ("ts", "ys", "fs", "cs"):
            old = getattr(self, name)
            new = np.empty((cap,) + old.shape[1:])
            new[: old.shape[0]] = old
            setattr(self, name, new)

    # lookups -----------------------------------------------------------------
    def _history(self, s):
        """x(s) for s at or before the last finished node; s is 1-D."""
        out = np.empty(s.shape + (self.n, self.B))
        before = s <= self.t0
        if np.any(before):
            out[before] = self.hist(s[before])
        after = ~before
        if np.any(after):
            sa = s[after]
            last = self.count - 1
            idx = np.clip(np.searchsorted(self.ts[: self.count], sa, side="right") - 1, 0, max(last - 1, 0))
            u = (sa - self.ts[idx])[:, None, None]
            c = self.cs[idx]
            out[after] = ((c[:, 0] * u + c[:, 1]) * u + c[:, 2]) * u + c[:, 3]
        return out

    def _lookup(self, s, tn, guess):
        s = np.atleast_1d(s)
        out = np.empty(s.shape + (self.n, self.B))
        inside = s > tn
        if np.any(~inside):
            out[~inside] = self._history(s[~inside])
        if np.any(inside):
            u = (s[inside] - tn)[:, None, None]
            g = guess
            out[inside] = ((g[0] * u + g[1]) * u + g[2]) * u + g[3]
        return out

    def _density_nodes(self, t, tn):
        lo = t - self.r
        hb = self.hist_breaks
        steps = self.ts[: self.count]
        pts = np.concatenate([[lo, t], hb[(hb > lo) & (hb < t)], steps[(steps > lo) & (steps < t)]])
        if tn > lo and tn < t:
            pts = np.append(pts, tn)
        x = _pieces.merge_breaks(pts)
        h = np.diff(x)
        s = (x[:-1, None] + h[:, None] * _GL_X).ravel()
        w = (h[:, None] * _GL_W).ravel()
        return s, w

    def rhs(self, t, Y, tn, guess):
        k = self.k
        out = np.zeros((self.n, self.B))
        mats = k.term_matrices(t)
        for i in self.zero:
            out += mats[i] @ Y
        if self.pos:
            s = t - self.lags[self.pos]
            X = self._lookup(s, tn, guess)
            for j, i in enumerate(self.pos):
                out += mats[i] @ X[j]
        if k.density is not None:
            s, w = self._density_nodes(t, tn)
            X = self._lookup(s, tn, guess)
            Bm = k.density_matrix(t, s - t)
            out += np.einsum("q,qij,qjb->ib", w, Bm, X)
        return out

    # driver -------------------------------------------------------------------
    def run(self, y0, T):
        t0 = self.t0
        est = int(np.ceil((T - t0) / self.h_max)) + 8
        bps = list(_breakpoints(self.k, t0, T, _kinks(self.hist.x - t0, self.hist.c), self.hist.x[1:-1] - t0)) + [T]
        self._alloc(est + len(bps))
        self.ts[0] = t0
        self.ys[0] = y0
        self.count = 1
        # f at t0 reads only the initial history (lag zero gives phi(0))
        f0 = self.rhs(t0, y0, t0, np.zeros((4, self.n, self.B)))
        self.fs[0] = f0
        tn, yn, fn = t0, y0, f0
        prev = None
        bi = 0
        near = [lag for lag in self.lags if lag > 0]
        while tn < T:
            while bi < len(bps) and bps[bi] <= tn + 1e-12 * self.h_max:
                bi += 1
            target = bps[bi] if bi < len(bps) else T
            h = min(self.h_max, target - tn)
            if target - (tn + h) < 1e-9 * self.h_max:
                h = target - tn
            if not h > 1e-14 * max(1.0, abs(tn)):
                raise IntegrationError("step size underflow", time=tn)
            t1 = tn + h
            needs_fp = self.k.density is not None or any(lag < h * (1 - 1e-9) for lag in near)
            if prev is None:
                y1g, f1g = yn + h * fn, fn
            else:
                c, hp = prev
                u = hp + h
                y1g = ((c[0] * u + c[1]) * u + c[2]) * u + c[3]
                f1g = (3 * c[0] * u + 2 * c[1]) * u + c[2]
            for _ in range(self.fp_iter):
                guess = _pieces.hermite_coeffs(np.array([tn, t1]), np.stack([yn, y1g]), np.stack([fn, f1g]))[:, 0]
                k1 = fn
                k2 = self.rhs(tn + h / 2, yn + h / 2 * k1, tn, guess)
                k3 = self.rhs(tn + h / 2, yn + h / 2 * k2, tn, guess)
                k4 = self.rhs(t1, yn + h * k3, tn, guess)
                y1 = yn + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
                f1 = self.rhs(t1, y1, tn, guess)
                if not needs_fp:
                    break
                scale = 1.0 + np.max(np.abs(y1))
                moved = max(np.max(np.abs(y1 - y1g)), h * np.max(np.abs(f1 - f1g)))
                y1g, f1g = y1, f1
                if moved <= self.fp_tol * scale:
                    break
            if not (np.all(np.isfinite(y1)) and np.all(np.isfinite(f1))):
                raise IntegrationError(f"non-finite state at t={t1:g}", time=t1)
            c = _pieces.hermite_coeffs(np.array([tn, t1]), np.stack([yn, y1]), np.stack([fn, f1]))[:, 0]
            if self.count >= self.ts.size:
                self._grow()
            i = self.count
            self.cs[i - 1] = c
            self.ts[i], self.ys[i], self.fs[i] = t1, y1, f1
            self.count += 1
            prev = (c, h)
            tn, yn, fn = t1, y1, f1
        n = self.count
        return self.ts[:n].copy(), self.ys[:n].copy(), self.fs[:n].copy(), self.cs[: n - 1].copy()


def integrate_batch(
    kernel: DelayKernel,
    t0: float,
    phis: Sequence[HistorySegment],
    T: float,
    max_step: Optional[float] = None,
    fp_tol: float = 1e-12,
    fp_iter: int = 50,
    batched: bool = True,
) -> DenseSolution:
    """Integrate x'(t) = L(t, x_t) from each x_{t0} = phi up to T."""
    phis = list(phis)
    if not phis:
        raise ValueError("empty batch")
    for p in phis:
        if p.dim != kernel.dim:
            raise DimensionError(f"segment dim {p.dim} != kernel dim {kernel.dim}")
        if abs(p.r - kernel.r) > 1e-12 * kernel.r:
            raise ValueError("segment interval does not match kernel delay")
    if T < t0:
        raise ValueError("T must not precede t0")
    r, hx, hc = stack_segments(phis)
    st = _Stepper(kernel, float(t0), hx, hc, max_step or kernel.r / 16, fp_tol, fp_iter)
    y0 = PPoly(hc, hx)(0.0)
    if T == t0:
        st._alloc(1)
        st.ts[0], st.count = t0, 1
        ts, ys = np.array([float(t0)]), y0[None]
        fs = st.rhs(t0, y0, t0, np.zeros((4,) + y0.shape))[None]
        traj = PPoly(hc, hx + t0)
    else:
        ts, ys, fs, cs = st.run(y0, float(T))
        x = np.concatenate([hx + t0, ts[1:]])
        x[hx.size - 1] = t0
        c = np.concatenate([hc, np.moveaxis(cs, 0, 1)], axis=1)
        traj = PPoly(c, x)
    return DenseSolution(float(t0), float(T), kernel.r, tuple(phis), ts, ys, fs, traj, batched)


def integrate(kernel: DelayKernel, t0: float, phi: HistorySegment, T: float, **kw) -> DenseSolution:
    return integrate_batch(kernel, t0, [phi], T, batched=False, **kw)


def evolve_segment(sol: DenseSolution, t: float, member: Optional[int] = None) -> HistorySegment:
    """x_t as a segment, i.e. T(t, t0) applied to the initial history."""
    tol = 1e-12 * max(1.0, abs(sol.T))
    if t < sol.t0 - tol or t > sol.T + tol:
        raise WindowError(f"t={t:g} outside computed window [{sol.t0:g}, {sol.T:g}]")
    if member is None:
        if sol.batch != 1:
            raise ValueError("batched solution: pass member")
        member = 0
    init = sol.initial[member]
    if t == sol.t0:
        return init
    x, c = sol.segment_coeffs(t)
    return HistorySegment(sol.r, PPoly(c[..., member], x), init.num_nodes)
