"""The slow/fast splitting of C[-r, 0] and its numerical checks.

l(s, phi) is the limit of Phi(s, t) x(t) along the solution started from phi
at time s.  P(s) phi = Phi(s + ., s) l(s, phi) spans the slow directions and
Q(s) = I - P(s) the fast ones.  Operator norms of P and Q are only sampled,
so every norm reported here is a lower bound.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import PPoly

from . import _pieces
from .constants import DEFAULT_RHO, DichotomyConstants, compute_constants
from .errors import ConvergenceError, WindowError
from .model import DelayKernel, HistorySegment, require_hypothesis
from .special import SpecialSolutionTable, build_special_solution, phi_value
from .stepper import evolve_segment, integrate_batch


# ---------------------------------------------------------------------------
# horizons and tables


def certified_horizon(M: float, r: float, lam: float, tol: float) -> float:
    """Time after which |y(inf) - y(t)| <= tol |phi| by the decay estimate on y'."""
    x = r * lam
    rate = -math.log(x) / r
    C = 2.0 * lam * math.e**2 / x
    return max(r, math.log(C / (rate * tol)) / rate)


def prepare_table(kernel: DelayKernel, s: float = 0.0, tol: float = 1e-10, extra: Optional[float] = None,
                  backward: Optional[float] = None) -> SpecialSolutionTable:
    """Special-solution table wide enough for limits started anywhere in [s, s + extra]."""
    require_hypothesis(kernel)
    r = kernel.r
    lam = compute_constants(kernel.M, r).lambda_r
    H = certified_horizon(kernel.M, r, lam, tol)
    extra = 10 * r if extra is None else extra
    back = 10 * r if backward is None else backward
    return build_special_solution(kernel, s, window=(back, extra + 4 * H + 2 * r))


# ---------------------------------------------------------------------------
# the limit functional


# the dyadic check compares two discretisations (table and stepper) whose
# consistency floor is around 1e-8 relative, so it cannot be as tight as the tail
CAUCHY_TOL = 1e-7


def _limits(kernel, table, t0, segs, tol, max_doublings=64, cauchy_tol=CAUCHY_TOL):
    r = kernel.r
    lam = compute_constants(kernel.M, r).lambda_r
    H = certified_horizon(kernel.M, r, lam, tol)
    scale = np.array([max(s.norm(), 1e-300) for s in segs])
    P0 = table.phi(t0)
    for _ in range(max_doublings):
        end = t0 + 2 * H
        if not table.covers(t0 - r, end):
            raise WindowError(f"limit horizon {end:g} exceeds table window {table.window}; widen the window")
        sol = integrate_batch(kernel, t0, segs, end)
        ys = []
        for t in (t0 + H, end):
            ys.append(P0 @ np.linalg.solve(table.phi(t), sol(t)))
        diff = np.max(np.abs(ys[1] - ys[0]), axis=0) / scale
        if np.all(diff <= max(tol, cauchy_tol)):
            return ys[1]
        H *= 2
    raise ConvergenceError("limit of Phi(s,t)x(t) failed the Cauchy check", residual=float(diff.max()))


def limit_functional(kernel: DelayKernel, table: SpecialSolutionTable, t0: float, phi: HistorySegment,
                     tol: float = 1e-10) -> np.ndarray:
    """l(t0, phi) in R^n."""
    return _limits(kernel, table, t0, [phi], tol)[:, 0]


def limit_batch(kernel, table, t0, phis: Sequence[HistorySegment], tol: float = 1e-10) -> np.ndarray:
    """l(t0, phi) for many segments at once, shape (n, B)."""
    return _limits(kernel, table, t0, list(phis), tol)


def slow_poly(table: SpecialSolutionTable, s: float, v) -> PPoly:
    """theta -> Phi(s + theta, s) v on [-r, 0]; ``v`` may be (n,) or (n, B)."""
    right = np.linalg.solve(table.phi(s), np.asarray(v, dtype=float))
    return table.segment_poly(s, right=right)


def project(kernel, table, t0, phi: HistorySegment, tol: float = 1e-10):
    """(P phi, Q phi) at time t0."""
    l = limit_functional(kernel, table, t0, phi, tol)
    p = HistorySegment(kernel.r, slow_poly(table, t0, l), phi.num_nodes)
    return p, phi - p


# ---------------------------------------------------------------------------
# sampling the unit ball


@dataclass(frozen=True)
class SamplerConfig:
    seed: int = 0
    samples: int = 1000
    num_nodes: int = 17
    pairs: int = 10_000
    families: tuple = ("constant", "hat", "bangbang", "random")


def sample_unit_ball(config: SamplerConfig, n: int) -> np.ndarray:
    """Node values (B, num_nodes, n) of piecewise-linear segments with sup norm 1."""
    rng = np.random.default_rng(config.seed)
    k = config.num_nodes
    out = []
    fam = config.families
    if "constant" in fam:
        for i in range(n):
            for sgn in (1.0, -1.0):
                v = np.zeros((k, n))
                v[:, i] = sgn
                out.append(v)
    if "hat" in fam:
        for i in range(n):
            for j in range(k):
                for sgn in (1.0, -1.0):
                    v = np.zeros((k, n))
                    v[j, i] = sgn
                    out.append(v)
                    if j < k - 1:
                        w = v.copy()
                        w[-1, i] = -sgn  # peak against the opposite endpoint
                        out.append(w)
    if "bangbang" in fam:
        for i in range(n):
            alt = np.zeros((k, n))
            alt[:, i] = np.where(np.arange(k) % 2 == 0, 1.0, -1.0)
            out.extend([alt, -alt])
    out = out[: config.samples]
    remaining = config.samples - len(out)
    kinds = [f for f in ("bangbang", "random") if f in fam] or ["random"]
    for q in range(max(remaining, 0)):
        if kinds[q % len(kinds)] == "bangbang":
            v = rng.choice([-1.0, 1.0], size=(k, n))
        else:
            v = rng.uniform(-1.0, 1.0, size=(k, n))
            v /= np.abs(v).max()
        out.append(v)
    return np.array(out)


class Representer:
    """l(s, .) restricted to piecewise-linear segments on a uniform grid.

    Built from the limits of the hat basis; applying it is a matrix product,
    which makes large unit-ball samples affordable.
    """

    def __init__(self, kernel, table, s, num_nodes=17, tol=1e-10):
        self.kernel, self.table, self.s = kernel, table, s
        self.num_nodes = num_nodes
        n = kernel.dim
        basis = []
        for j in range(num_nodes):
            for i in range(n):
                v = np.zeros((num_nodes, n))
                v[j, i] = 1.0
                basis.append(HistorySegment.piecewise_linear(kernel.r, v))
        self.matrix = limit_batch(kernel, table, s, basis, tol)  # (n, num_nodes * n)
        self.grid = np.linspace(-kernel.r, 0.0, num_nodes)

    def __call__(self, values) -> np.ndarray:
        """values (B, num_nodes, n) -> l (n, B)."""
        B = values.shape[0]
        return self.matrix @ values.reshape(B, -1).T

    def split_coeffs(self, values):
        """Breakpoints and coefficients of (phi, P phi, Q phi), each (4, m, n, B)."""
        l = self(values)
        slow = slow_poly(self.table, self.s, l)
        lin = PPoly(_pieces.linear_coeffs(self.grid, np.moveaxis(values, 0, -1)), self.grid)
        x = _pieces.merge_breaks(lin.x, slow.x)
        phi_c = _pieces.taylor_coeffs(lin, x)
        p_c = _pieces.taylor_coeffs(slow, x)
        return x, phi_c, p_c, phi_c - p_c, l


def _sup(x, c):
    return _pieces.sup_abs(x, c).max(axis=0)


def estimate_norms(kernel, table, t0, sampler_config: SamplerConfig = SamplerConfig(), representer=None,
                   tol: float = 1e-10):
    """Sampled lower bounds (|P(t0)|, |Q(t0)|) over the unit ball."""
    rep = representer or Representer(kernel, table, t0, sampler_config.num_nodes, tol)
    vals = sample_unit_ball(sampler_config, kernel.dim)
    x, phi_c, p_c, q_c, _ = rep.split_coeffs(vals)
    nphi = _sup(x, phi_c)
    return float(np.max(_sup(x, p_c) / nphi)), float(np.max(_sup(x, q_c) / nphi))


def _unit(x, c):
    nrm = _sup(x, c)
    ok = nrm > 1e-14
    return c[..., ok] / nrm[ok], int((~ok).sum())


def splitting_indices(norms, xi_plus, xi_minus):
    """Separation-index and angular-distance estimates.

    ``norms`` = (norm_P_lower, norm_Q_lower).  ``xi_plus`` / ``xi_minus`` are
    (x, c) pairs of matching breakpoints with pairs along the last axis.
    Returns (dist_plus, dist_minus, gamma_est, skipped).
    """
    nP, nQ = norms
    x, cp = xi_plus
    x2, cm = xi_minus
    if x.shape != x2.shape or np.any(x != x2):
        xm = _pieces.merge_breaks(x, x2)
        cp = _pieces.taylor_coeffs(PPoly(cp, x), xm)
        cm = _pieces.taylor_coeffs(PPoly(cm, x2), xm)
        x = xm
    np_ = _sup(x, cp)
    nm = _sup(x, cm)
    ok = (np_ > 1e-14) & (nm > 1e-14)
    diff = cp[..., ok] / np_[ok] - cm[..., ok] / nm[ok]
    gamma = float(_sup(x, diff).min()) if ok.any() else float("nan")
    return 1.0 / nP, 1.0 / nQ, gamma, int((~ok).sum())


# ---------------------------------------------------------------------------
# full report


@dataclass
class SplittingReport:
    s: float
    r: float
    horizon: float
    samples: int
    norm_P_lower: float
    norm_Q_lower: float
    dist_plus: float
    dist_minus: float
    gamma_est: float
    skipped: int
    proj_bound: float
    delta: float
    forward_exponent: float
    backward_exponent: float
    L_measured: float
    l_samples: np.ndarray = field(repr=False, default=None)
    direction: str = "norms are lower bounds; dist and gamma estimates are upper bounds"

    @property
    def bound_consistent(self) -> bool:
        return self.norm_P_lower <= self.proj_bound and self.norm_Q_lower <= self.proj_bound

    @property
    def sandwich_ok(self) -> bool:
        return self.gamma_est >= 1.0 / self.proj_bound - 1e-9

    @property
    def delta_ok(self) -> bool:
        return min(self.dist_plus, self.dist_minus, self.gamma_est) >= self.delta - 1e-9

    def row(self) -> dict:
        return {
            "r": self.r, "s": self.s, "samples": self.samples, "norm_P_lower": self.norm_P_lower,
            "norm_Q_lower": self.norm_Q_lower, "dist_plus": self.dist_plus, "dist_minus": self.dist_minus,
            "gamma_est": self.gamma_est, "proj_bound": self.proj_bound, "delta": self.delta,
            "forward_exponent": self.forward_exponent, "backward_exponent": self.backward_exponent,
            "L_measured": self.L_measured, "bound_ok": self.bound_consistent, "sandwich_ok": self.sandwich_ok,
            "delta_ok": self.delta_ok,
        }


def _fit_slope(t, logs):
    A = np.vstack([t, np.ones_like(t)]).T
    return float(np.linalg.lstsq(A, logs, rcond=None)[0][0])


def analyze_splitting(kernel: DelayKernel, s: float = 0.0, config: SamplerConfig = SamplerConfig(),
                      rho: float = DEFAULT_RHO, tol: float = 1e-10, table=None, delta: Optional[float] = None,
                      fit_samples: int = 16) -> SplittingReport:
    """Sample P(s), Q(s) and estimate indices, angles and empirical exponents."""
    const = compute_constants(kernel.M, kernel.r, rho)
    table = table or prepare_table(kernel, s, tol)
    r = kernel.r
    rep = Representer(kernel, table, s, config.num_nodes, tol)
    vals = sample_unit_ball(config, kernel.dim)
    x, phi_c, p_c, q_c, l = rep.split_coeffs(vals)
    nphi = _sup(x, phi_c)
    nP = float(np.max(_sup(x, p_c) / nphi))
    nQ = float(np.max(_sup(x, q_c) / nphi))

    # pairs: Q psi against -P psi, +P psi and random slow directions
    rng = np.random.default_rng(config.seed + 1)
    B = vals.shape[0]
    idx = np.arange(config.pairs) % B
    kind = (np.arange(config.pairs) // B) % 3
    v = rng.normal(size=(kernel.dim, config.pairs))
    slow_rand = _pieces.taylor_coeffs(slow_poly(table, s, v), x)
    plus = np.where(kind == 0, -1.0, 1.0) * p_c[..., idx]
    plus = np.where(kind == 2, slow_rand, plus)
    dist_plus, dist_minus, gamma, skipped = splitting_indices((nP, nQ), (x, plus), (x, q_c[..., idx]))

    # empirical exponents: fast part forward, slow part backward
    fast_vals = vals[:fit_samples]
    segs = [HistorySegment.piecewise_linear(r, v_) for v_ in fast_vals]
    lq = rep(fast_vals)
    qsegs = [sg - HistorySegment(r, slow_poly(table, s, lq[:, i]), sg.num_nodes) for i, sg in enumerate(segs)]
    sol = integrate_batch(kernel, s, qsegs, s + 10 * r)
    ts = s + np.linspace(2 * r, 10 * r, 17)
    norms = sol.segment_norms(ts)
    fwd = max(_fit_slope(ts - s, np.log(np.maximum(norms[:, i], 1e-300))) for i in range(norms.shape[1]))
    lo = max(table.window[0] + r, s - 9 * r)
    sig = np.linspace(lo, s, 10)
    ev = np.eye(kernel.dim)
    bvals = []
    for sg in sig:
        bvals.append(_sup(*_split(table.segment_poly(sg, right=np.linalg.solve(table.phi(s), ev)))))
    bvals = np.array(bvals)
    back = max(_fit_slope(s - sig, np.log(bvals[:, j])) for j in range(kernel.dim))
    if delta is None:
        delta = 1.0 / const.proj_bound
    H = certified_horizon(kernel.M, r, const.lambda_r, tol)
    return SplittingReport(
        s, r, 2 * H, B, nP, nQ, dist_plus, dist_minus, gamma, skipped, const.proj_bound, delta, fwd, back,
        const.L_with(max(nP, nQ)), l,
    )


def _split(pp):
    return pp.x, pp.c


# ---------------------------------------------------------------------------
# dichotomy inequalities


@dataclass
class DichotomyCheckReport:
    forward_ratio: float  # max |T(t,s)q| / (K2 e^{beta(t-s)} |q|)
    forward_worst_t: float
    backward_ratio: float  # max |Phi_s(.,t)v| / (e^{lam(t-s)} |Phi_t(.,t)v|)
    commutation_residual: float
    slack: float
    commutation_tol: float = 1e-6

    @property
    def forward_ok(self) -> bool:
        return self.forward_ratio <= 1.0 + self.slack

    @property
    def backward_ok(self) -> bool:
        return self.backward_ratio <= 1.0 + self.slack

    @property
    def commutation_ok(self) -> bool:
        return self.commutation_residual <= self.commutation_tol

    @property
    def passed(self) -> bool:
        return self.forward_ok and self.backward_ok and self.commutation_ok


def random_segments(rng, r: float, n: int, count: int, num_nodes: int = 17) -> list:
    """Mixed smooth and piecewise-linear test segments."""
    out = []
    for q in range(count):
        if q % 2 == 0:
            out.append(HistorySegment.piecewise_linear(r, rng.uniform(-1, 1, size=(num_nodes, n))))
        else:
            freq = rng.uniform(0.5, 6.0, size=n) / r
            ph = rng.uniform(0, 2 * np.pi, size=n)
            amp = rng.uniform(0.2, 1.0, size=n)
            out.append(HistorySegment.from_function(lambda th, f=freq, p=ph, a=amp: a * np.sin(f * th + p), r, num_nodes))
    return out


def hat_segment(r: float, n: int = 1, num_nodes: int = 17, peak: int = None) -> HistorySegment:
    """Peak +1 at an interior node, value -1 at theta = 0."""
    v = np.zeros((num_nodes, n))
    v[(num_nodes - 1) // 2 if peak is None else peak] = 1.0
    v[-1] = -1.0
    return HistorySegment.piecewise_linear(r, v)


def verify_dichotomy(kernel: DelayKernel, table: SpecialSolutionTable, constants: DichotomyConstants, t0: float,
                     samples: Sequence[HistorySegment], horizon: Optional[float] = None, slack: float = 1e-6,
                     tol: float = 1e-10, grid: int = 81, commutation_times: int = 3) -> DichotomyCheckReport:
    """Check both dichotomy estimates and P(t)T(t,s) = T(t,s)P(s) on samples."""
    r = kernel.r
    s = t0
    horizon = 10 * r if horizon is None else horizon
    if not table.covers(s - r, s + horizon):
        raise WindowError("horizon beyond table window")
    samples = list(samples)
    ls = limit_batch(kernel, table, s, samples, tol)
    slow = slow_poly(table, s, ls)
    psegs = [HistorySegment(r, PPoly(slow.c[..., i], slow.x), sg.num_nodes) for i, sg in enumerate(samples)]
    qsegs = [sg - p for sg, p in zip(samples, psegs)]

    # (a) fast part decays with (K2, beta)
    ts = s + np.linspace(0.0, horizon, grid)
    sol = integrate_batch(kernel, s, qsegs + psegs, s + horizon)
    norms = sol.segment_norms(ts)  # (grid, 2B)
    nb = len(samples)
    qn = np.array([q.norm() for q in qsegs])
    bound = constants.K2 * np.exp(constants.beta * (ts - s))[:, None] * qn[None, :]
    ratio = norms[:, :nb] / bound
    worst = np.unravel_index(np.argmax(ratio), ratio.shape)
    fwd = float(ratio.max())

    # (b) slow part grows backward no faster than e^{lam |t - s|}
    lam = constants.lambda_r
    vs = np.concatenate([np.eye(kernel.dim), ls / np.maximum(np.abs(ls).max(axis=0), 1e-300)], axis=1)
    back = 0.0
    for t in ts[1:]:
        right = np.linalg.solve(table.phi(t), vs)
        at_s = _sup(*_split(table.segment_poly(s, right=right)))
        at_t = _sup(*_split(table.segment_poly(t, right=right)))
        back = max(back, float(np.max(at_s / (np.exp(lam * (t - s)) * at_t))))

    # (c) commutation, two independent paths
    comm = 0.0
    scale = np.array([sg.norm() for sg in samples])
    for t in s + horizon * np.arange(1, commutation_times + 1) / commutation_times:
        tp = [evolve_segment(sol, t, member=nb + i) for i in range(nb)]  # T(t,s)P(s)phi
        xt = [evolve_segment(sol, t, member=i) + tp[i] for i in range(nb)]  # T(t,s)phi
        lt = limit_batch(kernel, table, t, xt, tol)
        pt = slow_poly(table, t, lt)  # P(t)T(t,s)phi
        x = _pieces.merge_breaks(pt.x, *[p.breaks for p in tp])
        a = _pieces.taylor_coeffs(pt, x)
        b = np.stack([_pieces.taylor_coeffs(p.poly, x) for p in tp], axis=-1)
        comm = max(comm, float(np.max(_sup(x, a - b) / scale)))
    return DichotomyCheckReport(fwd, float(ts[worst[0]] - s), back, comm, slack)
