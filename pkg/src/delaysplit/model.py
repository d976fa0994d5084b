"""Delay kernels, history segments and the linear delay functional.

A kernel is a finite set of discrete lags with time-dependent matrix
coefficients plus an optional distributed density on [-r, 0].  Vector norms
are max norms; matrix norms are the induced max-row-sum norm.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import quad, quad_vec
from scipy.interpolate import CubicSpline, PPoly

from . import _pieces
from .errors import DimensionError, HypothesisError, QuadratureError

MIN_NODES = 16


def vec_norm(v) -> float:
    return float(np.max(np.abs(v))) if np.size(v) else 0.0


def mat_norm(A) -> np.ndarray:
    """Induced max-row-sum norm, vectorized over leading axes."""
    return np.abs(A).sum(axis=-1).max(axis=-1)


# ---------------------------------------------------------------------------
# time profiles and coefficients


@dataclass(frozen=True)
class Profile:
    """Scalar time profile multiplying a constant matrix.

    ``const``    -> scale
    ``sin``      -> offset + amp*sin(freq*t + phase)
    ``expdecay`` -> offset + amp*exp(-rate*t)
    """

    kind: str = "const"
    scale: float = 1.0
    offset: float = 0.0
    amp: float = 0.0
    freq: float = 1.0
    phase: float = 0.0
    rate: float = 1.0

    def __post_init__(self):
        if self.kind not in ("const", "sin", "expdecay"):
            raise ValueError(f"unknown time profile {self.kind!r}")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "const":
            return np.full(t.shape, self.scale)
        if self.kind == "sin":
            return self.offset + self.amp * np.sin(self.freq * t + self.phase)
        return self.offset + self.amp * np.exp(-self.rate * t)

    @classmethod
    def from_config(cls, cfg) -> "Profile":
        if cfg is None:
            return cls()
        if isinstance(cfg, str):
            return cls(kind=cfg)
        return cls(**cfg)


@dataclass(frozen=True)
class MatrixCoefficient:
    """A(t) = matrix * profile(t); accepts scalar or array ``t``."""

    matrix: tuple
    profile: Profile = field(default_factory=Profile)

    @classmethod
    def of(cls, matrix, profile: Optional[Profile] = None) -> "MatrixCoefficient":
        m = np.atleast_2d(np.asarray(matrix, dtype=float))
        if m.shape[0] != m.shape[1]:
            raise DimensionError(f"coefficient must be square, got {m.shape}")
        return cls(tuple(map(tuple, m)), profile or Profile())

    @property
    def array(self) -> np.ndarray:
        return np.array(self.matrix, dtype=float)

    def __call__(self, t):
        s = self.profile(t)
        return s[..., None, None] * self.array


def eval_coefficient(coef, t) -> np.ndarray:
    """Evaluate a coefficient at scalar or array times, returning (..., n, n)."""
    if isinstance(coef, MatrixCoefficient):
        return coef(t)
    t = np.asarray(t, dtype=float)
    if t.ndim == 0:
        return np.atleast_2d(np.asarray(coef(float(t)), dtype=float))
    out = [np.atleast_2d(np.asarray(coef(float(s)), dtype=float)) for s in t.ravel()]
    return np.stack(out).reshape(t.shape + out[0].shape)


@dataclass(frozen=True)
class DiscreteTerm:
    lag: float
    coef: object  # MatrixCoefficient or callable t -> (n, n)


@dataclass(frozen=True)
class Density:
    """B(t, theta) = coef(t) * weight(theta) on [-r, 0]."""

    coef: object
    weight: Optional[Callable] = None

    def weight_at(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.weight is None:
            return np.ones(theta.shape)
        return np.asarray(np.vectorize(self.weight, otypes=[float])(theta))


@dataclass(frozen=True)
class DelayKernel:
    dim: int
    r: float
    M: float
    terms: tuple = ()
    density: Optional[Density] = None

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if int(self.dim) != self.dim or self.dim < 1:
            raise DimensionError("dim must be a positive integer")
        if not (self.r > 0) or not math.isfinite(self.r):
            raise ValueError("delay r must be positive and finite")
        if not (self.M > 0) or not math.isfinite(self.M):
            raise ValueError("variation bound M must be positive and finite")
        for term in self.terms:
            if not (0.0 <= term.lag <= self.r * (1 + 1e-12)):
                raise ValueError(f"lag {term.lag} outside [0, r={self.r}]")

    @property
    def lags(self) -> np.ndarray:
        return np.array([t.lag for t in self.terms], dtype=float)

    def term_matrices(self, t) -> list:
        mats = []
        for term in self.terms:
            A = eval_coefficient(term.coef, t)
            if A.shape[-2:] != (self.dim, self.dim):
                raise DimensionError(f"term matrix shape {A.shape[-2:]} != ({self.dim}, {self.dim})")
            mats.append(A)
        return mats

    def density_matrix(self, t, theta) -> np.ndarray:
        """B(t, theta) broadcast over array t and theta -> (..., n, n)."""
        if self.density is None:
            raise ValueError("kernel has no distributed density")
        t, theta = np.broadcast_arrays(np.asarray(t, float), np.asarray(theta, float))
        C = eval_coefficient(self.density.coef, t)
        return C * self.density.weight_at(theta)[..., None, None]

    def weight_l1(self) -> float:
        if self.density is None:
            return 0.0
        if self.density.weight is None:
            return self.r
        val, _ = quad(lambda s: abs(self.density.weight(s)), -self.r, 0.0, epsabs=1e-13, limit=200)
        return val

    def variation(self, t) -> np.ndarray:
        """Sum of coefficient norms plus density mass at times ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        total = np.zeros(t.shape)
        for A in self.term_matrices(t):
            total += mat_norm(A)
        if self.density is not None:
            total += mat_norm(eval_coefficient(self.density.coef, t)) * self.weight_l1()
        return total

    def with_delay(self, r: float, M: Optional[float] = None) -> "DelayKernel":
        """Same coefficients with all lags rescaled to a new delay."""
        s = r / self.r
        terms = tuple(DiscreteTerm(t.lag * s, t.coef) for t in self.terms)
        density = self.density
        if density is not None and density.weight is not None:
            w = density.weight
            density = Density(density.coef, _Rescaled(w, s))
        return DelayKernel(self.dim, r, self.M if M is None else M, terms, density)


@dataclass(frozen=True)
class _Rescaled:
    weight: Callable
    factor: float

    def __call__(self, theta):
        # mass-preserving stretch of the lag profile
        return self.weight(theta / self.factor) / self.factor


def zero_kernel(dim: int = 1, r: float = 0.1, M: float = 1.0) -> DelayKernel:
    return DelayKernel(dim, r, M)


def scalar_delay(a: float, r: float, M: Optional[float] = None) -> DelayKernel:
    """x'(t) = -a x(t - r)."""
    return DelayKernel(1, r, abs(a) if M is None else M, (DiscreteTerm(r, MatrixCoefficient.of([[-a]])),))


def lag_zero(A, r: float, M: Optional[float] = None) -> DelayKernel:
    """Ordinary x'(t) = A x(t) posed on C[-r, 0]."""
    coef = MatrixCoefficient.of(A)
    bound = float(mat_norm(coef.array)) if M is None else M
    return DelayKernel(coef.array.shape[0], r, bound, (DiscreteTerm(0.0, coef),))


# ---------------------------------------------------------------------------
# configuration files


def kernel_from_config(cfg: dict, r: Optional[float] = None) -> DelayKernel:
    """Build a kernel from a parsed config mapping.

    Keys: ``dim``, ``r``, ``M``, ``terms`` (each with ``lag`` or ``lag_frac``
    and ``matrix`` plus optional ``profile``), optional ``density`` with
    ``matrix`` and ``profile``.  ``r`` overrides the file value; ``lag_frac``
    lags scale with it.
    """
    dim = int(cfg["dim"])
    r = float(cfg["r"] if r is None else r)
    terms = []
    for item in cfg.get("terms", []):
        if "lag_frac" in item:
            lag = float(item["lag_frac"]) * r
        else:
            lag = float(item["lag"])
        coef = MatrixCoefficient.of(item["matrix"], Profile.from_config(item.get("profile")))
        terms.append(DiscreteTerm(lag, coef))
    density = None
    if cfg.get("density"):
        d = cfg["density"]
        density = Density(MatrixCoefficient.of(d["matrix"], Profile.from_config(d.get("profile"))))
    kernel = DelayKernel(dim, r, float(cfg["M"]), tuple(terms), density)
    for term in kernel.terms:
        if term.coef.array.shape != (dim, dim):
            raise DimensionError(f"term matrix does not match dim={dim}")
    return kernel


def load_config(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    if str(path).endswith((".yaml", ".yml")):
        import yaml

        return yaml.safe_load(text)
    return json.loads(text)


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    variation: float
    margin: float  # 1/(M e) - r
    diagnostics: tuple = ()


def validate_hypothesis(kernel: DelayKernel, t_window=(0.0, 10.0), points: int = 256) -> ValidationReport:
    """Check sup_t Var <= M (sampled) and r < 1/(M e)."""
    t = np.linspace(t_window[0], t_window[1], points)
    var = kernel.variation(t)
    notes = []
    if not np.all(np.isfinite(var)):
        raise HypothesisError(f"non-finite coefficient evaluation at t={t[~np.isfinite(var)][0]:g}")
    measured = float(var.max()) if var.size else 0.0
    margin = 1.0 / (kernel.M * math.e) - kernel.r
    ok = True
    if measured > kernel.M * (1 + 1e-12):
        ok = False
        notes.append(f"variation {measured:.6g} exceeds M={kernel.M:.6g}")
    if margin <= 0:
        ok = False
        notes.append(f"r={kernel.r:.6g} not below 1/(M e)={1 / (kernel.M * math.e):.6g}")
    return ValidationReport(ok, measured, margin, tuple(notes))


def require_hypothesis(kernel: DelayKernel, **kw) -> ValidationReport:
    rep = validate_hypothesis(kernel, **kw)
    if not rep.ok:
        raise HypothesisError("; ".join(rep.diagnostics))
    return rep


# ---------------------------------------------------------------------------
# history segments


@dataclass(frozen=True, eq=False)
class HistorySegment:
    """A continuous function on [-r, 0] stored as a piecewise cubic.

    ``num_nodes`` fixes the uniform grid used for sampling and export; the
    interpolant itself may carry extra breakpoints (e.g. a trajectory's steps).
    """

    r: float
    poly: PPoly
    num_nodes: int = 17

    def __post_init__(self):
        if self.num_nodes < MIN_NODES:
            raise ValueError(f"segment grid needs at least {MIN_NODES} nodes")
        if self.poly.c.ndim != 3:
            raise DimensionError("segment polynomial must be vector valued, coefficients (4, m, n)")
        x = self.poly.x
        if abs(x[0] + self.r) > 1e-12 * max(1.0, self.r) or abs(x[-1]) > 1e-12 * max(1.0, self.r):
            raise ValueError("segment breakpoints must cover exactly [-r, 0]")

    # constructors -----------------------------------------------------------
    @classmethod
    def from_values(cls, r, values, slopes=None) -> "HistorySegment":
        """Cubic interpolant through uniform-grid values.

        Without slopes a clamped spline is used, with end slopes matched to
        one-sided three-point differences.
        """
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        k = values.shape[0]
        x = np.linspace(-r, 0.0, k)
        if slopes is None:
            h = x[1] - x[0]
            d0 = (-3 * values[0] + 4 * values[1] - values[2]) / (2 * h)
            d1 = (3 * values[-1] - 4 * values[-2] + values[-3]) / (2 * h)
            sp = CubicSpline(x, values, axis=0, bc_type=((1, d0), (1, d1)))
            return cls(r, PPoly(sp.c, x), k)
        slopes = np.asarray(slopes, dtype=float).reshape(values.shape)
        return cls(r, PPoly(_pieces.hermite_coeffs(x, values, slopes), x), k)

    @classmethod
    def piecewise_linear(cls, r, values) -> "HistorySegment":
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        x = np.linspace(-r, 0.0, values.shape[0])
        return cls(r, PPoly(_pieces.linear_coeffs(x, values), x), values.shape[0])

    @classmethod
    def from_function(cls, f, r, num_nodes: int = 65) -> "HistorySegment":
        """Hermite interpolant of ``f`` with finite-difference slopes."""
        x = np.linspace(-r, 0.0, num_nodes)
        vals = np.array([np.atleast_1d(f(s)) for s in x], dtype=float)
        return cls.from_values(r, vals)

    @classmethod
    def constant(cls, r, c, num_nodes: int = 17) -> "HistorySegment":
        c = np.atleast_1d(np.asarray(c, dtype=float))
        return cls.piecewise_linear(r, np.tile(c, (num_nodes, 1)))

    # access -----------------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.poly.c.shape[2]

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(-self.r, 0.0, self.num_nodes)

    @property
    def values(self) -> np.ndarray:
        return self.poly(self.grid)

    @property
    def breaks(self) -> np.ndarray:
        return self.poly.x

    def __call__(self, theta):
        return self.poly(theta)

    def derivative(self, theta):
        return self.poly(theta, nu=1)

    def norm(self) -> float:
        return float(_pieces.sup_abs(self.poly.x, self.poly.c).max())

    # linear structure -------------------------------------------------------
    def _combine(self, other: "HistorySegment", a: float, b: float) -> "HistorySegment":
        if other.dim != self.dim:
            raise DimensionError("segment dimensions differ")
        if abs(other.r - self.r) > 1e-12 * self.r:
            raise ValueError("segments live on different intervals")
        x = _pieces.merge_breaks(self.poly.x, other.poly.x)
        c = a * _pieces.taylor_coeffs(self.poly, x) + b * _pieces.taylor_coeffs(other.poly, x)
        return HistorySegment(self.r, PPoly(c, x), max(self.num_nodes, other.num_nodes))

    def __add__(self, other):
        return self._combine(other, 1.0, 1.0)

    def __sub__(self, other):
        return self._combine(other, 1.0, -1.0)

    def __mul__(self, a):
        return HistorySegment(self.r, PPoly(a * self.poly.c, self.poly.x), self.num_nodes)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0


def segment_norm(seg: HistorySegment) -> float:
    """Sup over [-r, 0] of the max norm (exact on the piecewise cubic)."""
    return seg.norm()


def stack_segments(segs: Sequence[HistorySegment]):
    """Common breakpoints and coefficients (4, m, n, B) for a batch of segments."""
    r = segs[0].r
    x = _pieces.merge_breaks(*[s.poly.x for s in segs])
    c = np.stack([_pieces.taylor_coeffs(s.poly, x) for s in segs], axis=-1)
    if any(s.dim != segs[0].dim for s in segs):
        raise DimensionError("segment dimensions differ")
    return r, x, c


# ---------------------------------------------------------------------------
# the functional


def apply_functional(kernel: DelayKernel, t: float, seg: HistorySegment, epsabs: float = 1e-12) -> np.ndarray:
    """L(t, seg): discrete lag terms plus adaptive quadrature of the density."""
    if seg.dim != kernel.dim:
        raise DimensionError(f"segment dim {seg.dim} != kernel dim {kernel.dim}")
    out = np.zeros(kernel.dim)
    for term, A in zip(kernel.terms, kernel.term_matrices(t)):
        out += A @ seg(-term.lag)
    if kernel.density is not None:
        pts = seg.breaks[1:-1]

        def integrand(theta):
            return kernel.density_matrix(t, theta) @ seg(theta)

        val, err, info = quad_vec(
            integrand, -kernel.r, 0.0, epsabs=epsabs, epsrel=0.0, points=pts if pts.size else None,
            full_output=True, limit=10_000,
        )
        if not info.success:
            raise QuadratureError(f"density quadrature did not converge: {info.message}", achieved=err)
        out += val
    return out
