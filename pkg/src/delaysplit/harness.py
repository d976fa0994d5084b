"""Gronwall and growth checkers, closed-form oracles and the scenario runner."""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .constants import CSV_COLUMNS, DEFAULT_RHO, compute_constants, gap_margin
from .errors import ConvergenceError, DelaySplitError, HypothesisError
from .model import HistorySegment, kernel_from_config, load_config, require_hypothesis
from .special import build_special_solution, check_driver_properties
from .splitting import SamplerConfig, analyze_splitting, prepare_table, random_segments, verify_dichotomy
from .stepper import integrate

SUITES = ("constants", "special", "split", "verify", "gronwall", "growth")


@dataclass
class CheckReport:
    name: str
    passed: bool
    worst_margin: float  # smallest (bound - value); negative means violated
    worst_at: float
    details: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# delay-Gronwall instances


@dataclass(frozen=True)
class GridFunction:
    r: float
    h: float
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.ndim != 1 or np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("grid function needs finite nonnegative values")
        if self.h > self.r / 8 * (1 + 1e-12):
            raise ValueError("grid step must be at most r/8")
        n = self.r / self.h
        if abs(n - round(n)) > 1e-9:
            raise ValueError("r must be an integer multiple of h")

    @property
    def per_delay(self) -> int:
        return int(round(self.r / self.h))

    @property
    def t(self) -> np.ndarray:
        return self.h * np.arange(self.values.size)


def _window_integrals(f: GridFunction) -> np.ndarray:
    """Trapezoid integral over [t - r, t] at every node t >= r."""
    v, N, h = f.values, f.per_delay, f.h
    cs = np.concatenate([[0.0], np.cumsum(v)])
    k = np.arange(N, v.size)
    inner = cs[k] - cs[k - N + 1]  # v[k-N+1] .. v[k-1]
    return h * (inner + 0.5 * (v[k - N] + v[k]))


def gen_gronwall_instance(seed: int, c2: float, r: float, T: float, profile: str = "random",
                          per_delay: int = 16) -> GridFunction:
    """Saturate phi(t) = c2 * int_{t-r}^t phi with the trapezoid rule past the seed interval."""
    if not (c2 > 0 and c2 * r < 1):
        raise HypothesisError(f"need 0 < c2 r < 1, got {c2 * r:g}")
    if T < r:
        raise ValueError("T must be at least r")
    N = int(per_delay)
    h = r / N
    K = int(round(T / h))
    rng = np.random.default_rng(seed)
    v = np.zeros(K + 1)
    if profile == "const":
        v[:N] = 1.0
    elif profile == "ramp":
        v[:N] = np.arange(N) / N
    elif profile == "random":
        v[:N] = rng.uniform(0.0, 1.0, N)
    elif profile != "zero":
        raise ValueError(f"unknown profile {profile!r}")
    a = c2 * h
    for k in range(N, K + 1):
        s = v[k - N + 1:k].sum() + 0.5 * v[k - N]
        v[k] = a * s / (1.0 - 0.5 * a)
    return GridFunction(r, h, v)


def gronwall_envelope(t, c1, c2, r, rho):
    return c1 * (c2 * r) ** (rho * (np.asarray(t) / r - 1.0))


def check_gronwall(f: GridFunction, c2: float, rho: float, c1: Optional[float] = None) -> CheckReport:
    """Both conclusions of the delay-Gronwall bound at every node.

    Rejects (HypothesisError) instances whose on-grid window inequality fails.
    """
    if not (0 < rho <= 1):
        raise ValueError("rho must lie in (0, 1]")
    r, h, v = f.r, f.h, f.values
    if not (c2 > 0 and c2 * r < 1):
        raise HypothesisError("need 0 < c2 r < 1")
    N = f.per_delay
    if c1 is None:
        c1 = float(v[: N + 1].max())
    scale = max(1.0, c1)
    excess = v[N:] - c2 * _window_integrals(f)
    if excess.size and excess.max() > 1e-12 * scale:
        k = int(np.argmax(excess))
        raise HypothesisError(f"instance violates the window inequality at t={(N + k) * h:g}")
    slack = 1e-8 * scale + c1 * (c2 * h) ** 2
    t = f.t
    env = gronwall_envelope(t, c1, c2, r, rho)
    m1 = c1 - v
    m2 = env - v
    margin = np.minimum(m1, m2)
    k = int(np.argmin(margin))
    return CheckReport(
        "gronwall", bool(margin.min() >= -slack), float(margin[k]), float(t[k]),
        {"c1": c1, "c2": c2, "r": r, "rho": rho, "slack": slack, "max_bound_margin": float(m1.min()),
         "envelope_margin": float(m2.min())},
    )


# ---------------------------------------------------------------------------
# growth bound


def check_growth(kernel, phi: HistorySegment, T: float, t0: float = 0.0, points: int = 101,
                 slack: float = 1e-8) -> CheckReport:
    """|x_t| <= e^{M (t - t0)} |phi| on a grid of t in [t0, T]."""
    require_hypothesis(kernel)
    sol = integrate(kernel, t0, phi, T)
    ts = np.linspace(t0, T, points)
    norms = sol.segment_norms(ts)
    bound = np.exp(kernel.M * (ts - t0)) * phi.norm()
    ratio = norms / bound
    k = int(np.argmax(ratio))
    return CheckReport(
        "growth", bool(ratio.max() <= 1 + slack), float(1 + slack - ratio[k]), float(ts[k]),
        {"max_ratio": float(ratio.max())},
    )


# ---------------------------------------------------------------------------
# oracles


def characteristic_root(a: float, r: float, tol: float = 1e-13, max_iter: int = 100) -> float:
    """Dominant real root of lam = -a exp(-lam r) (x' = -a x(t - r)).

    Newton from -a: the residual is convex and increasing to the right of the
    root, so the iterates decrease monotonically onto it.
    """
    if a < 0 or r <= 0:
        raise ValueError("need a >= 0 and r > 0")
    if a * r * math.e >= 1:
        raise HypothesisError(f"a r e = {a * r * math.e:g} >= 1")
    if a == 0:
        return 0.0
    lam = -a
    for _ in range(max_iter):
        e = math.exp(-lam * r)
        f = lam + a * e
        d = 1.0 - a * r * e
        step = f / d
        lam -= step
        if abs(step) <= 4e-16 * max(1.0, abs(lam)):
            break
    res = abs(lam + a * math.exp(-lam * r))
    if res > tol * max(1.0, a):
        raise ConvergenceError(f"characteristic root residual {res:g}", residual=res)
    return lam


def random_kernel_config(seed: int, dim: Optional[int] = None, mer: Optional[tuple] = None,
                         M: Optional[float] = None) -> dict:
    """Seeded kernel config with sup-variation at most M and M e r in ``mer``."""
    rng = np.random.default_rng(seed)
    dim = int(rng.integers(1, 3)) if dim is None else dim
    M = float(rng.uniform(0.5, 2.0)) if M is None else float(M)
    lo, hi = (0.05, 0.6) if mer is None else mer
    r = float(rng.uniform(lo, hi) / (M * math.e))
    nterms = int(rng.integers(1, 4))
    use_density = bool(rng.random() < 0.5)
    shares = rng.dirichlet(np.ones(nterms + use_density)) * float(rng.uniform(0.6, 1.0))
    terms = []
    fracs = [0.0, 1.0] + list(rng.uniform(0.05, 0.95, 4))
    for j in range(nterms):
        A = rng.normal(size=(dim, dim))
        A *= shares[j] * M / np.abs(A).sum(axis=1).max()
        off = float(rng.uniform(-0.5, 0.5))
        prof = {"kind": "sin", "offset": off, "amp": float(rng.uniform(0, 1 - abs(off))),
                "freq": float(rng.uniform(0.5, 5.0)), "phase": float(rng.uniform(0, 2 * np.pi))}
        terms.append({"lag_frac": float(fracs[int(rng.integers(len(fracs)))]), "matrix": A.tolist(), "profile": prof})
    cfg = {"dim": dim, "r": r, "M": M, "terms": terms}
    if use_density:
        B = rng.normal(size=(dim, dim))
        B *= shares[-1] * M / (r * np.abs(B).sum(axis=1).max())
        cfg["density"] = {"matrix": B.tolist(), "profile": {"kind": "const", "scale": float(rng.choice([-1.0, 1.0]))}}
    return cfg


def random_kernel(seed: int, **kw):
    return kernel_from_config(random_kernel_config(seed, **kw))


def random_history(rng, r: float, n: int, num_nodes: int = 17) -> HistorySegment:
    return random_segments(rng, r, n, 2, num_nodes)[int(rng.integers(2))]


# ---------------------------------------------------------------------------
# scenarios


@dataclass
class ScenarioConfig:
    kernel: object = None  # config mapping or path to one
    r_list: tuple = ()
    rho: float = DEFAULT_RHO
    K_f: Optional[float] = None
    seed: int = 0
    suites: tuple = ()
    out_dir: str = "out"
    horizon_tol: float = 1e-10
    slack: float = 1e-6
    samples: int = 1000
    pairs: int = 10_000
    verify_samples: int = 20
    gronwall_instances: int = 100
    growth_pairs: int = 50
    workers: int = 1

    @classmethod
    def from_mapping(cls, cfg: dict) -> "ScenarioConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(cfg) - known
        if extra:
            raise ValueError(f"unknown scenario keys: {sorted(extra)}")
        cfg = dict(cfg)
        for key in ("r_list", "suites"):
            if key in cfg:
                cfg[key] = tuple(cfg[key])
        return cls(**cfg)

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        return cls.from_mapping(load_config(path))

    def kernel_config(self) -> dict:
        if isinstance(self.kernel, (str, Path)):
            return load_config(self.kernel)
        return self.kernel

    def validate(self):
        bad = set(self.suites) - set(SUITES)
        if bad:
            raise ValueError(f"unknown suites {sorted(bad)}")
        if any(r <= 0 for r in self.r_list):
            raise ValueError("r values must be positive")
        if min(self.horizon_tol, self.slack) <= 0:
            raise ValueError("tolerances must be positive")
        if self.K_f is not None and self.K_f < 0:
            raise ValueError("K_f must be non-negative")
        needs_kernel = set(self.suites) & {"constants", "special", "split", "verify"}
        if needs_kernel:
            if self.kernel is None or not self.r_list:
                raise ValueError("kernel and r_list are required for the selected suites")
            cfg = self.kernel_config()
            for r in self.r_list:
                require_hypothesis(kernel_from_config(cfg, r=r))


@dataclass
class ReportBundle:
    rows: dict = field(default_factory=dict)  # suite -> list of row dicts
    failures: dict = field(default_factory=dict)  # suite -> count
    files: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not any(self.failures.values())

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1

    def summary(self) -> str:
        lines = []
        for suite, rows in self.rows.items():
            bad = self.failures.get(suite, 0)
            lines.append(f"{suite:10s} {len(rows) - bad}/{len(rows)} passed")
        lines.append("overall: " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines)


def csv_text(rows, columns=None) -> str:
    """Deterministic CSV: header row, floats written with repr."""
    buf = io.StringIO()
    if not rows:
        return ""
    columns = list(columns or rows[0].keys())
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _rtag(r: float) -> str:
    return f"r{r:.6e}"


def _per_r(cfg: ScenarioConfig, r: float):
    """Suites that depend on r; pure, so safe to run in worker processes."""
    kernel = kernel_from_config(cfg.kernel_config(), r=r)
    out = {}
    files = {}
    const = compute_constants(kernel.M, r, cfg.rho)
    if "constants" in cfg.suites:
        row = {k: getattr(const, k) for k in CSV_COLUMNS}
        if cfg.K_f is not None:
            row["K_f"] = cfg.K_f
            row["gap_margin"] = gap_margin(const, cfg.K_f)
        row["passed"] = True
        out["constants"] = [row]
    if "special" in cfg.suites:
        table = build_special_solution(kernel, 0.0)
        rep = check_driver_properties(table, const, seed=cfg.seed)
        out["special"] = [{"r": r, **{k: float(v) for k, v in vars(rep).items() if k != "tol"}, "passed": rep.passed}]
        buf = io.StringIO()
        table.to_csv(buf)
        files[f"special_{_rtag(r)}.csv"] = buf.getvalue()
    if {"split", "verify"} & set(cfg.suites):
        table = prepare_table(kernel, 0.0, cfg.horizon_tol)
        if "split" in cfg.suites:
            sc = SamplerConfig(seed=cfg.seed, samples=cfg.samples, pairs=cfg.pairs)
            rep = analyze_splitting(kernel, 0.0, sc, cfg.rho, cfg.horizon_tol, table=table)
            row = rep.row()
            row["passed"] = rep.bound_consistent and rep.sandwich_ok and rep.delta_ok
            out["split"] = [row]
            l = rep.l_samples
            srows = [{"sample": i, **{f"l_{j + 1}": l[j, i] for j in range(l.shape[0])}} for i in range(l.shape[1])]
            files[f"split_samples_{_rtag(r)}.csv"] = csv_text(srows)
        if "verify" in cfg.suites:
            segs = random_segments(np.random.default_rng(cfg.seed), r, kernel.dim, cfg.verify_samples)
            rep = verify_dichotomy(kernel, table, const, 0.0, segs, slack=cfg.slack, tol=cfg.horizon_tol)
            out["verify"] = [{
                "r": r, "K2": const.K2, "beta": const.beta, "forward_ratio": rep.forward_ratio,
                "forward_worst_t": rep.forward_worst_t, "backward_ratio": rep.backward_ratio,
                "commutation_residual": rep.commutation_residual, "passed": rep.passed,
            }]
    return out, files


def gronwall_suite(seed: int, instances: int = 100, r: float = 1.0):
    rows = []
    c2rs = (0.1, 0.5, 0.9)
    profiles = ("const", "ramp", "random")
    for i in range(instances):
        c2 = c2rs[i % 3] / r
        prof = profiles[(i // 3) % 3]
        f = gen_gronwall_instance(seed + i, c2, r, 10 * r, prof)
        for rho in (0.1, 0.5, 1.0):
            rep = check_gronwall(f, c2, rho)
            rows.append({"instance": i, "seed": seed + i, "profile": prof, "c2r": c2 * r, "rho": rho,
                         "worst_margin": rep.worst_margin, "worst_t": rep.worst_at, "passed": rep.passed})
    return rows


def growth_suite(seed: int, pairs: int = 50):
    rows = []
    for i in range(pairs):
        kernel = random_kernel(seed + i)
        phi = random_history(np.random.default_rng(seed + i), kernel.r, kernel.dim)
        rep = check_growth(kernel, phi, 20 * kernel.r)
        rows.append({"pair": i, "seed": seed + i, "dim": kernel.dim, "M": kernel.M, "r": kernel.r,
                     "max_ratio": rep.details["max_ratio"], "worst_t": rep.worst_at, "passed": rep.passed})
    return rows


def run_scenario(config: ScenarioConfig, write: bool = True) -> ReportBundle:
    """Run the selected suites; CSV names and row order depend only on the config."""
    config.validate()
    bundle = ReportBundle()
    if not config.suites:
        return bundle
    files = {}
    r_suites = [s for s in config.suites if s in ("constants", "special", "split", "verify")]
    if r_suites:
        rs = list(config.r_list)
        if config.workers > 1:
            with ProcessPoolExecutor(config.workers) as ex:
                results = list(ex.map(_per_r, [config] * len(rs), rs))
        else:
            results = [_per_r(config, r) for r in rs]
        for out, fl in results:  # ordered by r_list regardless of completion order
            for suite, rows in out.items():
                bundle.rows.setdefault(suite, []).extend(rows)
            files.update(fl)
    if "gronwall" in config.suites:
        bundle.rows["gronwall"] = gronwall_suite(config.seed, config.gronwall_instances)
    if "growth" in config.suites:
        bundle.rows["growth"] = growth_suite(config.seed, config.growth_pairs)
    for suite in SUITES:
        if suite in bundle.rows:
            rows = bundle.rows[suite]
            bundle.failures[suite] = sum(not row["passed"] for row in rows)
            files[f"{suite}.csv"] = csv_text(rows)
    if write:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name in sorted(files):
            path = out / name
            path.write_text(files[name], encoding="utf-8")
            bundle.files.append(str(path))
    return bundle


def scenario_exit_code(config: ScenarioConfig) -> tuple:
    """(exit code, bundle or None); configuration and hypothesis errors map to 2."""
    try:
        config.validate()
    except (ValueError, DelaySplitError) as exc:
        return 2, str(exc)
    bundle = run_scenario(config)
    return bundle.exit_code, bundle
