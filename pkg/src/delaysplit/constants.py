"""Characteristic roots and the explicit dichotomy constants.

g(x) = M exp(r x) - x has two real zeros lam < 1/r < mu when M e r < 1.
The slow root lam fixes the upper exponent; rho in (0, 1] trades the lower
exponent against the bound on the fast part.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

from scipy.optimize import brentq

from .errors import HypothesisError

DEFAULT_RHO = 0.25


def g(x: float, M: float, r: float) -> float:
    return M * math.exp(r * x) - x


def _check_hypothesis(M: float, r: float):
    if not (M > 0 and r > 0):
        raise HypothesisError(f"need M > 0 and r > 0, got M={M}, r={r}")
    if M * math.e * r >= 1.0:
        raise HypothesisError(f"M e r = {M * math.e * r:.6g} >= 1")


def solve_lambda(M: float, r: float) -> tuple:
    """Both real zeros (lam, mu) of g."""
    _check_hypothesis(M, r)
    x0 = -math.log(M * r) / r  # zero of g', where g < 0
    lam = brentq(g, 0.0, x0, args=(M, r), xtol=1e-300, maxiter=500)
    step = max(1.0 / r, abs(x0))
    hi = x0 + step
    while g(hi, M, r) <= 0:
        step *= 2.0
        hi = x0 + step
    mu = brentq(g, x0, hi, args=(M, r), xtol=1e-300, maxiter=500)
    return lam, mu


@dataclass(frozen=True)
class DichotomyConstants:
    M: float
    r: float
    rho: float
    lambda_r: float
    mu_r: float
    alpha: float
    beta: float
    K1: float
    K2: float
    gamma: float
    K: float
    proj_bound: float
    gap: float
    L_r: float

    def as_dict(self) -> dict:
        return asdict(self)

    def L_with(self, proj_norm: float) -> float:
        """Gap-condition constant with a measured projection norm."""
        return self.gap / (4.0 * self.K**2 * proj_norm)


CSV_COLUMNS = ("r", "lambda_r", "mu_r", "alpha", "beta", "K1", "K2", "gamma", "K", "proj_bound", "gap", "L_r")


def compute_constants(M: float, r: float, rho: float = DEFAULT_RHO) -> DichotomyConstants:
    if not (0.0 < rho <= 1.0):
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    lam, mu = solve_lambda(M, r)
    x = r * lam
    log_x = math.log(x)
    alpha = -lam
    beta = rho * log_x / r - lam
    K1 = 1.0
    K2 = -2.0 * math.exp(2.0 + x) * x ** (1.0 - 2.0 * rho) / (rho * log_x)
    gap = -rho * log_x / r
    gamma = (M - beta) / gap
    K = max(K1, K2)
    try:
        proj = 2.0 * math.e * gamma * K ** (2.0 * gamma - 1.0)
    except OverflowError:  # rho -> 0 with M e r -> 1 blows the bound past float range
        proj = math.inf
    L_r = gap / (4.0 * K**2 * proj)
    return DichotomyConstants(M, r, rho, lam, mu, alpha, beta, K1, K2, gamma, K, proj, gap, L_r)


def gap_margin(constants: DichotomyConstants, K_f: float, proj_norm: float = None) -> float:
    """L_r - K_f; positive certifies the gap condition.

    ``proj_norm`` swaps the theoretical projection bound for a measured value.
    """
    if K_f < 0:
        raise ValueError("Lipschitz constant must be non-negative")
    L = constants.L_r if proj_norm is None else constants.L_with(proj_norm)
    return L - K_f


@dataclass(frozen=True)
class Sweep:
    entries: tuple
    rlam_decreasing: bool
    gap_increasing: bool
    L_tail_increasing: bool


def sweep_constants(M: float, rho: float, r_list: Sequence[float], tail: int = 3) -> Sweep:
    r_list = [float(r) for r in r_list]
    if any(b >= a for a, b in zip(r_list, r_list[1:])):
        raise ValueError("r list must be strictly decreasing")
    entries = tuple(compute_constants(M, r, rho) for r in r_list)
    rl = [c.r * c.lambda_r for c in entries]
    gaps = [c.gap for c in entries]
    Ls = [c.L_r for c in entries][-tail:]
    return Sweep(
        entries,
        all(b < a for a, b in zip(rl, rl[1:])),
        all(b > a for a, b in zip(gaps, gaps[1:])),
        all(b > a for a, b in zip(Ls, Ls[1:])),
    )
