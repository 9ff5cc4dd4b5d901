"""Deterministic equivalent of the random-feature teacher risk.

Solve m = sum_i s_i / (s_i + nu) for nu, then L = nu <beta, (S + nu)^{-1} beta>.
Eigenvalues come grouped with (possibly huge) multiplicities.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .features import Target, target_group_mass
from .spectrum import KernelSpectrum
from .tolerances import DEFAULT


@dataclass(frozen=True, eq=False)
class DetEquivProblem:
    s: np.ndarray        # group eigenvalues, nonincreasing
    mult: np.ndarray     # multiplicities (float: ReLU counts exceed int64)
    beta2: np.ndarray    # target mass per group, sums to 1
    m: int

    def __post_init__(self):
        if abs(float(np.sum(self.beta2)) - 1.0) > 1e-12:
            raise ValueError("beta2 must sum to 1")
        if np.any(np.diff(self.s) > 0):
            raise ValueError("s must be nonincreasing")
        if self.m <= 0:
            raise ValueError("m must be positive")

    @property
    def n_nonzero(self) -> float:
        return float(np.sum(self.mult[self.s > 0]))

    def trace_map(self, nu: float) -> float:
        """tr S(S + nu)^{-1}."""
        nz = self.s > 0
        if nu == 0:
            return float(np.sum(self.mult[nz]))
        return float(np.sum(self.mult[nz] * self.s[nz] / (self.s[nz] + nu)))


def problem_from_spectrum(spectrum: KernelSpectrum, target: Target, m: int) -> DetEquivProblem:
    return DetEquivProblem(spectrum.eigenvalues,
                           np.array([float(x) for x in spectrum.multiplicities]),
                           target_group_mass(spectrum, target), int(m))


def solve_nu(problem: DetEquivProblem, rtol: float = DEFAULT.detequiv_residual,
             max_iter: int = DEFAULT.detequiv_max_iter) -> float:
    """Bisection on [0, sum(s)/m] for the root of tr S(S+nu)^{-1} = m.

    The map is strictly decreasing, so halving always keeps the root
    bracketed; iteration stops once the bracket reaches double resolution
    or after max_iter halvings.  The residual is not used to stop early so
    the analytic cases come out exact to rounding.
    """
    m = problem.m
    if m >= problem.n_nonzero:
        raise ValueError("m must be below the number of nonzero eigenvalues")
    lo = 0.0
    hi = float(np.sum(problem.mult * problem.s)) / m
    for _ in range(max(int(max_iter), 1)):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if problem.trace_map(mid) > m:
            lo = mid
        else:
            hi = mid
    nu = min((lo, 0.5 * (lo + hi), hi), key=lambda x: abs(problem.trace_map(x) - m))
    if abs(problem.trace_map(nu) - m) > rtol * m:
        raise ArithmeticError(f"bisection residual above {rtol} * m")
    return nu


def residual(problem: DetEquivProblem, nu: float) -> float:
    return abs(problem.m - problem.trace_map(nu))


def det_risk(problem: DetEquivProblem, nu: float) -> float:
    """nu * sum_g beta2_g / (s_g + nu)."""
    if nu == 0:
        return 0.0
    return float(nu * np.sum(problem.beta2 / (problem.s + nu)))


@dataclass(frozen=True)
class GapReport:
    det_risk: float
    median: float
    spread: tuple
    rel_gap: float
    n: int


def universality_gap(problem: DetEquivProblem, empirical_L_TE) -> GapReport:
    """|median(empirical) - L~| / L~ plus the seed spread; informational only."""
    x = np.asarray(empirical_L_TE, dtype=float)
    if x.size < 5:
        raise ValueError("need at least 5 seeded teacher losses")
    L = det_risk(problem, solve_nu(problem))
    med = float(np.median(x))
    return GapReport(L, med, (float(x.min()), float(x.max())), abs(med - L) / L, int(x.size))


def risk_curve(spectrum: KernelSpectrum, target: Target, m_list):
    """[(m, nu, L~, residual)] over a sweep of feature counts."""
    out = []
    for m in m_list:
        p = problem_from_spectrum(spectrum, target, m)
        nu = solve_nu(p)
        out.append((int(m), nu, det_risk(p, nu), residual(p, nu)))
    return out
