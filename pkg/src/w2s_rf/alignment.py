"""Teacher-student feature alignment kappa_S and companion checks.

A_S is the Gram of the teacher units projected on the top-S eigengroups,
B_S = Phi - A_S the Gram of the remainder, and

    kappa_S = 1 / (1 + lambda_1((sqrt A)^+ B (sqrt A)^+)).

The oracle reads kappa off R = QPQ as the smallest nonzero eigenvalue of
(sqrt Phi)^+ A (sqrt Phi)^+.  The two agree when A_S has full rank m
(m <= dim of the top-S space); when A_S is rank deficient the
pseudo-inverse restricts the Rayleigh quotient to range(A), which is not
the feature-space complement of ker(A), and the values differ.

The multiplicative upper bound needs f* inside span{P_S g_i}; `eligible`
tests exactly that, and `upper_bound_rhs` only minimizes over eligible S.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import features as F
from .spectrum import LINEAR, RELU, KernelSpectrum
from .teacher import TeacherModel
from .tolerances import DEFAULT


@dataclass(frozen=True, eq=False)
class AlignmentReport:
    S_group: int
    A_eigs: np.ndarray
    kappa: float
    kappa_oracle: float
    lambda_top: float
    a_rank: int
    phi_rank: int

    @property
    def full_rank(self) -> bool:
        return self.a_rank == len(self.A_eigs)


def _psd_eig(M, rcond):
    evals, evecs = np.linalg.eigh(0.5 * (M + M.T))
    evals = np.clip(evals, 0.0, None)
    keep = evals > rcond * evals.max(initial=0.0)
    return evals, evecs, keep


def _pinv_sqrt(M, rcond):
    evals, evecs, keep = _psd_eig(M, rcond)
    if not keep.any():
        raise ValueError("matrix is numerically zero")
    V = evecs[:, keep]
    return (V / np.sqrt(evals[keep])) @ V.T, evals, int(keep.sum())


def kappa_from_grams(A: np.ndarray, Phi: np.ndarray, rcond: float = DEFAULT.pinv_rcond):
    """(kappa, lambda_top, A eigenvalues, rank A) from the pseudo-inverse square root of A."""
    if not np.any(A):
        raise ValueError("A_S is zero; kappa undefined")
    try:
        Ainv, a_eigs, a_rank = _pinv_sqrt(A, rcond)
    except ValueError:
        raise ValueError("A_S is numerically zero; kappa undefined") from None
    B = Phi - A
    M = Ainv @ B @ Ainv
    lam = float(max(np.linalg.eigvalsh(0.5 * (M + M.T)).max(), 0.0))
    return 1.0 / (1.0 + lam), lam, a_eigs, a_rank


def kappa_oracle_from_grams(A: np.ndarray, Phi: np.ndarray, rcond: float = DEFAULT.pinv_rcond,
                            zero_tol: float = DEFAULT.kappa_zero):
    """Smallest nonzero eigenvalue of (sqrt Phi)^+ A (sqrt Phi)^+ (the nonzero spectrum of QPQ)."""
    if not np.any(A):
        raise ValueError("A_S is zero; kappa undefined")
    Pinv, _, phi_rank = _pinv_sqrt(Phi, rcond)
    R = Pinv @ A @ Pinv
    rho = np.linalg.eigvalsh(0.5 * (R + R.T))
    nz = rho[rho > max(rho.max(), 0.0) * zero_tol]
    if nz.size == 0:
        raise ValueError("R has no nonzero eigenvalue")
    return float(nz.min()), phi_rank


def kappa(ens: F.FeatureEnsemble, spectrum: KernelSpectrum, S_group: int,
          grams: dict | None = None, Phi: np.ndarray | None = None,
          rcond: float = DEFAULT.pinv_rcond) -> AlignmentReport:
    """kappa_S with its oracle value; grams may carry a precomputed A_S."""
    if not 0 <= S_group < spectrum.n_groups:
        raise IndexError(f"S={S_group} is not a group boundary")
    A = (grams or {}).get(S_group)
    if A is None:
        A = F.top_grams(ens, spectrum, [S_group])[S_group]
    Phi = F.gram(ens, spectrum) if Phi is None else Phi
    k, lam, a_eigs, a_rank = kappa_from_grams(A, Phi, rcond)
    ko, phi_rank = kappa_oracle_from_grams(A, Phi, rcond)
    return AlignmentReport(S_group, a_eigs[::-1].copy(), k, ko, lam, a_rank, phi_rank)


def kappa_oracle(ens: F.FeatureEnsemble, spectrum: KernelSpectrum, S_group: int,
                 rcond: float = DEFAULT.pinv_rcond) -> float:
    A = F.top_grams(ens, spectrum, [S_group])[S_group]
    return kappa_oracle_from_grams(A, F.gram(ens, spectrum), rcond)[0]


# ---------------------------------------------------------------- bounds

def span_residual(A: np.ndarray, v: np.ndarray, fn2: float, rcond: float = DEFAULT.pinv_rcond) -> float:
    """||f* - proj of f* on span{P_S g_i}||^2 = ||f*||^2 - v' A^+ v (f* inside the top-S space)."""
    evals, evecs, keep = _psd_eig(A, rcond)
    if not keep.any():
        return fn2
    c = evecs[:, keep].T @ v
    return float(fn2 - np.sum(c * c / evals[keep]))


def eligible(A: np.ndarray, v: np.ndarray, fn2: float = 1.0, tol: float = DEFAULT.eligibility,
             rcond: float = DEFAULT.pinv_rcond) -> bool:
    return span_residual(A, v, fn2, rcond) <= tol * fn2


def early_stop_rhs(teacher: TeacherModel, spectrum: KernelSpectrum, S: int, T):
    """L_TE + e^{-l_K T}/(2 - e^{-l_K T}) ||f*||^2 - (1 - l_{S+1}^2 T^2) sum_{g>S} E_g."""
    if S < teacher.K:
        raise ValueError("S below target support")
    T = np.asarray(T, dtype=float)
    lamK = spectrum.groups[teacher.K].eigenvalue
    lamS1 = spectrum.groups[S + 1].eigenvalue if S + 1 < spectrum.n_groups else 0.0
    q = np.exp(-lamK * T)
    tail = float(np.sum(teacher.energies[S + 1:]))
    return teacher.loss_te + q / (2 - q) * teacher.target_norm2 - (1 - (lamS1 * T) ** 2) * tail


def multiplicative_term(teacher: TeacherModel, spectrum: KernelSpectrum, S: int, kappa_S: float, T):
    T = np.asarray(T, dtype=float)
    lamK = spectrum.groups[teacher.K].eigenvalue
    lamS1 = spectrum.groups[S + 1].eigenvalue if S + 1 < spectrum.n_groups else 0.0
    q = np.exp(-lamK * T)
    return (1 - (1 - (lamS1 * T) ** 2) * kappa_S) * teacher.loss_te + q / (2 - q) * teacher.target_norm2


@dataclass(frozen=True, eq=False)
class UpperBound:
    rhs: np.ndarray               # inf over eligible S, per time
    kappas: dict                  # S -> kappa_S (eligible S only)
    residuals: dict               # S -> span residual (all S >= K examined)


def upper_bound_rhs(teacher: TeacherModel, spectrum: KernelSpectrum, T, S_list=None,
                    tol: float = DEFAULT.eligibility, rcond: float = DEFAULT.pinv_rcond) -> UpperBound:
    """Multiplicative upper bound, minimized over eligible group boundaries S >= K.

    rhs is +inf at every T when no S is eligible.
    """
    ens = teacher.ensemble
    if S_list is None:
        S_list = range(teacher.K, spectrum.n_groups)
    S_list = [S for S in S_list if S >= teacher.K]
    grams = F.top_grams(ens, spectrum, S_list)
    Phi = teacher.Phi
    T = np.atleast_1d(np.asarray(T, dtype=float))
    best = np.full(T.shape, np.inf)
    kap, res = {}, {}
    for S in S_list:
        res[S] = span_residual(grams[S], teacher.v, teacher.target_norm2, rcond)
        if res[S] > tol * teacher.target_norm2:
            continue
        kap[S] = kappa_from_grams(grams[S], Phi, rcond)[0]
        best = np.minimum(best, multiplicative_term(teacher, spectrum, S, kap[S], T))
    return UpperBound(best, kap, res)


# ---------------------------------------------------------------- eigenvalue check

@dataclass(frozen=True)
class AEigCheck:
    applicable: bool
    J: int
    lambda_J: float
    bound: float
    holds: bool
    normalized: float   # lambda_J / (lambda_S m)


def a_eig_lower_check(ens: F.FeatureEnsemble, spectrum: KernelSpectrum, S_group: int,
                      t_A: float, C: float = 0.0, A: np.ndarray | None = None) -> AEigCheck:
    """Compare lambda_J(A_S) (J = dim of top-S space) with its concentration lower bound.

    ReLU: sigma_s^2 (sqrt m - t_A sqrt J)^2; linear: psi_S (sqrt m - C sqrt J - t_A)^2.
    """
    m, J = ens.m, spectrum.dim_top(S_group)
    lam_S = spectrum.groups[S_group].eigenvalue
    root = math.sqrt(m) - (t_A * math.sqrt(J) if spectrum.model_tag == RELU
                           else C * math.sqrt(J) + t_A)
    if J > m or root <= 0:
        return AEigCheck(False, J, float("nan"), float("nan"), False, float("nan"))
    if A is None:
        A = F.top_grams(ens, spectrum, [S_group])[S_group]
    ev = np.sort(np.linalg.eigvalsh(A))[::-1]
    lamJ = float(ev[J - 1])
    bound = lam_S * root ** 2
    return AEigCheck(True, J, lamJ, bound, lamJ >= bound, lamJ / (lam_S * m))


def marchenko_pastur_edge(J: int, m: int) -> float:
    """Lower spectral edge (1 - sqrt(J/m))^2 of a J x J Wishart matrix with m samples, divided by m."""
    return (1 - math.sqrt(J / m)) ** 2
