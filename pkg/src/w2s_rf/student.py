"""Infinite-width student trained by kernel gradient flow on teacher labels.

Per eigengroup the flow shrinks the teacher's component by (1 - e^{-lambda_g T}),
so every loss is a closed-form sum over groups.  A finite-width oracle
solves the same flow exactly for M_ST student units.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from . import features as F
from .spectrum import LINEAR, KernelSpectrum
from .teacher import TeacherModel
from .tolerances import DEFAULT


@dataclass(frozen=True, eq=False)
class StudentTrajectory:
    times: np.ndarray
    loss_st: np.ndarray
    loss_to_teacher: np.ndarray
    t_opt: float
    lst_opt: float


def _gain(lam, T):
    # 1 - exp(-lam T) without cancellation for small lam T
    return -np.expm1(-np.multiply.outer(np.asarray(T, dtype=float), lam))


def losses(teacher: TeacherModel, spectrum: KernelSpectrum, T):
    """Vectorized (L_ST, ||f_T - f_teacher||^2) over an array of times."""
    T = np.asarray(T, dtype=float)
    if np.any(T < 0):
        raise ValueError("stopping time must be >= 0")
    lam = spectrum.eigenvalues
    a = _gain(lam, T)
    E, X = teacher.energies, teacher.cross
    lst = teacher.target_norm2 + (a * a) @ E - 2 * a @ X
    ltt = (1 - a) ** 2 @ E
    return lst, ltt


def loss_at(teacher: TeacherModel, spectrum: KernelSpectrum, T: float, target=None):
    """(L_ST(T), loss_to_teacher(T)) for a single time; T = inf gives the teacher."""
    if T < 0:
        raise ValueError("stopping time must be >= 0")
    if math.isinf(T):
        return teacher.pythagoras_loss, 0.0
    lst, ltt = losses(teacher, spectrum, np.array([T]))
    return float(lst[0]), float(ltt[0])


def predictor_norm2(teacher: TeacherModel, spectrum: KernelSpectrum, T):
    a = _gain(spectrum.eigenvalues, T)
    return (a * a) @ teacher.energies


def shrink_gap(teacher: TeacherModel, spectrum: KernelSpectrum, T):
    """<f_T, f_teacher - f_T> from group sums (>= 0 by construction)."""
    a = _gain(spectrum.eigenvalues, T)
    return (a * (1 - a)) @ teacher.energies


def trajectory(teacher: TeacherModel, spectrum: KernelSpectrum, t_min: float, t_max: float,
               n_points: int, refine: bool = True, target=None) -> StudentTrajectory:
    """Loss curve on a log-spaced grid plus a golden-section refined minimum."""
    if not (0 < t_min < t_max) or n_points < 2:
        raise ValueError("need 0 < t_min < t_max and n_points >= 2")
    times = np.geomspace(t_min, t_max, int(n_points))
    times[0], times[-1] = t_min, t_max
    lst, ltt = losses(teacher, spectrum, times)
    i = int(np.argmin(lst))
    t_opt, l_opt = float(times[i]), float(lst[i])
    if refine and 0 < i < len(times) - 1:
        f = lambda s: float(losses(teacher, spectrum, np.array([math.exp(s)]))[0][0])
        br = (math.log(times[i - 1]), math.log(times[i]), math.log(times[i + 1]))
        try:
            s_best = optimize.golden(f, brack=br, tol=1e-10)
            lo, hi = br[0], br[2]
            if lo <= s_best <= hi and f(s_best) < l_opt:
                t_opt, l_opt = math.exp(s_best), f(s_best)
        except ValueError:
            pass
    return StudentTrajectory(times, lst, ltt, t_opt, l_opt)


def stopping_rule(spectrum: KernelSpectrum, K_group: int, delta_T: float) -> float:
    """T = log(1/delta_T) / lambda_K."""
    if not 0 < delta_T <= 1:
        raise ValueError("delta_T must lie in (0, 1]")
    lam = spectrum.groups[K_group].eigenvalue
    if lam <= 0:
        raise ValueError("zero eigenvalue at the target group")
    return math.log(1.0 / delta_T) / lam


def pgr_lower(L_TE: float, L_ST: float) -> float:
    """Ceiling-free lower bound (L_TE - L_ST) / L_TE on the performance gap recovered."""
    if L_TE == 0:
        raise ValueError("PGR undefined for L_TE = 0")
    return (L_TE - L_ST) / L_TE


# ---------------------------------------------------------------- finite width

def gram_flow_losses(Phi_s, b, v_s, fn2, M, times, rcond=DEFAULT.pinv_rcond):
    """||f_T - f*||^2 for c(T) = Phi_s^+ (I - exp(-T Phi_s / M)) b.

    Phi_s: student Gram, b_i = <s_i, f_teacher>, v_s,i = <s_i, f*>.
    """
    mu, V = np.linalg.eigh(0.5 * (Phi_s + Phi_s.T))
    keep = mu > rcond * mu.max(initial=0.0)
    mu, V = mu[keep], V[:, keep]
    bt, vt = V.T @ b, V.T @ v_s
    times = np.atleast_1d(np.asarray(times, dtype=float))
    g = -np.expm1(-np.multiply.outer(times, mu) / M)        # (n, r)
    ct = g * bt / mu
    return fn2 - 2 * ct @ vt + (ct * ct) @ mu


def finite_width_oracle(student_ens: F.FeatureEnsemble, teacher: TeacherModel,
                        target: F.Target, spectrum: KernelSpectrum, T):
    """L_ST(T) for a width-M_ST student trained by exact gradient flow on f_teacher."""
    t_ens = teacher.ensemble
    if t_ens is None or student_ens.model_tag != t_ens.model_tag:
        raise ValueError("student and teacher ensembles must come from the same model")
    M = student_ens.m
    scalar = np.ndim(T) == 0
    if np.any(np.asarray(T) < 0):
        raise ValueError("stopping time must be >= 0")
    if spectrum.model_tag == LINEAR:
        # same flow in eigen-coordinates: f_T = (I - exp(-T K_M)) h, K_M = C_s'C_s / M
        h = t_ens.C.T @ teacher.w
        Cs = student_ens.C
        _, sv, Vt = np.linalg.svd(Cs, full_matrices=False)
        mu = sv ** 2 / M
        ht = Vt @ h
        times = np.atleast_1d(np.asarray(T, dtype=float))
        g = -np.expm1(-np.multiply.outer(times, mu))
        fT = (g * ht) @ Vt                                   # (n, d)
        out = np.sum((fT - target.vector) ** 2, axis=1)
    else:
        Phi_s = F.gram(student_ens, spectrum)
        b = F.cross_gram(student_ens, t_ens, spectrum) @ teacher.w
        v_s = F.target_cross(student_ens, spectrum, target)
        out = gram_flow_losses(Phi_s, b, v_s, target.norm2, M, T)
    return float(out[0]) if scalar else out
