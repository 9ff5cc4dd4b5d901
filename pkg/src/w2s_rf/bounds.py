"""Limits on weak-to-strong gain: shrink-optimality, quadratic lower bounds, student chains."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .spectrum import KernelSpectrum
from .teacher import TeacherModel
from .tolerances import DEFAULT


@dataclass(frozen=True)
class PredictorStats:
    norm2: float          # ||f||^2
    inner_train: float    # <f, f_train>
    loss_to_train: float  # ||f - f_train||^2
    train_norm2: float = 1.0

    def __post_init__(self):
        if self.norm2 < 0:
            raise ValueError("norm2 must be >= 0")
        expect = self.train_norm2 - 2 * self.inner_train + self.norm2
        if abs(expect - self.loss_to_train) > 1e-10 * max(1.0, abs(expect)):
            raise ValueError("inconsistent predictor statistics")

    @classmethod
    def from_inner(cls, norm2, inner_train, train_norm2=1.0):
        return cls(norm2, inner_train, train_norm2 - 2 * inner_train + norm2, train_norm2)


def is_shrink_optimal(stats: PredictorStats, slack: float = DEFAULT.identity) -> bool:
    """<f, f - f_train> <= 0, i.e. no rescaling alpha in [0,1] lowers the training loss."""
    return stats.inner_train - stats.norm2 >= -slack * max(1.0, stats.norm2)


def _check_loss(L):
    if not 0.0 <= L <= 1.0:
        raise ValueError(f"L_TE must lie in [0, 1], got {L}")


def quad_lower_bound(L_TE: float):
    """(sqrt(1+3L) - sqrt(1-L))^2 / 4 and the weaker 3L^2/4."""
    _check_loss(L_TE)
    exact = (math.sqrt(1 + 3 * L_TE) - math.sqrt(1 - L_TE)) ** 2 / 4
    return exact, 0.75 * L_TE ** 2


def bounded_student_lower_bound(L_TE: float) -> float:
    """(1 - sqrt(1-L))^2, valid when the student's norm does not exceed the teacher's."""
    _check_loss(L_TE)
    return (1 - math.sqrt(1 - L_TE)) ** 2


@dataclass(frozen=True, eq=False)
class ChainReport:
    losses: np.ndarray       # L_ST,i for i = 1..n
    norms2: np.ndarray       # ||f^(i)||^2 for i = 0..n (0 is the teacher)
    bound: float
    bound_ok: bool
    norms_ok: bool


def bootstrap_chain(teacher: TeacherModel, spectrum: KernelSpectrum, stopping_times,
                    target=None, eigenvalues=None, slack: float = DEFAULT.identity) -> ChainReport:
    """Students trained in sequence, each on the previous one's predictions.

    Step i multiplies every group coefficient by (1 - e^{-lambda_g T_i}).
    `eigenvalues` may give a per-step list of group eigenvalues (same
    eigenbasis, different kernels); by default every step uses `spectrum`.
    """
    lam0 = spectrum.eigenvalues
    E, X = teacher.energies, teacher.cross
    p = np.ones_like(lam0)
    losses, norms = [], [float(np.sum(E))]
    for i, T in enumerate(stopping_times):
        if T < 0:
            raise ValueError("stopping time must be >= 0")
        lam = lam0 if eigenvalues is None else np.asarray(eigenvalues[i], dtype=float)
        p = p * (1.0 if math.isinf(T) else -np.expm1(-lam * T))
        losses.append(teacher.target_norm2 + float(p * p @ E - 2 * p @ X))
        norms.append(float(p * p @ E))
    losses, norms = np.array(losses), np.array(norms)
    b = bounded_student_lower_bound(min(max(teacher.loss_te, 0.0), 1.0))
    return ChainReport(losses, norms, b, bool(np.all(losses >= b - slack)),
                       bool(np.all(np.diff(norms) <= slack * max(1.0, norms[0]))))
