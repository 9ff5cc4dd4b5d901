"""Optimal population teacher and its eigengroup decomposition."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import features as F
from .spectrum import KernelSpectrum
from .tolerances import DEFAULT, Tolerances


@dataclass(frozen=True, eq=False)
class TeacherModel:
    w: np.ndarray
    loss_te: float
    energies: np.ndarray          # E_g = ||P_g f_teacher||^2
    cross: np.ndarray             # X_g = <P_g f_teacher, f*>
    norm2: float                  # ||f_teacher||^2
    rank: int
    K: int                        # last group carrying target mass
    target_mass: np.ndarray       # ||P_g f*||^2
    target_norm2: float = 1.0
    Phi: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)
    ensemble: F.FeatureEnsemble | None = field(default=None, repr=False)

    @property
    def pythagoras_loss(self) -> float:
        # ||f* - f||^2 = ||f*||^2 - sum_g (2 X_g - E_g)
        return self.target_norm2 - float(np.sum(2 * self.cross - self.energies))


def psd_pinv_solve(Phi: np.ndarray, v: np.ndarray, rcond: float = DEFAULT.pinv_rcond):
    """Minimum-norm least squares w = Phi^+ v for symmetric PSD Phi.

    Eigenvalues below rcond * max eigenvalue are treated as zero.
    Returns (w, rank).
    """
    evals, evecs = np.linalg.eigh(0.5 * (Phi + Phi.T))
    top = evals.max(initial=0.0)
    if top <= 0:
        raise ValueError("Gram matrix is numerically zero (no usable features)")
    keep = evals > rcond * top
    coef = (evecs[:, keep].T @ v) / evals[keep]
    return evecs[:, keep] @ coef, int(keep.sum())


def train(ens: F.FeatureEnsemble, spectrum: KernelSpectrum, target: F.Target,
          tol: Tolerances = DEFAULT) -> TeacherModel:
    """Population least-squares teacher w = Phi^+ v, L_TE = ||f*||^2 - v' Phi^+ v."""
    Phi = F.gram(ens, spectrum)
    parts = F.target_group_cross(ens, spectrum, target)
    v = np.zeros(ens.m)
    for g in sorted(parts):
        v = v + parts[g]
    w, rank = psd_pinv_solve(Phi, v, tol.pinv_rcond)
    fn2 = target.norm2
    loss = float(fn2 - v @ w)
    energies = F.group_quadratic(ens, spectrum, w)
    cross = np.zeros(spectrum.n_groups)
    for g, vg in parts.items():
        cross[g] = w @ vg
    mass = F.target_group_mass(spectrum, target)
    return TeacherModel(w=w, loss_te=loss, energies=energies, cross=cross,
                        norm2=float(w @ Phi @ w), rank=rank,
                        K=int(np.nonzero(mass)[0].max()), target_mass=mass,
                        target_norm2=fn2, Phi=Phi, v=v, ensemble=ens)


def residual_energy_above(teacher: TeacherModel, S: int) -> float:
    """sum_{g > S} ||P_g f_teacher||^2; S must not cut the target's support."""
    if S < teacher.K:
        raise ValueError(f"S={S} is below the target support K={teacher.K}")
    return float(np.sum(teacher.energies[S + 1:]))
