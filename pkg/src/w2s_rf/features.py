"""Teacher feature ensembles and their population inner products.

All quantities are exact population inner products in the kernel
eigenbasis; nothing here samples inputs x.

RNG contract: unit i of an ensemble with seed s and role r is drawn from
Generator(PCG64(SeedSequence(s, spawn_key=(r,)).spawn(m)[i])).  Unit i is
therefore the same no matter how many units are drawn, and teacher
(role 0) and student (role 1) ensembles never share a stream.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .spectrum import (LINEAR, RELU, KernelSpectrum, gegenbauer, gegenbauer_iter,
                       harmonic_dim, relu_sigma)

TEACHER_ROLE = 0
STUDENT_ROLE = 1


@dataclass(frozen=True, eq=False)
class FeatureEnsemble:
    model_tag: str
    d: int
    m: int
    seed: int
    U: np.ndarray | None = None   # relu: m x d unit directions
    C: np.ndarray | None = None   # linear: m x d eigen-coefficients
    role: int = TEACHER_ROLE

    @property
    def matrix(self) -> np.ndarray:
        return self.U if self.model_tag == RELU else self.C


def unit_generators(seed: int, m: int, role: int = TEACHER_ROLE):
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(role),))
    return [np.random.Generator(np.random.PCG64(c)) for c in ss.spawn(int(m))]


def sample(model_tag: str, m: int, d: int, spectrum: KernelSpectrum, seed: int,
           role: int = TEACHER_ROLE) -> FeatureEnsemble:
    """Draw m random units.  ReLU: uniform directions; linear: C_ij = z_ij sqrt(psi_j)."""
    m, d = int(m), int(d)
    if m < 1:
        raise ValueError("m must be >= 1")
    if spectrum.model_tag != model_tag or spectrum.d != d:
        raise ValueError("spectrum does not match model/d")
    Z = np.empty((m, d))
    for i, g in enumerate(unit_generators(seed, m, role)):
        Z[i] = g.standard_normal(d)
    if model_tag == RELU:
        U = Z / np.linalg.norm(Z, axis=1, keepdims=True)
        return FeatureEnsemble(RELU, d, m, int(seed), U=U, role=role)
    psi = np.concatenate([np.full(g.multiplicity, g.eigenvalue) for g in spectrum.groups])
    return FeatureEnsemble(LINEAR, d, m, int(seed), C=Z * np.sqrt(psi), role=role)


# ---------------------------------------------------------------- targets

FAMILIES = ("linear_direction", "coordinate_linear", "harmonic_ridge")


@dataclass(frozen=True, eq=False)
class Target:
    family: str
    vector: np.ndarray       # beta-hat, beta-bar or gamma (unit norm)
    order: int = 1
    normalized: bool = True

    @property
    def norm2(self) -> float:
        # f* = sqrt(d) beta.x, sum beta_j e_j, or sqrt(N_k) P_k(gamma.x): all ||.||^2 = |vector|^2
        return float(self.vector @ self.vector)


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float).ravel()
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("zero target vector")
    return v / n


def linear_direction(beta) -> Target:
    return Target("linear_direction", _unit(beta), 1)


def coordinate_linear(coeffs) -> Target:
    return Target("coordinate_linear", _unit(coeffs), 1)


def harmonic_ridge(k: int, gamma) -> Target:
    k = int(k)
    if k < 0 or (k > 1 and k % 2):
        raise ValueError(f"harmonic ridge order must be 0, 1 or even (sigma_k = 0 otherwise), got {k}")
    return Target("harmonic_ridge", _unit(gamma), k)


def make_target(spec: str, spectrum: KernelSpectrum, order: int = 1) -> Target:
    """Default targets: 'linear' (direction e_1) or 'harmonic' (order k ridge along e_1)."""
    e1 = np.zeros(spectrum.d)
    e1[0] = 1.0
    if spec == "linear":
        return linear_direction(e1) if spectrum.model_tag == RELU else coordinate_linear(e1)
    if spec == "harmonic":
        return harmonic_ridge(order, e1)
    raise ValueError(f"unknown target spec {spec!r}")


def _check_target(spectrum: KernelSpectrum, target: Target):
    if target.vector.shape != (spectrum.d,):
        raise ValueError("target dimension mismatch")
    if spectrum.model_tag == LINEAR:
        if target.family == "harmonic_ridge":
            raise ValueError("harmonic_ridge targets need the ReLU model")
        psi = np.concatenate([np.full(g.multiplicity, g.eigenvalue) for g in spectrum.groups])
        if np.any((psi == 0) & (target.vector != 0)):
            raise ValueError("target has mass on zero-eigenvalue coordinates")
    else:
        if target.family == "coordinate_linear":
            raise ValueError("coordinate_linear targets need the linear model")


def target_group_mass(spectrum: KernelSpectrum, target: Target) -> np.ndarray:
    """||P_g f*||^2 per group."""
    _check_target(spectrum, target)
    out = np.zeros(spectrum.n_groups)
    if spectrum.model_tag == LINEAR:
        for g, sl in enumerate(spectrum.column_slices()):
            out[g] = target.vector[sl] @ target.vector[sl]
    else:
        out[spectrum.group_of_order(target.order)] = target.norm2
    return out


def target_support(spectrum: KernelSpectrum, target: Target) -> int:
    """K: last group carrying target mass."""
    return int(np.nonzero(target_group_mass(spectrum, target))[0].max())


def target_group_cross(ens: FeatureEnsemble, spectrum: KernelSpectrum, target: Target) -> dict:
    """{group: v_g} with v_g,i = <P_g g_i, f*>."""
    _check_target(spectrum, target)
    if ens.model_tag != spectrum.model_tag:
        raise ValueError("ensemble/spectrum mismatch")
    if spectrum.model_tag == LINEAR:
        out = {}
        for g, sl in enumerate(spectrum.column_slices()):
            if np.any(target.vector[sl]):
                out[g] = ens.C[:, sl] @ target.vector[sl]
        return out
    d, k = spectrum.d, target.order
    g = spectrum.group_of_order(k)
    proj = ens.U @ target.vector
    if target.family == "linear_direction":
        return {g: relu_sigma(1, d) * math.sqrt(d) * proj}
    sk = relu_sigma(k, d, signed=True)
    return {g: sk * math.sqrt(harmonic_dim(k, d)) * gegenbauer(k, d, proj)}


def target_cross(ens: FeatureEnsemble, spectrum: KernelSpectrum, target: Target) -> np.ndarray:
    v = np.zeros(ens.m)
    for g in sorted(parts := target_group_cross(ens, spectrum, target)):
        v = v + parts[g]
    return v


# ---------------------------------------------------------------- grams

def _relu_weights(spectrum: KernelSpectrum) -> dict:
    """order -> (group index, sigma_k^2 N_k) for every stored order."""
    w = {}
    for gi, g in enumerate(spectrum.groups):
        for k in g.orders or (g.order,):
            w[k] = (gi, relu_sigma(k, spectrum.d) ** 2 * harmonic_dim(k, spectrum.d))
    return w


def iter_blocks(a: FeatureEnsemble, spectrum: KernelSpectrum,
                b: FeatureEnsemble | None = None) -> Iterator[tuple[int, np.ndarray]]:
    """Yield (group, block) with sum over blocks of a group = <P_g a_i, P_g b_j>.

    ReLU yields one block per stored order (ascending k); linear one per group.
    """
    b = a if b is None else b
    if a.model_tag != spectrum.model_tag or b.model_tag != spectrum.model_tag:
        raise ValueError("ensemble/spectrum mismatch")
    if spectrum.model_tag == LINEAR:
        for g, sl in enumerate(spectrum.column_slices()):
            yield g, a.C[:, sl] @ b.C[:, sl].T
        return
    if spectrum.k_max is None:
        raise ValueError("ReLU Gram needs a truncated spectrum (k_max unset)")
    weights = _relu_weights(spectrum)
    T = a.U @ b.U.T
    for k, P in gegenbauer_iter(spectrum.k_max, spectrum.d, T):
        if k in weights:
            gi, wk = weights[k]
            yield gi, wk * P


def gram(ens: FeatureEnsemble, spectrum: KernelSpectrum) -> np.ndarray:
    """Phi_ij = <g_i, g_j> (truncated Mercer series for ReLU)."""
    if spectrum.model_tag == LINEAR and ens.model_tag == LINEAR:
        return ens.C @ ens.C.T
    Phi = np.zeros((ens.m, ens.m))
    for _, blk in iter_blocks(ens, spectrum):
        Phi += blk
    return 0.5 * (Phi + Phi.T)


def cross_gram(a: FeatureEnsemble, b: FeatureEnsemble, spectrum: KernelSpectrum) -> np.ndarray:
    """<a_i, b_j> between two ensembles of the same model."""
    if spectrum.model_tag == LINEAR:
        return a.C @ b.C.T
    out = np.zeros((a.m, b.m))
    for _, blk in iter_blocks(a, spectrum, b):
        out += blk
    return out


def order_gram(ens: FeatureEnsemble, spectrum: KernelSpectrum, g: int) -> np.ndarray:
    """G_g = <P_g g_i, P_g g_j>."""
    if not 0 <= g < spectrum.n_groups:
        raise IndexError(f"unknown group {g}")
    if spectrum.model_tag == LINEAR:
        sl = spectrum.column_slices()[g]
        return ens.C[:, sl] @ ens.C[:, sl].T
    grp = spectrum.groups[g]
    T = ens.U @ ens.U.T
    G = np.zeros((ens.m, ens.m))
    for k in grp.orders or (grp.order,):
        G += relu_sigma(k, spectrum.d) ** 2 * harmonic_dim(k, spectrum.d) * gegenbauer(k, spectrum.d, T)
    return G


def group_quadratic(ens: FeatureEnsemble, spectrum: KernelSpectrum, w: np.ndarray) -> np.ndarray:
    """w' G_g w for every group (one pass over the series)."""
    out = np.zeros(spectrum.n_groups)
    if spectrum.model_tag == LINEAR:
        h = ens.C.T @ w
        for g, sl in enumerate(spectrum.column_slices()):
            out[g] = h[sl] @ h[sl]
        return out
    for g, blk in iter_blocks(ens, spectrum):
        out[g] += w @ blk @ w
    return out


def top_grams(ens: FeatureEnsemble, spectrum: KernelSpectrum, S_list) -> dict:
    """A_S = sum_{g <= S} G_g for each requested boundary S (one pass)."""
    S_list = sorted(set(int(s) for s in S_list))
    A = {S: np.zeros((ens.m, ens.m)) for S in S_list}
    for g, blk in iter_blocks(ens, spectrum):
        for S in S_list:
            if g <= S:
                A[S] += blk
    return {S: 0.5 * (M + M.T) for S, M in A.items()}


# ---------------------------------------------------------------- io

def save_ensemble(path, ens: FeatureEnsemble, spectrum: KernelSpectrum) -> None:
    """npz with a JSON header (model_tag, d, m, seed, role, spectrum digest) and the unit matrix."""
    header = dict(model_tag=ens.model_tag, d=ens.d, m=ens.m, seed=ens.seed, role=ens.role,
                  spectrum=spectrum.digest())
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), units=ens.matrix)


def load_ensemble(path, spectrum: KernelSpectrum | None = None) -> FeatureEnsemble:
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        units = z["units"].copy()
    if spectrum is not None and header["spectrum"] != spectrum.digest():
        raise ValueError("ensemble was sampled under a different spectrum")
    kw = {"U": units} if header["model_tag"] == RELU else {"C": units}
    return FeatureEnsemble(header["model_tag"], header["d"], header["m"], header["seed"],
                           role=header["role"], **kw)
