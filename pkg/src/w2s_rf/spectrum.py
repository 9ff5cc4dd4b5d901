"""Kernel spectra for the two random feature models.

ReLU model: the induced kernel on S^{d-1} is diagonal in spherical
harmonics; order k has eigenvalue sigma_k^2 and multiplicity N_k.

Linear model: the kernel is x' Psi x, eigenvalues psi_i, multiplicity 1
each before ties are merged.

Groups are always stored in strictly descending eigenvalue order.  Zero
ReLU eigenvalues (odd k > 1) are skipped.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .tolerances import DEFAULT

RELU = "relu_sphere"
LINEAR = "linear_diagonal"
MODEL_TAGS = (RELU, LINEAR)


def harmonic_dim(k: int, d: int) -> int:
    """Dimension N_k of degree-k spherical harmonics on S^{d-1} (exact int)."""
    k, d = int(k), int(d)
    if d < 3:
        raise ValueError(f"harmonic_dim needs d >= 3, got d={d}")
    if k < 0:
        raise ValueError(f"order must be >= 0, got k={k}")
    # (2k+d-2)(k+d-3)! / (k!(d-2)!) = (2k+d-2) C(k+d-3, k) / (d-2)
    num = (2 * k + d - 2) * math.comb(k + d - 3, k)
    q, r = divmod(num, d - 2)
    assert r == 0
    return q


def _log_relu_sigma_even(k: int, d: int) -> float:
    # |sigma_k| = Gamma(d/2) Gamma((k+1)/2) / (2 pi |k-1| Gamma((k+d+1)/2))
    return (math.lgamma(d / 2) + math.lgamma((k + 1) / 2) - math.log(2 * math.pi)
            - math.lgamma((k + d + 1) / 2) - math.log(abs(k - 1)))


def relu_sigma(k: int, d: int, signed: bool = False) -> float:
    """Coefficient of ReLU(t) on the normalized Gegenbauer polynomial P_{k,d}.

    sigma_k = c_d int_{-1}^{1} ReLU(t) P_{k,d}(t) (1-t^2)^{(d-3)/2} dt with
    c_d = Gamma(d/2)/(sqrt(pi) Gamma((d-1)/2)).  sigma_1 = 1/(2d), odd k>1
    vanish, even k use a log-Gamma closed form.  Even orders k >= 4 with
    k = 0 mod 4 are negative; by default the magnitude is returned since
    only sigma_k^2 enters the kernel.
    """
    k, d = int(k), int(d)
    if d < 3:
        raise ValueError(f"relu_sigma needs d >= 3, got d={d}")
    if k < 0:
        raise ValueError(f"order must be >= 0, got k={k}")
    if k == 1:
        return 1.0 / (2 * d)
    if k % 2:
        return 0.0
    mag = math.exp(_log_relu_sigma_even(k, d))
    if signed and k >= 2 and (k // 2) % 2 == 0:
        return -mag
    return mag


def gegenbauer(k: int, d: int, t, clamp: float = DEFAULT.gegenbauer_clamp):
    """Gegenbauer polynomial P_{k,d}(t) normalized so P_{k,d}(1) = 1."""
    if d < 3:
        raise ValueError(f"gegenbauer needs d >= 3, got d={d}")
    t = np.asarray(t, dtype=float)
    if np.any(np.abs(t) > 1 + clamp):
        raise ValueError("gegenbauer argument outside [-1, 1]")
    t = np.clip(t, -1.0, 1.0)
    p_prev, p = np.ones_like(t), t.copy()
    if k == 0:
        return p_prev
    for j in range(1, k):
        p_prev, p = p, ((2 * j + d - 2) * t * p - j * p_prev) / (j + d - 2)
    return p


def gegenbauer_iter(k_max: int, d: int, t) -> Iterator[tuple[int, np.ndarray]]:
    """Yield (k, P_{k,d}(t)) for k = 0..k_max using O(1) arrays of storage."""
    t = np.clip(np.asarray(t, dtype=float), -1.0, 1.0)
    p_prev = np.ones_like(t)
    yield 0, p_prev
    if k_max < 1:
        return
    p = t.copy()
    yield 1, p
    for j in range(1, k_max):
        p_prev, p = p, ((2 * j + d - 2) * t * p - j * p_prev) / (j + d - 2)
        yield j + 1, p


@dataclass(frozen=True)
class Group:
    eigenvalue: float
    multiplicity: int
    order: int                      # order k (ReLU) or first coordinate index (linear)
    orders: tuple = ()              # all ReLU orders merged into this group


@dataclass(frozen=True)
class KernelSpectrum:
    model_tag: str
    d: int
    groups: tuple
    k_max: int | None = None
    tol: float | None = None
    _meta: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.model_tag not in MODEL_TAGS:
            raise ValueError(f"unknown model_tag {self.model_tag!r}")
        ev = [g.eigenvalue for g in self.groups]
        if any(e < 0 for e in ev):
            raise ValueError("negative eigenvalue")
        if any(g.multiplicity < 1 for g in self.groups):
            raise ValueError("multiplicity must be >= 1")
        if any(a <= b for a, b in zip(ev, ev[1:])):
            raise ValueError("groups must be strictly descending")
        if self.model_tag == LINEAR and sum(g.multiplicity for g in self.groups) != self.d:
            raise ValueError("linear spectrum must enumerate exactly d eigenvalues")

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.array([g.eigenvalue for g in self.groups])

    @property
    def multiplicities(self) -> list:
        # python ints: ReLU multiplicities overflow int64 at large orders
        return [g.multiplicity for g in self.groups]

    @property
    def trace_total(self) -> float:
        return math.fsum(g.eigenvalue * g.multiplicity for g in self.groups)

    def column_slices(self) -> list:
        """Eigen-coordinate ranges of each group (linear model)."""
        if self.model_tag != LINEAR:
            raise ValueError("column_slices only defined for the linear model")
        out, start = [], 0
        for g in self.groups:
            out.append(slice(start, start + g.multiplicity))
            start += g.multiplicity
        return out

    def group_of_order(self, k: int) -> int:
        for i, g in enumerate(self.groups):
            if k in (g.orders or (g.order,)):
                return i
        raise KeyError(f"order {k} not in spectrum")

    def dim_top(self, S: int) -> int:
        """Dimension of the span of groups 0..S (inclusive)."""
        return sum(g.multiplicity for g in self.groups[:S + 1])

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.model_tag}|{self.d}|{self.k_max}".encode())
        for g in self.groups:
            h.update(f"|{g.eigenvalue!r}:{g.multiplicity}:{g.order}".encode())
        return h.hexdigest()[:16]


def _merge(pairs, tie_rtol):
    """pairs: (eigenvalue, multiplicity, label) sorted descending -> merged groups."""
    groups = []
    for ev, mult, lab in pairs:
        if groups and abs(groups[-1][0] - ev) <= tie_rtol * max(abs(ev), abs(groups[-1][0])):
            e0, m0, l0 = groups[-1]
            groups[-1] = (e0, m0 + mult, l0 + (lab,))
        else:
            groups.append((ev, mult, (lab,)))
    return groups


def linear_spectrum(kind: str, tie_rtol: float = DEFAULT.tie_rtol, **params) -> KernelSpectrum:
    """Linear-model spectrum Psi.

    thm32: k leading eigenvalues 1, then psi* = (d-k)^{-2/3} repeated d-k times.
    thm33: 1 followed by sqrt(alpha/(d-1)) repeated d-1 times.
    custom: psi = nonincreasing list.
    """
    if kind == "thm32":
        k, d = int(params["k"]), int(params["d"])
        if not d > k >= 1:
            raise ValueError(f"thm32 needs d > k >= 1, got k={k}, d={d}")
        psi = [1.0] * k + [float(d - k) ** (-2.0 / 3.0)] * (d - k)
    elif kind == "thm33":
        alpha, d = float(params["alpha"]), int(params["d"])
        if d < 2 or alpha <= 0:
            raise ValueError("thm33 needs d >= 2 and alpha > 0")
        psi = [1.0] + [math.sqrt(alpha / (d - 1))] * (d - 1)
    elif kind == "custom":
        psi = [float(p) for p in params["psi"]]
        if not psi:
            raise ValueError("empty psi")
        if any(b > a for a, b in zip(psi, psi[1:])):
            raise ValueError("custom psi must be nonincreasing")
    else:
        raise ValueError(f"unknown linear spectrum kind {kind!r}")
    return spectrum_from_psi(psi, tie_rtol)


def spectrum_from_psi(psi: Sequence[float], tie_rtol: float = DEFAULT.tie_rtol) -> KernelSpectrum:
    psi = [float(p) for p in psi]
    if any(b > a for a, b in zip(psi, psi[1:])):
        raise ValueError("psi must be nonincreasing")
    merged = _merge([(p, 1, i) for i, p in enumerate(psi)], tie_rtol)
    groups, start = [], 0
    for ev, mult, _ in merged:
        groups.append(Group(ev, mult, start))
        start += mult
    return KernelSpectrum(LINEAR, len(psi), tuple(groups))


def relu_mass(k: int, d: int) -> float:
    """sigma_k^2 N_k as a fraction of the total E[ReLU(t)^2] = 1/(2d)."""
    s = relu_sigma(k, d)
    if s == 0.0:
        return 0.0
    return 2 * d * math.exp(2 * math.log(s) + math.log(harmonic_dim(k, d)))


def relu_orders(k_max: int):
    return [k for k in range(k_max + 1) if k == 1 or k % 2 == 0]


def truncate_relu(d: int, tol: float = DEFAULT.truncation, k_cap: int = 200000) -> int:
    """Smallest order k_max with relative tail 1 - 2d sum_{k<=k_max} sigma_k^2 N_k <= tol.

    The untruncated series sums to E[ReLU(u.x)^2] = 1/(2d), so the tail is
    measured relative to that total.
    """
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    parts = []
    for k in range(k_cap + 1):
        if k > 1 and k % 2:
            continue
        parts.append(relu_mass(k, d))
        if 1.0 - math.fsum(parts) <= tol:
            return k
    raise RuntimeError("truncation did not converge")


def relu_spectrum(d: int, tol: float = DEFAULT.truncation, k_max: int | None = None,
                  tie_rtol: float = DEFAULT.tie_rtol) -> KernelSpectrum:
    """Truncated ReLU spectrum on S^{d-1}; pass k_max to override the tol rule."""
    d = int(d)
    if d < 3:
        raise ValueError(f"ReLU spectrum needs d >= 3, got {d}")
    if k_max is None:
        k_max = truncate_relu(d, tol)
    pairs = [(relu_sigma(k, d) ** 2, harmonic_dim(k, d), k) for k in relu_orders(k_max)]
    pairs.sort(key=lambda p: -p[0])
    groups = [Group(ev, mult, labs[0], labs) for ev, mult, labs in _merge(pairs, tie_rtol)]
    return KernelSpectrum(RELU, d, tuple(groups), k_max=k_max, tol=tol)


def relative_trace(spec: KernelSpectrum) -> float:
    """Captured fraction of the untruncated ReLU trace (1.0 for linear)."""
    if spec.model_tag == LINEAR:
        return 1.0
    return 2 * spec.d * spec.trace_total
