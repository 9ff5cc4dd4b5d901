"""Central tolerance table.

Every numeric threshold used by the library lives here so that runs can
override them in one place and the manifest can log what was in effect.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace


@dataclass(frozen=True)
class Tolerances:
    # relative eigenvalue cutoff for pseudo-inverses (teacher, kappa, oracle)
    pinv_rcond: float = 1e-10
    # relative tie tolerance when merging eigenvalues into groups
    tie_rtol: float = 1e-12
    # relative truncation of the ReLU Mercer series
    truncation: float = 1e-8
    # slack on proven inequalities (Pythagoras, bounds, orthogonality)
    identity: float = 1e-9
    # bisection residual for the deterministic equivalent, relative to m
    detequiv_residual: float = 1e-10
    detequiv_max_iter: int = 80
    # eigenvalues of QPQ below this fraction of the largest count as zero
    kappa_zero: float = 1e-8
    # f* counts as inside span{P_S g_i} when the relative residual is below this
    eligibility: float = 1e-8
    # clamp for gegenbauer arguments
    gegenbauer_clamp: float = 1e-12

    def as_dict(self) -> dict:
        return asdict(self)

    def override(self, **kw) -> "Tolerances":
        names = {f.name for f in fields(self)}
        bad = sorted(set(kw) - names)
        if bad:
            raise KeyError(f"unknown tolerance(s): {', '.join(bad)}")
        typed = {k: type(getattr(self, k))(v) for k, v in kw.items()}
        return replace(self, **typed)


DEFAULT = Tolerances()
