"""Flat key = value experiment configs with exhaustive validation.

Format: one `key = value` per line, `#` starts a comment, lists are
comma separated.  Unknown keys are errors unless the caller passes
strict=False (CLI flag --allow-unknown-keys).

Keys
----
name            label used for output file names                 (experiment)
model           relu | linear                                     (required)
d               ambient dimension; exclusive with d_rule
d_rule          m^<power>+<offset>, e.g. m^1.5+1 -> round(m^1.5)+1
spectrum        linear only: thm32 | thm33 | custom               (thm32)
k               thm32 leading block size                          (1)
alpha           thm33 parameter                                   (1.0)
psi             custom nonincreasing eigenvalues
target          linear | harmonic                                 (linear)
target_order    order of a harmonic target                        (2)
m_list          ascending teacher widths                          (required)
seeds           number of seeds per width                         (5)
seed_base       first seed                                        (0)
t_min           first grid time, in units of 1/lambda_K           (0.01)
t_max           last grid time, in units of 1/lambda_ref          (50)
t_max_ref       lambda_min | lambda_K                             (lambda_min)
n_points        grid size                                         (200)
stopping        optimal | rule                                    (optimal)
delta_T         rule: T = log(1/delta_T)/lambda_K
student         infinite | finite                                 (infinite)
m_student       finite-width student size                         (4096)
bootstrap       bootstrap resamples for the CI                    (1000)
ci              confidence level                                  (0.95)
truncation      relative ReLU series truncation                   (1e-8)
tol.<name>      override an entry of the tolerance table
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field, fields

from .tolerances import DEFAULT, Tolerances

D_RULE = re.compile(r"^\s*m\s*\^\s*([0-9]*\.?[0-9]+)\s*\+\s*(\d+)\s*$")


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class ExperimentConfig:
    model: str = ""
    m_list: list = field(default_factory=list)
    name: str = "experiment"
    d: int | None = None
    d_rule: str | None = None
    spectrum: str = "thm32"
    k: int = 1
    alpha: float = 1.0
    psi: list | None = None
    target: str = "linear"
    target_order: int = 2
    seeds: int = 5
    seed_base: int = 0
    t_min: float = 0.01
    t_max: float = 50.0
    t_max_ref: str = "lambda_min"
    n_points: int = 200
    stopping: str = "optimal"
    delta_T: float | None = None
    student: str = "infinite"
    m_student: int = 4096
    bootstrap: int = 1000
    ci: float = 0.95
    truncation: float = 1e-8
    tolerances: Tolerances = field(default_factory=lambda: DEFAULT)

    def d_for(self, m: int) -> int:
        if self.d is not None:
            return int(self.d)
        p, off = D_RULE.match(self.d_rule).groups()
        return int(round(m ** float(p))) + int(off)

    def canonical(self) -> str:
        """Stable text form used for hashing (output-affecting fields only)."""
        parts = []
        for f in fields(self):
            val = getattr(self, f.name)
            if f.name == "tolerances":
                val = sorted(val.as_dict().items())
            parts.append(f"{f.name}={val!r}")
        return "\n".join(parts)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


_INT = {"d", "k", "seeds", "seed_base", "n_points", "m_student", "bootstrap", "target_order"}
_FLOAT = {"alpha", "t_min", "t_max", "delta_T", "ci", "truncation"}
_STR = {"model", "name", "d_rule", "spectrum", "target", "t_max_ref", "stopping", "student"}
_LIST_INT = {"m_list"}
_LIST_FLOAT = {"psi"}
KNOWN = _INT | _FLOAT | _STR | _LIST_INT | _LIST_FLOAT
CHOICES = {
    "model": ("relu", "linear"),
    "spectrum": ("thm32", "thm33", "custom"),
    "target": ("linear", "harmonic"),
    "t_max_ref": ("lambda_min", "lambda_K"),
    "stopping": ("optimal", "rule"),
    "student": ("infinite", "finite"),
}


def read_pairs(text: str):
    """[(lineno, key, value)] from key = value text."""
    out, errors = [], []
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {n}: expected 'key = value'")
            continue
        k, v = (s.strip() for s in line.split("=", 1))
        out.append((n, k, v))
    return out, errors


def from_mapping(items, strict: bool = True) -> ExperimentConfig:
    """Build and validate a config from (lineno, key, value) triples; raise with every error."""
    cfg = ExperimentConfig()
    errors, seen, tol_over = [], set(), {}
    for n, key, val in items:
        where = f"line {n}: " if n else ""
        if key in seen:
            errors.append(f"{where}duplicate key '{key}'")
            continue
        seen.add(key)
        try:
            if key.startswith("tol."):
                tol_over[key[4:]] = val
            elif key in _INT:
                setattr(cfg, key, int(val))
            elif key in _FLOAT:
                setattr(cfg, key, float(val))
            elif key in _STR:
                setattr(cfg, key, val)
            elif key in _LIST_INT:
                setattr(cfg, key, [int(x) for x in val.split(",") if x.strip()])
            elif key in _LIST_FLOAT:
                setattr(cfg, key, [float(x) for x in val.split(",") if x.strip()])
            elif strict:
                errors.append(f"{where}unknown key '{key}'")
        except ValueError:
            errors.append(f"{where}bad value for '{key}': {val!r}")
    if tol_over:
        try:
            cfg.tolerances = DEFAULT.override(**tol_over)
        except (KeyError, ValueError) as exc:
            errors.append(f"tolerance override: {exc}")
    errors += validate(cfg, seen)
    if errors:
        raise ConfigError(errors)
    return cfg


def validate(cfg: ExperimentConfig, seen=()) -> list:
    errs = []
    for key, allowed in CHOICES.items():
        if key == "model" and not cfg.model:
            continue
        if getattr(cfg, key) not in allowed:
            errs.append(f"'{key}' must be one of {'|'.join(allowed)}, got {getattr(cfg, key)!r}")
    if not cfg.model:
        errs.append("missing required key 'model'")
    m_ok = False
    if not cfg.m_list:
        errs.append("'m_list' must be a nonempty list")
    elif any(b <= a for a, b in zip(cfg.m_list, cfg.m_list[1:])):
        errs.append("'m_list' must be strictly ascending")
    elif cfg.m_list[0] < 1:
        errs.append("'m_list' entries must be >= 1")
    else:
        m_ok = True
    d_ok = False
    if cfg.d is not None and cfg.d_rule is not None:
        errs.append("'d' and 'd_rule' are mutually exclusive")
    elif cfg.d is None and cfg.d_rule is None:
        errs.append("one of 'd' or 'd_rule' is required")
    elif cfg.d_rule is not None and not D_RULE.match(cfg.d_rule):
        errs.append(f"'d_rule' must look like m^1.5+1, got {cfg.d_rule!r}")
    else:
        d_ok = True
    if m_ok and d_ok:
        for m in cfg.m_list:
            d = cfg.d_for(m)
            if d < 3:
                errs.append(f"d={d} for m={m} is below 3")
            if cfg.model == "linear" and cfg.spectrum == "thm32" and d <= cfg.k:
                errs.append(f"thm32 needs d > k, got d={d} for m={m}")
    if cfg.model == "linear":
        if cfg.spectrum == "custom":
            if not cfg.psi:
                errs.append("custom spectrum needs 'psi'")
            elif any(b > a for a, b in zip(cfg.psi, cfg.psi[1:])):
                errs.append("'psi' must be nonincreasing")
            elif cfg.d is not None and len(cfg.psi) != cfg.d:
                errs.append("'psi' length must equal d")
        if cfg.target == "harmonic":
            errs.append("harmonic targets need model = relu")
        if cfg.alpha <= 0:
            errs.append("'alpha' must be positive")
    if cfg.model == "relu" and cfg.target == "harmonic":
        if cfg.target_order < 0 or (cfg.target_order > 1 and cfg.target_order % 2):
            errs.append("'target_order' must be 0, 1 or even")
    if cfg.seeds < 1:
        errs.append("'seeds' must be >= 1")
    if not 0 < cfg.t_min:
        errs.append("'t_min' must be positive")
    if cfg.n_points < 2:
        errs.append("'n_points' must be >= 2")
    if cfg.stopping == "rule" and not (cfg.delta_T and 0 < cfg.delta_T <= 1):
        errs.append("stopping = rule needs 0 < delta_T <= 1")
    if not 0 < cfg.ci < 1:
        errs.append("'ci' must lie in (0, 1)")
    if cfg.bootstrap < 1:
        errs.append("'bootstrap' must be >= 1")
    if not 0 < cfg.truncation < 1:
        errs.append("'truncation' must lie in (0, 1)")
    if cfg.m_student < 1:
        errs.append("'m_student' must be >= 1")
    return errs


def parse_text(text: str, strict: bool = True) -> ExperimentConfig:
    pairs, errors = read_pairs(text)
    try:
        cfg = from_mapping(pairs, strict)
    except ConfigError as exc:
        raise ConfigError(errors + exc.errors) from None
    if errors:
        raise ConfigError(errors)
    return cfg


def parse_config(path, strict: bool = True) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_text(fh.read(), strict)
