"""Seeded sweeps over teacher width: teacher loss, best early-stopped student, fits, CSV/SVG.

Each (m, seed) cell is an independent unit of work.  Cells are sorted by
(m, seed) before any aggregation, so parallel and serial runs write the
same bytes.
"""
from __future__ import annotations

import csv
import io
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import stats

from . import bounds as B
from . import features as F
from . import student as St
from . import teacher as Te
from .config import ExperimentConfig
from .manifest import RunManifest
from .spectrum import LINEAR, RELU, KernelSpectrum, linear_spectrum, relu_spectrum

COLUMNS = ("model", "d", "m", "seed", "L_TE", "t_opt", "L_ST", "ratio", "ratio2", "ci_lo", "ci_hi")


@dataclass(frozen=True)
class PowerLawFit:
    exponent: float
    log_prefactor: float
    r2: float
    n_points: int


def fit_power_law(pairs) -> PowerLawFit:
    """OLS of log L_ST on log L_TE (degree-1 polynomial in log space)."""
    arr = np.asarray(list(pairs), dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 2:
        raise ValueError("need at least two (L_TE, L_ST) pairs")
    if np.any(arr <= 0):
        raise ValueError("losses must be positive for a log-log fit")
    x, y = np.log(arr[:, 0]), np.log(arr[:, 1])
    if np.ptp(x) == 0:
        raise ValueError("all L_TE values are equal")
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    sst = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / sst if sst > 0 else 1.0
    return PowerLawFit(float(slope), float(icpt), r2, int(arr.shape[0]))


def bootstrap_ci(values, n_resamples: int, level: float, seed_seq) -> tuple:
    """Percentile bootstrap CI of the median."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        return (math.nan, math.nan)
    if x.size < 2 or np.ptp(x) == 0:
        return (float(x[0]), float(x[0]))
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = stats.bootstrap((x,), np.median, n_resamples=n_resamples, confidence_level=level,
                              method="percentile", random_state=rng, vectorized=True)
    return float(res.confidence_interval.low), float(res.confidence_interval.high)


# ---------------------------------------------------------------- cells

@lru_cache(maxsize=64)
def _spectrum(model, d, kind, k, alpha, psi, truncation) -> KernelSpectrum:
    if model == "relu":
        return relu_spectrum(d, truncation)
    if kind == "thm32":
        return linear_spectrum("thm32", k=k, d=d)
    if kind == "thm33":
        return linear_spectrum("thm33", alpha=alpha, d=d)
    return linear_spectrum("custom", psi=list(psi))


def build_spectrum(cfg: ExperimentConfig, m: int) -> KernelSpectrum:
    psi = tuple(cfg.psi) if cfg.psi else None
    return _spectrum(cfg.model, cfg.d_for(m), cfg.spectrum, cfg.k, cfg.alpha, psi, cfg.truncation)


def build_target(cfg: ExperimentConfig, sp: KernelSpectrum) -> F.Target:
    return F.make_target(cfg.target, sp, cfg.target_order)


def time_grid(cfg: ExperimentConfig, sp: KernelSpectrum, K: int) -> np.ndarray:
    lamK = sp.groups[K].eigenvalue
    lam_ref = sp.groups[-1].eigenvalue if cfg.t_max_ref == "lambda_min" else lamK
    lo, hi = cfg.t_min / lamK, cfg.t_max / lam_ref
    if not hi > lo:
        raise ValueError("time grid is empty (t_max below t_min)")
    g = np.geomspace(lo, hi, cfg.n_points)
    g[0], g[-1] = lo, hi
    return g


@dataclass(eq=False)
class CellResult:
    m: int
    seed: int
    d: int
    L_TE: float = math.nan
    t_opt: float = math.nan
    L_ST: float = math.nan
    times: np.ndarray | None = None
    curve: np.ndarray | None = None      # L_ST(t) on the grid
    bound_ok: bool = True                # quadratic lower bound on every grid point and the optimum
    worst_slack: float = math.inf
    overtrain_ok: bool | None = None     # None when lambda_min * t_max < 40
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def run_cell(cfg: ExperimentConfig, m: int, seed: int) -> CellResult:
    d = cfg.d_for(m)
    try:
        sp = build_spectrum(cfg, m)
        tg = build_target(cfg, sp)
        ens = F.sample(sp.model_tag, m, d, sp, seed)
        tm = Te.train(ens, sp, tg, cfg.tolerances)
        times = time_grid(cfg, sp, tm.K)
        if cfg.student == "finite":
            s_ens = F.sample(sp.model_tag, cfg.m_student, d, sp, seed, role=F.STUDENT_ROLE)
            curve = np.asarray(St.finite_width_oracle(s_ens, tm, tg, sp, times))
            i = int(np.argmin(curve))
            t_opt, l_opt = float(times[i]), float(curve[i])
        else:
            traj = St.trajectory(tm, sp, times[0], times[-1], len(times))
            curve, t_opt, l_opt = traj.loss_st, traj.t_opt, traj.lst_opt
        if cfg.stopping == "rule":
            t_opt = St.stopping_rule(sp, tm.K, cfg.delta_T)
            if cfg.student == "finite":
                l_opt = float(St.finite_width_oracle(s_ens, tm, tg, sp, t_opt))
            else:
                l_opt = St.loss_at(tm, sp, t_opt)[0]
        L = min(max(tm.loss_te, 0.0), 1.0)
        qb = B.quad_lower_bound(L)[0]
        slack = float(min(np.min(curve), l_opt) - qb)
        tol = cfg.tolerances.identity
        over = None
        if sp.groups[-1].eigenvalue * times[-1] >= 40 and cfg.student == "infinite":
            over = abs(curve[-1] / tm.loss_te - 1) <= 1e-6
        return CellResult(m, seed, d, tm.loss_te, t_opt, l_opt, times, curve,
                          slack >= -tol, slack, over)
    except Exception as exc:  # isolate a failing cell, keep the sweep going
        return CellResult(m, seed, d, error=f"{type(exc).__name__}: {exc}")


def _cell_args(args):
    return run_cell(*args)


@dataclass(eq=False)
class ExperimentResult:
    config: ExperimentConfig
    cells: list
    rows: list
    fit: PowerLawFit | None
    manifest: RunManifest
    summary: dict = field(default_factory=dict)   # m -> dict(median ratio, ratio2, ci)

    @property
    def failures(self) -> list:
        return [c for c in self.cells if not c.ok]

    @property
    def checks_ok(self) -> bool:
        good = [c for c in self.cells if c.ok]
        return all(c.bound_ok for c in good) and all(c.overtrain_ok is not False for c in good)

    @property
    def ok(self) -> bool:
        return not self.failures and self.checks_ok


def seeds_of(cfg: ExperimentConfig) -> list:
    return [cfg.seed_base + i for i in range(cfg.seeds)]


def run(cfg: ExperimentConfig, jobs: int = 1, manifest: RunManifest | None = None) -> ExperimentResult:
    manifest = manifest or RunManifest.for_config(cfg)
    work = [(cfg, m, s) for m in cfg.m_list for s in seeds_of(cfg)]
    with manifest.phase("cells"):
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as ex:
                cells = list(ex.map(_cell_args, work))
        else:
            cells = [run_cell(*w) for w in work]
    cells.sort(key=lambda c: (c.m, c.seed))
    with manifest.phase("aggregate"):
        summary, rows = {}, []
        for m in cfg.m_list:
            good = [c for c in cells if c.m == m and c.ok]
            r = [c.L_ST / c.L_TE for c in good]
            r2 = [c.L_ST / c.L_TE ** 2 for c in good]
            ss = np.random.SeedSequence(cfg.seed_base, spawn_key=(2, m))
            ci = bootstrap_ci(r, cfg.bootstrap, cfg.ci, ss)
            summary[m] = dict(ratio=float(np.median(r)) if r else math.nan,
                              ratio2=float(np.median(r2)) if r2 else math.nan,
                              L_TE=float(np.median([c.L_TE for c in good])) if good else math.nan,
                              ci=ci, n=len(good))
        model = cfg.model
        for c in cells:
            if c.ok:
                ci = summary[c.m]["ci"]
                rows.append((model, c.d, c.m, c.seed, c.L_TE, c.t_opt, c.L_ST,
                             c.L_ST / c.L_TE, c.L_ST / c.L_TE ** 2, ci[0], ci[1]))
            else:
                rows.append((model, c.d, c.m, c.seed) + (math.nan,) * 7)
        pairs = [(c.L_TE, c.L_ST) for c in cells if c.ok and c.L_TE > 0 and c.L_ST > 0]
        try:
            fit = fit_power_law(pairs)
        except ValueError:
            fit = None
    return ExperimentResult(cfg, cells, rows, fit, manifest, summary)


# ---------------------------------------------------------------- output

def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return repr(float(x))


def csv_text(result: ExperimentResult) -> str:
    buf = io.StringIO()
    buf.write(f"# manifest {result.manifest.config_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for row in result.rows:
        w.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def read_csv(path_or_text) -> list:
    """Parse an emitted CSV back into typed row tuples."""
    text = path_or_text
    if os.path.exists(str(path_or_text)):
        with open(path_or_text, encoding="utf-8") as fh:
            text = fh.read()
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    reader = csv.reader(lines)
    header = tuple(next(reader))
    if header != COLUMNS:
        raise ValueError(f"unexpected header {header}")
    out = []
    for rec in reader:
        if len(rec) != len(COLUMNS):
            raise ValueError("wrong column count")
        out.append((rec[0], int(rec[1]), int(rec[2]), int(rec[3])) + tuple(float(x) for x in rec[4:]))
    return out


def _svg_figures(result: ExperimentResult):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = result.manifest.config_hash
    plt.rcParams["svg.fonttype"] = "path"
    figs = {}
    fig, ax = plt.subplots(figsize=(6, 4))
    for m in result.config.m_list:
        cs = [c for c in result.cells if c.m == m and c.ok]
        if not cs:
            continue
        ratio = np.median(np.stack([c.curve / c.L_TE for c in cs]), axis=0)
        ax.plot(cs[0].times, ratio, label=f"m={m}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("stopping time t")
    ax.set_ylabel("L_ST / L_TE (median over seeds)")
    ax.legend(fontsize=7)
    figs["ratio"] = fig
    fig, ax = plt.subplots(figsize=(5, 4))
    good = [c for c in result.cells if c.ok]
    x = np.array([c.L_TE for c in good])
    y = np.array([c.L_ST for c in good])
    ax.loglog(x, y, "o", ms=3)
    if result.fit is not None and len(x):
        xs = np.geomspace(x.min(), x.max(), 50)
        ax.loglog(xs, np.exp(result.fit.log_prefactor) * xs ** result.fit.exponent, "-",
                  label=f"slope {result.fit.exponent:.3f}, r2 {result.fit.r2:.3f}")
        ax.legend(fontsize=7)
    ax.set_xlabel("L_TE")
    ax.set_ylabel("min_t L_ST")
    figs["fit"] = fig
    return figs, plt


def emit(result: ExperimentResult, out_dir, formats=("csv", "svg")) -> list:
    os.makedirs(out_dir, exist_ok=True)
    name = result.config.name
    paths = []
    if not result.rows:
        raise ValueError("no results to emit")
    if "csv" in formats:
        p = os.path.join(out_dir, f"{name}.csv")
        with open(p, "w", encoding="utf-8", newline="") as fh:
            fh.write(csv_text(result))
        paths.append(p)
    if "svg" in formats:
        figs, plt = _svg_figures(result)
        for tag, fig in figs.items():
            p = os.path.join(out_dir, f"{name}_{tag}.svg")
            buf = io.StringIO()
            fig.savefig(buf, format="svg", metadata={"Date": None})
            svg = buf.getvalue().replace("<svg ", f"<!-- manifest {result.manifest.config_hash} -->\n<svg ", 1)
            with open(p, "w", encoding="utf-8") as fh:
                fh.write(svg)
            plt.close(fig)
            paths.append(p)
    p = os.path.join(out_dir, f"{name}_manifest.json")
    result.manifest.write(p)
    paths.append(p)
    return paths
