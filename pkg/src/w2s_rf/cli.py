"""Command line entry point: w2s-rf <subcommand> ...

Exit codes: 0 success, 1 internal error or failed checks, 2 usage error.
Default output directory comes from $W2S_RF_OUT (else ./out).
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys

import numpy as np

from . import __version__
from . import alignment as Al
from . import bounds as B
from . import detequiv as D
from . import experiments as X
from . import features as F
from . import student as St
from . import teacher as Te
from .config import ConfigError, ExperimentConfig, parse_config
from .manifest import RunManifest
from .spectrum import linear_spectrum, relative_trace, relu_spectrum

log = logging.getLogger("w2s_rf")

SUBCOMMANDS = {
    "spectrum": "kernel eigenvalues and multiplicities (ReLU harmonics or linear Psi)",
    "teacher": "train the optimal population teacher; per-group energies",
    "student": "gradient-flow student loss curve from a teacher config",
    "kappa": "teacher-student feature alignment kappa_S and its QPQ oracle",
    "verify-bounds": "check the quadratic lower bound, chain bound and multiplicative upper bound",
    "det-equiv": "deterministic-equivalent teacher risk over a width sweep",
    "run": "full seeded sweep: teacher, optimal early stopping, CI, power-law fit, CSV/SVG",
    "fit": "power-law fit of L_ST against L_TE from an emitted CSV",
}


def _writer(stream=None):
    return csv.writer(stream or sys.stdout, lineterminator="\n")


def _fmt(x):
    return X._fmt(x)


def _load(args) -> ExperimentConfig:
    cfg = parse_config(args.config, strict=not args.allow_unknown_keys)
    if getattr(args, "seed", None) is not None:
        cfg.seed_base = args.seed
    return cfg


def _cells(cfg: ExperimentConfig):
    for m in cfg.m_list:
        sp = X.build_spectrum(cfg, m)
        tg = X.build_target(cfg, sp)
        for seed in X.seeds_of(cfg):
            ens = F.sample(sp.model_tag, m, sp.d, sp, seed)
            yield m, seed, sp, tg, ens, Te.train(ens, sp, tg, cfg.tolerances)


# ---------------------------------------------------------------- commands

def cmd_spectrum(args) -> int:
    if args.model == "relu":
        sp = relu_spectrum(args.d, args.tol)
    else:
        kw = dict(k=args.k, d=args.d) if args.kind == "thm32" else dict(alpha=args.alpha, d=args.d)
        sp = linear_spectrum(args.kind, **kw)
    w = _writer()
    w.writerow(("order", "eigenvalue", "multiplicity", "cumulative_trace"))
    total = sp.trace_total / relative_trace(sp)   # full (untruncated) trace
    acc = []
    for g in sp.groups:
        acc.append(g.eigenvalue * g.multiplicity)
        w.writerow((g.order, _fmt(g.eigenvalue), g.multiplicity, _fmt(math.fsum(acc) / total)))
    return 0


def cmd_teacher(args) -> int:
    cfg = _load(args)
    w = _writer()
    w.writerow(("m", "d", "seed", "L_TE", "rank", "group", "eigenvalue", "energy"))
    for m, seed, sp, _, _, tm in _cells(cfg):
        for g, grp in enumerate(sp.groups):
            if g >= args.max_groups:
                break
            w.writerow((m, sp.d, seed, _fmt(tm.loss_te), tm.rank, g, _fmt(grp.eigenvalue),
                        _fmt(tm.energies[g])))
    return 0


def cmd_student(args) -> int:
    cfg = _load(args)
    w = _writer()
    w.writerow(("m", "seed", "t", "L_ST", "loss_to_teacher"))
    for m, seed, sp, _, _, tm in _cells(cfg):
        tr = St.trajectory(tm, sp, args.tmin, args.tmax, args.points, refine=False)
        for t, a, b in zip(tr.times, tr.loss_st, tr.loss_to_teacher):
            w.writerow((m, seed, _fmt(t), _fmt(a), _fmt(b)))
    return 0


def cmd_kappa(args) -> int:
    cfg = _load(args)
    w = _writer()
    w.writerow(("m", "seed", "S", "kappa", "kappa_oracle", "lambda_top", "a_rank", "full_rank"))
    for m, seed, sp, _, ens, tm in _cells(cfg):
        r = Al.kappa(ens, sp, args.S, Phi=tm.Phi, rcond=cfg.tolerances.pinv_rcond)
        w.writerow((m, seed, r.S_group, _fmt(r.kappa), _fmt(r.kappa_oracle), _fmt(r.lambda_top),
                    r.a_rank, int(r.full_rank)))
    return 0


def cmd_verify_bounds(args) -> int:
    cfg = _load(args)
    tol = cfg.tolerances.identity
    worst = {"quadratic": math.inf, "chain": math.inf, "upper": math.inf}
    count = dict.fromkeys(worst, 0)
    fails = dict.fromkeys(worst, 0)
    for m, seed, sp, tg, ens, tm in _cells(cfg):
        times = X.time_grid(cfg, sp, tm.K)
        lst, _ = St.losses(tm, sp, times)
        qb = B.quad_lower_bound(min(max(tm.loss_te, 0.0), 1.0))[0]
        s = lst - qb
        worst["quadratic"] = min(worst["quadratic"], float(s.min()))
        count["quadratic"] += s.size
        fails["quadratic"] += int(np.sum(s < -tol))
        ch = B.bootstrap_chain(tm, sp, times[::max(1, len(times) // 3)][:3])
        s = ch.losses - ch.bound
        worst["chain"] = min(worst["chain"], float(s.min()))
        count["chain"] += s.size
        fails["chain"] += int(np.sum(s < -tol)) + (0 if ch.norms_ok else 1)
        if args.upper:
            ub = Al.upper_bound_rhs(tm, sp, times, S_list=range(tm.K, min(sp.n_groups, tm.K + args.upper_groups)))
            if ub.kappas:
                s = ub.rhs - lst
                worst["upper"] = min(worst["upper"], float(s.min()))
                count["upper"] += s.size
                fails["upper"] += int(np.sum(s < -tol))
    w = _writer()
    w.writerow(("check", "n", "passed", "worst_slack"))
    for k in worst:
        if k == "upper" and not args.upper:
            continue
        w.writerow((k, count[k], int(fails[k] == 0), _fmt(worst[k])))
    return 0 if all(v == 0 for v in fails.values()) else 1


def cmd_det_equiv(args) -> int:
    if args.model == "relu":
        sp = relu_spectrum(args.d, args.tol)
    else:
        sp = linear_spectrum(args.kind, k=args.k, d=args.d) if args.kind == "thm32" else \
            linear_spectrum(args.kind, alpha=args.alpha, d=args.d)
    tg = F.make_target(args.target, sp, args.target_order)
    m_list = [int(x) for x in args.m_list.split(",") if x.strip()]
    w = _writer()
    w.writerow(("m", "nu", "L_det"))
    for m, nu, L, _ in D.risk_curve(sp, tg, m_list):
        w.writerow((m, _fmt(nu), _fmt(L)))
    return 0


def cmd_run(args) -> int:
    cfg = _load(args)
    out = args.out or os.environ.get("W2S_RF_OUT", "out")
    manifest = RunManifest.for_config(cfg)
    res = X.run(cfg, jobs=args.jobs, manifest=manifest)
    with manifest.phase("emit"):
        paths = X.emit(res, out)
    manifest.write(paths[-1])
    for m, s in res.summary.items():
        log.info("m=%d median ratio=%.4g ratio2=%.4g ci=(%.4g, %.4g)", m, s["ratio"], s["ratio2"], *s["ci"])
    if res.fit:
        print(f"exponent={res.fit.exponent:.6f} r2={res.fit.r2:.6f} n={res.fit.n_points}")
    for p in paths:
        print(p)
    for c in res.failures:
        print(f"cell m={c.m} seed={c.seed} failed: {c.error}", file=sys.stderr)
    if not res.checks_ok:
        print("bound checks failed on some cells", file=sys.stderr)
    return 0 if res.ok else 1


def cmd_fit(args) -> int:
    rows = X.read_csv(args.csv)
    pairs = [(r[4], r[6]) for r in rows if np.isfinite(r[4]) and np.isfinite(r[6])]
    f = X.fit_power_law(pairs)
    w = _writer()
    w.writerow(("exponent", "log_prefactor", "r2", "n_points"))
    w.writerow((_fmt(f.exponent), _fmt(f.log_prefactor), _fmt(f.r2), f.n_points))
    return 0


# ---------------------------------------------------------------- parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="w2s-rf", description="Weak-to-strong generalization lab for random feature models.",
                formatter_class=argparse.RawDescriptionHelpFormatter,
                epilog="subcommands:\n" + "\n".join(f"  {k:<14} {v}" for k, v in SUBCOMMANDS.items()))
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", metavar="subcommand", parser_class=_Parser)

    def add(name, fn):
        sp = sub.add_parser(name, help=SUBCOMMANDS[name], description=SUBCOMMANDS[name])
        sp.set_defaults(fn=fn)
        return sp

    def cfg_args(sp, key="--config"):
        sp.add_argument(key, required=True)
        sp.add_argument("--allow-unknown-keys", action="store_true",
                        help="ignore unknown config keys instead of failing")
        sp.add_argument("--seed", type=int, default=None, help="override seed_base")

    def model_args(sp):
        sp.add_argument("--model", choices=("relu", "linear"), default="relu")
        sp.add_argument("--d", type=int, required=True)
        sp.add_argument("--tol", type=float, default=1e-8)
        sp.add_argument("--kind", choices=("thm32", "thm33"), default="thm32")
        sp.add_argument("--k", type=int, default=1)
        sp.add_argument("--alpha", type=float, default=1.0)

    model_args(add("spectrum", cmd_spectrum))
    s = add("teacher", cmd_teacher)
    cfg_args(s)
    s.add_argument("--max-groups", type=int, default=8)
    s = add("student", cmd_student)
    cfg_args(s, "--teacher")
    s.add_argument("--tmin", type=float, required=True)
    s.add_argument("--tmax", type=float, required=True)
    s.add_argument("--points", type=int, default=100)
    s = add("kappa", cmd_kappa)
    cfg_args(s)
    s.add_argument("--S", type=int, required=True, help="group boundary (0-based)")
    s = add("verify-bounds", cmd_verify_bounds)
    cfg_args(s, "--sweep")
    s.add_argument("--upper", action="store_true", help="also check the multiplicative upper bound")
    s.add_argument("--upper-groups", type=int, default=3)
    s = add("det-equiv", cmd_det_equiv)
    model_args(s)
    s.add_argument("--target", choices=("linear", "harmonic"), default="linear")
    s.add_argument("--target-order", type=int, default=2)
    s.add_argument("--m-list", required=True)
    s = add("run", cmd_run)
    cfg_args(s)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", default=None)
    s = add("fit", cmd_fit)
    s.add_argument("--csv", required=True)
    return p


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not getattr(args, "cmd", None):
        parser.print_help()
        return 2
    for alias in ("sweep", "teacher"):
        if getattr(args, alias, None):
            args.config = getattr(args, alias)
    try:
        return args.fn(args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 2
    except BrokenPipeError:
        # downstream reader (head, less) went away; not our failure
        try:
            sys.stdout = open(os.devnull, "w")
        except OSError:
            pass
        return 0
    except Exception as exc:
        cfg_path = getattr(args, "config", None)
        try:
            man = RunManifest.for_config(parse_config(cfg_path, strict=False)) if cfg_path else \
                RunManifest("none")
        except Exception:
            man = RunManifest("unparsed")
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        print(man.to_json(), file=sys.stderr)
        return 1


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
