"""Command-line front end: one subcommand per experiment.

Every experiment subcommand prints a JSON summary on stdout and can also
write it (``--json``) together with a CSV of row records (``--csv``).
Parameters come from built-in defaults, then ``--config FILE``, then
explicit flags.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from importlib import metadata
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__, estimators, invariants, oracle
from .config import COMMANDS, ConfigError, ExperimentConfig
from .engine import WORKERS_ENV
from .lattice import ContractError, make_initial, parse_initial

CSV_COLUMNS = ["experiment", "quantity", "params", "x", "estimate", "ci_lo", "ci_hi", "trials",
               "censored_count"]

DEFAULTS: dict[str, dict] = {
    "simulate": dict(epsilon=0.3, initial="singleton", n_list=[1, 2, 4, 8, 16, 32, 64],
                     trials=10_000, kernel="independent", convention="reach"),
    "theta": dict(epsilon=0.1, k=0, n_trunc=256, trials=10_000, kernel="independent"),
    "eq2": dict(epsilon=0.05, k_list=list(range(9)), n_trunc=256, trials=100_000,
                kernel="independent"),
    "eqstr": dict(epsilon=0.01, p=0.5, k=2, beta=0.8, rho=0.8, n_list=[8, 16, 32, 64],
                  trials=10_000, kernel="independent"),
    "corollary2": dict(eps_list=[0.2, 0.1, 0.05, 0.01], k=2, p=0.5, n=128, trials=10_000,
                       kernel="independent"),
    "prop3": dict(epsilon=0.01, beta=0.9, rho=0.9, n_list=[32, 64, 128], subset="cone",
                  sizes=[8, 16, 32], size_n=64, trials=10_000, kernel="independent"),
    "edgespeed": dict(mode="bond", values=[0.7, 0.8, 0.9, 0.99], a_list=[0.8],
                      n_list=[64, 128, 256], trials=10_000, kernel="independent"),
    "prop4f": dict(p=0.9, p_prime=0.6, n_list=[64, 128], sizes=[8, 16, 32, 64], trials=10_000,
                   pc_estimate=0.66),
    "duality": dict(epsilon=0.1, p=0.5, k=2, n=32, trials=10_000, kernel="independent",
                    permutations=2000),
    "oracle": dict(epsilon=0.5, n=2, initial="singleton", kernel="independent"),
    "selftest": dict(eps_list=[0.01, 0.1, 0.3, 0.6], trials=1000, n=128),
}


# -- output -------------------------------------------------------------------


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, NaN/inf to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _versions() -> dict:
    out = {"oplab": __version__}
    for pkg in ("numpy", "scipy", "numba"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def render_json(command: str, cfg: ExperimentConfig, results: dict, seed: int) -> str:
    # run-environment keys do not change results and stay out of the summary
    params = {k: v for k, v in cfg.to_dict().items() if k not in ("workers", "csv", "json")}
    doc = {"experiment": command, "params": params, "seed": seed,
           "versions": _versions(), "results": results}
    return json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n"


def render_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


# -- experiment runners -------------------------------------------------------


def _need(cfg: ExperimentConfig, *keys: str) -> None:
    for k in keys:
        if getattr(cfg, k) is None:
            raise ConfigError(f"{k}: required for {cfg.command}")


def _run_simulate(c: ExperimentConfig):
    r = estimators.survival_curve(c.epsilon, parse_initial(c.initial), c.n_list, c.trials,
                                  c.kernel, c.seed, c.workers, c.convention)
    return r.rows(), r.summary()


def _run_theta(c):
    r = estimators.estimate_theta(c.epsilon, c.k, c.n_trunc, c.trials, c.kernel, c.seed, c.workers)
    return r.rows(), r.summary()


def _run_eq2(c):
    r = estimators.experiment_eq2(c.epsilon, c.k_list, c.n_trunc, c.trials, c.kernel, c.seed,
                                  c.workers)
    return r.rows(), r.summary()


def _run_eqstr(c):
    r = estimators.experiment_eq_str(c.epsilon, c.p, c.k, c.beta, c.rho, c.n_list, c.trials,
                                     c.kernel, c.seed, c.workers, n_trunc=c.n_trunc)
    return r.rows(), r.summary()


def _run_corollary2(c):
    r = estimators.corollary2_sweep(c.eps_list, c.k, c.p, c.n, c.trials, c.kernel, c.seed,
                                    c.workers)
    return r.rows(), r.summary()


def _run_prop3(c):
    r = estimators.experiment_prop3(c.epsilon, c.beta, c.rho, c.n_list, c.trials, c.subset,
                                    c.sizes or (), c.size_n, c.kernel, c.seed, c.workers)
    return r.rows(), r.summary()


def _run_edgespeed(c):
    rows, out = [], {}
    for v in c.values:
        r = estimators.experiment_edge_speed(c.mode, v, c.a_list, c.n_list, c.trials, c.kernel,
                                             c.seed, c.workers)
        rows += r.rows()
        out[repr(float(v))] = r.summary()
    return rows, out


def _run_prop4f(c):
    r = estimators.experiment_prop4f(c.p, c.p_prime, c.n_list, c.sizes, c.trials, c.seed,
                                     c.workers, c.pc_estimate)
    return r.rows(), r.summary()


def _run_duality(c):
    r = estimators.duality_check_mc(c.epsilon, c.p, c.k, c.n, c.trials, c.kernel, c.seed,
                                    c.workers, c.permutations)
    return r.rows(), r.summary()


RUNNERS: dict[str, Callable] = {
    "simulate": _run_simulate, "theta": _run_theta, "eq2": _run_eq2, "eqstr": _run_eqstr,
    "corollary2": _run_corollary2, "prop3": _run_prop3, "edgespeed": _run_edgespeed,
    "prop4f": _run_prop4f, "duality": _run_duality,
}


# -- oracle and selftest ------------------------------------------------------


def _fmt(x) -> str:
    return format(float(x), "#.15g")


def _run_oracle(c: ExperimentConfig, what: str, sites: list[int] | None, exact: bool,
                out) -> None:
    if what == "duality":
        _need(c, "epsilon", "p", "k", "n")
        d = oracle.exact_duality_check(c.epsilon, c.p, c.k, c.n, c.kernel, exact=exact)
        print("forward " + " ".join(_fmt(v) for v in d.forward), file=out)
        print("dual " + " ".join(_fmt(v) for v in d.dual), file=out)
        print(f"sup_distance {_fmt(d.sup_distance)}", file=out)
        print(f"nonempty_forward {_fmt(d.nonempty_forward)}", file=out)
        print(f"nonempty_dual {_fmt(d.nonempty_dual)}", file=out)
        return
    init = make_initial(parse_initial(c.initial), 0)
    if init.censored:
        raise ContractError("the oracle needs a finite start")
    if what == "survival":
        print(_fmt(oracle.exact_survival(init, c.epsilon, c.n, c.kernel, exact=exact)), file=out)
    elif what == "evolve":
        d = oracle.exact_evolve(init, c.epsilon, c.n, c.kernel, exact=exact)
        for s, pr in d.items():
            print(f"{{{','.join(map(str, sorted(s)))}}} {_fmt(pr)}", file=out)
    elif what == "pmf":
        if not sites:
            raise ConfigError("sites: required for oracle pmf")
        pmf = oracle.exact_intersection_pmf(init, c.epsilon, c.n, sites, c.kernel, exact=exact)
        for i, v in enumerate(pmf):
            print(f"{i} {_fmt(v)}", file=out)


def _run_selftest(c: ExperimentConfig, seeds: list[int], oracle_trials: int, fault: bool,
                  out) -> int:
    reports = invariants.pathwise_suite(c.eps_list, seeds, c.n, c.trials, fault=fault,
                                        workers=c.workers)
    failed = False
    for r in reports:
        print(r.line(), file=out)
        failed |= not r.passed
    pts = invariants.oracle_agreement(trials=oracle_trials, seed=seeds[0], fault=fault,
                                      workers=c.workers)
    bad = [pt for pt in pts if not pt.ok()]
    zmax = max(pt.z for pt in pts)
    status = "PASS" if not bad else "FAIL"
    line = f"{status} oracle agreement: {len(pts)} points, max |z| = {zmax:.3f}"
    if bad:
        b = bad[0]
        line += f" first at epsilon={b.epsilon} initial={b.initial} n={b.n}"
    print(line, file=out)
    failed |= bool(bad)
    return 1 if failed else 0


# -- argument parsing ---------------------------------------------------------


def _ints(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            a, b = part.split("..")
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    return out


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


FLAGS = {
    "epsilon": dict(type=float, help="closed-site probability"),
    "p": dict(type=float, help="bond probability or product density"),
    "p_prime": dict(type=float, help="density threshold p'"),
    "k": dict(type=int, help="interval half-width"),
    "n": dict(type=int, help="level (n_eval for corollary2, horizon for selftest)"),
    "beta": dict(type=float), "rho": dict(type=float),
    "a_list": dict(type=_floats, help="comma-separated slopes a"),
    "n_list": dict(type=_ints, help="comma-separated levels, ranges as A..B"),
    "k_list": dict(type=_ints), "eps_list": dict(type=_floats),
    "values": dict(type=_floats, help="p values (bond) or epsilon values (site)"),
    "sizes": dict(type=_ints), "size_n": dict(type=int),
    "trials": dict(type=int), "n_trunc": dict(type=int),
    "kernel": dict(choices=["independent", "pair"]),
    "convention": dict(choices=["reach", "open"]),
    "initial": dict(help="singleton | interval:K | halfline | fullline | product:P"),
    "subset": dict(help="cone | interval:M | random:Q"),
    "mode": dict(choices=["bond", "site"]),
    "pc_estimate": dict(type=float, help="working critical bond probability"),
    "permutations": dict(type=int),
}

COMMAND_FLAGS = {
    "simulate": ["epsilon", "initial", "n_list", "trials", "kernel", "convention"],
    "theta": ["epsilon", "k", "n_trunc", "trials", "kernel"],
    "eq2": ["epsilon", "k_list", "n_trunc", "trials", "kernel"],
    "eqstr": ["epsilon", "p", "k", "beta", "rho", "n_list", "n_trunc", "trials", "kernel"],
    "corollary2": ["eps_list", "k", "p", "n", "trials", "kernel"],
    "prop3": ["epsilon", "beta", "rho", "n_list", "subset", "sizes", "size_n", "trials", "kernel"],
    "edgespeed": ["mode", "values", "a_list", "n_list", "trials", "kernel"],
    "prop4f": ["p", "p_prime", "n_list", "sizes", "trials", "pc_estimate"],
    "duality": ["epsilon", "p", "k", "n", "trials", "kernel", "permutations"],
    "oracle": ["epsilon", "p", "k", "n", "initial", "kernel"],
    "selftest": ["eps_list", "trials", "n"],
}

HELP = {
    "simulate": "survival curve P(A_n nonempty) at checkpoints",
    "theta": "survival probability of an interval, truncated at n_trunc",
    "eq2": "extinction probability tail in the interval half-width k",
    "eqstr": "cardinality bound at level 2n from a product start",
    "corollary2": "hitting probability of an interval as epsilon decreases",
    "prop3": "low-density probability over subsets of the cone",
    "edgespeed": "half-line right-edge speed and its lower tail",
    "prop4f": "low-count tail of the full-line bond process",
    "duality": "Monte Carlo comparison of the two duality counts",
    "oracle": "exact small-instance probabilities",
    "selftest": "pathwise invariants and oracle agreement",
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="oplab", description="Oriented percolation laboratory.")
    ap.add_argument("--version", action="version", version=f"oplab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for cmd in COMMANDS:
        sp = sub.add_parser(cmd, help=HELP[cmd], description=HELP[cmd])
        if cmd == "oracle":
            sp.add_argument("what", choices=["survival", "evolve", "pmf", "duality"])
            sp.add_argument("--sites", type=_ints, help="target sites for pmf")
            sp.add_argument("--exact", action="store_true", help="rational arithmetic")
        for key in COMMAND_FLAGS[cmd]:
            sp.add_argument("--" + key.replace("_", "-"), dest=key, default=None, **FLAGS[key])
        sp.add_argument("--config", help="YAML config file")
        sp.add_argument("--write-config", metavar="PATH", help="write the effective config and exit")
        if cmd != "oracle":
            sp.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
            sp.add_argument("--workers", type=int, default=None,
                            help=f"worker threads (default: ${WORKERS_ENV} or CPU count)")
        if cmd in RUNNERS:
            sp.add_argument("--csv", default=None, help="write row records to this CSV file")
            sp.add_argument("--json", default=None, help="write the JSON summary to this file")
        if cmd == "selftest":
            sp.add_argument("--seeds", type=_ints, default=[0, 1])
            sp.add_argument("--oracle-trials", type=int, default=20_000)
            sp.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    return ap


def effective_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig(command=args.command, seed=0, **DEFAULTS[args.command])
    if args.config:
        loaded = ExperimentConfig.load(args.config)
        if loaded.command not in (None, args.command):
            raise ConfigError(f"command: config is for {loaded.command!r}, not {args.command!r}")
        cfg = cfg.merged(loaded.to_dict())
    keys = set(ExperimentConfig.keys()) - {"command"}
    return cfg.merged({k: v for k, v in vars(args).items() if k in keys})


def run_cli(argv: Sequence[str] | None = None, out=None) -> int:
    out = sys.stdout if out is None else out
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        cfg = effective_config(args)
        if args.write_config:
            cfg.dump(args.write_config)
            return 0
        if args.command == "oracle":
            _run_oracle(cfg, args.what, args.sites, args.exact, out)
            return 0
        if args.command == "selftest":
            return _run_selftest(cfg, args.seeds, args.oracle_trials, args.inject_fault, out)
        rows, summary = RUNNERS[args.command](cfg)
    except ConfigError as exc:
        print(f"oplab {args.command}: config error: {exc}", file=sys.stderr)
        return 2
    except oracle.CapacityError as exc:
        print(f"oplab {args.command}: {exc}", file=sys.stderr)
        return 3
    except ContractError as exc:
        print(f"oplab {args.command}: {exc}", file=sys.stderr)
        return 2
    text = render_json(args.command, cfg, summary, cfg.seed)
    if cfg.csv:
        Path(cfg.csv).write_text(render_csv(rows), encoding="utf-8")
    if cfg.json:
        Path(cfg.json).write_text(text, encoding="utf-8")
    out.write(text)
    return 0


def main() -> None:
    sys.exit(run_cli())
