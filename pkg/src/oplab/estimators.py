"""Monte Carlo experiments: survival, tails in k, n and |S|, edge speed, duality.

Every experiment assigns stream ``t`` to trial ``t`` under a master seed, so
results are reproducible and independent of how trials are scheduled.
Each result object exposes ``rows()`` (flat records for CSV) and
``summary()`` (a JSON-ready dict).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import oracle
from .engine import ProcessParams, iter_batches, simulate
from .lattice import (
    Channel,
    ContractError,
    FullLine,
    HalfLine,
    InitialCondition,
    Interval,
    LevelSet,
    Product,
    RandomSource,
    Singleton,
    cone_sites,
    derive_seed,
    floor_even,
    floor_even_weak,
    format_initial,
)
from .stats import FitPoint, TailFit, binomial_ci, fit_exponential_tail, ks_two_sample

BLOCK = 4096


# -- estimate containers ------------------------------------------------------


@dataclass(frozen=True)
class EstimateCI:
    """A probability estimate with its confidence interval."""

    estimate: float
    ci_lo: float
    ci_hi: float
    trials: int
    method: str = "exact"
    successes: int | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise ContractError("trials must be >= 1")
        if not 0.0 <= self.ci_lo <= self.estimate <= self.ci_hi <= 1.0:
            raise ContractError(f"inconsistent interval {self.ci_lo} <= {self.estimate} <= {self.ci_hi}")

    @classmethod
    def from_counts(cls, successes: int, trials: int, level: float = 0.95,
                    method: str = "exact") -> "EstimateCI":
        lo, hi = binomial_ci(int(successes), int(trials), level, method)
        return cls(successes / trials, lo, hi, int(trials), method, int(successes))

    @property
    def sigma(self) -> float:
        p = self.estimate
        return math.sqrt(p * (1 - p) / self.trials)

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "ci_lo": self.ci_lo, "ci_hi": self.ci_hi,
                "trials": self.trials, "method": self.method, "successes": self.successes}


@dataclass(frozen=True)
class MeanCI:
    """Sample mean with a normal-approximation interval."""

    mean: float
    ci_lo: float
    ci_hi: float
    trials: int
    sd: float

    @classmethod
    def from_samples(cls, x: np.ndarray, z: float = 1.959963984540054) -> "MeanCI":
        x = np.asarray(x, dtype=float)
        if x.size == 0:
            raise ContractError("no samples")
        m = float(x.mean())
        sd = float(x.std(ddof=1)) if x.size > 1 else 0.0
        half = z * sd / math.sqrt(x.size)
        return cls(m, m - half, m + half, int(x.size), sd)

    @property
    def sigma(self) -> float:
        return self.sd / math.sqrt(self.trials)

    def to_dict(self) -> dict:
        return {"estimate": self.mean, "ci_lo": self.ci_lo, "ci_hi": self.ci_hi,
                "trials": self.trials, "sd": self.sd}


def ratio_estimate(events: int, base: int, trials: int, level: float = 0.95) -> EstimateCI | None:
    """``P(F ∩ Ω) / P(Ω)`` with a delta-method interval (``F`` inside ``Ω``).

    Falls back to a Clopper-Pearson interval on ``events / base`` at the
    boundaries, where the delta method degenerates.  None when ``base == 0``.
    """
    if base == 0:
        return None
    r = events / base
    if events == 0 or events == base:
        lo, hi = binomial_ci(events, base, level, "exact")
        return EstimateCI(r, lo, hi, base, "ratio-exact", events)
    a = events / trials
    b = base / trials
    # Var(a), Var(b), Cov(a, b) of the two sample proportions, F ⊂ Ω
    va = a * (1 - a) / trials
    vb = b * (1 - b) / trials
    cov = (a - a * b) / trials
    var = r * r * (va / (a * a) + vb / (b * b) - 2 * cov / (a * b))
    from scipy.stats import norm

    half = float(norm.ppf(0.5 + level / 2)) * math.sqrt(max(var, 0.0))
    return EstimateCI(r, max(0.0, r - half), min(1.0, r + half), base, "ratio-delta", events)


def _fmt_params(params: dict) -> str:
    return ";".join(f"{k}={v}" for k, v in params.items())


def _row(experiment: str, quantity: str, params: dict, x, est, censored: int = 0) -> dict:
    if est is None:
        vals = dict(estimate="", ci_lo="", ci_hi="", trials=0)
    elif isinstance(est, MeanCI):
        vals = dict(estimate=est.mean, ci_lo=est.ci_lo, ci_hi=est.ci_hi, trials=est.trials)
    else:
        vals = dict(estimate=est.estimate, ci_lo=est.ci_lo, ci_hi=est.ci_hi, trials=est.trials)
    return {"experiment": experiment, "quantity": quantity, "params": _fmt_params(params),
            "x": x, **vals, "censored_count": censored}


def _fit_dict(fit: TailFit | None):
    return None if fit is None else fit.to_dict()


# -- survival and theta -------------------------------------------------------


def _check_trials(trials: int) -> None:
    if trials < 1:
        raise ContractError("trials must be >= 1")


def _interval_start(k: int) -> InitialCondition:
    return Singleton() if k == 0 else Interval(k)


def estimate_survival_curve(epsilon: float, initial: InitialCondition, checkpoints: Sequence[int],
                            trials: int, kernel: str = "independent", seed: int = 0,
                            workers: int | None = None, convention: str = "reach") -> list[EstimateCI]:
    """``P(Ω_n)`` at each checkpoint ``n``."""
    _check_trials(trials)
    checkpoints = [int(n) for n in checkpoints]
    if not checkpoints:
        raise ContractError("need at least one checkpoint")
    if isinstance(initial, (FullLine, Product)):
        raise ContractError("survival of a two-sided infinite start is not observable")
    params = ProcessParams(initial, max(checkpoints), epsilon=epsilon, kernel=kernel,
                           convention=convention)
    alive = np.zeros(len(checkpoints), dtype=np.int64)
    for b in iter_batches(params, seed, trials, block=BLOCK, workers=workers):
        for i, n in enumerate(checkpoints):
            alive[i] += int(b.alive(n).sum())
    return [EstimateCI.from_counts(int(a), trials) for a in alive]


@dataclass
class SurvivalCurve:
    epsilon: float
    initial: str
    checkpoints: list[int]
    estimates: list[EstimateCI]
    mean_right_edge: list[float | None] = field(default_factory=list)

    def rows(self) -> list[dict]:
        pars = {"epsilon": self.epsilon, "initial": self.initial}
        return [_row("simulate", "survival", pars, n, e) for n, e in zip(self.checkpoints, self.estimates)]

    def summary(self) -> dict:
        return {"epsilon": self.epsilon, "initial": self.initial,
                "survival": {str(n): e.to_dict() for n, e in zip(self.checkpoints, self.estimates)}}


def survival_curve(epsilon: float, initial: InitialCondition, checkpoints: Sequence[int], trials: int,
                   kernel: str = "independent", seed: int = 0, workers: int | None = None,
                   convention: str = "reach") -> SurvivalCurve:
    est = estimate_survival_curve(epsilon, initial, checkpoints, trials, kernel, seed, workers,
                                  convention)
    return SurvivalCurve(epsilon, format_initial(initial), list(checkpoints), est)


@dataclass
class ThetaEstimate:
    """``θ(ε, k)`` proxied by survival to ``n_trunc``, with the truncation
    diagnostic ``P(Ω_{N/2} ∩ Ω_N^c)``."""

    epsilon: float
    k: int
    n_trunc: int
    theta: EstimateCI
    truncation: EstimateCI

    def rows(self) -> list[dict]:
        pars = {"epsilon": self.epsilon, "k": self.k, "n_trunc": self.n_trunc}
        return [_row("theta", "theta", pars, self.n_trunc, self.theta),
                _row("theta", "truncation_gap", pars, self.n_trunc // 2, self.truncation)]

    def summary(self) -> dict:
        return {"epsilon": self.epsilon, "k": self.k, "n_trunc": self.n_trunc,
                "theta": self.theta.to_dict(), "truncation_gap": self.truncation.to_dict()}


def estimate_theta(epsilon: float, k: int, n_trunc: int, trials: int, kernel: str = "independent",
                   seed: int = 0, workers: int | None = None) -> ThetaEstimate:
    _check_trials(trials)
    if n_trunc < 1:
        raise ContractError("n_trunc must be >= 1")
    if k < 0:
        raise ContractError("k must be >= 0")
    half = n_trunc // 2
    params = ProcessParams(_interval_start(k), n_trunc, epsilon=epsilon, kernel=kernel)
    end = mid = 0
    for b in iter_batches(params, seed, trials, block=BLOCK, workers=workers):
        a_end = b.alive(n_trunc)
        end += int(a_end.sum())
        mid += int((b.alive(half) & ~a_end).sum())
    return ThetaEstimate(epsilon, k, n_trunc, EstimateCI.from_counts(end, trials),
                         EstimateCI.from_counts(mid, trials))


# -- tail in k ----------------------------------------------------------------


@dataclass
class Eq2Result:
    epsilon: float
    n_trunc: int
    ks: list[int]
    failures: list[EstimateCI]
    fit: TailFit
    min_events: float

    @property
    def status(self) -> str:
        if all(f.successes == 0 for f in self.failures):
            return "tail below resolution"
        return self.fit.status

    def rows(self) -> list[dict]:
        pars = {"epsilon": self.epsilon, "n_trunc": self.n_trunc}
        return [_row("eq2", "extinction", pars, k, f) for k, f in zip(self.ks, self.failures)]

    def summary(self) -> dict:
        return {"epsilon": self.epsilon, "n_trunc": self.n_trunc, "status": self.status,
                "min_events": self.min_events,
                "extinction": {str(k): f.to_dict() for k, f in zip(self.ks, self.failures)},
                "fit": _fit_dict(self.fit)}


def experiment_eq2(epsilon: float, k_list: Sequence[int], n_trunc: int, trials: int,
                   kernel: str = "independent", seed: int = 0, workers: int | None = None,
                   min_events: float = 10) -> Eq2Result:
    """``1 - θ(ε, k)`` per ``k`` and an exponential fit in ``k``.

    Intervals are nested and share the construction, so a trial that
    survives from ``k`` survives from every larger ``k``; only the trials
    extinct at the previous ``k`` are rerun.
    """
    _check_trials(trials)
    ks = [int(k) for k in k_list]
    if not ks or any(b <= a for a, b in zip(ks, ks[1:])) or ks[0] < 0:
        raise ContractError("k_list must be non-empty, increasing and >= 0")
    dead: np.ndarray | None = None
    failures = []
    for k in ks:
        params = ProcessParams(_interval_start(k), n_trunc, epsilon=epsilon, kernel=kernel)
        if dead is None:
            parts = []
            for b in iter_batches(params, seed, trials, block=BLOCK, workers=workers):
                parts.append(b.streams[~b.alive(n_trunc)])
            dead = np.concatenate(parts)
        elif dead.size:
            b = simulate(params, seed, streams=dead, workers=workers)
            dead = dead[~b.alive(n_trunc)]
        failures.append(EstimateCI.from_counts(int(dead.size), trials))
    pts = [FitPoint(k, f.estimate, trials) for k, f in zip(ks, failures)]
    return Eq2Result(epsilon, n_trunc, ks, failures, fit_exponential_tail(pts, min_events), min_events)


# -- sharper bound with cardinalities ------------------------------------------------


def eqstr_threshold(p: float, rho: float, k: int, beta: float, n: int, strict: bool = True) -> float:
    """``rho * p * (floor_even(2(k + beta n)) + 1)``."""
    fe = floor_even if strict else floor_even_weak
    return rho * p * (fe(2 * (k + beta * n)) + 1)


@dataclass
class EqStrRecord:
    n: int
    threshold: float
    threshold_weak: float
    lhs: EstimateCI
    lhs_weak: EstimateCI
    nonempty: EstimateCI
    dual_lhs: EstimateCI
    chernoff: EstimateCI
    deficit: float
    dual_deficit: float


@dataclass
class EqStrResult:
    epsilon: float
    p: float
    k: int
    beta: float
    rho: float
    theta: ThetaEstimate
    records: list[EqStrRecord]
    fit: TailFit
    dual_fit: TailFit

    def rows(self) -> list[dict]:
        pars = {"epsilon": self.epsilon, "p": self.p, "k": self.k, "beta": self.beta, "rho": self.rho}
        out = []
        for r in self.records:
            for name in ("lhs", "lhs_weak", "nonempty", "dual_lhs", "chernoff"):
                out.append(_row("eqstr", name, pars, r.n, getattr(r, name)))
        out.append(_row("eqstr", "theta", pars, self.theta.n_trunc, self.theta.theta))
        return out

    def summary(self) -> dict:
        return {
            "epsilon": self.epsilon, "p": self.p, "k": self.k, "beta": self.beta, "rho": self.rho,
            "theta": self.theta.summary(),
            "records": [{"n": r.n, "threshold": r.threshold, "threshold_weak": r.threshold_weak,
                         "lhs": r.lhs.to_dict(), "lhs_weak": r.lhs_weak.to_dict(),
                         "nonempty": r.nonempty.to_dict(), "dual_lhs": r.dual_lhs.to_dict(),
                         "chernoff": r.chernoff.to_dict(), "deficit": r.deficit,
                         "dual_deficit": r.dual_deficit} for r in self.records],
            "fit": _fit_dict(self.fit), "dual_fit": _fit_dict(self.dual_fit),
        }


def _product_at(seed: int, streams: np.ndarray, ys: np.ndarray, n: int, p: float) -> np.ndarray:
    """Independent ``Π_p`` on the sites ``ys`` of level ``n``, one row per stream."""
    out = np.empty((streams.size, ys.size), dtype=bool)
    for i, s in enumerate(streams):
        out[i] = RandomSource(seed, int(s)).uniforms(ys, n, Channel.PRODUCT) < p
    return out


def experiment_eq_str(epsilon: float, p: float, k: int, beta: float, rho: float,
                      n_list: Sequence[int], trials: int, kernel: str = "independent",
                      seed: int = 0, workers: int | None = None,
                      n_trunc: int | None = None, min_events: float = 10) -> EqStrResult:
    """Cardinality bound at levels ``2n`` from ``Π_p``, its dual form and diagnostics.

    ``lhs`` is ``P(|A_{2n}^{Π_p} ∩ k| >= threshold)``; ``dual_lhs`` is
    ``P(|A_{2n}^{k} ∩ Π_p| >= threshold)`` with ``Π_p`` drawn independently
    on level ``2n``; ``chernoff`` is the probability that the product start
    on ``[-2βn-2k, 2βn+2k]`` falls below its mean.
    """
    _check_trials(trials)
    for name, v in (("beta", beta), ("rho", rho), ("p", p)):
        if not 0.0 < v <= 1.0:
            raise ContractError(f"{name} must lie in (0, 1], got {v}")
    ns = sorted(set(int(n) for n in n_list))
    if not ns or ns[0] < 1:
        raise ContractError("n_list must contain levels >= 1")
    H = 2 * ns[-1]
    n_trunc = H if n_trunc is None else n_trunc
    theta = estimate_theta(epsilon, k, n_trunc, trials, kernel, seed, workers)
    kset = (-2 * k, 2 * k)
    thr = {n: eqstr_threshold(p, rho, k, beta, n, True) for n in ns}
    thr_w = {n: eqstr_threshold(p, rho, k, beta, n, False) for n in ns}
    cnt = {key: {n: 0 for n in ns} for key in ("lhs", "lhs_weak", "nonempty", "dual", "chernoff")}

    fwd_seed = derive_seed(seed, "eqstr-forward")
    fwd = ProcessParams(Product(p), H, epsilon=epsilon, kernel=kernel, observe=2 * k)
    levels = [0] + [2 * n for n in ns]
    for b in iter_batches(fwd, fwd_seed, trials, block=BLOCK, snapshots=levels, workers=workers):
        for n in ns:
            c = b.count_in(2 * n, *kset)
            cnt["lhs"][n] += int((c >= thr[n]).sum())
            cnt["lhs_weak"][n] += int((c >= thr_w[n]).sum())
            cnt["nonempty"][n] += int((c > 0).sum())
            rad = 2 * beta * n + 2 * k
            c0 = b.count_in(0, -math.floor(rad), math.floor(rad))
            mean = p * (floor_even(2 * (k + beta * n)) + 1)
            cnt["chernoff"][n] += int((c0 < mean).sum())

    dual_seed = derive_seed(seed, "eqstr-dual")
    pi_seed = derive_seed(seed, "eqstr-dual-product")
    dual = ProcessParams(_interval_start(k), H, epsilon=epsilon, kernel=kernel)
    for b in iter_batches(dual, dual_seed, trials, block=BLOCK, snapshots=[2 * n for n in ns],
                          workers=workers):
        for n in ns:
            occ, ys = b.occupancy(2 * n)
            pi = _product_at(pi_seed, b.streams, ys, 2 * n, p)
            c = (occ & pi).sum(axis=1)
            cnt["dual"][n] += int((c >= thr[n]).sum())

    th = theta.theta.estimate
    records = []
    for n in ns:
        e = {key: EstimateCI.from_counts(cnt[key][n], trials) for key in cnt}
        records.append(EqStrRecord(n, thr[n], thr_w[n], e["lhs"], e["lhs_weak"], e["nonempty"],
                                   e["dual"], e["chernoff"], max(0.0, th - e["lhs"].estimate),
                                   max(0.0, th - e["dual"].estimate)))
    fit = fit_exponential_tail([FitPoint(r.n, min(r.deficit, 1.0), trials) for r in records],
                               min_events)
    dfit = fit_exponential_tail([FitPoint(r.n, min(r.dual_deficit, 1.0), trials) for r in records],
                                min_events)
    return EqStrResult(epsilon, p, k, beta, rho, theta, records, fit, dfit)


# -- Corollary sweep ----------------------------------------------------------


@dataclass
class Corollary2Result:
    k: int
    p: float
    n_eval: int
    epsilons: list[float]
    estimates: list[EstimateCI]

    def rows(self) -> list[dict]:
        pars = {"k": self.k, "p": self.p, "n_eval": self.n_eval}
        return [_row("corollary2", "hit", pars, e, est) for e, est in zip(self.epsilons, self.estimates)]

    def summary(self) -> dict:
        return {"k": self.k, "p": self.p, "n_eval": self.n_eval,
                "hit": [{"epsilon": e, **est.to_dict()} for e, est in zip(self.epsilons, self.estimates)]}


def corollary2_sweep(eps_list: Sequence[float], k: int, p: float, n_eval: int, trials: int,
                     kernel: str = "independent", seed: int = 0,
                     workers: int | None = None) -> Corollary2Result:
    """``P(A_{2n}^{Π_p} ∩ k != ∅)`` at ``n = n_eval`` for each ``ε``."""
    _check_trials(trials)
    eps = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ContractError("eps_list must be decreasing")
    H = 2 * n_eval
    out = []
    for e in eps:
        params = ProcessParams(Product(p), H, epsilon=e, kernel=kernel, observe=2 * k)
        hits = 0
        for b in iter_batches(params, seed, trials, block=BLOCK, snapshots=[H], workers=workers):
            hits += int((b.count_in(H, -2 * k, 2 * k) > 0).sum())
        out.append(EstimateCI.from_counts(hits, trials))
    return Corollary2Result(k, p, n_eval, eps, out)


# -- density over subsets of the cone ------------------------------------------


def centered_interval(n: int, m: int) -> list[int]:
    """``m`` consecutive level-``n`` sites centred on the origin."""
    if m < 1:
        raise ContractError("interval size must be >= 1")
    c = -(m - 1)
    if (c + n) % 2:
        c += 1
    return list(range(c, c + 2 * m, 2))


def subset_sites(spec: str, n: int, beta: float, seed: int = 0) -> list[int]:
    """Sites of a canonical subset of the cone section ``s_n^beta``.

    ``cone`` is the whole section, ``interval:M`` a centred run of ``M``
    sites, ``random:Q`` keeps each cone site with probability ``Q`` using a
    stream derived from ``seed`` and ``n``.
    """
    cone = cone_sites(n, beta).sites()
    name, _, arg = spec.partition(":")
    if name == "cone":
        sites = cone
    elif name == "interval":
        sites = centered_interval(n, int(arg))
        if not set(sites) <= set(cone):
            raise ContractError(f"interval of {arg} sites does not fit in s_{n}^{beta}")
    elif name == "random":
        q = float(arg)
        src = RandomSource(derive_seed(seed, "subset", n))
        u = src.uniforms(np.array(cone), n, Channel.PRODUCT)
        sites = [y for y, v in zip(cone, u) if v < q]
    else:
        raise ContractError(f"unknown subset spec {spec!r}")
    if not sites:
        raise ContractError(f"subset {spec!r} of s_{n}^{beta} is empty")
    return sites


@dataclass
class Prop3Row:
    n: int
    subset: str
    size: int
    survivors: int
    failures: int
    conditional: EstimateCI | None


@dataclass
class Prop3Result:
    epsilon: float
    beta: float
    rho: float
    trials: int
    by_n: list[Prop3Row]
    by_size: list[Prop3Row]
    fit_n: TailFit
    fit_size: TailFit

    def rows(self) -> list[dict]:
        pars = {"epsilon": self.epsilon, "beta": self.beta, "rho": self.rho}
        out = [_row("prop3", f"low_density|{r.subset}", pars, r.n, r.conditional) for r in self.by_n]
        out += [_row("prop3", f"low_density_size|n={r.n}", pars, r.size, r.conditional)
                for r in self.by_size]
        return out

    def summary(self) -> dict:
        def conv(r: Prop3Row):
            return {"n": r.n, "subset": r.subset, "size": r.size, "survivors": r.survivors,
                    "failures": r.failures,
                    "conditional": None if r.conditional is None else r.conditional.to_dict()}

        return {"epsilon": self.epsilon, "beta": self.beta, "rho": self.rho, "trials": self.trials,
                "by_n": [conv(r) for r in self.by_n], "by_size": [conv(r) for r in self.by_size],
                "fit_n": _fit_dict(self.fit_n), "fit_size": _fit_dict(self.fit_size)}


def _density_failures(b, n: int, sites: list[int], rho: float) -> tuple[int, int]:
    alive = b.alive(n)
    occ, ys = b.occupancy(n, min(sites), max(sites))
    cols = np.searchsorted(ys, sites)
    dens = occ[:, cols].sum(axis=1) / len(sites)
    return int(alive.sum()), int((alive & (dens < rho)).sum())


def experiment_prop3(epsilon: float, beta: float, rho: float, n_list: Sequence[int],
                     trials: int, subset_spec: str = "cone", sizes: Sequence[int] = (),
                     size_n: int | None = None, kernel: str = "independent", seed: int = 0,
                     workers: int | None = None, min_events: float = 10) -> Prop3Result:
    """``P(density of A_n over S < rho | Ω_n)`` from the origin.

    One family tracks ``S = subset_spec`` over ``n_list``; the other fixes
    ``n = size_n`` and takes centred intervals of the given ``sizes``.
    """
    _check_trials(trials)
    if not (0.0 < beta < 1.0 and 0.0 < rho < 1.0):
        raise ContractError("beta and rho must lie in (0, 1)")
    ns = sorted(set(int(n) for n in n_list))
    sizes = [int(m) for m in sizes]
    if sizes and size_n is None:
        size_n = ns[-1]
    levels = sorted(set(ns + ([size_n] if sizes else [])))
    subsets = {n: subset_sites(subset_spec, n, beta, seed) for n in ns}
    intervals = {m: subset_sites(f"interval:{m}", size_n, beta) for m in sizes}
    params = ProcessParams(Singleton(), levels[-1], epsilon=epsilon, kernel=kernel)
    acc_n = {n: [0, 0] for n in ns}
    acc_m = {m: [0, 0] for m in sizes}
    for b in iter_batches(params, seed, trials, block=BLOCK, snapshots=levels, workers=workers):
        for n in ns:
            s, f = _density_failures(b, n, subsets[n], rho)
            acc_n[n][0] += s
            acc_n[n][1] += f
        for m in sizes:
            s, f = _density_failures(b, size_n, intervals[m], rho)
            acc_m[m][0] += s
            acc_m[m][1] += f

    def mk(n, label, size, s, f):
        return Prop3Row(n, label, size, s, f, ratio_estimate(f, s, trials))

    by_n = [mk(n, subset_spec, len(subsets[n]), *acc_n[n]) for n in ns]
    by_m = [mk(size_n, f"interval:{m}", m, *acc_m[m]) for m in sizes]

    def fit(rows, xs):
        pts = [FitPoint(x, r.conditional.estimate, r.survivors) for x, r in zip(xs, rows)
               if r.conditional is not None]
        return fit_exponential_tail(pts, min_events)

    return Prop3Result(epsilon, beta, rho, trials, by_n, by_m,
                       fit(by_n, ns), fit(by_m, sizes))


# -- edge speed ---------------------------------------------------------------


@dataclass
class EdgeSpeedResult:
    mode: str
    parameter: float
    n_list: list[int]
    a_list: list[float]
    alpha: MeanCI
    tails: dict[float, list[EstimateCI | None]]
    censored: dict[int, int]
    fits: dict[float, TailFit]

    def rows(self) -> list[dict]:
        pars = {"mode": self.mode, "parameter": self.parameter}
        out = [_row("edgespeed", "alpha", pars, self.n_list[-1], self.alpha,
                    self.censored[self.n_list[-1]])]
        for a in self.a_list:
            for n, est in zip(self.n_list, self.tails[a]):
                out.append(_row("edgespeed", f"tail|a={a}", pars, n, est, self.censored[n]))
        return out

    def summary(self) -> dict:
        return {"mode": self.mode, "parameter": self.parameter, "alpha": self.alpha.to_dict(),
                "tails": {str(a): [None if e is None else e.to_dict() for e in v]
                          for a, v in self.tails.items()},
                "n_list": self.n_list, "censored": {str(n): c for n, c in self.censored.items()},
                "fits": {str(a): _fit_dict(f) for a, f in self.fits.items()}}


def experiment_edge_speed(mode: str, parameter: float, a_list: Sequence[float],
                          n_list: Sequence[int], trials: int, kernel: str = "independent",
                          seed: int = 0, workers: int | None = None,
                          min_events: float = 10) -> EdgeSpeedResult:
    """Right edge of the half-line process: speed ``r̄_n / n`` and ``P(r̄_n < a n)``.

    ``mode`` is ``"bond"`` (``parameter = p``) or ``"site"``
    (``parameter = ε``).  Censored trials are excluded and counted.
    """
    _check_trials(trials)
    if mode not in ("bond", "site"):
        raise ContractError(f"mode must be 'bond' or 'site', got {mode!r}")
    a_list = [float(a) for a in a_list]
    if any(not 0.0 < a < 1.0 for a in a_list):
        raise ContractError("a values must lie in (0, 1)")
    ns = sorted(set(int(n) for n in n_list))
    H = ns[-1]
    if mode == "bond":
        params = ProcessParams(HalfLine(), H, p=parameter, process="bond")
    else:
        params = ProcessParams(HalfLine(), H, epsilon=parameter, kernel=kernel)
    below = {(a, n): 0 for a in a_list for n in ns}
    valid = {n: 0 for n in ns}
    speeds = []
    for b in iter_batches(params, seed, trials, block=BLOCK, workers=workers):
        for n in ns:
            y, cens = b.right_edge(n)
            ok = ~cens
            valid[n] += int(ok.sum())
            for a in a_list:
                below[(a, n)] += int((y[ok] < a * n).sum())
            if n == H:
                speeds.append(y[ok] / n)
    if valid[H] == 0:
        raise ContractError("all trials censored")
    censored = {n: trials - valid[n] for n in ns}
    tails = {a: [EstimateCI.from_counts(below[(a, n)], valid[n]) if valid[n] else None for n in ns]
             for a in a_list}
    fits = {a: fit_exponential_tail([FitPoint(n, e.estimate, e.trials)
                                     for n, e in zip(ns, tails[a]) if e is not None], min_events)
            for a in a_list}
    return EdgeSpeedResult(mode, float(parameter), ns, a_list,
                           MeanCI.from_samples(np.concatenate(speeds)), tails, censored, fits)


# -- density of the full-line bond process -------------------------------------------


@dataclass
class Prop4fResult:
    p: float
    p_prime: float
    n_list: list[int]
    sizes: list[int]
    tails: dict[int, list[EstimateCI]]
    fits: dict[int, TailFit]
    pc_estimate: float | None

    def rows(self) -> list[dict]:
        pars = {"p": self.p, "p_prime": self.p_prime}
        return [_row("prop4f", f"low_count|n={n}", pars, m, e)
                for n in self.n_list for m, e in zip(self.sizes, self.tails[n])]

    def summary(self) -> dict:
        return {"p": self.p, "p_prime": self.p_prime, "sizes": self.sizes,
                "pc_estimate": self.pc_estimate,
                "tails": {str(n): [e.to_dict() for e in v] for n, v in self.tails.items()},
                "fits": {str(n): _fit_dict(f) for n, f in self.fits.items()}}


def experiment_prop4f(p: float, p_prime: float, n_list: Sequence[int], sizes: Sequence[int],
                      trials: int, seed: int = 0, workers: int | None = None,
                      pc_estimate: float | None = None, min_events: float = 10) -> Prop4fResult:
    """``P(|B_n^{2Z} ∩ S| < p' |S|)`` for centred runs ``S`` of consecutive sites."""
    _check_trials(trials)
    if pc_estimate is not None and not p > pc_estimate:
        raise ContractError(f"p={p} is not above the working critical estimate {pc_estimate}")
    if not 0.0 <= p_prime < p:
        raise ContractError("need 0 <= p' < p")
    ns = sorted(set(int(n) for n in n_list))
    sizes = [int(m) for m in sizes]
    params = ProcessParams(FullLine(), ns[-1], p=p, process="bond", observe=max(sizes) + 1)
    low = {(n, m): 0 for n in ns for m in sizes}
    for b in iter_batches(params, seed, trials, block=BLOCK, snapshots=ns, workers=workers):
        for n in ns:
            for m in sizes:
                s = centered_interval(n, m)
                c = b.count_in(n, s[0], s[-1])
                low[(n, m)] += int((c < p_prime * m).sum())
    tails = {n: [EstimateCI.from_counts(low[(n, m)], trials) for m in sizes] for n in ns}
    fits = {n: fit_exponential_tail([FitPoint(m, e.estimate, trials) for m, e in zip(sizes, tails[n])],
                                    min_events) for n in ns}
    return Prop4fResult(p, p_prime, ns, sizes, tails, fits, pc_estimate)


def estimate_critical_p(p_grid: Sequence[float], n: int, trials: int, seed: int = 0,
                        workers: int | None = None, z: float = 4.0) -> float | None:
    """Smallest ``p`` in the grid whose half-line edge speed is ``z`` standard
    errors above zero; a working upper estimate of the bond critical value."""
    for p in sorted(float(x) for x in p_grid):
        res = experiment_edge_speed("bond", p, [0.5], [n], trials, seed=seed, workers=workers)
        if res.alpha.mean - z * res.alpha.sigma > 0:
            return p
    return None


# -- duality ------------------------------------------------------------------


@dataclass
class DualityMC:
    epsilon: float
    p: float
    k: int
    n: int
    forward: np.ndarray = field(repr=False)
    dual: np.ndarray = field(repr=False)
    ks_statistic: float
    ks_pvalue: float
    hit_statistic: float
    hit_pvalue: float
    exact: oracle.DualityCheck | None

    def rows(self) -> list[dict]:
        pars = {"epsilon": self.epsilon, "p": self.p, "k": self.k, "n": self.n}
        out = []
        for name, arr in (("forward", self.forward), ("dual", self.dual)):
            vals, cnt = np.unique(arr, return_counts=True)
            for v, c in zip(vals, cnt):
                out.append(_row("duality", f"pmf|{name}", pars, int(v),
                                EstimateCI.from_counts(int(c), arr.size)))
        return out

    def summary(self) -> dict:
        ex = None
        if self.exact is not None:
            ex = {"forward": [float(x) for x in self.exact.forward],
                  "dual": [float(x) for x in self.exact.dual],
                  "sup_distance": self.exact.sup_distance,
                  "nonempty_forward": self.exact.nonempty_forward,
                  "nonempty_dual": self.exact.nonempty_dual}
        return {"epsilon": self.epsilon, "p": self.p, "k": self.k, "n": self.n,
                "samples": int(self.forward.size),
                "forward_mean": float(self.forward.mean()), "dual_mean": float(self.dual.mean()),
                "ks_statistic": self.ks_statistic, "ks_pvalue": self.ks_pvalue,
                "hit_ks_statistic": self.hit_statistic, "hit_ks_pvalue": self.hit_pvalue,
                "exact": ex}


def duality_samples(epsilon: float, p: float, k: int, n: int, trials: int,
                    kernel: str = "independent", seed: int = 0,
                    workers: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Samples of ``|A_{2n}^{Π_p} ∩ k|`` and ``|A_{2n}^{k} ∩ Π_p|`` on independent streams."""
    _check_trials(trials)
    H = 2 * n
    fwd = ProcessParams(Product(p), H, epsilon=epsilon, kernel=kernel, observe=2 * k)
    f_seed = derive_seed(seed, "duality-forward")
    a = np.concatenate([b.count_in(H, -2 * k, 2 * k) for b in
                        iter_batches(fwd, f_seed, trials, block=BLOCK, snapshots=[H], workers=workers)])
    d_seed = derive_seed(seed, "duality-dual")
    pi_seed = derive_seed(seed, "duality-dual-product")
    dual = ProcessParams(_interval_start(k), H, epsilon=epsilon, kernel=kernel)
    parts = []
    for b in iter_batches(dual, d_seed, trials, block=BLOCK, snapshots=[H], workers=workers):
        occ, ys = b.occupancy(H)
        parts.append((occ & _product_at(pi_seed, b.streams, ys, H, p)).sum(axis=1))
    return a, np.concatenate(parts)


def duality_check_mc(epsilon: float, p: float, k: int, n: int, trials: int,
                     kernel: str = "independent", seed: int = 0, workers: int | None = None,
                     permutations: int = 2000) -> DualityMC:
    """KS comparison of the two intersection counts, plus the same test on the
    indicators of a non-empty intersection; small cases also go to the oracle."""
    a, b = duality_samples(epsilon, p, k, n, trials, kernel, seed, workers)
    ks_seed = derive_seed(seed, "duality-ks") & 0xFFFFFFFF
    stat, pval = ks_two_sample(a, b, permutations, ks_seed)
    hstat, hpval = ks_two_sample(a > 0, b > 0, permutations, ks_seed)
    exact = None
    if 2 * k + 4 * n + 1 <= oracle.WIDTH_LIMIT:
        exact = oracle.exact_duality_check(epsilon, p, k, n, kernel)
    return DualityMC(epsilon, p, k, n, a, b, stat, pval, hstat, hpval, exact)
