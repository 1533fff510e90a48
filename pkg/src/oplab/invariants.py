"""Pathwise invariant checks and the oracle agreement grid.

Each check runs several processes on the same streams and compares them
level by level.  A report carries the first violation as
``(seed, stream, n, y)`` so a failure can be replayed with `run_site`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import oracle
from .engine import ProcessParams, iter_batches, simulate
from .lattice import FullLine, HalfLine, Interval, LevelSet, Singleton

BLOCK = 1024


@dataclass
class Violation:
    seed: int
    stream: int
    n: int
    y: int | None

    def __str__(self) -> str:
        return f"seed={self.seed} stream={self.stream} n={self.n} y={self.y}"


@dataclass
class InvariantReport:
    name: str
    checked: int
    violations: int
    first: Violation | None = None

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = "" if self.first is None else f" first at {self.first}"
        return f"{status} {self.name}: {self.checked} checked, {self.violations} violations{extra}"


class _Tally:
    def __init__(self, name: str, seed: int):
        self.name, self.seed = name, seed
        self.checked = 0
        self.violations = 0
        self.first: Violation | None = None

    def add(self, bad: np.ndarray, checked: int, streams: np.ndarray, n: int,
            ys: np.ndarray | None = None, diff: np.ndarray | None = None,
            at: np.ndarray | None = None) -> None:
        """``bad`` flags trials violating the invariant at level ``n``.  The
        offending coordinate comes from ``at`` (one per trial) or from the
        first set entry of ``diff`` (trials x sites, columns ``ys``)."""
        self.checked += checked
        nbad = int(bad.sum())
        if not nbad:
            return
        self.violations += nbad
        if self.first is None:
            i = int(np.flatnonzero(bad)[0])
            y = None if at is None else int(at[i])
            if diff is not None and ys is not None and diff[i].any():
                y = int(ys[np.flatnonzero(diff[i])[0]])
            self.first = Violation(self.seed, int(streams[i]), n, y)

    def merge(self, other: "_Tally") -> None:
        self.checked += other.checked
        self.violations += other.violations
        if self.first is None:
            self.first = other.first

    def report(self) -> InvariantReport:
        return InvariantReport(self.name, self.checked, self.violations, self.first)


def _edges(occ: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    alive = occ.any(axis=1)
    lo = np.where(alive, ys[np.argmax(occ, axis=1)], 0)
    hi = np.where(alive, ys[occ.shape[1] - 1 - np.argmax(occ[:, ::-1], axis=1)], 0)
    return alive, lo, hi


def check_full_line_identity(epsilon: float, horizon: int, trials: int, seed: int,
                             kernel: str = "independent", fault: bool = False,
                             workers: int | None = None) -> InvariantReport:
    """On ``Ω_n``: ``A_n = A_n^{2Z} ∩ [l_n, r_n]``."""
    t = _Tally("full-line identity", seed)
    single = ProcessParams(Singleton(), horizon, epsilon=epsilon, kernel=kernel)
    full = ProcessParams(FullLine(), horizon, epsilon=epsilon, kernel=kernel, observe=horizon)
    for a in iter_batches(single, seed, trials, block=BLOCK, snapshots="all", fault=fault,
                          workers=workers):
        f = simulate(full, seed, streams=a.streams, snapshots="all", fault=fault, workers=workers)
        for n in range(horizon + 1):
            occ, ys = a.occupancy(n, -n, n)
            focc, _ = f.occupancy(n, -n, n)
            alive, lo, hi = _edges(occ, ys)
            inside = (ys[None, :] >= lo[:, None]) & (ys[None, :] <= hi[:, None])
            diff = (occ != (focc & inside)) & alive[:, None]
            t.add(diff.any(axis=1), int(alive.sum()), a.streams, n, ys, diff)
    return t.report()


def check_half_line_edge(epsilon: float, horizon: int, trials: int, seed: int,
                         kernel: str = "independent", fault: bool = False,
                         workers: int | None = None) -> InvariantReport:
    """On ``Ω_n``: the half-line right edge equals ``r_n``."""
    t = _Tally("half-line edge", seed)
    single = ProcessParams(Singleton(), horizon, epsilon=epsilon, kernel=kernel)
    half = ProcessParams(HalfLine(), horizon, epsilon=epsilon, kernel=kernel)
    for a in iter_batches(single, seed, trials, block=BLOCK, fault=fault, workers=workers):
        h = simulate(half, seed, streams=a.streams, fault=fault, workers=workers)
        for n in range(horizon + 1):
            alive = a.alive(n)
            r, _ = a.right_edge(n)
            rbar, cens = h.right_edge(n)
            bad = alive & ((rbar != r) | cens)
            t.add(bad, int(alive.sum()), a.streams, n, at=r)
    return t.report()


def _nested(name: str, small: ProcessParams, big: ProcessParams, horizon: int, trials: int,
            seed: int, fault: bool, workers: int | None) -> InvariantReport:
    t = _Tally(name, seed)
    for a in iter_batches(small, seed, trials, block=BLOCK, snapshots="all", fault=fault,
                          workers=workers):
        b = simulate(big, seed, streams=a.streams, snapshots="all", fault=fault, workers=workers)
        for n in range(horizon + 1):
            lo, hi = a.window(n)
            occ, ys = a.occupancy(n, lo, hi)
            bocc, _ = b.occupancy(n, lo, hi)
            diff = occ & ~bocc
            t.add(diff.any(axis=1), a.trials, a.streams, n, ys, diff)
    return t.report()


def check_monotonicity(epsilon: float, horizon: int, trials: int, seed: int,
                       kernel: str = "independent", fault: bool = False,
                       workers: int | None = None) -> InvariantReport:
    """``{0} ⊆ {-2, 0, 2}`` gives nested site and bond trajectories."""
    p = 1.0 - epsilon
    site = _nested("monotonicity (site)",
                   ProcessParams(Singleton(), horizon, epsilon=epsilon, kernel=kernel),
                   ProcessParams(Interval(1), horizon, epsilon=epsilon, kernel=kernel),
                   horizon, trials, seed, fault, workers)
    bond = _nested("monotonicity (bond)",
                   ProcessParams(Singleton(), horizon, p=p, process="bond"),
                   ProcessParams(Interval(1), horizon, p=p, process="bond"),
                   horizon, trials, seed, fault, workers)
    first = site.first or bond.first
    return InvariantReport("initial-set monotonicity", site.checked + bond.checked,
                           site.violations + bond.violations, first)


def check_coupling(epsilon: float, horizon: int, trials: int, seed: int,
                   kernel: str = "independent", fault: bool = False,
                   workers: int | None = None) -> InvariantReport:
    """Coupled bond process from ``{0}`` inside the site process from ``{-2, 0, 2}``."""
    rep = _nested("coupling containment",
                  ProcessParams(Singleton(), horizon, epsilon=epsilon, kernel=kernel,
                                process="coupled"),
                  ProcessParams(Interval(1), horizon, epsilon=epsilon, kernel=kernel),
                  horizon, trials, seed, fault, workers)
    return rep


CHECKS = {
    "full-line identity": check_full_line_identity,
    "half-line edge": check_half_line_edge,
    "initial-set monotonicity": check_monotonicity,
    "coupling containment": check_coupling,
}


def pathwise_suite(epsilons: Sequence[float], seeds: Sequence[int], horizon: int, trials: int,
                   kernel: str = "independent", fault: bool = False,
                   workers: int | None = None) -> list[InvariantReport]:
    """All pathwise checks over an ``(ε, seed)`` grid, one report per check."""
    out = []
    for name, fn in CHECKS.items():
        total = _Tally(name, seeds[0] if seeds else 0)
        for eps in epsilons:
            for s in seeds:
                r = fn(eps, horizon, trials, s, kernel=kernel, fault=fault, workers=workers)
                part = _Tally(name, s)
                part.checked, part.violations, part.first = r.checked, r.violations, r.first
                total.merge(part)
        out.append(total.report())
    return out


@dataclass
class AgreementPoint:
    epsilon: float
    initial: str
    n: int
    exact: float
    estimate: float
    trials: int

    @property
    def sigma(self) -> float:
        return math.sqrt(self.exact * (1 - self.exact) / self.trials)

    @property
    def z(self) -> float:
        d = abs(self.estimate - self.exact)
        if self.sigma == 0:
            return 0.0 if d == 0 else math.inf
        return d / self.sigma

    def ok(self, zmax: float = 4.0) -> bool:
        return self.z <= zmax


def oracle_agreement(epsilons: Sequence[float] = (0.2, 0.3, 0.5), levels: Sequence[int] = (1, 2, 3, 4),
                     trials: int = 100_000, seed: int = 0, kernel: str = "independent",
                     fault: bool = False, workers: int | None = None) -> list[AgreementPoint]:
    """Monte Carlo survival against the oracle for the origin and ``{-2, 0, 2}``."""
    out = []
    H = max(levels)
    starts = {"singleton": (Singleton(), [0]), "interval:1": (Interval(1), [-2, 0, 2])}
    for eps in epsilons:
        for label, (init, sites) in starts.items():
            params = ProcessParams(init, H, epsilon=eps, kernel=kernel)
            alive = {n: 0 for n in levels}
            for b in iter_batches(params, seed, trials, fault=fault, workers=workers):
                for n in levels:
                    alive[n] += int(b.alive(n).sum())
            lset = LevelSet.from_sites(0, sites)
            for n in levels:
                ex = float(oracle.exact_survival(lset, eps, n, kernel))
                out.append(AgreementPoint(eps, label, n, ex, alive[n] / trials, trials))
    return out
