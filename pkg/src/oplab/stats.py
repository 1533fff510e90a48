"""Binomial intervals, exponential tail fits and a permutation KS test."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats as sps

from .lattice import ContractError


def binomial_ci(successes: int, trials: int, level: float = 0.95,
                method: str = "exact") -> tuple[float, float]:
    """Two-sided interval for a binomial proportion.

    ``exact`` is Clopper-Pearson (beta quantiles), ``score`` is Wilson.
    """
    if trials < 1 or not 0 <= successes <= trials:
        raise ContractError(f"need 0 <= successes <= trials >= 1, got {successes}/{trials}")
    if not 0.0 < level < 1.0:
        raise ContractError(f"level must lie in (0, 1), got {level}")
    alpha = 1.0 - level
    x, n = successes, trials
    if method == "exact":
        lo = 0.0 if x == 0 else float(sps.beta.ppf(alpha / 2, x, n - x + 1))
        hi = 1.0 if x == n else float(sps.beta.ppf(1 - alpha / 2, x + 1, n - x))
    elif method == "score":
        z = float(sps.norm.ppf(1 - alpha / 2))
        ph = x / n
        denom = 1 + z * z / n
        centre = (ph + z * z / (2 * n)) / denom
        half = z / denom * math.sqrt(ph * (1 - ph) / n + z * z / (4 * n * n))
        lo, hi = max(0.0, centre - half), min(1.0, centre + half)
    else:
        raise ContractError(f"unknown interval method {method!r}")
    ph = x / n
    return min(lo, ph), max(hi, ph)


@dataclass(frozen=True)
class FitPoint:
    x: float
    p_hat: float
    trials: int

    def __post_init__(self):
        if not 0.0 <= self.p_hat <= 1.0:
            raise ContractError(f"p_hat out of range: {self.p_hat}")
        if self.trials < 1:
            raise ContractError("trials must be >= 1")

    @property
    def events(self) -> float:
        return self.p_hat * self.trials


@dataclass
class TailFit:
    """``p(x) ~ C exp(-gamma x)`` fitted on the log scale.

    ``status`` is ``"ok"`` or ``"below_resolution"`` (fewer than two usable
    points, in which case ``C``, ``gamma`` and ``r_squared`` are NaN).
    """

    C: float
    gamma: float
    r_squared: float
    points: list[tuple[float, float, float]] = field(default_factory=list)
    excluded: int = 0
    status: str = "ok"

    @property
    def decaying(self) -> bool:
        return self.status == "ok" and self.gamma > 0

    def to_dict(self) -> dict:
        return {"C": self.C, "gamma": self.gamma, "r_squared": self.r_squared,
                "status": self.status, "excluded": self.excluded,
                "decaying": self.decaying,
                "points": [list(p) for p in self.points]}


def fit_exponential_tail(points: Sequence[FitPoint], min_events: float = 0) -> TailFit:
    """Weighted least squares of ``log p_hat`` on ``x``.

    Points with ``p_hat == 0`` or fewer than ``min_events`` observed events
    are excluded.  Weights are the delta-method inverse variances
    ``trials * p / (1 - p)`` of ``log p_hat``.
    """
    use = [pt for pt in points if pt.p_hat > 0 and pt.events >= min_events]
    excluded = len(points) - len(use)
    if len(use) < 2:
        return TailFit(math.nan, math.nan, math.nan, [], excluded, "below_resolution")
    x = np.array([pt.x for pt in use], dtype=float)
    y = np.log([pt.p_hat for pt in use])
    ph = np.array([min(pt.p_hat, 1 - 0.5 / pt.trials) for pt in use])
    w = np.array([pt.trials for pt in use]) * ph / (1 - ph)
    xm = np.sum(w * x) / w.sum()
    ym = np.sum(w * y) / w.sum()
    sxx = np.sum(w * (x - xm) ** 2)
    if sxx == 0:
        return TailFit(math.nan, math.nan, math.nan, [], excluded, "below_resolution")
    slope = np.sum(w * (x - xm) * (y - ym)) / sxx
    intercept = ym - slope * xm
    resid = y - (intercept + slope * x)
    ss_tot = np.sum(w * (y - ym) ** 2)
    ss_res = np.sum(w * resid**2)
    r2 = 1.0 if ss_tot == 0 else float(1 - ss_res / ss_tot)
    pts = [(float(a), float(b), float(c)) for a, b, c in zip(x, np.exp(y), w)]
    return TailFit(float(math.exp(intercept)), float(-slope), r2, pts, excluded)


def ks_statistic(a: np.ndarray, b: np.ndarray) -> float:
    a = np.sort(np.asarray(a))
    b = np.sort(np.asarray(b))
    grid = np.union1d(a, b)
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_two_sample(a: Sequence[int], b: Sequence[int], permutations: int = 2000,
                  seed: int = 0) -> tuple[float, float]:
    """Two-sample KS statistic with a permutation p-value.

    Relabelling the pooled sample is drawn through the multivariate
    hypergeometric law of the per-value counts, which is exact for tied
    integer data and avoids materializing permutations.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.size == 0 or b.size == 0:
        raise ContractError("both samples must be non-empty")
    values, inv = np.unique(np.concatenate([a, b]), return_inverse=True)
    ca = np.bincount(inv[: a.size], minlength=values.size)
    cb = np.bincount(inv[a.size :], minlength=values.size)
    # canonical order makes the p-value symmetric in (a, b)
    if (a.size, tuple(ca)) > (b.size, tuple(cb)):
        ca, cb = cb, ca
    na, nb = int(ca.sum()), int(cb.sum())
    observed = float(np.max(np.abs(np.cumsum(ca) / na - np.cumsum(cb) / nb)))
    rng = np.random.default_rng(seed)
    total = ca + cb
    draws = rng.multivariate_hypergeometric(total, na, size=permutations)
    fa = np.cumsum(draws, axis=1) / na
    fb = np.cumsum(total - draws, axis=1) / nb
    stat = np.max(np.abs(fa - fb), axis=1)
    exceed = int(np.count_nonzero(stat >= observed - 1e-12))
    return observed, (1 + exceed) / (1 + permutations)
