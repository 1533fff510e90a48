"""Exact small-instance probabilities by dynamic programming over level states.

A state is the occupied subset of a level window, stored as a bitmask with
bit ``i`` for site ``lo + 2*i``.  One level is advanced by summing over the
open patterns of the occupied sites, using the kernel's exact pattern
probabilities.  Windows are cut down to the backward light cone of an
optional target so only sites that can influence it are tracked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from .kernels import get_kernel
from .lattice import ContractError, LevelSet

WIDTH_LIMIT = 16


class CapacityError(RuntimeError):
    """The requested instance exceeds the exact-enumeration width limit."""


@dataclass
class StateDistribution:
    """Exact law of a level set: ``mask -> probability`` over window ``[lo, hi]``."""

    n: int
    lo: int
    hi: int
    probs: dict[int, float]

    @property
    def width(self) -> int:
        return (self.hi - self.lo) // 2 + 1

    def sites(self, mask: int) -> list[int]:
        return [self.lo + 2 * i for i in range(self.width) if mask >> i & 1]

    def total(self):
        if self.probs and isinstance(next(iter(self.probs.values())), Fraction):
            return sum(self.probs.values(), Fraction(0))
        return math.fsum(self.probs.values())

    def prob_empty(self):
        return self.probs.get(0, 0 * self.total())

    def items(self):
        """``(frozenset of sites, probability)`` pairs."""
        for mask, pr in sorted(self.probs.items()):
            yield frozenset(self.sites(mask)), pr


def _check_width(lo: int, hi: int, limit: int) -> None:
    w = (hi - lo) // 2 + 1
    if w > limit:
        raise CapacityError(f"level window of {w} sites exceeds the exact limit of {limit}")


def _windows(lo0: int, hi0: int, n: int, target: tuple[int, int] | None):
    """Per-level windows: forward cone of the start cut by the backward cone
    of the target."""
    out = []
    for m in range(n + 1):
        lo, hi = lo0 - m, hi0 + m
        if target is not None:
            lo = max(lo, target[0] - (n - m))
            hi = min(hi, target[1] + (n - m))
        if (lo + m) % 2:
            lo += 1
        if (hi + m) % 2:
            hi -= 1
        out.append((lo, hi))
    return out


def _remap(mask: int, lo_from: int, lo_to: int, width_to: int) -> int:
    shift = (lo_from - lo_to) // 2
    m = mask << shift if shift >= 0 else mask >> -shift
    return m & ((1 << width_to) - 1)


def exact_evolve(initial: LevelSet | StateDistribution, epsilon: float, n: int,
                 kernel: str = "independent", *, target: tuple[int, int] | None = None,
                 convention: str = "reach", exact: bool = False,
                 width_limit: int = WIDTH_LIMIT) -> StateDistribution:
    """Exact distribution of ``A_n`` (restricted to ``target`` when given).

    ``initial`` is a level-0 set or a level-0 distribution (mixtures such as
    product starts).  ``exact=True`` uses rational arithmetic.
    """
    if n < 0:
        raise ContractError("n must be >= 0")
    if convention not in ("reach", "open"):
        raise ContractError(f"unknown convention {convention!r}")
    kern = get_kernel(kernel, float(epsilon))
    if isinstance(initial, LevelSet):
        if initial.n != 0 or initial.censored:
            raise ContractError("exact evolution needs an uncensored level-0 start")
        lo0, hi0 = initial.y_lo, initial.y_hi
        bits = initial.bits()
        one = Fraction(1) if exact else 1.0
        dist = {sum(1 << i for i in range(bits.size) if bits[i]): one}
    else:
        if initial.n != 0:
            raise ContractError("initial distribution must live at level 0")
        lo0, hi0 = initial.lo, initial.hi
        dist = dict(initial.probs)
    wins = _windows(lo0, hi0, n, target)
    for lo, hi in wins:
        if lo <= hi:
            _check_width(lo, hi, width_limit)
    # project the start onto its window
    lo, hi = wins[0]
    width = (hi - lo) // 2 + 1 if lo <= hi else 0
    dist = _merge((_remap(m, lo0, lo, width), pr) for m, pr in dist.items())
    for m in range(n):
        nlo, nhi = wins[m + 1]
        nwidth = (nhi - nlo) // 2 + 1 if nlo <= nhi else 0
        nxt: dict[int, float] = {}
        for mask, pr in dist.items():
            if mask == 0:
                nxt[0] = nxt.get(0, 0) + pr
                continue
            idx = [i for i in range(width) if mask >> i & 1]
            ys = [lo + 2 * i for i in idx]
            if m == 0:
                patterns = ((1 << len(idx)) - 1, 1),
            else:
                patterns = kern.pattern_distribution(ys, exact=exact).items()
            for pat, ppat in patterns:
                out = 0
                for j, y in enumerate(ys):
                    if pat >> j & 1:
                        for yy in (y - 1, y + 1):
                            if nlo <= yy <= nhi:
                                out |= 1 << ((yy - nlo) // 2)
                nxt[out] = nxt.get(out, 0) + pr * ppat
        dist, lo, hi, width = _prune(nxt), nlo, nhi, nwidth
    if convention == "open" and n > 0:
        filt: dict[int, float] = {}
        for mask, pr in dist.items():
            idx = [i for i in range(width) if mask >> i & 1]
            if not idx:
                filt[0] = filt.get(0, 0) + pr
                continue
            ys = [lo + 2 * i for i in idx]
            for pat, ppat in kern.pattern_distribution(ys, exact=exact).items():
                out = sum(1 << idx[j] for j in range(len(idx)) if pat >> j & 1)
                filt[out] = filt.get(out, 0) + pr * ppat
        dist = _prune(filt)
    return StateDistribution(n, lo, hi, dist)


def _prune(dist: dict) -> dict:
    """Drop exactly-zero states (they arise at epsilon 0 or 1)."""
    return {m: pr for m, pr in dist.items() if pr != 0}


def _merge(pairs: Iterable[tuple[int, float]]) -> dict[int, float]:
    out: dict[int, float] = {}
    for m, pr in pairs:
        out[m] = out.get(m, 0) + pr
    return out


def exact_survival(initial: LevelSet, epsilon: float, n: int, kernel: str = "independent",
                   **kwargs) -> float:
    """``P(A_n != ∅)``."""
    d = exact_evolve(initial, epsilon, n, kernel, **kwargs)
    return 1 - d.prob_empty()


def product_distribution(lo: int, hi: int, p: float, exact: bool = False) -> StateDistribution:
    """Level-0 law of ``Π_p`` restricted to the even sites of ``[lo, hi]``."""
    if lo % 2 or hi % 2:
        raise ContractError("product windows live on even sites")
    w = (hi - lo) // 2 + 1
    if w > 24:
        raise CapacityError(f"product window of {w} sites is too wide for exact mixing")
    pp = Fraction(str(p)) if exact else p
    dist = {0: pp * 0 + 1}
    for i in range(w):
        nxt = {}
        for m, pr in dist.items():
            nxt[m | 1 << i] = nxt.get(m | 1 << i, 0) + pr * pp
            nxt[m] = nxt.get(m, 0) + pr * (1 - pp)
        dist = nxt
    return StateDistribution(0, lo, hi, dist)


def exact_intersection_pmf(initial: LevelSet | None, epsilon: float, n: int, S: Sequence[int],
                           kernel: str = "independent", *, product_p: float | None = None,
                           product_window: tuple[int, int] | None = None,
                           convention: str = "reach", exact: bool = False) -> list:
    """pmf of ``|A_n ∩ S|``: entry ``c`` is ``P(|A_n ∩ S| = c)``.

    With ``product_p`` the start is ``Π_p`` restricted to ``product_window``
    (default: the backward light cone of ``S``), mixed exactly.
    """
    S = sorted(set(int(y) for y in S))
    if not S:
        raise ContractError("target set must be non-empty")
    if any((y + n) % 2 for y in S):
        raise ContractError("target sites must have the parity of level n")
    if product_p is not None:
        lo, hi = product_window or (S[0] - n, S[-1] + n)
        lo += lo % 2
        hi -= hi % 2
        start = product_distribution(lo, hi, product_p, exact)
    elif initial is None:
        raise ContractError("give an initial set or a product density")
    else:
        start = initial
    d = exact_evolve(start, epsilon, n, kernel, target=(S[0], S[-1]),
                     convention=convention, exact=exact)
    zero = 0 * d.total()
    pmf = [zero] * (len(S) + 1)
    sset = set(S)
    for sites, pr in d.items():
        pmf[len(sites & sset)] += pr
    return pmf


@dataclass
class DualityCheck:
    forward: list
    dual: list
    sup_distance: float
    nonempty_forward: float
    nonempty_dual: float


def _binomial_mix(dist: StateDistribution, p) -> list:
    w = dist.width
    zero = 0 * dist.total()
    pmf = [zero] * (w + 1)
    for mask, pr in dist.probs.items():
        c = bin(mask).count("1")
        for j in range(c + 1):
            pmf[j] += pr * math.comb(c, j) * p**j * (1 - p) ** (c - j)
    return pmf


def exact_duality_check(epsilon: float, p: float, k: int, n: int, kernel: str = "independent",
                        *, exact: bool = False) -> DualityCheck:
    """Exact pmfs of ``|A_{2n}^{Π_p} ∩ k|`` and ``|A_{2n}^{k} ∩ Π_p|``.

    The first evolves the product start towards the target interval; the
    second evolves the interval and thins the final level with an
    independent ``Π_p``.  ``sup_distance`` compares the two pmfs over their
    common support; the probabilities of a non-empty intersection are
    reported separately.
    """
    if k < 0 or n < 0:
        raise ContractError("k and n must be >= 0")
    levels = 2 * n
    interval = list(range(-2 * k, 2 * k + 1, 2))
    forward = exact_intersection_pmf(None, epsilon, levels, interval, kernel,
                                     product_p=p, exact=exact)
    start = LevelSet.from_sites(0, interval)
    d = exact_evolve(start, epsilon, levels, kernel, exact=exact)
    pp = Fraction(str(p)) if exact else p
    dual = _binomial_mix(d, pp)
    size = max(len(forward), len(dual))
    zero = 0 * d.total()
    f = forward + [zero] * (size - len(forward))
    g = dual + [zero] * (size - len(dual))
    sup = max(abs(float(a) - float(b)) for a, b in zip(f, g))
    return DualityCheck(forward, dual, sup, float(1 - forward[0]), float(1 - dual[0]))


__all__ = [
    "CapacityError", "DualityCheck", "StateDistribution", "WIDTH_LIMIT", "exact_duality_check",
    "exact_evolve", "exact_intersection_pmf", "exact_survival", "product_distribution",
]
