"""Site-openness fields: the independent field and a 1-dependent example.

A kernel turns the uniforms ``U(y, n)`` of the site channel into open/closed
designations.  Registered kernels carry a compiled code used by the fast
stepper and exact pattern probabilities used by the oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import _native
from .lattice import Channel, ContractError, RandomSource, open_threshold


@dataclass(frozen=True)
class SiteFieldKernel:
    """A finite-range rule for open sites with closed-site probability ``epsilon``.

    ``range`` is the dependence radius in lattice units: the designation of
    ``(y, n)`` reads only uniforms ``U(y + j, n)`` with ``|j| <= range``.
    """

    name: str
    epsilon: float
    range: int
    code: int

    @property
    def closed_probability(self) -> float:
        return self.epsilon

    @property
    def threshold(self) -> float:
        """Per-uniform acceptance level ``q``: ``U < q`` counts as a pass."""
        if self.code == _native.KERNEL_PAIR:
            return math.sqrt(1.0 - self.epsilon)
        return 1.0 - self.epsilon

    @property
    def native_threshold(self) -> np.uint64:
        return open_threshold(self.threshold)

    def is_open(self, src: RandomSource, ys, n: int) -> np.ndarray:
        """Openness of the sites ``ys`` of level ``n`` (vectorized)."""
        ys = np.asarray(ys, dtype=np.int64)
        q = self.threshold
        ok = src.uniforms(ys, n, Channel.SITE) < q
        if self.code == _native.KERNEL_PAIR:
            ok &= src.uniforms(ys + 2, n, Channel.SITE) < q
        return ok

    def pattern_distribution(self, ys: Sequence[int], exact: bool = False) -> dict[int, float]:
        """Exact law of the open pattern on the sorted sites ``ys`` of one level.

        Keys are bitmasks with bit ``i`` set when ``ys[i]`` is open.
        """
        offsets = tuple(int(y) - int(ys[0]) for y in ys) if len(ys) else ()
        return dict(_pattern_table(self.code, self.epsilon, offsets, exact))


@lru_cache(maxsize=4096)
def _pattern_table(code: int, epsilon: float, offsets: tuple[int, ...], exact: bool):
    if exact:
        if code != _native.KERNEL_INDEPENDENT:
            raise ContractError("exact rationals are only available for the independent kernel")
        eps = Fraction(str(epsilon))
    else:
        eps = epsilon
    one = eps * 0 + 1
    if code == _native.KERNEL_INDEPENDENT:
        q = one - eps
        dist = {0: one}
        for i in range(len(offsets)):
            nxt = {}
            for mask, pr in dist.items():
                nxt[mask | (1 << i)] = nxt.get(mask | (1 << i), 0) + pr * q
                nxt[mask] = nxt.get(mask, 0) + pr * eps
            dist = nxt
        return tuple(dist.items())
    if code == _native.KERNEL_PAIR:
        # open(y) = V(y) and V(y+2) with V i.i.d. Bernoulli(sqrt(1-eps))
        v = math.sqrt(1.0 - eps)
        # state: (mask, value of V at offsets[i] + 2 carried to the next site)
        dist = {(0, None): 1.0}
        for i, off in enumerate(offsets):
            shared = i > 0 and off == offsets[i - 1] + 2
            nxt = {}
            for (mask, carry), pr in dist.items():
                heads = ((carry, 1.0),) if shared else ((True, v), (False, 1.0 - v))
                for vy, py in heads:
                    for vy2, py2 in ((True, v), (False, 1.0 - v)):
                        m = mask | (1 << i) if (vy and vy2) else mask
                        key = (m, vy2)
                        nxt[key] = nxt.get(key, 0.0) + pr * py * py2
            dist = nxt
        out: dict[int, float] = {}
        for (mask, _), pr in dist.items():
            out[mask] = out.get(mask, 0.0) + pr
        return tuple(out.items())
    raise ContractError(f"kernel code {code} has no exact pattern probabilities")


KERNELS = {
    "independent": (_native.KERNEL_INDEPENDENT, 0),
    "pair": (_native.KERNEL_PAIR, 2),
}


def get_kernel(name: str, epsilon: float) -> SiteFieldKernel:
    """Kernel ``name`` calibrated to closed-site probability ``epsilon``.

    ``independent``: open iff ``U(y) < 1 - eps``.
    ``pair``: open iff ``U(y) < 1 - d`` and ``U(y + 2) < 1 - d`` where
    ``(1 - d)**2 = 1 - eps``; neighbours at distance 2 are dependent.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ContractError(f"epsilon must lie in [0, 1], got {epsilon}")
    try:
        code, rng = KERNELS[name]
    except KeyError:
        raise ContractError(f"unknown kernel {name!r}; known: {sorted(KERNELS)}") from None
    return SiteFieldKernel(name, float(epsilon), rng, code)
