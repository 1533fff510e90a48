"""The oriented lattice, level sets and the counter-based randomness source.

Sites are pairs ``(y, n)`` with ``n >= 0`` and ``y + n`` even; each site sends
bonds to ``(y - 1, n + 1)`` and ``(y + 1, n + 1)``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Union

import numpy as np

from . import _native


class ContractError(ValueError):
    """A precondition of a public operation was violated."""


class Channel(IntEnum):
    """Independent designation channels sharing one coordinate space."""

    SITE = _native.CH_SITE
    BOND_LEFT = _native.CH_BOND_LEFT
    BOND_RIGHT = _native.CH_BOND_RIGHT
    PRODUCT = _native.CH_PRODUCT


@dataclass(frozen=True)
class SiteCoord:
    y: int
    n: int

    def __post_init__(self):
        if self.n < 0:
            raise ContractError(f"time level must be >= 0, got {self.n}")
        if (self.y + self.n) % 2:
            raise ContractError(f"parity violation at ({self.y}, {self.n})")


_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class RandomSource:
    """Seeded, stateless source of uniforms keyed by lattice coordinates.

    Two sources with the same ``master_seed`` and ``stream`` describe the same
    realization of the graphical construction.
    """

    master_seed: int
    stream: int = 0

    def __post_init__(self):
        if not 0 <= self.master_seed <= _U64:
            raise ContractError("master_seed must fit in 64 unsigned bits")
        if not 0 <= self.stream <= _U64:
            raise ContractError("stream must fit in 64 unsigned bits")

    def with_stream(self, stream: int) -> "RandomSource":
        return RandomSource(self.master_seed, stream)

    def uniforms(self, ys, n: int, channel: Channel) -> np.ndarray:
        """Vectorized `uniform_at` along one level."""
        ys = np.asarray(ys, dtype=np.int64)
        if ys.size and np.any((ys + n) % 2):
            raise ContractError(f"parity violation on level {n}")
        return _native.uniform_vector(
            np.uint64(self.master_seed), np.uint64(self.stream), ys, n, int(channel)
        )


def derive_seed(master_seed: int, *labels: int | str) -> int:
    """Derive a child seed from a master seed and a path of labels."""
    h = master_seed & _U64
    for label in labels:
        if isinstance(label, str):
            label = int.from_bytes(hashlib.blake2b(label.encode(), digest_size=8).digest(), "little")
        h = _mix64_py((h ^ _mix64_py((label + 0x9E3779B97F4A7C15) & _U64)) & _U64)
    return h


def _mix64_py(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _U64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _U64
    return z ^ (z >> 31)


def uniform_at(src: RandomSource, site: SiteCoord | tuple[int, int], channel: Channel) -> float:
    """Uniform in [0, 1) attached to ``site`` on ``channel`` of ``src``."""
    if not isinstance(site, SiteCoord):
        site = SiteCoord(*site)
    return float(
        _native.uniform_scalar(
            np.uint64(src.master_seed), np.uint64(src.stream), site.y, site.n, int(channel)
        )
    )


def open_threshold(q: float) -> np.uint64:
    """Integer threshold ``t`` with ``U < q  <=>  mantissa(U) < t``."""
    if not 0.0 <= q <= 1.0:
        raise ContractError(f"probability out of range: {q}")
    return np.uint64(math.ceil(q * 2.0**53))


def floor_even(r: float) -> int:
    """Largest even integer strictly smaller than ``r``."""
    if not math.isfinite(r):
        raise ContractError(f"floor_even needs a finite value, got {r}")
    m = math.ceil(r) - 1
    return m if m % 2 == 0 else m - 1


def floor_even_weak(r: float) -> int:
    """Largest even integer ``<= r`` (the non-strict reading)."""
    if not math.isfinite(r):
        raise ContractError(f"floor_even needs a finite value, got {r}")
    m = math.floor(r)
    return m if m % 2 == 0 else m - 1


# -- level sets ---------------------------------------------------------------


def _pack(bits: np.ndarray) -> np.ndarray:
    nwords = -(-bits.size // 64)
    padded = np.zeros(nwords * 64, dtype=np.uint8)
    padded[: bits.size] = bits
    return np.packbits(padded, bitorder="little").view(np.uint64).copy()


def _unpack(words: np.ndarray, size: int) -> np.ndarray:
    return np.unpackbits(words.view(np.uint8), bitorder="little")[:size].astype(bool)


@dataclass(frozen=True, eq=False)
class LevelSet:
    """Occupied sites of one time level inside a parity-consistent window.

    Bit ``i`` of ``words`` is site ``y_lo + 2*i``.  A censored side means the
    true set may continue past that end of the window.  ``y_hi == y_lo - 2``
    is the window with no sites.
    """

    n: int
    y_lo: int
    y_hi: int
    words: np.ndarray = field(repr=False)
    left_censored: bool = False
    right_censored: bool = False

    def __post_init__(self):
        if self.n < 0:
            raise ContractError("time level must be >= 0")
        if (self.y_lo + self.n) % 2 or (self.y_hi + self.n) % 2:
            raise ContractError(f"window [{self.y_lo}, {self.y_hi}] has wrong parity for level {self.n}")
        if self.y_hi < self.y_lo - 2:
            raise ContractError("window end lies before its start")
        words = np.asarray(self.words, dtype=np.uint64)
        if words.size != -(-self.size // 64):
            raise ContractError("bitmap length does not match window")
        tail = self.size % 64
        if tail and int(words[-1]) >> tail:
            raise ContractError("bits set outside the window")
        words = words.copy()
        words.setflags(write=False)
        object.__setattr__(self, "words", words)

    @property
    def size(self) -> int:
        return (self.y_hi - self.y_lo) // 2 + 1

    @classmethod
    def from_sites(cls, n: int, sites: Iterable[int], window: tuple[int, int] | None = None,
                   left_censored: bool = False, right_censored: bool = False) -> "LevelSet":
        sites = sorted(set(int(y) for y in sites))
        if window is None:
            if not sites:
                raise ContractError("window required for an empty level set")
            window = (sites[0], sites[-1])
        lo, hi = window
        bits = np.zeros((hi - lo) // 2 + 1, dtype=np.uint8)
        for y in sites:
            if (y + n) % 2:
                raise ContractError(f"parity violation at ({y}, {n})")
            if not lo <= y <= hi:
                raise ContractError(f"site {y} outside window [{lo}, {hi}]")
            bits[(y - lo) // 2] = 1
        return cls(n, lo, hi, _pack(bits), left_censored, right_censored)

    @classmethod
    def from_bits(cls, n: int, y_lo: int, bits: np.ndarray, left_censored=False,
                  right_censored=False) -> "LevelSet":
        bits = np.asarray(bits, dtype=np.uint8)
        return cls(n, y_lo, y_lo + 2 * (bits.size - 1), _pack(bits), left_censored, right_censored)

    def bits(self) -> np.ndarray:
        return _unpack(self.words, self.size)

    def sites(self) -> list[int]:
        return [self.y_lo + 2 * int(i) for i in np.flatnonzero(self.bits())]

    def __contains__(self, y: int) -> bool:
        if not self.y_lo <= y <= self.y_hi or (y - self.y_lo) % 2:
            return False
        i = (y - self.y_lo) // 2
        return bool((int(self.words[i // 64]) >> (i % 64)) & 1)

    def __len__(self) -> int:
        return int(sum(bin(int(w)).count("1") for w in self.words))

    def __iter__(self):
        return iter(self.sites())

    def __eq__(self, other) -> bool:
        if not isinstance(other, LevelSet):
            return NotImplemented
        return self.n == other.n and set(self.sites()) == set(other.sites())

    def __repr__(self) -> str:
        return f"LevelSet(n={self.n}, window=[{self.y_lo}, {self.y_hi}], sites={self.sites()})"

    @property
    def is_empty(self) -> bool:
        return not np.any(self.words)

    @property
    def censored(self) -> bool:
        return self.left_censored or self.right_censored

    def count_in(self, lo: int, hi: int) -> int:
        """Number of occupied sites with ``lo <= y <= hi``."""
        b = self.bits()
        ys = self.y_lo + 2 * np.arange(b.size)
        return int(np.count_nonzero(b & (ys >= lo) & (ys <= hi)))

    def max(self) -> int | None:
        s = self.sites()
        return s[-1] if s else None

    def min(self) -> int | None:
        s = self.sites()
        return s[0] if s else None


def cone_sites(n: int, a: float) -> LevelSet:
    """All level-``n`` sites with ``|y| <= a*n``."""
    if n < 0:
        raise ContractError("time level must be >= 0")
    if not 0.0 < a <= 1.0:
        raise ContractError(f"cone slope must lie in (0, 1], got {a}")
    reach = math.floor(a * n + 1e-12)
    if (reach + n) % 2:
        reach -= 1
    return LevelSet.from_sites(n, range(-reach, reach + 1, 2), (-reach, reach))


# -- initial conditions -------------------------------------------------------


@dataclass(frozen=True)
class Singleton:
    """The origin ``{0}``."""


@dataclass(frozen=True)
class Interval:
    """``{-2k, ..., 2k}`` at level 0."""

    k: int

    def __post_init__(self):
        if self.k < 0:
            raise ContractError(f"interval half-width k must be >= 0, got {self.k}")


@dataclass(frozen=True)
class HalfLine:
    """``{..., -2, 0}``."""


@dataclass(frozen=True)
class FullLine:
    """All even integers."""


@dataclass(frozen=True)
class Product:
    """Each even site occupied independently with probability ``p``."""

    p: float

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise ContractError(f"product density must lie in (0, 1], got {self.p}")


InitialCondition = Union[Singleton, Interval, HalfLine, FullLine, Product]


def parse_initial(text: str) -> InitialCondition:
    """Parse ``singleton``, ``interval:K``, ``halfline``, ``fullline``, ``product:P``."""
    name, _, arg = text.strip().lower().partition(":")
    if name == "singleton":
        return Singleton()
    if name == "interval":
        return Interval(int(arg))
    if name == "halfline":
        return HalfLine()
    if name == "fullline":
        return FullLine()
    if name == "product":
        return Product(float(arg))
    raise ContractError(f"unknown initial condition {text!r}")


def format_initial(init: InitialCondition) -> str:
    if isinstance(init, Interval):
        return f"interval:{init.k}"
    if isinstance(init, Product):
        return f"product:{init.p!r}"
    return type(init).__name__.lower()


def _even_up(v: int) -> int:
    return v + (v % 2)


def initial_window(init: InitialCondition, horizon: int, observe: int = 0) -> tuple[int, int, bool, bool]:
    """Level-0 window and censoring flags needed to observe ``[-observe, observe]``
    exactly at level ``horizon``."""
    if horizon < 0 or observe < 0:
        raise ContractError("horizon and observation half-width must be >= 0")
    if isinstance(init, Singleton):
        return 0, 0, False, False
    if isinstance(init, Interval):
        return -2 * init.k, 2 * init.k, False, False
    if isinstance(init, HalfLine):
        return -2 * max(horizon, 1), 0, True, False
    if isinstance(init, (FullLine, Product)):
        half = _even_up(observe + horizon)
        return -half, half, True, True
    raise ContractError(f"unknown initial condition {init!r}")


def make_initial(init: InitialCondition, horizon: int, src: RandomSource | None = None,
                 observe: int = 0) -> LevelSet:
    """Level-0 ``LevelSet`` realizing ``init`` on its light-cone window."""
    lo, hi, lc, rc = initial_window(init, horizon, observe)
    size = (hi - lo) // 2 + 1
    bits = np.ones(size, dtype=np.uint8)
    if isinstance(init, Product):
        if src is None:
            raise ContractError("a product start needs a random source")
        u = src.uniforms(np.arange(lo, hi + 1, 2), 0, Channel.PRODUCT)
        bits = (u < init.p).astype(np.uint8)
    return LevelSet.from_bits(0, lo, bits, lc, rc)
