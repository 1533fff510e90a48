"""Site and bond oriented percolation under a shared graphical construction.

Two routes evolve the same process: `site_step`/`bond_step` advance one
`LevelSet` with numpy and serve as the readable reference, while
`simulate` runs whole batches of trajectories through the compiled
bit-parallel stepper.  Both read the same counter-based uniforms, so they
agree trial by trial.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import _native
from .kernels import SiteFieldKernel, get_kernel
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
    initial_window,
    open_threshold,
)

UNDEFINED = np.iinfo(np.int64).min
"""Edge value of an empty level."""

CHUNK = 256
"""Trials per work item; fixed so results do not depend on the worker count."""

WORKERS_ENV = "OPLAB_WORKERS"

PROCESSES = {"site": _native.PROCESS_SITE, "bond": _native.PROCESS_BOND,
             "coupled": _native.PROCESS_COUPLED}
CONVENTIONS = ("reach", "open")


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass(frozen=True)
class ProcessParams:
    """What to run: process type, parameters, start, horizon and window policy.

    ``observe`` is the half-width of the level-``horizon`` window that must be
    exact for line and product starts.  ``convention="open"`` reports only
    open sites as members of ``A_n`` for ``n >= 1``; ``"reach"`` (default)
    keeps reached-but-closed sites, which never transmit.
    """

    initial: InitialCondition
    horizon: int
    epsilon: float = 0.0
    p: float = 1.0
    process: str = "site"
    kernel: str = "independent"
    observe: int = 0
    convention: str = "reach"

    def __post_init__(self):
        if self.horizon < 0:
            raise ContractError("horizon must be >= 0")
        if self.process not in PROCESSES:
            raise ContractError(f"unknown process {self.process!r}")
        if self.convention not in CONVENTIONS:
            raise ContractError(f"unknown convention {self.convention!r}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ContractError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if not 0.0 <= self.p <= 1.0:
            raise ContractError(f"p must lie in [0, 1], got {self.p}")
        get_kernel(self.kernel, self.epsilon)

    @property
    def site_kernel(self) -> SiteFieldKernel:
        return get_kernel(self.kernel, self.epsilon)


@dataclass(frozen=True)
class Frame:
    """Bitmap frame: bit ``j`` at level ``n`` is ``y = y0 + 2*j + (n & 1)``."""

    y0: int
    nwords: int

    @property
    def nsites(self) -> int:
        return 64 * self.nwords

    @property
    def y_max(self) -> int:
        return self.y0 + 2 * (self.nsites - 1) + 1

    def ys(self, n: int) -> np.ndarray:
        return self.y0 + 2 * np.arange(self.nsites, dtype=np.int64) + (n & 1)

    def covers(self, lo: int, hi: int) -> bool:
        return self.y0 <= lo - 2 and hi + 2 <= self.y_max - 1

    @classmethod
    def around(cls, lo: int, hi: int) -> "Frame":
        y0 = lo - 2
        y0 -= y0 % 2
        nsites = (hi + 3 - y0) // 2 + 1
        return cls(y0, -(-nsites // 64))


@dataclass(frozen=True)
class _Start:
    lo: int
    hi: int
    left_censored: bool
    right_censored: bool
    bits: np.ndarray
    product_p: float | None = None

    def reach(self, horizon: int) -> tuple[int, int]:
        lo = self.lo if self.left_censored else self.lo - horizon
        hi = self.hi if self.right_censored else self.hi + horizon
        return lo, hi


def _start_from(initial: InitialCondition | LevelSet, horizon: int, observe: int) -> _Start:
    if isinstance(initial, LevelSet):
        if initial.n != 0:
            raise ContractError("initial level set must live at level 0")
        return _Start(initial.y_lo, initial.y_hi, initial.left_censored,
                      initial.right_censored, initial.bits())
    lo, hi, lc, rc = initial_window(initial, horizon, observe)
    bits = np.ones((hi - lo) // 2 + 1, dtype=bool)
    if isinstance(initial, Product):
        return _Start(lo, hi, lc, rc, bits, initial.p)
    return _Start(lo, hi, lc, rc, bits)


def exact_window(start: _Start, n: int) -> tuple[int, int]:
    """Part of level ``n`` not influenced by the truncation of the start."""
    lo = start.lo + n if start.left_censored else start.lo - n
    hi = start.hi - n if start.right_censored else start.hi + n
    return lo, hi


@dataclass
class Batch:
    """Trajectories of one batch of streams (one trial per stream)."""

    params: ProcessParams
    start: _Start
    frame: Frame
    streams: np.ndarray
    top: np.ndarray
    bot: np.ndarray
    snap_levels: tuple[int, ...]
    snaps: np.ndarray = field(repr=False)

    @property
    def trials(self) -> int:
        return self.streams.size

    def _y(self, idx: np.ndarray, n: int) -> np.ndarray:
        y = self.frame.y0 + 2 * idx + (n & 1)
        return np.where(idx < 0, UNDEFINED, y)

    def window(self, n: int) -> tuple[int, int]:
        return exact_window(self.start, n)

    def right_edge(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Right edges at level ``n`` and a per-trial censoring flag."""
        y = self._y(self.top[:, n], n)
        lo, _ = self.window(n)
        if self.start.right_censored:
            return y, np.ones(y.shape, dtype=bool)
        if self.start.left_censored:
            return y, (y == UNDEFINED) | (y < lo)
        return y, np.zeros(y.shape, dtype=bool)

    def left_edge(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        y = self._y(self.bot[:, n], n)
        _, hi = self.window(n)
        if self.start.left_censored:
            return y, np.ones(y.shape, dtype=bool)
        if self.start.right_censored:
            return y, (y == UNDEFINED) | (y > hi)
        return y, np.zeros(y.shape, dtype=bool)

    def alive(self, n: int) -> np.ndarray:
        """``A_n`` non-empty; only defined for starts without two-sided truncation."""
        if self.start.left_censored and self.start.right_censored:
            raise ContractError("survival of a two-sided truncated start is not observable")
        if self.start.left_censored:
            y, _ = self.right_edge(n)
            return (y != UNDEFINED) & (y >= self.window(n)[0])
        if self.start.right_censored:
            y, _ = self.left_edge(n)
            return (y != UNDEFINED) & (y <= self.window(n)[1])
        return self.top[:, n] >= 0

    def survived_to(self) -> np.ndarray:
        return (self.top >= 0).sum(axis=1) - 1

    def occupancy(self, n: int, lo: int | None = None, hi: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Boolean occupancy ``[trials, sites]`` of level ``n`` over ``[lo, hi]``
        (default: the exact window) and the matching coordinates."""
        if n not in self.snap_levels:
            raise ContractError(f"level {n} was not snapshotted")
        wlo, whi = self.window(n)
        lo = wlo if lo is None else lo
        hi = whi if hi is None else hi
        if lo < wlo or hi > whi:
            raise ContractError(f"[{lo}, {hi}] is not exact at level {n} (exact: [{wlo}, {whi}])")
        if (lo + n) % 2:
            lo += 1
        if (hi + n) % 2:
            hi -= 1
        slot = self.snap_levels.index(n)
        words = np.ascontiguousarray(self.snaps[:, slot, :])
        bits = np.unpackbits(words.view(np.uint8), axis=1, bitorder="little").astype(bool)
        j0 = (lo - self.frame.y0 - (n & 1)) // 2
        j1 = (hi - self.frame.y0 - (n & 1)) // 2
        ys = np.arange(lo, hi + 1, 2, dtype=np.int64)
        if j1 < j0:
            return np.zeros((self.trials, 0), dtype=bool), ys
        return bits[:, j0 : j1 + 1], ys

    def count_in(self, n: int, lo: int, hi: int) -> np.ndarray:
        occ, _ = self.occupancy(n, lo, hi)
        return occ.sum(axis=1)

    def level_set(self, i: int, n: int) -> LevelSet:
        """Snapshot of trial ``i`` at level ``n`` restricted to its exact window."""
        wlo, whi = self.window(n)
        wlo = max(wlo, self.frame.y0 + (n & 1))
        whi = min(whi, self.frame.y_max - 1 + (n & 1))
        occ, ys = self.occupancy(n, wlo, whi)
        return LevelSet.from_bits(n, int(ys[0]), occ[i].astype(np.uint8),
                                  self.start.left_censored, self.start.right_censored)


def _native_args(params: ProcessParams):
    kern = params.site_kernel
    return dict(
        process=PROCESSES[params.process],
        kcode=kern.code,
        site_thr=kern.native_threshold,
        bond_thr=open_threshold(params.p),
    )


def simulate(params: ProcessParams, seed: int, trials: int | None = None, *, stream0: int = 0,
             streams: Sequence[int] | None = None, snapshots: Sequence[int] | str = (),
             frame: Frame | None = None, initial: LevelSet | None = None,
             workers: int | None = None, fault: bool = False) -> Batch:
    """Run ``trials`` trajectories on streams ``stream0, stream0 + 1, ...``
    (or on the explicit ``streams``).

    ``snapshots`` lists levels whose full bitmaps are kept (``"all"`` keeps
    every level).  ``initial`` overrides ``params.initial`` with an explicit
    level-0 set.  ``fault`` flips the union of transmissions into an
    exclusive-or and exists only to test the invariant checks.
    """
    if streams is None:
        if trials is None or trials < 1:
            raise ContractError("trials must be >= 1")
        streams = np.arange(stream0, stream0 + trials, dtype=np.uint64)
    else:
        streams = np.asarray(streams, dtype=np.uint64)
        if streams.size == 0:
            raise ContractError("streams must be non-empty")
    H = params.horizon
    start = _start_from(initial if initial is not None else params.initial, H, params.observe)
    reach = start.reach(H)
    if frame is None:
        frame = Frame.around(*reach)
    elif not frame.covers(*reach):
        raise ContractError("frame does not cover the light cone of the start")
    if snapshots == "all":
        levels = tuple(range(H + 1))
    else:
        levels = tuple(sorted(set(int(n) for n in snapshots)))
        if any(not 0 <= n <= H for n in levels):
            raise ContractError("snapshot level outside [0, horizon]")
    slot = np.full(H + 1, -1, dtype=np.int64)
    for i, n in enumerate(levels):
        slot[n] = i

    bits = np.zeros(frame.nsites, dtype=np.uint8)
    j0 = (start.lo - frame.y0) // 2
    bits[j0 : j0 + start.bits.size] = start.bits
    words = np.packbits(bits, bitorder="little").view(np.uint64).copy()

    nat = _native_args(params)
    product = start.product_p is not None
    pthr = open_threshold(start.product_p if product else 1.0)
    observe_open = params.convention == "open"

    def work(lo: int):
        return _native.simulate_chunk(
            words, frame.y0, H, np.uint64(seed), streams[lo : lo + CHUNK],
            nat["process"], nat["kcode"], nat["site_thr"], nat["bond_thr"],
            pthr, product, slot, len(levels), observe_open, fault,
        )

    starts = list(range(0, streams.size, CHUNK))
    workers = default_workers() if workers is None else max(1, workers)
    if workers == 1 or len(starts) == 1:
        parts = [work(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, starts))
    top = np.concatenate([p[0] for p in parts])
    bot = np.concatenate([p[1] for p in parts])
    snaps = np.concatenate([p[2] for p in parts])
    return Batch(params, start, frame, streams, top, bot, levels, snaps)


def iter_batches(params: ProcessParams, seed: int, trials: int, *, block: int = 4096,
                 stream0: int = 0, **kwargs) -> Iterator[Batch]:
    """`simulate` in blocks of ``block`` trials to bound memory."""
    for lo in range(stream0, stream0 + trials, block):
        yield simulate(params, seed, min(block, stream0 + trials - lo), stream0=lo, **kwargs)


# -- single trajectories ------------------------------------------------------


@dataclass
class TrajectoryStats:
    """One trajectory: survival level, edges per level and snapshots.

    ``r[n]``/``l[n]`` equal `UNDEFINED` on empty levels; the ``*_censored``
    arrays flag edges that the truncated start cannot determine.
    """

    survived_to: int | None
    horizon: int
    r: np.ndarray
    l: np.ndarray
    r_censored: np.ndarray
    l_censored: np.ndarray
    snapshots: dict[int, LevelSet]

    @property
    def survived(self) -> bool:
        return self.survived_to is not None and self.survived_to >= self.horizon


def _trajectory(batch: Batch, i: int = 0) -> TrajectoryStats:
    H = batch.params.horizon
    r = np.empty(H + 1, dtype=np.int64)
    l = np.empty(H + 1, dtype=np.int64)
    rc = np.empty(H + 1, dtype=bool)
    lc = np.empty(H + 1, dtype=bool)
    for n in range(H + 1):
        y, c = batch.right_edge(n)
        r[n], rc[n] = y[i], c[i]
        y, c = batch.left_edge(n)
        l[n], lc[n] = y[i], c[i]
    snaps = {n: batch.level_set(i, n) for n in batch.snap_levels}
    s = batch.start
    if s.left_censored and s.right_censored:
        survived_to = None
    elif s.left_censored or s.right_censored:
        alive = [n for n in range(H + 1) if batch.alive(n)[i]]
        survived_to = alive[-1] if alive else -1
    else:
        survived_to = int(batch.survived_to()[i])
    return TrajectoryStats(survived_to, H, r, l, rc, lc, snaps)


def run_site(params: ProcessParams, src: RandomSource, checkpoints: Sequence[int] = (),
             initial: LevelSet | None = None) -> TrajectoryStats:
    """A single site-process trajectory on stream ``src.stream``."""
    if params.process != "site":
        params = _replace(params, process="site")
    b = simulate(params, src.master_seed, 1, stream0=src.stream, snapshots=checkpoints,
                 initial=initial, workers=1)
    return _trajectory(b)


def run_bond(params: ProcessParams, src: RandomSource, checkpoints: Sequence[int] = (),
             initial: LevelSet | None = None) -> TrajectoryStats:
    """A single bond-process trajectory with bond parameter ``params.p``."""
    if params.process != "bond":
        params = _replace(params, process="bond")
    b = simulate(params, src.master_seed, 1, stream0=src.stream, snapshots=checkpoints,
                 initial=initial, workers=1)
    return _trajectory(b)


def _replace(params: ProcessParams, **changes) -> ProcessParams:
    from dataclasses import replace

    return replace(params, **changes)


@dataclass
class CoupledTrajectories:
    site: TrajectoryStats
    bond: TrajectoryStats
    site_levels: list[LevelSet]
    bond_levels: list[LevelSet]


def run_coupled(epsilon: float, initial_site: LevelSet, initial_bond: LevelSet, horizon: int,
                src: RandomSource, kernel: str = "independent") -> CoupledTrajectories:
    """Site process from ``initial_site`` and the dominated bond process from
    ``initial_bond`` (bond ``(z, n) -> (y, n+1)`` open iff site ``(y, n+1)``
    open, so ``p = 1 - epsilon``).  Raises if ``B_n ⊆ A_n`` ever fails."""
    if not set(initial_bond.sites()) <= set(initial_site.sites()):
        raise ContractError("initial bond set must be contained in the initial site set")
    if initial_site.censored or initial_bond.censored:
        raise ContractError("coupled runs need finite, uncensored starts")
    base = ProcessParams(Singleton(), horizon, epsilon=epsilon, kernel=kernel)
    lo = min(initial_site.y_lo, initial_bond.y_lo) - horizon
    hi = max(initial_site.y_hi, initial_bond.y_hi) + horizon
    frame = Frame.around(lo, hi)
    a = simulate(base, src.master_seed, 1, stream0=src.stream, snapshots="all", frame=frame,
                 initial=initial_site, workers=1)
    b = simulate(_replace(base, process="coupled"), src.master_seed, 1, stream0=src.stream,
                 snapshots="all", frame=frame, initial=initial_bond, workers=1)
    for n in range(horizon + 1):
        sa = a.snaps[0, n]
        sb = b.snaps[0, n]
        if np.any(sb & ~sa):
            raise AssertionError(f"coupling containment violated at level {n}")
    sl = [a.level_set(0, n) for n in range(horizon + 1)]
    bl = [b.level_set(0, n) for n in range(horizon + 1)]
    return CoupledTrajectories(_trajectory(a), _trajectory(b), sl, bl)


def edge_right(traj: TrajectoryStats, n: int) -> int | None:
    """``sup A_n``, or None when the level is empty or the edge is censored."""
    if not 0 <= n <= traj.horizon:
        raise ContractError(f"level {n} outside [0, {traj.horizon}]")
    if traj.r[n] == UNDEFINED or traj.r_censored[n]:
        return None
    return int(traj.r[n])


def edge_left(traj: TrajectoryStats, n: int) -> int | None:
    if not 0 <= n <= traj.horizon:
        raise ContractError(f"level {n} outside [0, {traj.horizon}]")
    if traj.l[n] == UNDEFINED or traj.l_censored[n]:
        return None
    return int(traj.l[n])


# -- reference one-level steps ------------------------------------------------


def _next_window(level: LevelSet) -> tuple[int, int]:
    lo = level.y_lo + 1 if level.left_censored else level.y_lo - 1
    hi = level.y_hi - 1 if level.right_censored else level.y_hi + 1
    if lo > hi:
        raise ContractError("censored window exhausted; start from a wider window")
    return lo, hi


def _advance(level: LevelSet, right: np.ndarray, left: np.ndarray) -> LevelSet:
    """Sites reached through transmitting-right ``right`` / transmitting-left
    ``left`` masks over ``level``'s window."""
    lo, hi = _next_window(level)
    ys = np.arange(lo, hi + 1, 2)
    src_ys = level.y_lo + 2 * np.arange(level.size)
    from_left = set(src_ys[right] + 1)
    from_right = set(src_ys[left] - 1)
    bits = np.array([(y in from_left) or (y in from_right) for y in ys], dtype=np.uint8)
    return LevelSet.from_bits(level.n + 1, lo, bits, level.left_censored, level.right_censored)


def site_step(level: LevelSet, field: SiteFieldKernel, src: RandomSource) -> LevelSet:
    """``A_{n+1}`` from ``A_n``: closed sites are reached but never transmit,
    and level-0 sites always transmit."""
    occ = level.bits()
    if level.n == 0:
        transmit = occ
    else:
        ys = level.y_lo + 2 * np.arange(level.size)
        transmit = occ & field.is_open(src, ys, level.n)
    return _advance(level, transmit, transmit)


def bond_step(level: LevelSet, p: float, src: RandomSource) -> LevelSet:
    """``B_{n+1}`` from ``B_n`` with independent bonds open with probability ``p``."""
    occ = level.bits()
    ys = level.y_lo + 2 * np.arange(level.size)
    right = occ & (src.uniforms(ys, level.n, Channel.BOND_RIGHT) < p)
    left = occ & (src.uniforms(ys, level.n, Channel.BOND_LEFT) < p)
    return _advance(level, right, left)


def coupled_bond_step(level: LevelSet, field: SiteFieldKernel, src: RandomSource) -> LevelSet:
    """Bond step where ``(z, n) -> (y, n+1)`` is open iff site ``(y, n+1)`` is open."""
    occ = level.bits()
    spread = _advance(level, occ, occ)
    ys = spread.y_lo + 2 * np.arange(spread.size)
    keep = spread.bits() & field.is_open(src, ys, spread.n)
    return LevelSet.from_bits(spread.n, spread.y_lo, keep.astype(np.uint8),
                              spread.left_censored, spread.right_censored)


__all__ = [
    "Batch", "CoupledTrajectories", "Frame", "ProcessParams", "TrajectoryStats", "UNDEFINED",
    "bond_step", "coupled_bond_step", "edge_left", "edge_right", "iter_batches", "run_bond",
    "run_coupled", "run_site", "simulate", "site_step",
    "Singleton", "Interval", "HalfLine", "FullLine", "Product",
]
