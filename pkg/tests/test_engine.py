import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oplab import oracle
from oplab.engine import (
    UNDEFINED,
    ProcessParams,
    bond_step,
    coupled_bond_step,
    edge_left,
    edge_right,
    run_bond,
    run_coupled,
    run_site,
    simulate,
    site_step,
)
from oplab.kernels import get_kernel
from oplab.lattice import (
    Channel,
    ContractError,
    FullLine,
    HalfLine,
    Interval,
    LevelSet,
    Product,
    RandomSource,
    Singleton,
    uniform_at,
)


class _Fixed:
    """Kernel stand-in with prescribed open sites."""

    def __init__(self, open_sites):
        self.open_sites = set(open_sites)

    def is_open(self, src, ys, n):
        return np.array([y in self.open_sites for y in ys], dtype=bool)


def L(n, sites, window=None):
    return LevelSet.from_sites(n, sites, window)


def test_site_step_examples():
    src = RandomSource(1)
    assert site_step(L(0, [0]), get_kernel("independent", 1.0), src).sites() == [-1, 1]
    assert site_step(L(1, [-1, 1]), _Fixed([]), src).sites() == []
    assert site_step(L(1, [-1, 1]), _Fixed([-1]), src).sites() == [-2, 0]


def _find_stream(pred, limit=5000):
    for s in range(limit):
        src = RandomSource(2, s)
        if pred(src):
            return src
    raise AssertionError("no stream found")


def test_bond_step_examples():
    src = RandomSource(1)
    assert bond_step(L(1, [], (-1, 1)), 0.7, src).sites() == []
    assert bond_step(L(1, [-1, 1]), 1.0, src).sites() == [-2, 0, 2]

    def only_1_to_0(s):
        ok = [uniform_at(s, (-1, 1), Channel.BOND_LEFT) >= 0.5, uniform_at(s, (-1, 1), Channel.BOND_RIGHT) >= 0.5,
              uniform_at(s, (1, 1), Channel.BOND_LEFT) < 0.5, uniform_at(s, (1, 1), Channel.BOND_RIGHT) >= 0.5]
        return all(ok)

    src = _find_stream(only_1_to_0)
    assert bond_step(L(1, [-1, 1]), 0.5, src).sites() == [0]


def test_run_site_trivial_regimes():
    t = run_site(ProcessParams(Singleton(), 8, epsilon=0.0), RandomSource(3))
    assert t.survived_to == 8
    assert list(t.r) == list(range(9)) and list(t.l) == [-n for n in range(9)]
    t = run_site(ProcessParams(Singleton(), 8, epsilon=1.0), RandomSource(3), checkpoints=[1, 2])
    assert t.survived_to == 1
    assert t.snapshots[1].sites() == [-1, 1] and t.snapshots[2].sites() == []
    assert t.r[2] == UNDEFINED and edge_right(t, 2) is None and edge_left(t, 1) == -1


def test_run_site_golden_trajectory():
    t = run_site(ProcessParams(Singleton(), 8, epsilon=0.3), RandomSource(12345, 1), checkpoints=[2, 4, 8])
    assert t.survived_to == 8
    assert [int(x) for x in t.r] == [0, 1, 2, 3, 4, 1, 2, 3, 2]
    assert [int(x) for x in t.l] == [0, -1, 0, -1, 0, -1, 0, -1, -2]
    assert t.snapshots[4].sites() == [0, 2, 4]
    assert t.snapshots[8].sites() == [-2, 0, 2]
    # the recorded level sets are possible outcomes
    for n in (2, 4):
        d = oracle.exact_evolve(L(0, [0]), 0.3, n)
        probs = {s: p for s, p in d.items()}
        assert probs[frozenset(t.snapshots[n].sites())] > 0


@pytest.mark.parametrize("kernel", ["independent", "pair"])
@pytest.mark.parametrize("eps", [0.2, 0.5])
def test_compiled_stepper_matches_reference(kernel, eps):
    field = get_kernel(kernel, eps)
    params = ProcessParams(Interval(1), 12, epsilon=eps, kernel=kernel)
    for s in range(60):
        src = RandomSource(8, s)
        t = run_site(params, src, checkpoints=range(13))
        level = L(0, [-2, 0, 2])
        for n in range(1, 13):
            level = site_step(level, field, src)
            assert level == t.snapshots[n], (s, n)


def test_bond_stepper_matches_reference():
    params = ProcessParams(Singleton(), 12, p=0.6, process="bond")
    for s in range(60):
        src = RandomSource(9, s)
        t = run_bond(params, src, checkpoints=range(13))
        level = L(0, [0])
        for n in range(1, 13):
            level = bond_step(level, 0.6, src)
            assert level == t.snapshots[n]


def test_open_convention_filters_closed_sites():
    src = RandomSource(10, 4)
    reach = run_site(ProcessParams(Singleton(), 6, epsilon=0.4), src, checkpoints=[3, 6])
    opened = run_site(ProcessParams(Singleton(), 6, epsilon=0.4, convention="open"), src, checkpoints=[3, 6])
    field = get_kernel("independent", 0.4)
    for n in (3, 6):
        ys = np.array(reach.snapshots[n].sites(), dtype=np.int64)
        keep = ys[field.is_open(src, ys, n)] if ys.size else ys
        assert opened.snapshots[n].sites() == list(keep)


def test_coupled_examples():
    single = L(0, [0])
    for eps in (0.0, 0.3, 1.0):
        c = run_coupled(eps, L(0, [-2, 0, 2]), single, 64, RandomSource(4, 1))
        for a, b in zip(c.site_levels, c.bond_levels):
            assert set(b.sites()) <= set(a.sites())
    c = run_coupled(0.0, single, single, 5, RandomSource(4))
    assert c.site_levels[5].sites() == list(range(-5, 6, 2)) == c.bond_levels[5].sites()
    c = run_coupled(1.0, single, single, 3, RandomSource(4))
    assert c.site_levels[1].sites() == [-1, 1] and c.bond_levels[1].sites() == []
    with pytest.raises(ContractError):
        run_coupled(0.1, single, L(0, [2]), 4, RandomSource(1))


def test_coupled_stepper_matches_reference():
    field = get_kernel("independent", 0.35)
    for s in range(40):
        src = RandomSource(12, s)
        c = run_coupled(0.35, L(0, [0]), L(0, [0]), 10, src)
        level = L(0, [0])
        for n in range(1, 11):
            level = coupled_bond_step(level, field, src)
            assert level == c.bond_levels[n]


def test_half_line_trivial_and_censoring():
    b = simulate(ProcessParams(HalfLine(), 32, epsilon=0.0), 1, 4)
    for n in (0, 5, 32):
        y, cens = b.right_edge(n)
        assert list(y) == [n] * 4 and not cens.any()
    # extinction of the visible part is censored rather than reported
    b = simulate(ProcessParams(HalfLine(), 16, p=0.0, process="bond"), 1, 4)
    y, cens = b.right_edge(3)
    assert cens.all()


def test_speed_bound():
    b = simulate(ProcessParams(Interval(2), 64, epsilon=0.2), 5, 512)
    for n in range(65):
        y, _ = b.right_edge(n)
        alive = y != UNDEFINED
        assert np.all(y[alive] <= 4 + n)
        y, _ = b.left_edge(n)
        assert np.all(y[y != UNDEFINED] >= -4 - n)


def test_survival_is_absorbing():
    b = simulate(ProcessParams(Singleton(), 40, epsilon=0.45), 3, 2000)
    alive = np.stack([b.alive(n) for n in range(41)], axis=1)
    assert np.all(alive[:, 1:] <= alive[:, :-1])


def test_worker_invariance_and_determinism():
    params = ProcessParams(Product(0.5), 64, epsilon=0.1, observe=8)
    a = simulate(params, 11, 1500, snapshots=[64], workers=1)
    b = simulate(params, 11, 1500, snapshots=[64], workers=4)
    c = simulate(params, 11, 1500, snapshots=[64], workers=3)
    for o in (b, c):
        assert np.array_equal(a.top, o.top) and np.array_equal(a.snaps, o.snaps)


def test_explicit_streams_match_ranges():
    params = ProcessParams(Singleton(), 30, epsilon=0.3)
    full = simulate(params, 4, 600, workers=2)
    sub = simulate(params, 4, streams=[5, 300, 599], workers=1)
    assert np.array_equal(sub.top, full.top[[5, 300, 599]])


def test_light_cone_sufficiency():
    small = ProcessParams(FullLine(), 24, epsilon=0.2, observe=4)
    big = ProcessParams(FullLine(), 24, epsilon=0.2, observe=40)
    a = simulate(small, 6, 300, snapshots=[24])
    b = simulate(big, 6, 300, snapshots=[24])
    assert np.array_equal(a.occupancy(24, -4, 4)[0], b.occupancy(24, -4, 4)[0])
    with pytest.raises(ContractError):
        a.occupancy(24, -40, 40)


def test_two_sided_survival_is_rejected():
    b = simulate(ProcessParams(FullLine(), 4, epsilon=0.2), 1, 2)
    with pytest.raises(ContractError):
        b.alive(2)


@given(st.integers(0, 2**32), st.floats(0.0, 1.0), st.integers(1, 30))
@settings(max_examples=40, deadline=None)
def test_monotone_in_initial_set(seed, eps, horizon):
    small = simulate(ProcessParams(Singleton(), horizon, epsilon=eps), seed, 8, snapshots="all")
    big = simulate(ProcessParams(Interval(2), horizon, epsilon=eps), seed, 8, snapshots="all")
    for n in range(horizon + 1):
        lo, hi = small.window(n)
        assert not np.any(small.occupancy(n, lo, hi)[0] & ~big.occupancy(n, lo, hi)[0])


def test_contract_errors():
    with pytest.raises(ContractError):
        ProcessParams(Singleton(), -1)
    with pytest.raises(ContractError):
        ProcessParams(Singleton(), 3, epsilon=2.0)
    with pytest.raises(ContractError):
        ProcessParams(Singleton(), 3, convention="member")
    with pytest.raises(ContractError):
        simulate(ProcessParams(Singleton(), 3), 0, 0)
