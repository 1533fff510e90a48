import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from oplab import oracle
from oplab.engine import site_step
from oplab.kernels import get_kernel
from oplab.lattice import LevelSet, RandomSource

ORIGIN = LevelSet.from_sites(0, [0])


def test_evolve_point_masses():
    d = oracle.exact_evolve(ORIGIN, 0.0, 2)
    assert dict(d.items()) == {frozenset({-2, 0, 2}): 1.0}
    d = oracle.exact_evolve(ORIGIN, 1.0, 2)
    assert dict(d.items()) == {frozenset(): 1.0}


def test_two_level_survival_is_one_minus_eps_squared():
    for eps in (0.1, 0.3, 0.5, 0.77):
        assert abs(oracle.exact_survival(ORIGIN, eps, 2) - (1 - eps**2)) <= 1e-12
    assert oracle.exact_survival(ORIGIN, 0.3, 2, exact=True) == Fraction(91, 100)
    assert oracle.exact_survival(ORIGIN, 0.0, 6) == 1
    assert oracle.exact_survival(ORIGIN, 1.0, 3) == 0


def test_intersection_pmf_examples():
    assert oracle.exact_intersection_pmf(ORIGIN, 0.0, 1, [-1, 1]) == [0.0, 0.0, 1.0]
    pmf = oracle.exact_intersection_pmf(ORIGIN, 1.0, 2, [-2, 0, 2])
    assert pmf[0] == 1.0 and sum(pmf[1:]) == 0
    pmf = oracle.exact_intersection_pmf(ORIGIN, 0.5, 2, [0])
    assert pmf == pytest.approx([0.25, 0.75], abs=1e-15)


def _brute_force(initial, eps, n):
    """Enumerate every openness pattern on levels 1..n-1 of the light cone."""
    sites = [(y, m) for m in range(1, n) for y in range(initial.y_lo - m, initial.y_hi + m + 1, 2)]
    out = {}
    for pattern in itertools.product((0, 1), repeat=len(sites)):
        opened = {s for s, o in zip(sites, pattern) if o}
        pr = math.prod((1 - eps) if o else eps for o in pattern)
        level = set(initial.sites())
        for m in range(n):
            level = {y + d for y in level if m == 0 or (y, m) in opened for d in (-1, 1)}
        key = frozenset(level)
        out[key] = out.get(key, 0.0) + pr
    return out


@pytest.mark.parametrize("eps", [0.2, 0.6])
@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_matches_brute_force(eps, n):
    for start in (ORIGIN, LevelSet.from_sites(0, [-2, 2])):
        d = dict(oracle.exact_evolve(start, eps, n).items())
        bf = _brute_force(start, eps, n)
        assert set(d) == {k for k, v in bf.items() if v > 0} | ({frozenset()} & set(d))
        for k, v in bf.items():
            assert abs(d.get(k, 0.0) - v) < 1e-12


def test_normalization_and_rationals():
    for eps in (0.15, 0.5):
        d = oracle.exact_evolve(LevelSet.from_sites(0, [-2, 0, 2]), eps, 5)
        assert abs(d.total() - 1) < 1e-12
    d = oracle.exact_evolve(ORIGIN, 0.25, 4, exact=True)
    assert d.total() == 1
    assert isinstance(d.prob_empty(), Fraction)


def test_pair_kernel_matches_sampling():
    field = get_kernel("pair", 0.3)
    exact = oracle.exact_survival(ORIGIN, 0.3, 4, "pair")
    trials = 20_000
    alive = 0
    for s in range(trials):
        src = RandomSource(31, s)
        level = ORIGIN
        for _ in range(4):
            level = site_step(level, field, src)
        alive += not level.is_empty
    assert abs(alive / trials - exact) < 4 * math.sqrt(exact * (1 - exact) / trials)


def test_survival_monotone_in_epsilon():
    vals = [oracle.exact_survival(ORIGIN, e, 6) for e in np.linspace(0, 1, 21)]
    assert all(b <= a + 1e-15 for a, b in zip(vals, vals[1:]))


def test_capacity_error():
    with pytest.raises(oracle.CapacityError):
        oracle.exact_survival(ORIGIN, 0.3, 20)
    # a narrow target keeps a long horizon tractable
    pmf = oracle.exact_intersection_pmf(ORIGIN, 0.3, 12, [0])
    assert abs(sum(pmf) - 1) < 1e-12


def test_open_convention():
    reach = oracle.exact_intersection_pmf(ORIGIN, 0.5, 2, [0])
    opened = oracle.exact_intersection_pmf(ORIGIN, 0.5, 2, [0], convention="open")
    assert opened[1] == pytest.approx(reach[1] * 0.5)


def test_duality_trivial_cases():
    d = oracle.exact_duality_check(1.0, 0.5, 1, 1)
    assert d.forward[0] == 1.0 and d.dual[0] == 1.0 and d.sup_distance == 0.0
    d = oracle.exact_duality_check(0.0, 1.0, 0, 1)
    assert d.nonempty_forward == d.nonempty_dual == 1.0


@pytest.mark.parametrize("eps", [0.2, 0.4, 0.6])
@pytest.mark.parametrize("p", [0.3, 0.6, 1.0])
@pytest.mark.parametrize("k", [0, 1])
@pytest.mark.parametrize("n", [1, 2])
def test_duality_of_hitting_probabilities(eps, p, k, n):
    # the two intersections are empty with the same probability
    d = oracle.exact_duality_check(eps, p, k, n)
    assert abs(d.nonempty_forward - d.nonempty_dual) <= 1e-12
    assert abs(sum(d.forward) - 1) < 1e-12 and abs(sum(d.dual) - 1) < 1e-12


def test_duality_exact_in_rationals():
    d = oracle.exact_duality_check(0.4, 0.6, 1, 1, exact=True)
    assert 1 - d.forward[0] == 1 - d.dual[0]
