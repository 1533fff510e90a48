import math

import numpy as np
import pytest

from oplab import estimators as E
from oplab import oracle
from oplab.lattice import ContractError, Interval, LevelSet, Singleton


def test_estimate_ci_contract():
    e = E.EstimateCI.from_counts(3, 10)
    assert e.ci_lo <= e.estimate <= e.ci_hi and e.successes == 3
    with pytest.raises(ContractError):
        E.EstimateCI(0.5, 0.6, 0.7, 10)
    with pytest.raises(ContractError):
        E.EstimateCI(0.5, 0.4, 0.6, 0)


def test_survival_curve_trivial_and_oracle():
    assert all(e.estimate == 1 for e in E.estimate_survival_curve(0.0, Singleton(), [1, 5, 20], 200))
    assert E.estimate_survival_curve(1.0, Singleton(), [2], 200)[0].estimate == 0
    est = E.estimate_survival_curve(0.3, Singleton(), [2], 100_000, seed=3)[0]
    assert abs(est.estimate - 0.91) < 4 * math.sqrt(0.91 * 0.09 / 1e5)
    with pytest.raises(ContractError):
        E.estimate_survival_curve(0.3, Singleton(), [2], 0)


def test_survival_curve_non_increasing():
    est = E.estimate_survival_curve(0.4, Interval(1), range(0, 60, 3), 3000, seed=1)
    vals = [e.estimate for e in est]
    assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_ci_shrinks_with_trials():
    small = E.estimate_survival_curve(0.4, Singleton(), [10], 2500, seed=2)[0]
    big = E.estimate_survival_curve(0.4, Singleton(), [10], 40_000, seed=2)[0]
    ratio = (small.ci_hi - small.ci_lo) / (big.ci_hi - big.ci_lo)
    assert 3.2 < ratio < 4.8


def test_theta():
    assert E.estimate_theta(0.0, 0, 64, 100, seed=7).theta.estimate == 1.0
    assert E.estimate_theta(1.0, 2, 2, 100).theta.estimate == 0.0
    t = E.estimate_theta(0.3, 0, 2, 100_000, seed=9)
    assert abs(t.theta.estimate - 0.91) < 4 * math.sqrt(0.91 * 0.09 / 1e5)
    t = E.estimate_theta(0.3, 0, 40, 5000)
    assert t.truncation.estimate >= 0 and t.theta.trials == 5000


def test_eq2_trivial_and_monotone():
    r = E.experiment_eq2(0.0, [0, 1, 2], 32, 500)
    assert all(f.estimate == 0 for f in r.failures) and r.status == "tail below resolution"
    r = E.experiment_eq2(0.3, [0, 1, 2, 3, 4], 64, 4000, seed=5)
    vals = [f.estimate for f in r.failures]
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    assert r.fit.status == "ok" and r.fit.gamma > 0
    with pytest.raises(ContractError):
        E.experiment_eq2(0.1, [2, 1], 8, 10)


def test_eq2_nested_equals_direct():
    nested = E.experiment_eq2(0.35, [0, 2], 48, 3000, seed=8)
    direct = E.estimate_theta(0.35, 2, 48, 3000, seed=8).theta
    assert nested.failures[1].successes == 3000 - direct.successes


def test_eqstr_trivial_cases():
    k = 2
    r = E.experiment_eq_str(0.0, 1.0, k, 0.8, 0.5, [2, 4, 16], 200)
    for rec in r.records:
        assert rec.dual_lhs.estimate == 1 and rec.nonempty.estimate == 1
        # the interval holds only 2k + 1 sites, so larger thresholds are unreachable
        assert rec.lhs.estimate == (1.0 if rec.threshold <= 2 * k + 1 else 0.0)
    r = E.experiment_eq_str(1.0, 0.5, 2, 0.8, 0.8, [1, 3], 200)
    assert all(rec.lhs.estimate == 0 and rec.deficit == 0 for rec in r.records)
    assert r.theta.theta.estimate == 0
    with pytest.raises(ContractError):
        E.experiment_eq_str(0.1, 0.5, 2, 1.5, 0.8, [4], 10)


def test_eqstr_threshold_uses_strict_floor():
    assert E.eqstr_threshold(0.5, 0.8, 2, 0.8, 5, strict=True) == pytest.approx(0.8 * 0.5 * (10 + 1))
    assert E.eqstr_threshold(0.5, 1.0, 1, 0.5, 2, strict=True) == 0.5 * (2 + 1)
    assert E.eqstr_threshold(0.5, 1.0, 1, 0.5, 2, strict=False) == 0.5 * (4 + 1)


def test_eqstr_dual_count_matches_oracle():
    eps, p, k, n = 0.3, 0.6, 1, 1
    trials = 40_000
    a, b = E.duality_samples(eps, p, k, n, trials, seed=4)
    d = oracle.exact_duality_check(eps, p, k, n)
    for sample, pmf in ((a, d.forward), (b, d.dual)):
        for c, pr in enumerate(pmf):
            freq = np.mean(sample == c)
            assert abs(freq - pr) < 4.5 * math.sqrt(pr * (1 - pr) / trials) + 1e-12


def test_corollary2_trivial():
    r = E.corollary2_sweep([1.0, 0.0], 2, 0.5, 8, 300)
    assert r.estimates[0].estimate == 0 and r.estimates[1].estimate == 1
    with pytest.raises(ContractError):
        E.corollary2_sweep([0.1, 0.2], 2, 0.5, 8, 10)


def test_subset_families():
    cone = E.subset_sites("cone", 8, 0.5)
    assert cone == [-4, -2, 0, 2, 4]
    assert E.subset_sites("interval:2", 8, 0.5) == [-2, 0] or E.subset_sites("interval:2", 8, 0.5) == [0, 2]
    assert E.subset_sites("interval:3", 7, 0.9) == [-3, -1, 1] or E.subset_sites("interval:3", 7, 0.9) == [-1, 1, 3]
    r1 = E.subset_sites("random:0.5", 64, 0.9, seed=1)
    assert r1 == E.subset_sites("random:0.5", 64, 0.9, seed=1)
    assert set(r1) <= set(E.subset_sites("cone", 64, 0.9))
    with pytest.raises(ContractError):
        E.subset_sites("interval:50", 8, 0.5)
    with pytest.raises(ContractError):
        E.subset_sites("blob", 8, 0.5)


def test_prop3_trivial_cases():
    r = E.experiment_prop3(0.0, 0.9, 0.9, [8, 16], 200, sizes=[4], size_n=16)
    assert all(row.conditional.estimate == 0 for row in r.by_n + r.by_size)
    # below single-site resolution the failure event is empty on survival
    m = 8
    r = E.experiment_prop3(0.3, 0.9, 1 / (2 * m), [16], 2000, subset_spec=f"interval:{m}")
    assert r.by_n[0].failures == 0 or r.by_n[0].conditional.estimate < 1
    r = E.experiment_prop3(1.0, 0.5, 0.5, [4], 100)
    assert r.by_n[0].survivors == 0 and r.by_n[0].conditional is None


def test_prop3_low_rho_failures_mean_empty_subset():
    r = E.experiment_prop3(0.3, 0.9, 1 / 16, [16], 3000, subset_spec="interval:8", seed=2)
    # density < 1/16 over 8 sites means no site of S is occupied
    assert r.by_n[0].conditional.estimate < 0.5


def test_ratio_estimate():
    assert E.ratio_estimate(0, 0, 10) is None
    e = E.ratio_estimate(20, 80, 100)
    assert e.estimate == 0.25 and e.ci_lo < 0.25 < e.ci_hi and e.method == "ratio-delta"
    assert E.ratio_estimate(0, 50, 100).method == "ratio-exact"


def test_edge_speed_trivial():
    r = E.experiment_edge_speed("site", 0.0, [0.5, 0.9], [16, 32], 50)
    assert r.alpha.mean == 1.0 and all(e.estimate == 0 for v in r.tails.values() for e in v)
    r = E.experiment_edge_speed("bond", 1.0, [0.5], [16], 50)
    assert r.alpha.mean == 1.0
    with pytest.raises(ContractError):
        E.experiment_edge_speed("bond", 0.0, [0.5], [16], 50)
    with pytest.raises(ContractError):
        E.experiment_edge_speed("walk", 0.5, [0.5], [16], 50)


def test_edge_speed_monotone_in_p():
    speeds = [E.experiment_edge_speed("bond", p, [0.5], [128], 1000, seed=3).alpha.mean
              for p in (0.75, 0.85, 0.95)]
    assert speeds == sorted(speeds)


def test_prop4f_trivial():
    r = E.experiment_prop4f(1.0, 0.9, [16], [4, 8], 100)
    assert all(e.estimate == 0 for e in r.tails[16])
    r = E.experiment_prop4f(0.8, 0.0, [16], [4, 8], 100)
    assert all(e.estimate == 0 for e in r.tails[16])
    with pytest.raises(ContractError):
        E.experiment_prop4f(0.5, 0.2, [16], [4], 10, pc_estimate=0.66)


def test_prop4f_resolves_a_tail():
    r = E.experiment_prop4f(0.72, 0.6, [64], [4, 8, 16], 3000, seed=1)
    vals = [e.estimate for e in r.tails[64]]
    assert vals[0] > 0 and vals == sorted(vals, reverse=True)


def test_duality_mc_trivial_and_hits():
    r = E.duality_check_mc(0.0, 1.0, 1, 2, 200, permutations=100)
    assert np.all(r.forward == 3) and np.all(r.dual == 7)  # all of A_4 from {-2, 0, 2}
    r = E.duality_check_mc(1.0, 0.5, 1, 2, 200, permutations=100)
    assert np.all(r.forward == 0) and np.all(r.dual == 0) and r.ks_statistic == 0
    r = E.duality_check_mc(0.4, 0.6, 1, 1, 5000, permutations=400, seed=3)
    assert r.exact is not None and abs(r.exact.nonempty_forward - r.exact.nonempty_dual) < 1e-12
    assert r.hit_pvalue > 0.001


def test_rows_have_schema():
    r = E.experiment_eq2(0.3, [0, 1], 16, 200)
    for row in r.rows():
        assert set(row) == {"experiment", "quantity", "params", "x", "estimate", "ci_lo", "ci_hi",
                            "trials", "censored_count"}


def test_eqstr_dual_deficit_decays():
    r = E.experiment_eq_str(0.01, 0.5, 2, 0.8, 0.8, [8, 16, 32], 4000, seed=1)
    d = [rec.dual_deficit for rec in r.records]
    assert d[0] > d[1] > d[2] >= 0
    assert r.dual_fit.status == "ok" and r.dual_fit.gamma > 0
    chern = [rec.chernoff.estimate for rec in r.records]
    assert all(0.4 < c < 0.6 for c in chern)
