import math

import numpy as np
import pytest

from tailforge.certificate import (
    CertificateConfig,
    big_d,
    certify,
    first_order_sum,
    log_p0,
    pair_probability,
    pair_terms,
    pairwise_bound_log,
    pairwise_exact,
    s1_log,
    s2_log,
    sparse_tree_levels,
    union_probability,
    w_event_bound,
    w_event_d0,
)
from tailforge.cramer import compute_profile
from tailforge.errors import EmptyWindow
from tailforge.fixedpoint import simulate
from tailforge.pathevents import EventSpec, vn_exact_log
from tailforge.weights import ConstantB, TwoPointSigned, WeightModel

LN2 = math.log(2.0)

# (log t, C1, log C0) on trees with n0 <= 12
MINIATURES = [(2.5, 2, 0.0), (2.5, 3, math.log(1.5)), (3.5, 2, 0.0), (4.0, 2, 0.0), (4.0, 2, math.log(1.5)), (4.0, 3, math.log(1.5))]


def mc_union(model, log_t, log_C0, delta, levels, C1, trees, seed):
    """Simulate whole trees and test every sparse vertex directly."""
    law, N = model.a_law, model.n_children
    gen = np.random.default_rng(seed)
    c = log_t + log_C0
    s = np.zeros((trees, 1))
    ok = {n: np.full((trees, 1), 0.0 <= c - n * delta) for n in levels}
    trail = np.zeros((trees, 1), int)
    hit = np.zeros(trees, bool)
    for j in range(1, max(levels) + 1):
        step = np.where(gen.random((trees, s.shape[1] * N)) < law.p_hi, math.log(law.u), math.log(law.v))
        s = np.repeat(s, N, axis=1) + step
        first = np.tile(np.arange(N) == 0, s.shape[1] // N)
        trail = np.where(first, np.repeat(trail, N, axis=1) + 1, 0)
        for n in levels:
            ok[n] = np.repeat(ok[n], N, axis=1)
            if j < n:
                ok[n] &= s <= c - (n - j) * delta
            elif j == n:
                hit |= np.any(ok[n] & (s >= log_t) & (trail >= C1), axis=1)
    return hit.mean()


def test_level_example(lat_profile):
    levels = sparse_tree_levels(lat_profile, 20.0, 4)
    assert [n for n, _ in levels] == [52, 56]
    assert [lc for _, lc in levels] == pytest.approx([48 * LN2, 52 * LN2], abs=1e-12)


def test_empty_window(lat_profile):
    with pytest.raises(EmptyWindow):
        sparse_tree_levels(lat_profile, 0.5, 2)
    with pytest.raises(EmptyWindow):
        sparse_tree_levels(lat_profile, 20.0, 60)


def test_p0():
    assert log_p0(math.inf, 1.0) == -1.0
    assert log_p0(200.0, 0.5) == pytest.approx(-1.0, abs=1e-15)
    x = 0.3
    assert log_p0(x, 1.0) == pytest.approx(-1.0 / (1.0 - math.exp(-x)), rel=1e-14)


@pytest.mark.parametrize("x", [0.01, 0.05, 0.2, 1.0, 3.0])
def test_p0_dominated_by_product(x):
    # with P[|X| > d e^{k delta0}] <= e^{-k delta0 eps} / 3 for every k
    k = np.arange(1, 200_000)
    log_prod = np.sum(np.log1p(-np.exp(-k * x) / 3.0))
    assert log_prod >= log_p0(x, 1.0)


def test_p0_exact_pareto():
    # X Pareto(1): P[X > y] = 1/y, E X^eps = 1/(1-eps)
    eps, delta0 = 0.5, 0.05
    d = (3.0 / (1.0 - eps)) ** (1.0 / eps)
    k = np.arange(1, 100_000)
    log_prod = np.sum(np.log1p(-np.exp(-k * delta0) / d))
    assert log_prod >= log_p0(delta0, eps)


def test_big_d():
    assert big_d(2, 2.0, 0.2) == pytest.approx(10.0 / (1.0 - math.exp(-0.1)), rel=1e-14)
    assert big_d(2, 2.0, 0.2) == pytest.approx(105.083, abs=1e-3)
    assert big_d(2, 1.0, 1e4) == pytest.approx(3.0, rel=1e-12)
    assert big_d(2, 1.0, 1e-320) == math.inf
    with pytest.raises(ValueError):
        big_d(2, 0.0, 1.0)


def test_pairwise_bound_formula(lat_profile):
    p = lat_profile
    got = pairwise_bound_log(p, -30.0, 50, 46, 40, 0.5)
    b = p.alpha * 0.5 - p.alpha * p.delta * 10 - 6 * LN2
    assert got == pytest.approx(-30.0 + b, abs=1e-12)
    assert pairwise_bound_log(p, -30.0, 50, 50, 50, 2.0) == -30.0
    with pytest.raises(ValueError):
        pairwise_bound_log(p, -30.0, 50, 46, 47, 0.0)


def test_pair_counts_sum_to_all_partners():
    # every other sparse vertex at level <= n appears exactly once
    C1, N = 3, 2
    levels = [6, 9, 12]
    for n in levels:
        total = 0.0
        for n1, n2, _, lc in pair_terms(levels, C1, N):
            if n1 == n:
                total += math.exp(lc)
        expect = sum(N ** (n2 - C1) for n2 in levels if n2 < n) + N ** (n - C1) - 1
        assert total == pytest.approx(expect, rel=1e-12)


@pytest.mark.parametrize("log_t,C1,log_C0", MINIATURES)
def test_pairwise_bound_per_term(lat, lat_profile, log_t, C1, log_C0):
    p = lat_profile
    levels = [n for n, _ in sparse_tree_levels(p, log_t, C1)]
    for n, n2, s, _ in pair_terms(levels, C1, 2):
        lp = vn_exact_log(lat, p, EventSpec(log_t, log_C0, p.delta, n))
        exact = pair_probability(lat, log_t, log_C0, p.delta, n, n2, s)
        if lp == -math.inf:
            assert exact == 0.0
            continue
        assert exact <= math.exp(pairwise_bound_log(p, lp, n, n2, s, log_C0)) * (1 + 1e-12)


@pytest.mark.parametrize("log_t,C1,log_C0", MINIATURES)
def test_miniature_inclusion_exclusion(lat, lat_profile, log_t, C1, log_C0):
    p = lat_profile
    counts = sparse_tree_levels(p, log_t, C1)
    levels = [n for n, _ in counts]
    u = union_probability(lat, log_t, log_C0, p.delta, levels, C1)
    pv = {n: vn_exact_log(lat, p, EventSpec(log_t, log_C0, p.delta, n)) for n in levels}
    s1 = math.exp(s1_log(counts, pv))
    assert s1 == pytest.approx(first_order_sum(lat, log_t, log_C0, p.delta, levels, C1), rel=1e-12)
    s2 = math.exp(s2_log(p, counts, pv, log_C0, C1))
    p2 = pairwise_exact(lat, log_t, log_C0, p.delta, levels, C1)
    assert s1 - s2 <= u <= s1 * (1 + 1e-12)
    assert s1 - p2 <= u * (1 + 1e-12)
    assert p2 <= s2


@pytest.mark.parametrize(
    "cfg", [(1.0, 0.5, 0.05, [2, 4], 2), (0.5, 0.3, 0.1, [2, 4, 6], 2), (1.2, 0.0, 0.05, [3, 6], 3)]
)
def test_union_recursion_against_simulated_trees(cfg):
    model = WeightModel(TwoPointSigned(2.0, 0.5, 0.3), ConstantB(1.0), 2)
    u = union_probability(model, *cfg)
    trees = 200_000
    est = mc_union(model, *cfg, trees, seed=11)
    assert abs(est - u) < 4 * math.sqrt(u * (1 - u) / trees)


def test_w_event_d0(lat, lat_pool):
    eps = 0.5
    d0 = w_event_d0(lat, lat_pool, eps)
    ra = np.mean(np.abs(lat_pool.values) ** eps)
    assert d0 == pytest.approx((3 * max(ra, lat.a_law.abs_moment(eps), 1.0)) ** (1 / eps) * (1 + 1e-6), rel=1e-12)
    with pytest.raises(ValueError):
        w_event_bound(lat, compute_profile(lat), lat_pool, 0.1, 0.025, eps, d=d0 / 2)


def test_canonical_certificate(lat, lat_profile, lat_pool):
    rep = certify(lat, lat_profile, lat_pool, CertificateConfig(20.0))
    assert rep.passed, rep.reason
    assert rep.s2_log <= rep.s1_log - LN2
    assert math.isfinite(rep.eta_log)
    assert rep.C0 == 1.0 and all(n % 2 == 1 for n, _, _ in rep.levels)
    w = rep.w_event
    assert rep.p_w_log == pytest.approx(2 * w.log_p0_side + w.log_p0_b + min(t.log_lower for t in w.tails))
    expect = rep.p_w_log + rep.s1_log + math.log1p(-math.exp(rep.s2_log - rep.s1_log)) + rep.alpha * 20.0
    assert rep.eta_log == pytest.approx(expect, abs=1e-9)
    assert "P[R < -x*t]" in rep.claim
    d = rep.to_dict()
    assert d["passed"] and d["ladder"][-1]["ok"]


def test_spacing_two_fails(lat, lat_profile, lat_pool):
    rep = certify(lat, lat_profile, lat_pool, CertificateConfig(20.0, C1=2))
    assert not rep.passed
    assert math.isfinite(rep.s1_log) and rep.s2_log > rep.s1_log - LN2
    assert "increase C1" in rep.reason


@pytest.mark.parametrize("factor", [0.9, 1.1])
def test_nearby_t(lat, lat_profile, lat_pool, factor):
    rep = certify(lat, lat_profile, lat_pool, CertificateConfig(20.0 + math.log(factor)))
    assert rep.passed, rep.reason


def test_positive_weights_upper_only():
    model = WeightModel(TwoPointSigned(2.0, 0.25, 0.1, sign_prob=1.0), ConstantB(1.0), 2)
    prof = compute_profile(model)
    pool, _ = simulate(model, 100_000, 5)
    rep = certify(model, prof, pool, CertificateConfig(20.0))
    assert rep.passed and rep.upper_only
    assert len(rep.w_event.tails) == 1
    assert "P[R < -x*t]" not in rep.claim


def test_config_validation():
    with pytest.raises(ValueError):
        CertificateConfig(20.0, C1=1)
    with pytest.raises(ValueError):
        CertificateConfig(20.0, C0=2.0)
    with pytest.raises(ValueError):
        CertificateConfig(0.0)
    assert CertificateConfig.from_t(math.e**3).log_t == pytest.approx(3.0)
