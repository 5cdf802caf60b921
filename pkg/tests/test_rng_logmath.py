import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats

from tailforge import rng
from tailforge.logmath import (
    LogAccumulator,
    asymptotic_truncation_bound,
    log_binom_pmf,
    log_normal_sf,
    logsumexp,
    wilson_interval,
)


def test_stream_is_reproducible_and_keyed():
    a = rng.stream(7, "x", 3).random(5)
    b = rng.stream(7, "x", 3).random(5)
    c = rng.stream(7, "x", 4).random(5)
    d = rng.stream(8, "x", 3).random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_blocks_cover_total():
    bl = rng.blocks(200_001)
    assert sum(size for _, size in bl) == 200_001
    assert [i for i, _ in bl] == list(range(len(bl)))
    assert rng.blocks(0) == []


def test_parallel_map_keeps_order():
    assert rng.parallel_map(lambda x: x * x, range(20), workers=4) == [x * x for x in range(20)]


def test_resolve_workers():
    assert rng.resolve_workers(3) == 3
    assert rng.resolve_workers("auto") >= 1
    with pytest.raises(ValueError):
        rng.resolve_workers(0)


@given(st.lists(st.floats(-700, 700), min_size=1, max_size=50))
def test_logsumexp_matches_scipy(xs):
    assert logsumexp(xs) == pytest.approx(float(special.logsumexp(xs)), rel=1e-12, abs=1e-12)


def test_logsumexp_edge_cases():
    assert logsumexp([]) == -math.inf
    assert logsumexp([-math.inf, -math.inf]) == -math.inf
    assert logsumexp([-1e6, -1e6]) == pytest.approx(-1e6 + math.log(2), abs=1e-9)


def test_log_binom_pmf_sums_to_one():
    lp = log_binom_pmf(50, np.arange(51), 0.3)
    assert logsumexp(lp) == pytest.approx(0.0, abs=1e-13)
    assert np.allclose(lp, stats.binom.logpmf(np.arange(51), 50, 0.3), atol=1e-11)


@pytest.mark.parametrize("z", [-5.0, -1.0, 0.0, 0.5, 3.0, 7.9, 8.1, 12.0, 40.0, 300.0])
def test_log_normal_sf_against_log_ndtr(z):
    assert log_normal_sf(z) == pytest.approx(float(special.log_ndtr(-z)), rel=1e-12, abs=1e-13)


def test_log_normal_sf_deep_tail():
    # probabilities near exp(-1e6) stay representable
    z = math.sqrt(2e6)
    v = log_normal_sf(z)
    assert v == pytest.approx(-z * z / 2 - math.log(z) - 0.5 * math.log(2 * math.pi), abs=1e-6)
    assert asymptotic_truncation_bound(z) < 1e-12


def test_wilson_interval():
    lo, hi = wilson_interval(0, 100)
    assert lo == 0.0 and 0 < hi < 0.05
    lo, hi = wilson_interval(50, 100)
    assert lo < 0.5 < hi
    assert (lo, hi) == pytest.approx((0.4038, 0.5962), abs=1e-4)


@settings(max_examples=30)
@given(st.integers(1, 5), st.integers(0, 2**31))
def test_accumulator_merge_equals_single_pass(parts, seed):
    g = np.random.default_rng(seed)
    chunks = [g.normal(-50, 3, size=g.integers(1, 40)) for _ in range(parts)]
    whole = LogAccumulator()
    whole.add(np.concatenate(chunks))
    split = LogAccumulator()
    for c in chunks:
        acc = LogAccumulator()
        acc.add(c)
        split.merge(acc)
    total = 1000
    a, sa = whole.result(total)
    b, sb = split.result(total)
    assert a == pytest.approx(b, abs=1e-10)
    assert sa == pytest.approx(sb, rel=1e-8)


def test_accumulator_without_hits():
    acc = LogAccumulator()
    acc.add(np.array([]))
    assert acc.result(10) == (-math.inf, None)
