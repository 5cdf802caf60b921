import math
from fractions import Fraction

import numpy as np
import pytest
from scipy.special import log_ndtr, ndtr

from tailforge.errors import LatticeModel, ThetaViolated
from tailforge.ldp import (
    LdpQuery,
    berry_esseen_cdf,
    br_asymptote_log,
    br_upper_log,
    envelope_constant_log,
    exact_tail_log,
    is_tail_estimate,
    threshold,
    tilted_weight_mean_log,
)
from tailforge.logmath import LOG_SQRT_2PI


def binomial_tail_fraction(n, k_min, p):
    q = 1 - p
    total = sum(Fraction(math.comb(n, k)) * p**k * q ** (n - k) for k in range(k_min, n + 1))
    return math.log(total.numerator) - math.log(total.denominator)


def test_binomial_oracle_example(lat):
    ref = binomial_tail_fraction(30, 16, Fraction(1, 20))
    got = exact_tail_log(lat, 30, 0.0).log_value
    assert got == pytest.approx(ref, rel=1e-12)


@pytest.mark.parametrize("n,c", [(10, -3.0), (40, -10.0), (100, 5.0), (200, 30.0)])
def test_binomial_oracle_grid(lat, n, c):
    ln2 = math.log(2)
    k_min = next(k for k in range(n + 2) if k == n + 1 or (2 * k - n) * ln2 > c)
    if k_min > n:
        assert exact_tail_log(lat, n, c).log_value == -math.inf
        return
    ref = binomial_tail_fraction(n, k_min, Fraction(1, 20))
    assert exact_tail_log(lat, n, c).log_value == pytest.approx(ref, rel=1e-12)


def test_gaussian_oracle(gau):
    assert exact_tail_log(gau, 100, -200.0).log_value == pytest.approx(math.log(0.5), abs=1e-15)
    for z in (-3.0, 0.5, 7.0, 20.0, 300.0):
        c = -200.0 + 10.0 * z
        assert exact_tail_log(gau, 100, c).log_value == pytest.approx(log_ndtr(-z), rel=1e-10)


def test_minus_infinity_threshold(lat, gau):
    assert exact_tail_log(lat, 5, -math.inf).log_value == 0.0
    assert exact_tail_log(gau, 5, -math.inf).log_value == 0.0


def test_deep_gaussian_tail_representable(gau):
    lp = exact_tail_log(gau, 1, 1400.0).log_value
    z = 1402.0
    assert lp == pytest.approx(-0.5 * z * z - math.log(z) - LOG_SQRT_2PI, rel=1e-9)
    assert lp < -9e5


def test_exact_tail_monotone(lat, lat_profile, gau, gau_profile):
    for model, prof in ((lat, lat_profile), (gau, gau_profile)):
        cs = np.linspace(-20, 20, 41)
        vals = [exact_tail_log(model, 50, c).log_value for c in cs]
        assert all(b <= a for a, b in zip(vals, vals[1:]))
        for d in (0.0, 1.5):
            vals = [exact_tail_log(model, n, prof.drift * n + d).log_value for n in (10, 20, 40, 80)]
            assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))


def test_upper_envelope_examples(gau_profile):
    p = gau_profile
    ref = -(math.log(math.sqrt(2 * math.pi) * p.alpha * 1.0) + p.rho * p.alpha * 2 + math.log(2))
    assert br_upper_log(p, LdpQuery(1, 0.0)) == pytest.approx(ref, abs=1e-12)
    assert br_upper_log(p, LdpQuery(7, 3.0)) - br_upper_log(p, LdpQuery(7, 6.0)) == pytest.approx(
        3.0 * p.alpha, abs=1e-12
    )
    n = 25
    drop = br_upper_log(p, LdpQuery(n)) - br_upper_log(p, LdpQuery(4 * n))
    expect = 3 * p.rho * p.alpha * p.n_children * n + 3 * n * math.log(2) + math.log(2)
    assert drop == pytest.approx(expect, abs=1e-9)


def test_asymptote_identities(gau_profile):
    p = gau_profile
    q = LdpQuery(50, 0.0, theta=1.0)
    assert br_asymptote_log(p, q) == br_upper_log(p, q)
    with pytest.raises(ThetaViolated):
        br_asymptote_log(p, LdpQuery(100, 20.0, theta=1.0))


@pytest.mark.parametrize("scale", [0.0, 1.0])
def test_asymptote_at_400(gau, gau_profile, scale):
    p = gau_profile
    q = LdpQuery(400, scale * p.lam * 20.0, theta=1.0)
    exact = exact_tail_log(gau, q.n, threshold(p, q)).log_value
    assert abs(exact - br_asymptote_log(p, q)) <= 0.05


def test_asymptote_convergence_columns(gau, gau_profile):
    p = gau_profile
    for ratio in (0.0, 0.5, 1.0):
        errs = []
        for n in (100, 400, 1600):
            q = LdpQuery(n, ratio * math.sqrt(n), theta=1.0)
            errs.append(abs(exact_tail_log(gau, n, threshold(p, q)).log_value - br_asymptote_log(p, q)))
        assert errs[0] > errs[1] > errs[2]
        assert errs[2] <= 0.05


def test_gaussian_envelope_constant_stable(gau, gau_profile):
    d = [0.0, 1.0, 5.0, 20.0]
    # the ratio creeps up toward the Mills bound, so one C = 1 covers every n
    per_n = [envelope_constant_log(gau, gau_profile, [n], d) for n in (100, 200, 400, 800, 1600)]
    assert max(per_n) <= 0.0
    steps = np.diff(per_n)
    assert np.all(steps[1:] <= steps[:-1])


def test_lattice_envelope_constant(lat, lat_profile):
    c = envelope_constant_log(lat, lat_profile, range(1, 80))
    a = lat_profile.alpha * 2 * math.log(2)
    assert 0 < c <= math.log(a / (1 - math.exp(-a))) + 0.05


@pytest.mark.parametrize("n", [1, 10, 100, 1000])
def test_tilt_normalization(lat, lat_profile, gau, gau_profile, n):
    assert abs(tilted_weight_mean_log(lat, lat_profile, n)) <= 1e-10
    assert abs(tilted_weight_mean_log(gau, gau_profile, n)) <= 1e-10


def test_is_lattice_example(lat, lat_profile):
    est = is_tail_estimate(lat, lat_profile, 30, 0.0, 100_000, seed=5)
    assert est.within(exact_tail_log(lat, 30, 0.0).log_value, 3.0)
    assert est.hits > 0


def test_is_gaussian_example(gau, gau_profile):
    c = gau_profile.drift * 100
    est = is_tail_estimate(gau, gau_profile, 100, c, 100_000, seed=6)
    assert est.within(exact_tail_log(gau, 100, c).log_value, 3.0)


def test_is_reproducible_across_workers(lat, lat_profile):
    a = is_tail_estimate(lat, lat_profile, 20, 2.0, 50_000, seed=8, workers=1)
    b = is_tail_estimate(lat, lat_profile, 20, 2.0, 50_000, seed=8, workers=3)
    assert a == b


def test_is_zero_hits(lat, lat_profile):
    est = is_tail_estimate(lat, lat_profile, 5, 100.0, 2000, seed=1)
    assert est.log_value == -math.inf and est.zero_hits


def test_is_rejects_tiny_sample(lat, lat_profile):
    with pytest.raises(ValueError):
        is_tail_estimate(lat, lat_profile, 5, 0.0, 10, seed=1)


def test_berry_esseen(gau, gau_profile, lat, lat_profile):
    x = np.linspace(-4, 4, 17)
    for n in (1, 10, 1000):
        assert np.allclose(berry_esseen_cdf(gau_profile, gau, x, n), ndtr(x), atol=1e-15)
    assert berry_esseen_cdf(gau_profile, gau, 0.0, 3) == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(LatticeModel):
        berry_esseen_cdf(lat_profile, lat, 0.0, 3)
