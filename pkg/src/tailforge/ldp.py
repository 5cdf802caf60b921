"""Precise large deviations for the walk ``S_n = sum log|A_i|``.

Exact tail oracles for both shipped families, the Bahadur-Rao envelope and
asymptote, the one-term Berry-Esseen CDF, and an importance-sampling
estimator under the exponential tilt at the Cramer root ``alpha``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from tailforge import rng as rngmod
from tailforge.cramer import CramerProfile
from tailforge.errors import LatticeModel, ThetaViolated, UnsupportedFamily
from tailforge.logmath import (
    LOG_SQRT_2PI,
    LogAccumulator,
    log_binom_pmf,
    log_normal_sf,
    logsumexp,
    normal_cdf,
    normal_pdf,
)
from tailforge.weights import GaussianLogSigned, TwoPointSigned, WeightModel, tilted_sampler

MIN_SAMPLES = 1000


@dataclass(frozen=True)
class LdpQuery:
    n: int
    d: float = 0.0
    theta: float = math.inf

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.d < 0:
            raise ValueError("d must be >= 0")


@dataclass(frozen=True)
class LogProb:
    """Natural log of a probability, with a Monte Carlo error if estimated."""

    log_value: float
    stderr_log: float | None = None
    hits: int | None = None

    @property
    def zero_hits(self) -> bool:
        return self.hits == 0

    def within(self, reference: float, n_se: float = 3.0) -> bool:
        if self.stderr_log is None:
            return self.log_value == reference
        return abs(self.log_value - reference) <= n_se * self.stderr_log


def lattice_values(law: TwoPointSigned, n: int) -> np.ndarray:
    """``S_n`` when ``k`` of the ``n`` steps are high, for ``k = 0..n``."""
    return lattice_path_values(law, np.arange(n + 1, dtype=float), n)


def lattice_path_values(law: TwoPointSigned, k, s):
    """``S_s`` after ``k`` high steps out of ``s``; the one formula every
    lattice computation uses, so comparisons never disagree by roundoff."""
    return k * math.log(law.u) + (s - k) * math.log(law.v)


def exact_tail_log(model: WeightModel, n: int, c: float, inclusive: bool = False) -> LogProb:
    """log P[S_n > c] (or ``>=`` with ``inclusive``), exact."""
    if c == -math.inf:
        return LogProb(0.0)
    law = model.a_law
    if isinstance(law, TwoPointSigned):
        vals = lattice_values(law, n)
        keep = vals >= c if inclusive else vals > c
        if not keep.any():
            return LogProb(-math.inf)
        k = np.nonzero(keep)[0]
        return LogProb(logsumexp(log_binom_pmf(n, k, law.p_hi)))
    if isinstance(law, GaussianLogSigned):
        z = (c - n * law.mu0) / (law.sigma0 * math.sqrt(n))
        return LogProb(log_normal_sf(z))
    raise UnsupportedFamily(type(law).__name__)


def br_upper_log(profile: CramerProfile, q: LdpQuery) -> float:
    """log of the envelope ``1/(sqrt(2 pi) a l sqrt(n) e^{rho a n N} N^n e^{a d})``."""
    a, lam, n = profile.alpha, profile.lam, q.n
    return -(
        LOG_SQRT_2PI
        + math.log(a * lam)
        + 0.5 * math.log(n)
        + profile.rho * a * n * profile.n_children
        + n * profile.log_n
        + a * q.d
    )


def br_asymptote_log(profile: CramerProfile, q: LdpQuery) -> float:
    """Sharp prediction for log P[S_n > rho n N + d], valid for d/sqrt(n) <= theta."""
    if q.d / math.sqrt(q.n) > q.theta:
        raise ThetaViolated(f"d/sqrt(n) = {q.d / math.sqrt(q.n):.6g} exceeds theta = {q.theta}")
    return br_upper_log(profile, q) - q.d * q.d / (2.0 * profile.lam**2 * q.n)


def threshold(profile: CramerProfile, q: LdpQuery) -> float:
    """The level ``rho n N + d`` for a query."""
    return profile.drift * q.n + q.d


def envelope_constant_log(model: WeightModel, profile: CramerProfile, n_values, d_values=None) -> float:
    """Smallest ``log C`` making ``exact <= br_upper + log C`` on a grid.

    For the lattice family the supremum over all ``d >= 0`` is taken exactly
    (it sits just below lattice points); otherwise ``d_values`` is used.
    """
    best = -math.inf
    law = model.a_law
    for n in n_values:
        base = br_upper_log(profile, LdpQuery(n, 0.0))
        mu = profile.drift * n
        if isinstance(law, TwoPointSigned):
            vals = lattice_values(law, n)
            cands = [0.0] + [float(v - mu) for v in vals if v > mu]
            for d in cands:
                lp = exact_tail_log(model, n, mu + d, inclusive=d > 0).log_value
                best = max(best, lp - base + profile.alpha * d)
        else:
            for d in d_values if d_values is not None else (0.0,):
                lp = exact_tail_log(model, n, mu + d).log_value
                best = max(best, lp - base + profile.alpha * d)
    return best


def _is_block(args):
    model, alpha, params, n, c, seed, key, idx, size, indicator = args
    gen = rngmod.stream(seed, *key, idx)
    law = model.a_law
    s = np.zeros(size)
    lattice = isinstance(law, TwoPointSigned)
    if lattice:
        # integer step counts keep S_s bit-identical to the exact oracles
        k = np.zeros(size)
    extra = None if indicator is None else indicator.start(size)
    for step in range(1, n + 1):
        if lattice:
            k += gen.random(size) < params["p_hi"]
            s = lattice_path_values(law, k, step)
        else:
            s += law.sample_log_magnitude_tilted(gen, size, params)
        if extra is not None:
            extra = indicator.update(extra, s, step)
    log_w = -n * math.log(model.n_children) - alpha * s
    hit = s > c if c > -math.inf else np.ones(size, dtype=bool)
    if extra is not None:
        hit &= indicator.finish(extra, s)
    acc = LogAccumulator()
    acc.add(log_w[hit])
    return acc


def tilted_path_estimate(
    model: WeightModel,
    profile: CramerProfile,
    n: int,
    c: float,
    samples: int,
    seed: int,
    key=("ldp.is",),
    indicator=None,
    workers=1,
) -> LogProb:
    """Shared engine for tilted-path estimators; ``indicator`` adds path constraints."""
    if samples < MIN_SAMPLES:
        raise ValueError(f"samples must be >= {MIN_SAMPLES}")
    sampler = tilted_sampler(model, profile.alpha)
    jobs = [
        (model, profile.alpha, sampler.params, n, c, seed, tuple(key) + (n,), idx, size, indicator)
        for idx, size in rngmod.blocks(samples)
    ]
    total = LogAccumulator()
    for acc in rngmod.parallel_map(_is_block, jobs, workers):
        total.merge(acc)
    log_value, se = total.result(samples)
    return LogProb(log_value, se, total.hits)


def is_tail_estimate(
    model: WeightModel, profile: CramerProfile, n: int, c: float, samples: int, seed: int, workers=1
) -> LogProb:
    """Unbiased estimate of P[S_n > c] from paths drawn under the tilt.

    Each path carries weight ``N^{-n} e^{-alpha S_n}``.  With no hits the
    result is ``-inf`` with ``hits == 0`` rather than an exception.
    """
    return tilted_path_estimate(model, profile, n, c, samples, seed, ("ldp.is",), None, workers)


def tilted_weight_mean_log(model: WeightModel, profile: CramerProfile, n: int) -> float:
    """log E_tilt[N^{-n} e^{-alpha S_n}] evaluated without sampling.

    Lattice family: enumerate the tilted binomial law of ``S_n``.
    Otherwise: quadrature of the one-step weight, raised to the n-th power.
    """
    sampler = tilted_sampler(model, profile.alpha)
    law = model.a_law
    if isinstance(law, TwoPointSigned):
        vals = lattice_values(law, n)
        k = np.arange(n + 1)
        terms = log_binom_pmf(n, k, sampler.params["p_hi"]) - n * profile.log_n - profile.alpha * vals
        return logsumexp(terms)
    return n * math.log(sampler.weight_mean())


def third_moment_tilted(model: WeightModel, profile: CramerProfile) -> float:
    """m3 = E_tilt[Y^3] with Y = (X - N rho) / lambda."""
    return model.a_law.tilted_standardized_third(profile.alpha)


def berry_esseen_cdf(profile: CramerProfile, model: WeightModel, x, n: int):
    """Phi(x) + m3 / (6 sqrt n) (1 - x^2) phi(x) for nonlattice models."""
    if model.is_lattice:
        raise LatticeModel("Berry-Esseen expansion needs a nonlattice log|A|")
    if n < 1:
        raise ValueError("n must be >= 1")
    m3 = third_moment_tilted(model, profile)
    x = np.asarray(x, dtype=float)
    out = normal_cdf(x) + m3 / (6.0 * math.sqrt(n)) * (1.0 - x * x) * normal_pdf(x)
    return float(out) if out.ndim == 0 else out
