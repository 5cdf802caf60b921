"""Log-domain numerics shared by the oracles and the estimators."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erfc, gammaln

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_ASYMPTOTIC_Z = 8.0


def logsumexp(values) -> float:
    """Compensated log-sum-exp: the largest term is factored out and the
    remainder summed with :func:`math.fsum`."""
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        return -math.inf
    top = float(np.max(arr))
    if top == -math.inf:
        return -math.inf
    if top == math.inf:
        return math.inf
    return top + math.log(math.fsum(np.exp(arr - top).tolist()))


def log_binom_pmf(n: int, k, p: float) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    out = gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0)
    with np.errstate(divide="ignore"):
        out = out + k * math.log(p) + (n - k) * math.log1p(-p)
    return out


def _log_sf_asymptotic(z: float) -> tuple[float, float]:
    # Q(z) = phi(z)/z * sum_k (-1)^k (2k-1)!! / z^(2k); the remainder is
    # bounded by the first omitted term.
    z2 = z * z
    total = 1.0
    term = 1.0
    k = 1
    while True:
        nxt = -term * (2 * k - 1) / z2
        if abs(nxt) >= abs(term) or abs(nxt) < 1e-18:
            bound = abs(nxt)
            break
        total += nxt
        term = nxt
        k += 1
    return -0.5 * z2 - math.log(z) - LOG_SQRT_2PI + math.log(total), bound


def log_normal_sf(z: float) -> float:
    """log P[Z > z] for a standard normal Z, accurate far into the tail."""
    z = float(z)
    if z == math.inf:
        return -math.inf
    if z == -math.inf:
        return 0.0
    if z > _ASYMPTOTIC_Z:
        return _log_sf_asymptotic(z)[0]
    if z < 0.0:
        return math.log1p(-0.5 * float(erfc(-z / math.sqrt(2.0))))
    return math.log(0.5 * float(erfc(z / math.sqrt(2.0))))


def asymptotic_truncation_bound(z: float) -> float:
    """Relative truncation error bound of the tail series used for z > 8."""
    return _log_sf_asymptotic(z)[1]


def normal_pdf(x):
    return np.exp(-0.5 * np.square(x) - LOG_SQRT_2PI)


def normal_cdf(x):
    return 0.5 * erfc(-np.asarray(x, dtype=float) / math.sqrt(2.0))


def wilson_interval(successes: int, trials: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    phat = successes / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    centre = (phat + z2 / (2 * trials)) / denom
    half = z * math.sqrt(phat * (1 - phat) / trials + z2 / (4 * trials * trials)) / denom
    lo = max(0.0, centre - half)
    hi = min(1.0, centre + half)
    if successes == 0:
        lo = 0.0
    return lo, hi


def log_mean_and_stderr(log_w: np.ndarray, total: int) -> tuple[float, float | None]:
    """Mean of ``exp(log_w)`` padded with zeros to ``total`` entries.

    Returns ``(log mean, delta-method stderr of the log mean)``.
    """
    acc = LogAccumulator()
    acc.add(log_w)
    return acc.result(total)


class LogAccumulator:
    """Streaming sums of w and w**2 kept relative to a running maximum."""

    def __init__(self):
        self.shift = -math.inf
        self.s1 = 0.0
        self.s2 = 0.0
        self.hits = 0

    def add(self, log_w) -> None:
        log_w = np.asarray(log_w, dtype=float)
        log_w = log_w[np.isfinite(log_w)]
        if log_w.size == 0:
            return
        top = float(log_w.max())
        if top > self.shift:
            if self.shift > -math.inf:
                scale = math.exp(self.shift - top)
                self.s1 *= scale
                self.s2 *= scale * scale
            self.shift = top
        e = np.exp(log_w - self.shift)
        self.s1 += math.fsum(e.tolist())
        self.s2 += math.fsum((e * e).tolist())
        self.hits += int(log_w.size)

    def merge(self, other: "LogAccumulator") -> None:
        if other.hits == 0:
            return
        if other.shift > self.shift:
            if self.shift > -math.inf:
                scale = math.exp(self.shift - other.shift)
                self.s1 *= scale
                self.s2 *= scale * scale
            self.shift = other.shift
            self.s1 += other.s1
            self.s2 += other.s2
        else:
            scale = math.exp(other.shift - self.shift)
            self.s1 += other.s1 * scale
            self.s2 += other.s2 * scale * scale
        self.hits += other.hits

    def result(self, total: int) -> tuple[float, float | None]:
        if self.hits == 0:
            return -math.inf, None
        mean = self.s1 / total
        var = max(self.s2 / total - mean * mean, 0.0) * total / max(total - 1, 1)
        se = math.sqrt(var / total)
        return self.shift + math.log(mean), se / mean
