"""Barrier events of the multiplicative walk.

``V_n = {S_n >= log t} and {S_s <= log(C0 t) - (n - s) delta for 0 <= s < n}``

Exact lattice dynamic programming with a brute-force enumeration oracle,
tilted importance sampling, the Chebyshev crossing bound, the assembled
union bound for ``P[U_n] - P[V_n]``, and the band check for the two-sided
``1/(sqrt(n) t^alpha N^n)`` estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from tailforge.cramer import CramerProfile, n0_from_log
from tailforge.errors import UnsupportedFamily
from tailforge.ldp import (
    LdpQuery,
    LogProb,
    br_upper_log,
    envelope_constant_log,
    exact_tail_log,
    lattice_path_values,
    tilted_path_estimate,
)
from tailforge.logmath import logsumexp
from tailforge.weights import TwoPointSigned, WeightModel

ENUMERATION_MAX_N = 20


@dataclass(frozen=True)
class EventSpec:
    log_t: float
    log_C0: float
    delta: float
    n: int

    def __post_init__(self):
        if not self.log_t > 0:
            raise ValueError("t must exceed 1")
        if not self.log_C0 >= 0:
            raise ValueError("C0 must be >= 1")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.n < 1:
            raise ValueError("n must be >= 1")

    @classmethod
    def from_values(cls, t: float, C0: float, delta: float, n: int) -> "EventSpec":
        return cls(math.log(t), math.log(C0), delta, n)

    def barrier(self, s):
        """Ceiling for ``S_s``; identical arithmetic in every code path."""
        return (self.log_C0 + self.log_t) - (self.n - s) * self.delta


def _lattice(model: WeightModel) -> TwoPointSigned:
    if not isinstance(model.a_law, TwoPointSigned):
        raise UnsupportedFamily(
            f"exact path oracle needs the lattice family, got {model.family}; use vn_is_estimate"
        )
    return model.a_law


def vn_exact_log(model: WeightModel, profile: CramerProfile | None, spec: EventSpec) -> float:
    """log P[V_n] by dynamic programming over (step, number of high steps)."""
    law = _lattice(model)
    if not 0.0 <= spec.barrier(0):
        return -math.inf
    lp_hi = math.log(law.p_hi)
    lp_lo = math.log1p(-law.p_hi)
    state = np.zeros(1)
    for s in range(1, spec.n + 1):
        nxt = np.full(s + 1, -math.inf)
        nxt[:-1] = state + lp_lo
        nxt[1:] = np.logaddexp(nxt[1:], state + lp_hi)
        vals = lattice_path_values(law, np.arange(s + 1, dtype=float), s)
        if s < spec.n:
            nxt[vals > spec.barrier(s)] = -math.inf
        else:
            nxt[vals < spec.log_t] = -math.inf
        state = nxt
        if not np.isfinite(state).any():
            return -math.inf
    # V_n is a subset of U_n; the clamp only removes last-ulp summation order noise
    return min(logsumexp(state), exact_tail_log(model, spec.n, spec.log_t, inclusive=True).log_value)


def vn_enumerate_log(model: WeightModel, spec: EventSpec) -> float:
    """log P[V_n] by listing all ``2^n`` step sequences (n <= 20)."""
    law = _lattice(model)
    n = spec.n
    if n > ENUMERATION_MAX_N:
        raise ValueError(f"enumeration limited to n <= {ENUMERATION_MAX_N}")
    if not 0.0 <= spec.barrier(0):
        return -math.inf
    codes = np.arange(1 << n, dtype=np.int64)
    bits = (codes[:, None] >> np.arange(n)) & 1
    k = np.cumsum(bits, axis=1).astype(float)
    ok = np.ones(codes.size, dtype=bool)
    for s in range(1, n):
        ok &= lattice_path_values(law, k[:, s - 1], s) <= spec.barrier(s)
    ok &= lattice_path_values(law, k[:, n - 1], n) >= spec.log_t
    if not ok.any():
        return -math.inf
    kn = k[ok, n - 1]
    return logsumexp(kn * math.log(law.p_hi) + (n - kn) * math.log1p(-law.p_hi))


class _BarrierIndicator:
    def __init__(self, spec: EventSpec, full: bool = True):
        self.spec = spec
        self.full = full

    def start(self, size):
        return np.full(size, self.spec.barrier(0) >= 0.0)

    def update(self, alive, s, step):
        if self.full and step < self.spec.n:
            alive &= s <= self.spec.barrier(step)
        return alive

    def finish(self, alive, s):
        return alive & (s >= self.spec.log_t)


def vn_is_estimate(
    model: WeightModel,
    profile: CramerProfile,
    spec: EventSpec,
    samples: int,
    seed: int,
    event: str = "V",
    workers=1,
) -> LogProb:
    """Tilted estimate of P[V_n]; ``event="U"`` drops the barrier (strict ``S_n > log t``)."""
    if event == "U":
        return tilted_path_estimate(
            model, profile, spec.n, spec.log_t, samples, seed, ("pe.U",), None, workers
        )
    if event != "V":
        raise ValueError("event must be 'V' or 'U'")
    return tilted_path_estimate(
        model, profile, spec.n, -math.inf, samples, seed, ("pe.V",), _BarrierIndicator(spec), workers
    )


def chebyshev_crossing_log(profile: CramerProfile, log_x, length: int):
    """log of ``x^{-beta} (E|A|^beta)^length`` bounding P[|A_1...A_length| > x]."""
    return -profile.beta * np.asarray(log_x, dtype=float) + length * profile.log_moment_beta


def split_constant(profile: CramerProfile) -> int:
    """D with gamma1 * D >= 3/2 (rounded up)."""
    return math.ceil(1.5 / profile.gamma1)


def union_bound_log(
    model: WeightModel, profile: CramerProfile, spec: EventSpec, c_env_log: float
) -> float:
    """Upper bound on log(P[S_n >= log t] - P[V_n]) assembled from crossings.

    Each ``P[U_n and S_s > barrier(s)]`` is cut into unit slabs of ``S_s``.
    The first factor uses the alpha-Chebyshev bound for ``s < n - D log n``
    and the Bahadur-Rao envelope (times ``e^{c_env_log}``) above the split;
    the second factor is the beta-Chebyshev crossing bound.
    """
    a, b, n = profile.alpha, profile.beta, spec.n
    log_n = profile.log_n
    split = n - split_constant(profile) * math.log(n)
    terms = []
    if spec.barrier(0) < 0.0:
        terms.append(min(0.0, -a * spec.log_t - n * log_n))
    gap = a - b
    m_max = int(math.ceil(80.0 / gap)) + 1
    m = np.arange(m_max, dtype=float)
    for s in range(1, n):
        level = spec.barrier(s) + m
        cheb_a = -a * level - s * log_n
        if s < split:
            first = cheb_a
        else:
            d = level - profile.drift * s
            env = np.array(
                [c_env_log + br_upper_log(profile, LdpQuery(s, float(x))) if x >= 0 else math.inf for x in d]
            )
            first = np.minimum(cheb_a, env)
        first = np.minimum(first, 0.0)
        second = np.minimum(chebyshev_crossing_log(profile, spec.log_t - level - 1.0, n - s), 0.0)
        t = first + second
        # geometric remainder beyond m_max: ratio e^{-(alpha-beta)} once unclipped
        tail = t[-1] - gap - math.log1p(-math.exp(-gap))
        terms.append(logsumexp(np.append(t, tail)))
    return logsumexp(terms)


def default_c0_log(profile: CramerProfile, c_env_log: float, eps: float = 0.5) -> float:
    """Smallest integer k >= 0 with ``C / e^{k (alpha - beta)} < eps``, returned as log C0 = k."""
    gap = profile.alpha - profile.beta
    log_c = c_env_log + profile.beta - math.log1p(-math.exp(-gap))
    k = max(0, math.floor((log_c - math.log(eps)) / gap) + 1)
    return float(k)


def n_window(profile: CramerProfile, log_t: float) -> list[int]:
    """All n with n0 - sqrt(n0) <= n <= n0."""
    n_0 = n0_from_log(profile, log_t)
    lo = max(1, math.ceil(n_0 - math.sqrt(n_0)))
    return list(range(lo, n_0 + 1))


@dataclass
class SandwichRow:
    log_t: float
    n: int
    n0: int
    log_p: float
    r: float
    stderr: float | None = None


@dataclass
class SandwichReport:
    rows: list[SandwichRow]
    log_C0: float
    delta: float
    method: str
    r_min: float = field(init=False)
    r_max: float = field(init=False)

    def __post_init__(self):
        rs = [row.r for row in self.rows if math.isfinite(row.r)]
        self.r_min = min(rs) if rs else -math.inf
        self.r_max = max(rs) if rs else -math.inf

    @property
    def infeasible(self) -> list[tuple[float, int]]:
        """(log t, n) cells where V_n is empty (lattice parity or barrier)."""
        return [(row.log_t, row.n) for row in self.rows if not math.isfinite(row.r)]

    @property
    def band_width(self) -> float:
        """Spread of r over the cells where V_n is nonempty."""
        if not math.isfinite(self.r_min):
            return math.inf
        return self.r_max - self.r_min

    @property
    def all_finite(self) -> bool:
        return all(math.isfinite(row.r) for row in self.rows)

    def per_t_means(self) -> list[tuple[float, float]]:
        out = {}
        for row in self.rows:
            if not math.isfinite(row.r):
                continue
            out.setdefault(row.log_t, []).append(row.r)
        return [(lt, float(np.mean(v))) for lt, v in sorted(out.items())]

    @property
    def monotone_drift(self) -> bool:
        """True when the per-t mean of r moves strictly one way across >= 3 values of t."""
        means = [v for _, v in self.per_t_means()]
        if len(means) < 3:
            return False
        diffs = np.diff(means)
        return bool(np.all(diffs > 0) or np.all(diffs < 0))

    def to_dict(self) -> dict:
        return {
            "log_C0": self.log_C0,
            "delta": self.delta,
            "method": self.method,
            "r_min": self.r_min,
            "r_max": self.r_max,
            "band_width": self.band_width,
            "infeasible": [list(c) for c in self.infeasible],
            "monotone_drift": self.monotone_drift,
            "rows": [row.__dict__ for row in self.rows],
        }


def scaled_log(profile: CramerProfile, log_p: float, log_t: float, n: int) -> float:
    """r = log P + 0.5 log n + alpha log t + n log N."""
    return log_p + 0.5 * math.log(n) + profile.alpha * log_t + n * profile.log_n


def vn_sandwich_report(
    model: WeightModel,
    profile: CramerProfile,
    log_t_grid,
    log_C0: float,
    delta: float,
    samples: int = 100_000,
    seed: int = 0,
    workers=1,
) -> SandwichReport:
    rows = []
    lattice = model.is_lattice
    for log_t in log_t_grid:
        n_0 = n0_from_log(profile, log_t)
        for n in n_window(profile, log_t):
            spec = EventSpec(log_t, log_C0, delta, n)
            if lattice:
                lp, se = vn_exact_log(model, profile, spec), None
            else:
                est = vn_is_estimate(model, profile, spec, samples, seed, workers=workers)
                lp, se = est.log_value, est.stderr_log
            rows.append(SandwichRow(log_t, n, n_0, lp, scaled_log(profile, lp, log_t, n), se))
    return SandwichReport(rows, log_C0, delta, "dp" if lattice else "is")


def default_event_constants(model: WeightModel, profile: CramerProfile, n_max: int) -> tuple[float, float]:
    """``(c_env_log, log_C0)`` used when a run does not pin C0."""
    if model.is_lattice:
        c_env = envelope_constant_log(model, profile, range(1, n_max + 1))
    else:
        # Mills ratio: the Gaussian tail never exceeds the envelope
        c_env = 0.0
    return c_env, default_c0_log(profile, c_env)
