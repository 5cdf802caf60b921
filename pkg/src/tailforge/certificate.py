"""Finite-t positivity certificate for the tail of R.

Along a sparse set of tree vertices (levels ``k*C1`` in the window
``(n0 - sqrt(n0), n0)``, every vertex ending in a fixed word of length C1),
the barrier events V_gamma are combined by inclusion-exclusion.  Together
with the side-branch control events W_gamma this yields

    P[R > (2 - C0) D t] >= eta * t^(-alpha)

with every constant explicit.  Pair counts are exact expected counts over
the sparse set, so the pairwise sum is a genuine upper bound.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from tailforge.cramer import CramerProfile, n0_from_log
from tailforge.errors import EmptyWindow, ZeroTailMass
from tailforge.fixedpoint import MIN_EXCEEDANCES, Pool, abs_moment_pool, tail_mass_is
from tailforge.ldp import LogProb, lattice_path_values
from tailforge.logmath import logsumexp, wilson_interval
from tailforge.pathevents import EventSpec, vn_exact_log, vn_is_estimate
from tailforge.weights import TwoPointSigned, WeightModel

C0_LADDER = (1.0, 1.25, 1.5, 1.75)
Z95 = 1.959963984540054
D0_SLACK = 1e-6


@dataclass
class CertificateConfig:
    log_t: float
    C1: int | None = None
    d: float | None = None
    delta: float | None = None
    delta0: float | None = None
    eps: float | None = None
    C0: float | None = None
    tail_samples: int = 200_000
    vn_samples: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if not self.log_t > 0:
            raise ValueError("t must exceed 1")
        if self.C1 is not None and self.C1 < 2:
            raise ValueError("C1 must be an integer >= 2")
        if self.C0 is not None and not 1.0 <= self.C0 < 2.0:
            raise ValueError("C0 must lie in [1, 2) for the side-branch estimate to leave room")
        for name in ("d", "delta", "delta0", "eps"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def from_t(cls, t: float, **kw) -> "CertificateConfig":
        return cls(math.log(t), **kw)


def log_p0(delta0: float, eps: float) -> float:
    """log of ``exp(-1 / (1 - e^{-delta0 eps}))``; tends to -1 as delta0*eps grows."""
    x = delta0 * eps
    if math.isinf(x):
        return -1.0
    return -1.0 / -math.expm1(-x)


def big_d(n_children: int, d: float, delta: float) -> float:
    """``(N d^2 + d) / (1 - e^{-delta/2})``; ``inf`` flags overflow as delta -> 0."""
    if not d > 0 or not delta > 0:
        raise ValueError("d and delta must be positive")
    den = -math.expm1(-delta / 2.0)
    try:
        val = (n_children * d * d + d) / den
    except (ZeroDivisionError, OverflowError):
        return math.inf
    return val


def sparse_tree_levels(profile: CramerProfile, log_t: float, C1: int) -> list[tuple[int, float]]:
    """Levels ``k*C1`` strictly inside ``(n0 - sqrt(n0), n0)`` with log vertex counts."""
    n_0 = n0_from_log(profile, log_t)
    lo = n_0 - math.sqrt(n_0)
    levels = [n for n in range(C1, n_0, C1) if n > lo]
    if not levels:
        raise EmptyWindow(
            f"no multiple of C1={C1} in ({lo:.3f}, {n_0}); use a smaller C1 or a larger t"
        )
    log_n = math.log(profile.n_children)
    return [(n, (n - C1) * log_n) for n in levels]


def pairwise_bound_log(
    profile: CramerProfile, log_pv: float, n: int, n_prime: int, s: int, log_C0: float
) -> float:
    """log of ``P[V_g] C0^alpha e^{-alpha delta (|g| - s)} N^{-(|g'| - s)}``, capped at log P[V_g]."""
    if not 0 <= s <= min(n, n_prime):
        raise ValueError("split level must satisfy 0 <= s <= min(|g|, |g'|)")
    b = profile.alpha * log_C0 - profile.alpha * profile.delta * (n - s) - (n_prime - s) * profile.log_n
    return log_pv + min(0.0, b)


def pair_terms(levels, C1: int, n_children: int):
    """Expected number of partners g' per vertex g, split by (|g|, |g'|, s).

    Yields ``(n, n_prime, s, log_count)`` over ordered pairs with
    ``|g'| <= |g|``.  Partners diverging inside the free prefix are counted
    directly; the single partner sharing g's whole prefix has its split level
    set by how far the fixed suffix word matches g's letters.
    """
    N = n_children
    log_n = math.log(N)
    log_side = math.log(N - 1)
    for n in levels:
        for n2 in levels:
            if n2 > n:
                continue
            m2 = n2 - C1
            for s in range(m2):
                yield n, n2, s, log_side + (m2 - s - 1) * log_n
            if n2 < n:
                for r in range(C1 + 1):
                    lf = log_side - log_n - r * log_n if r < C1 else -C1 * log_n
                    yield n, n2, m2 + r, lf


def s1_log(level_counts, log_pv: dict) -> float:
    return logsumexp([lc + log_pv[n] for n, lc in level_counts])


def s2_log(profile: CramerProfile, level_counts, log_pv: dict, log_C0: float, C1: int) -> float:
    """Assembled upper bound on the sum of pairwise intersections."""
    counts = dict(level_counts)
    terms = [
        counts[n] + lc + pairwise_bound_log(profile, log_pv[n], n, n2, s, log_C0)
        for n, n2, s, lc in pair_terms(list(counts), C1, profile.n_children)
    ]
    return logsumexp(terms)


def _lower_log(lp: LogProb) -> float:
    """95% lower bound on the log scale, where the delta-method error lives."""
    if lp.stderr_log is None or not math.isfinite(lp.log_value):
        return lp.log_value
    return lp.log_value - Z95 * lp.stderr_log


def _upper_log(lp: LogProb) -> float:
    if lp.stderr_log is None or not math.isfinite(lp.log_value):
        return lp.log_value
    return lp.log_value + Z95 * lp.stderr_log


@dataclass
class TailMass:
    sign: int
    log_lower: float
    log_estimate: float
    source: str
    count: int | None = None


def tail_mass_lower(
    model: WeightModel,
    profile: CramerProfile,
    pool: Pool,
    log_x: float,
    sign: int,
    samples: int,
    seed: int,
    workers=1,
) -> TailMass:
    """Lower 95% bound on ``P[sign * R > x]``.

    Uses the pool's Wilson interval when it holds enough exceedances,
    otherwise the tilted-spine unfolding estimator.
    """
    x = math.exp(log_x)
    count = int(np.count_nonzero(sign * pool.values > x))
    if count >= MIN_EXCEEDANCES:
        lo, _ = wilson_interval(count, pool.pool_size)
        return TailMass(sign, math.log(lo), math.log(count / pool.pool_size), "pool", count)
    lp = tail_mass_is(model, profile, pool, log_x, samples, seed, sign=sign, workers=workers)
    return TailMass(sign, _lower_log(lp), lp.log_value, "tilted_unfold", lp.hits)


@dataclass
class WEventBound:
    d0: float
    d: float
    eps: float
    delta0: float
    log_p0_side: float
    log_p0_b: float
    big_d: float
    tails: list[TailMass]
    log_p_w: float

    def to_dict(self) -> dict:
        out = asdict(self)
        out["tails"] = [asdict(t) for t in self.tails]
        return out


def w_event_d0(model: WeightModel, pool: Pool, eps: float) -> float:
    """Smallest admissible threshold (times 1 + 1e-6) for all three variable classes."""
    moments = (
        model.a_law.abs_moment(eps),
        model.b_law.abs_moment(eps),
        abs_moment_pool(pool, eps),
    )
    return (3.0 * max(moments)) ** (1.0 / eps) * (1.0 + D0_SLACK)


def w_event_bound(
    model: WeightModel,
    profile: CramerProfile,
    pool: Pool,
    delta: float,
    delta0: float,
    eps: float,
    d: float | None = None,
    tail_samples: int = 200_000,
    seed: int = 0,
    workers=1,
) -> WEventBound:
    """Lower bound on ``P[W_g and R_g > 2D]`` (and the mirrored event).

    Side R's and A's use thresholds ``d e^{k delta0}``, B's use
    ``d e^{2 k delta0}``; each class contributes one product bound per
    variable on a level.  Raises ZeroTailMass if no mass beyond ``2D`` is seen.
    """
    d0 = w_event_d0(model, pool, eps)
    if d is None:
        d = d0
    elif d < d0:
        raise ValueError(f"d={d} is below the admissible threshold d0={d0}")
    N = model.n_children
    lp_side = log_p0(delta0, eps)
    lp_b = log_p0(2.0 * delta0, eps)
    D = big_d(N, d, delta)
    signs = [1] if model.a_law.sign_prob == 1.0 else [1, -1]
    tails = [
        tail_mass_lower(model, profile, pool, math.log(2.0 * D), sg, tail_samples, seed, workers)
        for sg in signs
    ]
    log_tail = min(t.log_lower for t in tails)
    if not math.isfinite(log_tail):
        raise ZeroTailMass(f"no resolvable mass of R beyond +-2D = {2 * D:.6g}")
    log_pw = 2 * (N - 1) * lp_side + lp_b + log_tail
    return WEventBound(d0, d, eps, delta0, lp_side, lp_b, D, tails, log_pw)


@dataclass
class LadderEntry:
    C0: float
    C1: int
    s1_log: float
    s2_log: float
    ok: bool


@dataclass
class CertificateReport:
    log_t: float
    alpha: float
    C0: float
    C1: int
    delta: float
    levels: list[tuple[int, float, float]]
    s1_log: float
    s2_log: float
    w_event: WEventBound | None
    p_w_log: float
    big_d: float
    eta_log: float
    passed: bool
    upper_only: bool
    reason: str = ""
    ladder: list[LadderEntry] = field(default_factory=list)

    @property
    def claim_threshold_log(self) -> float:
        """log of x in the certified ``P[R > x t] >= eta t^-alpha``."""
        if not math.isfinite(self.big_d):
            return math.inf
        return math.log((2.0 - self.C0) * self.big_d)

    @property
    def claim(self) -> str:
        side = "P[R > x*t]" if self.upper_only else "P[R > x*t] and P[R < -x*t] are each"
        return (
            f"{side} >= exp(eta_log) * t^-alpha with x = (2 - C0) D = "
            f"{math.exp(self.claim_threshold_log):.6g}, log t = {self.log_t:.6g}, "
            f"alpha = {self.alpha:.10g}, eta_log = {self.eta_log:.10g}"
        )

    def to_dict(self) -> dict:
        return {
            "log_t": self.log_t,
            "alpha": self.alpha,
            "C0": self.C0,
            "C1": self.C1,
            "delta": self.delta,
            "levels": [
                {"level": n, "log_count": lc, "log_p_v": lp} for n, lc, lp in self.levels
            ],
            "s1_log": self.s1_log,
            "s2_log": self.s2_log,
            "w_event": None if self.w_event is None else self.w_event.to_dict(),
            "p_w_log": self.p_w_log,
            "big_d": self.big_d,
            "claim_threshold_log": self.claim_threshold_log,
            "eta_log": self.eta_log,
            "passed": self.passed,
            "upper_only": self.upper_only,
            "reason": self.reason,
            "claim": self.claim,
            "ladder": [asdict(e) for e in self.ladder],
        }


def _vn_logs(model, profile, log_t, log_C0, delta, levels, cfg, workers):
    """Per-level (lower, upper) log P[V_n]: exact on the lattice, IS bounds otherwise."""
    out = {}
    for n in levels:
        spec = EventSpec(log_t, log_C0, delta, n)
        if isinstance(model.a_law, TwoPointSigned):
            v = vn_exact_log(model, profile, spec)
            out[n] = (v, v)
        else:
            lp = vn_is_estimate(model, profile, spec, cfg.vn_samples, cfg.seed, workers=workers)
            out[n] = (_lower_log(lp), _upper_log(lp))
    return out


def _evaluate(model, profile, cfg, C0, C1, delta, workers):
    level_counts = sparse_tree_levels(profile, cfg.log_t, C1)
    log_C0 = math.log(C0)
    pv = _vn_logs(model, profile, cfg.log_t, log_C0, delta, [n for n, _ in level_counts], cfg, workers)
    lo = {n: v[0] for n, v in pv.items()}
    hi = {n: v[1] for n, v in pv.items()}
    s1 = s1_log(level_counts, lo)
    prof = profile if delta == profile.delta else _with_delta(profile, delta)
    s2 = s2_log(prof, level_counts, hi, log_C0, C1)
    levels = [(n, lc, lo[n]) for n, lc in level_counts]
    return levels, s1, s2


def _with_delta(profile: CramerProfile, delta: float) -> CramerProfile:
    from dataclasses import replace

    return replace(profile, delta=delta)


def _pairwise_ok(s1: float, s2: float) -> bool:
    return math.isfinite(s1) and s2 <= s1 - math.log(2.0)


def certify(
    model: WeightModel,
    profile: CramerProfile,
    pool: Pool,
    config: CertificateConfig,
    workers=1,
) -> CertificateReport:
    """Evaluate the lower-bound chain at one t.

    Unset C0 and C1 are chosen from a ladder: the first (C0, C1), in order of
    increasing C0 then C1, with a nonempty window and ``S2 <= S1/2``.
    A failed certificate is returned with ``passed=False``.
    """
    delta = config.delta if config.delta is not None else profile.delta
    eps = config.eps if config.eps is not None else min(1.0, profile.gamma / 2.0)
    delta0 = config.delta0 if config.delta0 is not None else delta / 4.0
    n_0 = n0_from_log(profile, config.log_t)
    c0s = [config.C0] if config.C0 is not None else list(C0_LADDER)
    c1s = [config.C1] if config.C1 is not None else list(range(2, int(math.isqrt(max(n_0, 0))) + 2))

    ladder: list[LadderEntry] = []
    chosen = None
    best = None
    for C0 in c0s:
        for C1 in c1s:
            try:
                levels, s1, s2 = _evaluate(model, profile, config, C0, C1, delta, workers)
            except EmptyWindow:
                continue
            ok = _pairwise_ok(s1, s2)
            ladder.append(LadderEntry(C0, C1, s1, s2, ok))
            cand = (C0, C1, levels, s1, s2)
            gap = s2 - s1 if math.isfinite(s1) else math.inf
            if best is None or gap < best[0]:
                best = (gap, cand)
            if ok:
                chosen = cand
                break
        if chosen is not None:
            break
    if best is None:
        raise EmptyWindow(f"no admissible C1 level falls in the window below n0={n_0}")
    C0, C1, levels, s1, s2 = chosen if chosen is not None else best[1]

    upper_only = model.a_law.sign_prob == 1.0
    reasons = []
    w = None
    log_pw = -math.inf
    D = big_d(model.n_children, config.d or 1.0, delta)
    try:
        w = w_event_bound(
            model, profile, pool, delta, delta0, eps, config.d, config.tail_samples, config.seed, workers
        )
        log_pw = w.log_p_w
        D = w.big_d
    except ZeroTailMass as exc:
        reasons.append(str(exc))
    if not math.isfinite(s1):
        reasons.append("every sparse level has P[V_n] = 0 for this C0")
    elif not s2 <= s1 - math.log(2.0):
        reasons.append("pairwise sum exceeds half the first-order sum; increase C1")
    if not math.isfinite(D):
        reasons.append("D overflows; delta too small")
    eta = -math.inf
    if math.isfinite(s1) and s2 < s1 and math.isfinite(log_pw):
        eta = log_pw + s1 + math.log1p(-math.exp(s2 - s1)) + profile.alpha * config.log_t
    passed = not reasons and math.isfinite(eta)
    return CertificateReport(
        log_t=config.log_t,
        alpha=profile.alpha,
        C0=C0,
        C1=C1,
        delta=delta,
        levels=levels,
        s1_log=s1,
        s2_log=s2,
        w_event=w,
        p_w_log=log_pw,
        big_d=D,
        eta_log=eta,
        passed=passed,
        upper_only=upper_only,
        reason="; ".join(reasons),
        ladder=ladder,
    )


# Exhaustive oracles on miniature trees (lattice family only).


def _law(model: WeightModel) -> TwoPointSigned:
    if not isinstance(model.a_law, TwoPointSigned):
        raise TypeError("miniature oracles need the lattice family")
    return model.a_law


def union_probability(model: WeightModel, log_t: float, log_C0: float, delta: float, levels, C1: int) -> float:
    """Exact ``P[union of V_g over the sparse set]`` by recursion over the tree.

    State: depth, number of high steps so far, largest level whose barrier
    still holds, and the length of the current run of the suffix letter.
    """
    law = _law(model)
    N = model.n_children
    levels = sorted(levels)
    top = levels[-1]
    p = law.p_hi
    c = log_t + log_C0

    def alive_after(j, s_val, alive):
        keep = [n for n in levels if j < n <= alive and s_val <= c - (n - j) * delta]
        return keep[-1] if keep else -1

    @lru_cache(maxsize=None)
    def hit(j, k, alive, trail):
        s_val = float(lattice_path_values(law, k, j))
        if j in levels and trail >= C1 and alive >= j and s_val >= log_t:
            return 1.0
        alive = alive_after(j, s_val, alive)
        if j >= top or alive < 0:
            return 0.0
        f_on = p * hit(j + 1, k + 1, alive, min(trail + 1, C1)) + (1 - p) * hit(j + 1, k, alive, min(trail + 1, C1))
        f_off = p * hit(j + 1, k + 1, alive, 0) + (1 - p) * hit(j + 1, k, alive, 0)
        return -math.expm1(math.log1p(-f_on) + (N - 1) * math.log1p(-f_off))

    return hit(0, 0, top, 0)


def _path_dist(law, log_t, log_C0, delta, constraints, s_end, start=None):
    """Forward probabilities over k at step ``s_end`` subject to per-step checks.

    ``constraints`` holds ``(n, terminal)``; a non-terminal constraint bounds
    ``S_j`` by the barrier of level n for ``j < n``, a terminal one requires
    ``S_n >= log t``.
    """
    if start is None:
        start_step, dist = 0, np.array([1.0])
    else:
        start_step, dist = start
    c = log_t + log_C0
    p = law.p_hi

    def ok(j, k):
        s_val = lattice_path_values(law, k, j)
        good = np.ones(k.size, dtype=bool)
        for n in constraints:
            if j < n:
                good &= s_val <= c - (n - j) * delta
            elif j == n:
                good &= s_val >= log_t
        return good

    if start is None:
        dist = dist * ok(0, np.arange(1))
    for j in range(start_step + 1, s_end + 1):
        nxt = np.zeros(j + 1)
        nxt[:-1] += dist * (1 - p)
        nxt[1:] += dist * p
        dist = nxt * ok(j, np.arange(j + 1))
    return dist


def _continuation(law, log_t, log_C0, delta, n, s, k):
    start = np.zeros(s + 1)
    start[k] = 1.0
    return float(_path_dist(law, log_t, log_C0, delta, [n], n, (s, start)).sum())


def pair_probability(model, log_t, log_C0, delta, n, n2, s) -> float:
    """Exact ``P[V_g and V_g']`` for vertices at levels n, n2 splitting at s."""
    law = _law(model)
    shared = _path_dist(law, log_t, log_C0, delta, [n, n2], s)
    total = 0.0
    for k in np.nonzero(shared)[0]:
        a = _continuation(law, log_t, log_C0, delta, n, s, k)
        b = _continuation(law, log_t, log_C0, delta, n2, s, k) if s < n2 else 1.0
        total += shared[k] * a * b
    return total


def pairwise_exact(model, log_t, log_C0, delta, levels, C1) -> float:
    """Exact expected sum of ``P[V_g and V_g']`` over the same ordered pairs as the bound."""
    N = model.n_children
    total = 0.0
    for n, n2, s, lc in pair_terms(levels, C1, N):
        total += N ** (n - C1) * math.exp(lc) * pair_probability(model, log_t, log_C0, delta, n, n2, s)
    return total


def first_order_sum(model, log_t, log_C0, delta, levels, C1) -> float:
    N = model.n_children
    return sum(
        N ** (n - C1) * math.exp(vn_exact_log(model, None, EventSpec(log_t, log_C0, delta, n)))
        for n in levels
    )
