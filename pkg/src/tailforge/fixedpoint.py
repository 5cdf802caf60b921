"""Population dynamics for the fixed point ``R = sum A_i R_i + B``.

A pool of values approximates the law of R.  Each round draws every new
value from fresh weights and ``N`` uniformly resampled members of the
previous generation.  All randomness is keyed by
``(seed, generation, block)`` so pools are reproducible for any worker count.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from tailforge import rng as rngmod
from tailforge.cramer import CramerProfile
from tailforge.errors import PoolMismatch
from tailforge.ldp import LogProb
from tailforge.logmath import LogAccumulator, wilson_interval
from tailforge.weights import WeightModel, sample_A, sample_B, tilted_sampler

log = logging.getLogger(__name__)

MIN_EXCEEDANCES = 50
KS_C95 = math.sqrt(-0.5 * math.log(0.025))
POOL_MAGIC = b"TFPOOL1\x00"
_HEADER = struct.Struct("<8s32sQQQ")


@dataclass
class Pool:
    values: np.ndarray
    generation: int
    seed: int
    model: WeightModel

    @property
    def pool_size(self) -> int:
        return int(self.values.size)

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        return self.values[rng.integers(0, self.pool_size, size=size)]


def stationary_moments(model: WeightModel) -> tuple[float, float]:
    """Closed-form E R and E R^2 of the moment-bounded solution."""
    n = model.n_children
    ea, ea2 = model.mean_A, model.second_moment_A
    eb, eb2 = model.b_law.mean, model.b_law.second_moment
    if not abs(n * ea) < 1.0 or not n * ea2 < 1.0:
        raise ValueError("second moment of R is infinite for this model")
    er = eb / (1.0 - n * ea)
    er2 = (eb2 + 2.0 * n * ea * eb * er + n * (n - 1) * ea * ea * er * er) / (1.0 - n * ea2)
    return er, er2


def init_pool(model: WeightModel, pool_size: int, seed: int) -> Pool:
    n = model.n_children
    start = 0.0
    if n * model.a_law.abs_moment(1.0) < 1.0:
        start = model.b_law.mean / (1.0 - n * model.mean_A)
    return Pool(np.full(pool_size, start), 0, int(seed), model)


def _iterate_block(args):
    model, old, seed, generation, idx, size = args
    gen = rngmod.stream(seed, "fp.iter", generation, idx)
    n = model.n_children
    picks = old[gen.integers(0, old.size, size=(size, n))]
    a = sample_A(model, gen, (size, n))
    b = sample_B(model, gen, size)
    return np.einsum("ij,ij->i", a, picks) + b


def iterate(pool: Pool, rounds: int = 1, workers=1) -> Pool:
    """Apply the smoothing transform to the pool ``rounds`` times."""
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    values = pool.values
    gen_no = pool.generation
    for _ in range(rounds):
        gen_no += 1
        jobs = [
            (pool.model, values, pool.seed, gen_no, idx, size)
            for idx, size in rngmod.blocks(values.size)
        ]
        values = np.concatenate(rngmod.parallel_map(_iterate_block, jobs, workers))
    return Pool(values, gen_no, pool.seed, pool.model)


def ks_distance(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    return float(stats.ks_2samp(a, b, method="asymp").statistic)


def _ks_sorted(sa: np.ndarray, sb: np.ndarray) -> float:
    grid = np.concatenate([sa, sb])
    fa = np.searchsorted(sa, grid, side="right") / sa.size
    fb = np.searchsorted(sb, grid, side="right") / sb.size
    return float(np.max(np.abs(fa - fb)))


def ks_threshold(n1: int, n2: int) -> float:
    """95% critical value of the two-sample KS statistic (asymptotic)."""
    return KS_C95 * math.sqrt((n1 + n2) / (n1 * n2))


@dataclass
class Convergence:
    rounds: int
    ks_history: list[float]
    threshold: float
    converged: bool


def converge(
    pool: Pool,
    min_rounds: int = 50,
    max_rounds: int = 1000,
    patience: int = 3,
    workers=1,
) -> tuple[Pool, Convergence]:
    """Iterate until consecutive generations are KS-indistinguishable.

    Stops once the KS statistic between generations stays below the 95%
    two-sample threshold for ``patience`` rounds and at least ``min_rounds``
    rounds have run.
    """
    thr = ks_threshold(pool.pool_size, pool.pool_size)
    history: list[float] = []
    prev_sorted = np.sort(pool.values)
    streak = 0
    for r in range(1, max_rounds + 1):
        pool = iterate(pool, 1, workers)
        cur_sorted = np.sort(pool.values)
        ks = _ks_sorted(prev_sorted, cur_sorted)
        history.append(ks)
        streak = streak + 1 if ks < thr else 0
        prev_sorted = cur_sorted
        if r >= min_rounds and streak >= patience:
            log.info("pool converged after %d rounds (ks=%.3g, threshold=%.3g)", r, ks, thr)
            return pool, Convergence(r, history, thr, True)
    log.warning("pool did not meet the KS stopping rule in %d rounds", max_rounds)
    return pool, Convergence(max_rounds, history, thr, False)


def simulate(model: WeightModel, pool_size: int, seed: int, workers=1, **kw) -> tuple[Pool, Convergence]:
    return converge(init_pool(model, pool_size, seed), workers=workers, **kw)


@dataclass
class Unfold:
    spine: np.ndarray
    side: np.ndarray
    drift: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.spine + self.side + self.drift


def _unfold(model, pool, depth, gen, size, spine_mags=None):
    """Shared unfolding loop; ``spine_mags`` overrides |A| along the spine."""
    n = model.n_children
    prod = np.ones(size)
    side = np.zeros(size)
    drift = np.zeros(size)
    for k in range(depth):
        drift += prod * sample_B(model, gen, size)
        off = sample_A(model, gen, (size, n - 1))
        side += prod * np.einsum("ij,ij->i", off, pool.draw(gen, (size, n - 1)))
        if spine_mags is None:
            a = sample_A(model, gen, size)
        else:
            sign = np.where(gen.random(size) < model.a_law.sign_prob, 1.0, -1.0)
            a = sign * spine_mags[:, k]
        prod = prod * a
    spine = prod * pool.draw(gen, size)
    return Unfold(spine, side, drift)


def unfold_path_sample(
    model: WeightModel, pool: Pool, word, rng: np.random.Generator, size: int = 1
) -> Unfold:
    """Unfold the equation ``len(word)`` times along the path ``word``.

    Returns the spine term ``Pi_gamma R_gamma``, the side-branch sum, and the
    accumulated ``Pi B`` terms separately.  Children are exchangeable, so the
    letters only label which child is followed.
    """
    word = tuple(int(w) for w in word)
    if any(not 1 <= w <= model.n_children for w in word):
        raise ValueError("word letters must lie in 1..N")
    return _unfold(model, pool, len(word), rng, size)


def _tail_is_block(args):
    model, pool, alpha, params, depth, log_x, sign, seed, idx, size = args
    gen = rngmod.stream(seed, "fp.tail_is", "up" if sign > 0 else "down", depth, idx)
    x = np.empty((size, depth))
    for k in range(depth):
        x[:, k] = model.a_law.sample_log_magnitude_tilted(gen, size, params)
    u = _unfold(model, pool, depth, gen, size, spine_mags=np.exp(x))
    log_w = -depth * math.log(model.n_children) - alpha * x.sum(axis=1)
    hit = sign * u.total > math.exp(log_x)
    acc = LogAccumulator()
    acc.add(log_w[hit])
    return acc


def tail_mass_is(
    model: WeightModel,
    profile: CramerProfile,
    pool: Pool,
    log_x: float,
    samples: int,
    seed: int,
    sign: int = 1,
    depth: int | None = None,
    workers=1,
) -> LogProb:
    """Estimate P[sign * R > x] by unfolding along a tilted spine.

    The spine magnitudes follow the exponential tilt at ``alpha``; side
    branches and leaves come from the pool.  The likelihood ratio
    ``N^{-depth} e^{-alpha S}`` keeps the estimator unbiased for the pool's law.
    """
    if depth is None:
        depth = max(1, math.ceil(log_x / profile.drift))
    sampler = tilted_sampler(model, profile.alpha)
    jobs = [
        (model, pool, profile.alpha, sampler.params, depth, log_x, sign, seed, idx, size)
        for idx, size in rngmod.blocks(samples)
    ]
    total = LogAccumulator()
    for acc in rngmod.parallel_map(_tail_is_block, jobs, workers):
        total.merge(acc)
    lv, se = total.result(samples)
    return LogProb(lv, se, total.hits)


def hill_estimate(x, k: int, z: float = 1.959963984540054) -> tuple[float, float, float]:
    """Hill tail index from the top ``k`` order statistics of positive data.

    Returns ``(estimate, ci_low, ci_high)`` with the asymptotic normal interval.
    """
    x = np.asarray(x, dtype=float)
    x = x[x > 0]
    if k < 2 or k >= x.size:
        raise ValueError("need 2 <= k < number of positive observations")
    top = np.partition(x, x.size - k - 1)[x.size - k - 1 :]
    top.sort()
    ref = top[0]
    est = k / float(np.sum(np.log(top[1:] / ref)))
    half = z * est / math.sqrt(k)
    return est, est - half, est + half


@dataclass
class TailPoint:
    t: float
    count: int
    scaled: float
    ci_low: float
    ci_high: float
    flag: str = "ok"

    @property
    def usable(self) -> bool:
        return self.flag == "ok"


@dataclass
class TailReport:
    t_grid: list[float]
    upper: list[TailPoint]
    lower: list[TailPoint]
    hill_alpha_upper: tuple[float, float, float]
    hill_alpha_lower: tuple[float, float, float]
    hill_sweep: dict
    alpha_ref: float
    pool_size: int
    k: int
    plateau_upper: tuple[float, float, float] | None = field(default=None)
    plateau_lower: tuple[float, float, float] | None = field(default=None)

    def positive_decade(self, side: str) -> bool:
        """Some full decade of usable t has every CI lower bound > 0."""
        pts = [p for p in getattr(self, side) if p.usable]
        run_start = None
        for p in pts:
            if p.ci_low > 0:
                run_start = p.t if run_start is None else run_start
                if p.t >= 10.0 * run_start * (1 - 1e-12):
                    return True
            else:
                run_start = None
        return False

    def plateaus_overlap(self) -> bool:
        if self.plateau_upper is None or self.plateau_lower is None:
            return False
        return self.plateau_upper[1] <= self.plateau_lower[2] and self.plateau_lower[1] <= self.plateau_upper[2]

    def rows(self):
        for up, lo in zip(self.upper, self.lower):
            yield {
                "t": up.t,
                "upper_count": up.count,
                "upper_scaled": up.scaled,
                "upper_ci_low": up.ci_low,
                "upper_ci_high": up.ci_high,
                "upper_flag": up.flag,
                "lower_count": lo.count,
                "lower_scaled": lo.scaled,
                "lower_ci_low": lo.ci_low,
                "lower_ci_high": lo.ci_high,
                "lower_flag": lo.flag,
            }

    def to_dict(self) -> dict:
        return {
            "alpha_ref": self.alpha_ref,
            "pool_size": self.pool_size,
            "k": self.k,
            "hill_alpha_upper": list(self.hill_alpha_upper),
            "hill_alpha_lower": list(self.hill_alpha_lower),
            "hill_sweep": self.hill_sweep,
            "plateau_upper": None if self.plateau_upper is None else list(self.plateau_upper),
            "plateau_lower": None if self.plateau_lower is None else list(self.plateau_lower),
            "plateaus_overlap": self.plateaus_overlap(),
            "positive_decade_upper": self.positive_decade("upper"),
            "positive_decade_lower": self.positive_decade("lower"),
            "grid": list(self.rows()),
        }


def _tail_points(tail_sorted: np.ndarray, total: int, t_grid, alpha: float, median_abs: float):
    pts = []
    for t in t_grid:
        count = int(tail_sorted.size - np.searchsorted(tail_sorted, t, side="right"))
        lo, hi = wilson_interval(count, total)
        scale = t**alpha
        flag = "ok"
        if t < median_abs:
            flag = "outside_tail"
        elif count < MIN_EXCEEDANCES:
            flag = "insufficient_tail"
        pts.append(TailPoint(float(t), count, scale * count / total, scale * lo, scale * hi, flag))
    return pts


PLATEAU_SPAN = math.sqrt(10.0)


def _plateau(points: list[TailPoint], t_top: float | None):
    """Average scaled tail over usable t in ``[t_top / sqrt(10), t_top]``.

    ``t_top`` is the largest t usable in both tails, so the two plateaus
    are read off the same range of large t.
    """
    if t_top is None:
        return None
    window = [p for p in points if p.usable and t_top / PLATEAU_SPAN <= p.t <= t_top]
    if not window:
        return None
    return (
        float(np.mean([p.scaled for p in window])),
        float(np.mean([p.ci_low for p in window])),
        float(np.mean([p.ci_high for p in window])),
    )


def tail_report(pool: Pool, profile: CramerProfile, t_grid, k: int | None = None) -> TailReport:
    """Scaled two-sided tails ``t^alpha P[+-R > t]`` with Wilson intervals and Hill fits."""
    vals = pool.values
    total = vals.size
    if k is None:
        k = int(math.floor(2.0 * math.sqrt(total)))
    t_grid = [float(t) for t in t_grid]
    pos = np.sort(vals[vals > 0])
    neg = np.sort(-vals[vals < 0])
    median_abs = float(np.median(np.abs(vals)))
    upper = _tail_points(pos, total, t_grid, profile.alpha, median_abs)
    lower = _tail_points(neg, total, t_grid, profile.alpha, median_abs)
    sweep = {}
    for kk in (k // 2, k, 2 * k):
        sweep[str(kk)] = {
            "upper": list(hill_estimate(pos, kk)),
            "lower": list(hill_estimate(neg, kk)),
        }
    both = [u.t for u, l in zip(upper, lower) if u.usable and l.usable]
    t_top = max(both) if both else None
    return TailReport(
        t_grid,
        upper,
        lower,
        hill_estimate(pos, k),
        hill_estimate(neg, k),
        sweep,
        profile.alpha,
        total,
        k,
        _plateau(upper, t_top),
        _plateau(lower, t_top),
    )


def abs_moment_pool(pool: Pool, eps: float) -> float:
    return float(np.mean(np.abs(pool.values) ** eps))


def pool_to_bytes(pool: Pool) -> bytes:
    """Little-endian layout: magic, 32-byte model digest, seed, generation,
    count (uint64 each), then ``count`` float64 values."""
    head = _HEADER.pack(
        POOL_MAGIC,
        pool.model.fingerprint(),
        pool.seed & 0xFFFFFFFFFFFFFFFF,
        pool.generation,
        pool.pool_size,
    )
    return head + np.ascontiguousarray(pool.values, dtype="<f8").tobytes()


def save_pool(path, pool: Pool) -> None:
    Path(path).write_bytes(pool_to_bytes(pool))


def load_pool(path, model: WeightModel) -> Pool:
    path = Path(path)
    with path.open("rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise PoolMismatch(f"{path}: truncated header")
        magic, digest, seed, generation, count = _HEADER.unpack(head)
        if magic != POOL_MAGIC:
            raise PoolMismatch(f"{path}: not a pool file")
        if digest != model.fingerprint():
            raise PoolMismatch(f"{path}: pool was produced by a different model")
        values = np.frombuffer(fh.read(), dtype="<f8")
    if values.size != count:
        raise PoolMismatch(f"{path}: expected {count} values, found {values.size}")
    return Pool(values.astype(float), int(generation), int(seed), model)
