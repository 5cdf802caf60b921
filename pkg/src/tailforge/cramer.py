"""Cramer roots and the spectral data derived from them."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from scipy.optimize import brentq

from tailforge.errors import NoBetaMargin, NoCramerRoot
from tailforge.weights import WeightModel, abs_moment, log_mgf

ROOT_TOL = 1e-12
MARGIN_LADDER = (0.5, 0.25, 0.1, 0.05)


def m(model: WeightModel, s: float) -> float:
    """m(s) = N E|A|^s."""
    return model.n_children * abs_moment(model, s)


def log_m(model: WeightModel, s: float) -> float:
    return math.log(model.n_children) + log_mgf(model, s, 0)


def _expand(f, start: float, step: float, direction: int, limit: int = 200) -> float:
    x = start
    for _ in range(limit):
        x = x + direction * step
        if f(x) > 0:
            return x
        step *= 2.0
    raise NoCramerRoot("could not bracket a root of log m")


def minimizer(model: WeightModel, step: float = 1.0) -> float:
    """Minimizer of the convex function log m (root of Lambda')."""
    d = lambda s: log_mgf(model, s, 1)  # noqa: E731
    if d(0.0) >= 0.0:
        hi = 0.0
        lo = -step
        while d(lo) >= 0.0:
            lo -= step
            step *= 2.0
            if lo < -1e6:
                raise NoCramerRoot("log m has no minimizer")
    else:
        lo = 0.0
        hi = _expand(d, 0.0, step, +1)
    return brentq(d, lo, hi, xtol=1e-15, rtol=8.9e-16, maxiter=500)


def find_roots(model: WeightModel, step: float = 1.0) -> tuple[float, float]:
    """The two roots ``gamma < alpha`` of ``m(s) = 1``.

    ``step`` sets the initial bracketing grid; the roots do not depend on it.
    """
    f = lambda s: log_m(model, s)  # noqa: E731
    s_min = minimizer(model, step)
    if f(s_min) >= 0.0:
        raise NoCramerRoot(
            f"min_s m(s) = {math.exp(f(s_min)):.6g} >= 1 (at s={s_min:.6g}): "
            "the model violates the hypothesis m(gamma) = m(alpha) = 1 with gamma < alpha"
        )
    # left bracket: log m(0) = log N > 0
    lo = min(0.0, s_min - step)
    while f(lo) <= 0.0:
        lo -= step
    hi = _expand(f, s_min, step, +1)
    gamma = brentq(f, lo, s_min, xtol=1e-15, rtol=8.9e-16, maxiter=500)
    alpha = brentq(f, s_min, hi, xtol=1e-15, rtol=8.9e-16, maxiter=500)
    if gamma <= 0.0:
        raise NoCramerRoot(f"smaller root gamma={gamma:.6g} is not positive")
    for r in (gamma, alpha):
        if abs(m(model, r) - 1.0) > ROOT_TOL:
            raise NoCramerRoot(f"root refinement failed at s={r}")
    return gamma, alpha


@dataclass(frozen=True)
class CramerProfile:
    n_children: int
    gamma: float
    alpha: float
    rho: float
    lam: float
    mprime_alpha: float
    s1: float
    beta: float
    gamma_margin: float
    gamma1: float
    delta: float
    s_min: float

    @property
    def drift(self) -> float:
        """N * rho, the mean of log|A| under the tilted law."""
        return self.n_children * self.rho

    @property
    def log_n(self) -> float:
        return math.log(self.n_children)

    @property
    def log_moment_beta(self) -> float:
        """log E|A|^beta = -(1 + gamma_margin) log N."""
        return -(1.0 + self.gamma_margin) * self.log_n

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


def solve_beta(model: WeightModel, gamma_margin: float, s_min: float, alpha: float) -> float:
    """Root of E|A|^beta = N^{-(1+gamma_margin)} on (s_min, alpha)."""
    target = -(1.0 + gamma_margin) * math.log(model.n_children)
    g = lambda s: log_mgf(model, s, 0) - target  # noqa: E731
    if g(s_min) >= 0.0:
        raise NoBetaMargin(f"no beta < alpha with E|A|^beta = N^-(1+{gamma_margin})")
    return brentq(g, s_min, alpha, xtol=1e-15, rtol=8.9e-16, maxiter=500)


def compute_profile(
    model: WeightModel, gamma_margin: float | None = None, delta: float | None = None
) -> CramerProfile:
    gamma, alpha = find_roots(model)
    s_min = minimizer(model)
    n = model.n_children
    log_n = math.log(n)

    if gamma_margin is None:
        for gm in MARGIN_LADDER:
            try:
                beta = solve_beta(model, gm, s_min, alpha)
            except NoBetaMargin:
                continue
            gamma_margin = gm
            break
        else:
            raise NoBetaMargin("no margin in the default ladder admits a beta")
    else:
        if not gamma_margin > 0.0:
            raise NoBetaMargin("gamma_margin must be positive")
        beta = solve_beta(model, gamma_margin, s_min, alpha)

    if delta is None:
        delta = 0.1 * gamma_margin * log_n / (alpha - beta)
    gamma1 = gamma_margin * log_n + (beta - alpha) * delta
    while gamma1 <= 0.0:
        delta /= 2.0
        gamma1 = gamma_margin * log_n + (beta - alpha) * delta

    rho = log_mgf(model, alpha, 1) / n
    return CramerProfile(
        n_children=n,
        gamma=gamma,
        alpha=alpha,
        rho=rho,
        lam=math.sqrt(log_mgf(model, alpha, 2)),
        mprime_alpha=n * model.a_law.abs_moment_log(alpha),
        s1=math.inf,
        beta=beta,
        gamma_margin=gamma_margin,
        gamma1=gamma1,
        delta=delta,
        s_min=s_min,
    )


def n0_from_log(profile: CramerProfile, log_t: float) -> int:
    # the small slack absorbs log(exp(x)) != x roundoff at exact multiples
    return int(math.floor(log_t / profile.drift + 1e-9))


def n0(profile: CramerProfile, t: float) -> int:
    if not t > 1.0:
        raise ValueError("n0 needs t > 1")
    return n0_from_log(profile, math.log(t))
