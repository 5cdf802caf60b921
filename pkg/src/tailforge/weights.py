"""Parametric laws for the weights ``(A_1, ..., A_N, B)``.

Two families for ``A`` ship: a signed two-point law (lattice ``log|A|``)
and a signed log-normal law (nonlattice).  The sign of ``A`` is independent
of its magnitude.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Union

import numpy as np

from tailforge.errors import DomainError, NotNormalized

NORMALIZATION_TOL = 1e-8
_FD_STEP = {1: 1e-6, 2: 1e-3}


@dataclass(frozen=True)
class TwoPointSigned:
    """``|A| = u`` with probability ``p_hi``, else ``v``."""

    u: float
    v: float
    p_hi: float
    sign_prob: float = 0.5

    def __post_init__(self):
        if not self.u > 1.0:
            raise DomainError("TwoPointSigned needs u > 1")
        if not 0.0 < self.v < 1.0:
            raise DomainError("TwoPointSigned needs 0 < v < 1")
        if not 0.0 < self.p_hi < 1.0:
            raise DomainError("TwoPointSigned needs 0 < p_hi < 1")
        if not 0.0 <= self.sign_prob <= 1.0:
            raise DomainError("sign_prob must lie in [0, 1]")

    is_lattice = True

    @property
    def lattice_span(self) -> float:
        return abs(math.log(self.u) - math.log(self.v))

    def _atoms(self):
        return (
            np.array([math.log(self.u), math.log(self.v)]),
            np.array([self.p_hi, 1.0 - self.p_hi]),
        )

    def abs_moment(self, s: float) -> float:
        return self.p_hi * self.u**s + (1.0 - self.p_hi) * self.v**s

    def abs_moment_log(self, s: float) -> float:
        """E[|A|^s log|A|]."""
        lu, lv = math.log(self.u), math.log(self.v)
        return self.p_hi * self.u**s * lu + (1.0 - self.p_hi) * self.v**s * lv

    def log_mgf(self, s: float, order: int) -> float:
        x, w = self._atoms()
        lw = np.log(w) + s * x
        top = lw.max()
        q = np.exp(lw - top)
        z = q.sum()
        if order == 0:
            return float(top + math.log(z))
        q = q / z
        mean = float(q @ x)
        if order == 1:
            return mean
        return float(q @ (x - mean) ** 2)

    def tilted_params(self, alpha: float, n_children: int) -> dict:
        p_tilt = n_children * self.p_hi * self.u**alpha
        return {"p_hi": p_tilt, "p_lo": n_children * (1.0 - self.p_hi) * self.v**alpha}

    def tilted_standardized_third(self, alpha: float) -> float:
        x, w = self._atoms()
        q = w * np.exp(alpha * x)
        q = q / q.sum()
        mean = q @ x
        var = q @ (x - mean) ** 2
        return float(q @ (x - mean) ** 3 / var**1.5)

    def sample_magnitude(self, rng: np.random.Generator, size) -> np.ndarray:
        hi = rng.random(size) < self.p_hi
        return np.where(hi, self.u, self.v)

    def sample_log_magnitude_tilted(self, rng, size, params) -> np.ndarray:
        hi = rng.random(size) < params["p_hi"]
        return np.where(hi, math.log(self.u), math.log(self.v))

    def tilted_weight_mean(self, alpha: float, n_children: int, params) -> float:
        # E_tilt[N^{-1} e^{-alpha X}] summed over the two atoms
        lu, lv = math.log(self.u), math.log(self.v)
        return (
            params["p_hi"] * math.exp(-alpha * lu) + params["p_lo"] * math.exp(-alpha * lv)
        ) / n_children


@dataclass(frozen=True)
class GaussianLogSigned:
    """``log|A| ~ Normal(mu0, sigma0**2)``."""

    mu0: float
    sigma0: float
    sign_prob: float = 0.5

    def __post_init__(self):
        if not self.sigma0 > 0.0:
            raise DomainError("GaussianLogSigned needs sigma0 > 0")
        if not 0.0 <= self.sign_prob <= 1.0:
            raise DomainError("sign_prob must lie in [0, 1]")

    is_lattice = False
    lattice_span = None

    def abs_moment(self, s: float) -> float:
        return math.exp(s * self.mu0 + 0.5 * s * s * self.sigma0**2)

    def abs_moment_log(self, s: float) -> float:
        return self.abs_moment(s) * (self.mu0 + s * self.sigma0**2)

    def log_mgf(self, s: float, order: int) -> float:
        if order == 0:
            return s * self.mu0 + 0.5 * s * s * self.sigma0**2
        if order == 1:
            return self.mu0 + s * self.sigma0**2
        return self.sigma0**2

    def tilted_params(self, alpha: float, n_children: int) -> dict:
        return {"mean": self.mu0 + alpha * self.sigma0**2, "std": self.sigma0}

    def tilted_standardized_third(self, alpha: float) -> float:
        return 0.0

    def sample_magnitude(self, rng, size) -> np.ndarray:
        return np.exp(rng.normal(self.mu0, self.sigma0, size))

    def sample_log_magnitude_tilted(self, rng, size, params) -> np.ndarray:
        return rng.normal(params["mean"], params["std"], size)

    def tilted_weight_mean(self, alpha: float, n_children: int, params) -> float:
        # Gauss-Hermite quadrature of E[e^{-alpha X}] under the tilted normal
        nodes, weights = np.polynomial.hermite_e.hermegauss(120)
        x = params["mean"] + params["std"] * nodes
        val = float(weights @ np.exp(-alpha * x)) / math.sqrt(2.0 * math.pi)
        return val / n_children


ALaw = Union[TwoPointSigned, GaussianLogSigned]


@dataclass(frozen=True)
class ConstantB:
    c: float = 1.0

    def abs_moment(self, s: float) -> float:
        if self.c == 0.0:
            return 0.0 if s > 0 else 1.0
        return abs(self.c) ** s

    @property
    def mean(self) -> float:
        return self.c

    @property
    def second_moment(self) -> float:
        return self.c * self.c

    def sample(self, rng, size) -> np.ndarray:
        return np.full(size, float(self.c))


@dataclass(frozen=True)
class GaussianB:
    mean_: float = 0.0
    std: float = 1.0

    def __post_init__(self):
        if not self.std > 0.0:
            raise DomainError("GaussianB needs std > 0")

    @property
    def mean(self) -> float:
        return self.mean_

    @property
    def second_moment(self) -> float:
        return self.mean_**2 + self.std**2

    def abs_moment(self, s: float) -> float:
        # E|B|^s by Gauss-Hermite quadrature; smooth enough for s > 0
        nodes, weights = np.polynomial.hermite_e.hermegauss(200)
        x = self.mean_ + self.std * nodes
        return float(weights @ np.abs(x) ** s) / math.sqrt(2.0 * math.pi)

    def sample(self, rng, size) -> np.ndarray:
        return rng.normal(self.mean_, self.std, size)


BLaw = Union[ConstantB, GaussianB]


@dataclass(frozen=True)
class WeightModel:
    a_law: ALaw
    b_law: BLaw = field(default_factory=ConstantB)
    n_children: int = 2

    def __post_init__(self):
        if int(self.n_children) != self.n_children or self.n_children < 2:
            raise DomainError("n_children must be an integer >= 2")

    @property
    def family(self) -> str:
        return type(self.a_law).__name__

    @property
    def is_lattice(self) -> bool:
        return self.a_law.is_lattice

    def abs_moment(self, s: float) -> float:
        return abs_moment(self, s)

    def log_mgf(self, s: float, order: int = 0) -> float:
        return log_mgf(self, s, order)

    @property
    def mean_A(self) -> float:
        return (2.0 * self.a_law.sign_prob - 1.0) * self.a_law.abs_moment(1.0)

    @property
    def second_moment_A(self) -> float:
        return self.a_law.abs_moment(2.0)

    def to_dict(self) -> dict:
        a = asdict(self.a_law)
        a["family"] = self.family
        b = asdict(self.b_law)
        b["law"] = type(self.b_law).__name__
        if "mean_" in b:
            b["mean"] = b.pop("mean_")
        return {"a": a, "b": b, "n_children": self.n_children}

    def fingerprint(self) -> bytes:
        """32-byte digest identifying the model (used in pool files)."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).digest()

    def sample_A(self, rng: np.random.Generator, size=None) -> np.ndarray:
        return sample_A(self, rng, size)

    def sample_B(self, rng: np.random.Generator, size=None) -> np.ndarray:
        return self.b_law.sample(rng, size)


def abs_moment(model: WeightModel, s: float) -> float:
    """E|A|^s in closed form."""
    s = float(s)
    if not math.isfinite(s):
        raise DomainError(f"abs_moment undefined at s={s}")
    return model.a_law.abs_moment(s)


def log_mgf(model: WeightModel, s: float, order: int = 0) -> float:
    """Lambda(s) = log E|A|^s and its first two derivatives."""
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    if not math.isfinite(s):
        raise DomainError(f"log_mgf undefined at s={s}")
    return model.a_law.log_mgf(float(s), order)


def log_mgf_numeric(model: WeightModel, s: float, order: int) -> float:
    """Finite-difference derivative of Lambda with one Richardson level.

    Cross-validation only.  The second derivative uses a wider step so that
    roundoff stays below the truncation error.
    """
    if order == 0:
        return log_mgf(model, s, 0)
    h = _FD_STEP[order] * max(1.0, abs(s))
    f = lambda x: log_mgf(model, x, 0)  # noqa: E731

    def diff(step):
        if order == 1:
            return (f(s + step) - f(s - step)) / (2.0 * step)
        return (f(s + step) - 2.0 * f(s) + f(s - step)) / (step * step)

    return (4.0 * diff(h / 2.0) - diff(h)) / 3.0


def sample_A(model: WeightModel, rng: np.random.Generator, size=None) -> np.ndarray:
    law = model.a_law
    mag = law.sample_magnitude(rng, size)
    sign = np.where(rng.random(size) < law.sign_prob, 1.0, -1.0)
    return sign * mag


def sample_B(model: WeightModel, rng: np.random.Generator, size=None) -> np.ndarray:
    return model.b_law.sample(rng, size)


def sample_children(model: WeightModel, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    a = sample_A(model, rng, model.n_children)
    b = float(sample_B(model, rng, 1)[0])
    return a, b


@dataclass(frozen=True)
class TiltedSampler:
    """Law of ``X = log|A|`` under ``N e^{alpha x} mu(dx)``."""

    model: WeightModel
    alpha: float
    params: dict

    @property
    def mean(self) -> float:
        return log_mgf(self.model, self.alpha, 1)

    @property
    def variance(self) -> float:
        return log_mgf(self.model, self.alpha, 2)

    def sample(self, rng: np.random.Generator, size=None) -> np.ndarray:
        return self.model.a_law.sample_log_magnitude_tilted(rng, size, self.params)

    def weight_mean(self) -> float:
        """E_tilt[N^{-1} e^{-alpha X}]; equals 1 by the change of measure."""
        return self.model.a_law.tilted_weight_mean(self.alpha, self.model.n_children, self.params)


def tilted_sampler(model: WeightModel, alpha: float) -> TiltedSampler:
    err = model.n_children * abs_moment(model, alpha) - 1.0
    if not abs(err) <= NORMALIZATION_TOL:
        raise NotNormalized(
            f"N*E|A|^alpha - 1 = {err:.3e} at alpha={alpha}; alpha must be the Cramer root"
        )
    return TiltedSampler(model, float(alpha), model.a_law.tilted_params(alpha, model.n_children))


def sample_tilted_X(sampler: TiltedSampler, rng: np.random.Generator, size=None) -> np.ndarray:
    return sampler.sample(rng, size)
