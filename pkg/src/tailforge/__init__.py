"""Tail machinery for fixed points of the smoothing transform.

R =_d sum_{i=1}^N A_i R_i + B
"""

from tailforge.cramer import CramerProfile, compute_profile, find_roots, m, n0
from tailforge.weights import (
    ConstantB,
    GaussianB,
    GaussianLogSigned,
    TiltedSampler,
    TwoPointSigned,
    WeightModel,
    tilted_sampler,
)

__all__ = [
    "ConstantB",
    "CramerProfile",
    "GaussianB",
    "GaussianLogSigned",
    "TiltedSampler",
    "TwoPointSigned",
    "WeightModel",
    "compute_profile",
    "find_roots",
    "m",
    "n0",
    "tilted_sampler",
]

__version__ = "0.1.0"
