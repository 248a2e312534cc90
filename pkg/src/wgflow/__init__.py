"""Perturbed Wasserstein gradient flows with stability certification.

Particle-scale simulation of Wasserstein gradient flows under entropic,
additive, and approximation-induced disturbances, plus the numerical
certification layer (Lyapunov decay checks, disturbance-gain envelopes,
finite-agent scaling laws).
"""

__version__ = "0.1.0"

from .measures import (
    BoxDomain,
    GridDensity,
    ParticleEnsemble,
    TargetSet,
    dist_to_set,
    sample_density,
    second_moment_about_set,
)
from .fields import VelocityField

__all__ = [
    "BoxDomain",
    "GridDensity",
    "ParticleEnsemble",
    "TargetSet",
    "VelocityField",
    "dist_to_set",
    "sample_density",
    "second_moment_about_set",
    "__version__",
]
