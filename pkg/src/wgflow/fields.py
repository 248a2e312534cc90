"""Velocity fields driving particle flows.

A field is either *pointwise* (evaluable at arbitrary query points, e.g. the
gradient of a potential) or bound to the ensemble that carries the measure
(e.g. an optimal-transport displacement, which is only defined at the source
atoms).  Flows only ever need values at the current particle positions, but
the KDE control law additionally needs pointwise evaluation on a quadrature
grid.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .measures import ParticleEnsemble

__all__ = ["VelocityField"]


@dataclass
class VelocityField:
    """Evaluator mapping (ensemble, time) to an ``(n, d)`` velocity matrix."""

    provenance: str
    point_fn: Callable | None = None      # (points (m,d), t) -> (m,d)
    ensemble_fn: Callable | None = None   # (ParticleEnsemble, t) -> (n,d)

    @classmethod
    def pointwise(cls, fn: Callable, provenance: str) -> "VelocityField":
        return cls(provenance=provenance, point_fn=fn)

    @classmethod
    def on_ensemble(cls, fn: Callable, provenance: str) -> "VelocityField":
        return cls(provenance=provenance, ensemble_fn=fn)

    @classmethod
    def zero(cls) -> "VelocityField":
        return cls.pointwise(lambda pts, t: np.zeros_like(pts), "zero")

    def __call__(self, ens: ParticleEnsemble, t: float = 0.0) -> np.ndarray:
        if self.ensemble_fn is not None:
            v = np.asarray(self.ensemble_fn(ens, t), dtype=float)
        else:
            v = np.asarray(self.point_fn(ens.positions, t), dtype=float)
        if v.shape != ens.positions.shape:
            raise ValueError(
                f"field {self.provenance!r} returned shape {v.shape}, expected {ens.positions.shape}"
            )
        return v

    def at_points(self, points: np.ndarray, t: float = 0.0) -> np.ndarray:
        """Evaluate at arbitrary points; only pointwise fields support this."""
        if self.point_fn is None:
            raise ValueError(
                f"field {self.provenance!r} is bound to its ensemble and cannot be "
                "evaluated at arbitrary points"
            )
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.asarray(self.point_fn(pts, t), dtype=float)
