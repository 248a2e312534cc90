"""Anderson (type-II) mixing for fixed-point iterations z <- G(z).

Used to accelerate Sinkhorn potential updates; a handful of history vectors
cuts the iteration count by an order of magnitude at small regularization.
The proposal solves the small least-squares problem

    min_alpha || sum_i alpha_i r_i ||,  sum_i alpha_i = 1,

over the stored residuals ``r_i = G(z_i) - z_i`` and combines the stored
``G(z_i)`` accordingly.  Callers are expected to safeguard: on residual
blow-up, ``reset()`` and take a plain step.
"""
from __future__ import annotations

import numpy as np


class AndersonMixer:
    def __init__(self, depth: int = 6):
        self.depth = depth
        self._G: list[np.ndarray] = []
        self._R: list[np.ndarray] = []

    def reset(self) -> None:
        self._G.clear()
        self._R.clear()

    def push(self, z: np.ndarray, Gz: np.ndarray) -> None:
        self._G.append(Gz)
        self._R.append(Gz - z)
        if len(self._G) > self.depth:
            self._G.pop(0)
            self._R.pop(0)

    def propose(self) -> np.ndarray:
        """Next iterate; falls back to the last G(z) with short history."""
        if len(self._G) == 1:
            return self._G[-1]
        R = np.stack(self._R, axis=1)
        dR = R[:, 1:] - R[:, :-1]
        gamma, *_ = np.linalg.lstsq(dR, R[:, -1], rcond=None)
        alpha = np.zeros(R.shape[1])
        alpha[-1] = 1.0
        alpha[1:] -= gamma
        alpha[:-1] += gamma
        return np.stack(self._G, axis=1) @ alpha
