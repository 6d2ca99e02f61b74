from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class GaugeCauchyData:
    """V' on S, its time derivative on S, and V' on C (vector components)."""

    v_s: np.ndarray
    dt_v_s: np.ndarray
    v_c: np.ndarray

    def scaled(self, factor: float) -> "GaugeCauchyData":
        return GaugeCauchyData(factor * self.v_s, factor * self.dt_v_s, factor * self.v_c)


@dataclass
class GaugeState:
    """
    Background gauge V together with the linearized gauge V' split as
    V' = V'_F + W'_h. W' carries zero Cauchy and Dirichlet data.
    """

    v: np.ndarray
    v_f: np.ndarray
    w_prime: np.ndarray
    cauchy: GaugeCauchyData
    norms: dict[str, float] = field(default_factory=dict)

    @property
    def v_prime(self) -> np.ndarray:
        return self.v_f + self.w_prime

    def split_defect(self, v_prime_h: np.ndarray) -> float:
        """Distance between an independently computed V'_h and V'_F + W'_h."""
        return float(np.max(np.abs(v_prime_h - self.v_prime)))

    def side_condition_defect(self) -> float:
        """Largest W' value on S or on C."""
        arr = self.w_prime
        return max(float(np.max(np.abs(arr[:, 0]))), float(np.max(np.abs(arr[:, :, -1]))))
