from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

Status = Literal["completed", "collapsed", "expanded"]


@dataclass
class CylinderTrajectory:
    alpha: float
    t: np.ndarray
    r: np.ndarray
    rdot: np.ndarray
    status: Status
    end_time: float

    @property
    def v(self) -> np.ndarray:
        return self.r ** 2 + self.rdot ** 2


@dataclass
class CylinderDiagnostics:
    h: np.ndarray
    conformal_residual: np.ndarray
    corner_angle: float           # g(nu_S, nu_C) = -alpha
    slope: float                  # alpha itself

    @property
    def max_h_deviation(self) -> float:
        return float(np.max(np.abs(self.h - 2.0)))


@dataclass
class FamilyRow:
    alpha: float
    status: Status
    t_or_final_r: float
    max_h_dev: float
    max_conformal_residual: float


@dataclass
class FamilyScan:
    rows: list[FamilyRow]
    trajectories: list[CylinderTrajectory]

    def separation(self) -> float:
        """Smallest pairwise sup |r_i - r_j| on the common existence interval."""
        best = np.inf
        for i, a in enumerate(self.trajectories):
            for b in self.trajectories[i + 1:]:
                end = min(a.end_time, b.end_time)
                t = a.t[a.t <= end]
                gap = np.abs(a.r[: t.size] - np.interp(t, b.t, b.r))
                best = min(best, float(np.max(gap)))
        return float(best) if np.isfinite(best) else 0.0

    def to_rows(self) -> list[dict]:
        return [
            {"alpha": r.alpha, "status": r.status, "T_or_final_r": r.t_or_final_r,
             "maxHdev": r.max_h_dev}
            for r in self.rows
        ]
