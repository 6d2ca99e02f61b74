"""
Solver records and verification reports. All of them serialize to plain
dicts so the CLI can write them as JSON.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from ibcvp_lab.models.fields import MetricField

# P(k, w, dw) -> array shaped like w at time index k; dw[0] is the time derivative
Coupling = Callable[[int, np.ndarray, np.ndarray], np.ndarray]


@dataclass
class WaveProblemSpec:
    """
    -1/2 box_g w + P(w, dw) = source for a stack of components w[c, t, x...].

    `metric` is the wave metric on the grid the unknown lives on (bulk or
    C). `boundary_data` covers every face node, zero when omitted.
    """

    metric: MetricField
    source: np.ndarray
    initial_value: np.ndarray
    initial_velocity: np.ndarray
    boundary_data: np.ndarray | None = None
    coupling: Coupling | None = None
    face_mask: np.ndarray | None = None
    check_compatibility: bool = True


@dataclass
class FieldHistory:
    values: np.ndarray        # (components, Nt+1, *space), components flattened
    times: np.ndarray
    cfl: float
    component_shape: tuple[int, ...] = (1,)

    def __post_init__(self) -> None:
        if self.values.shape[1] != self.times.size:
            raise ValueError("slice count does not match time stamps")

    @property
    def steps(self) -> int:
        return self.times.size - 1

    def slice(self, k: int) -> np.ndarray:
        return self.values[:, k].reshape(self.component_shape + self.values.shape[2:])

    def field(self) -> np.ndarray:
        """Values with the original component axes restored."""
        return self.values.reshape(self.component_shape + self.values.shape[1:])


@dataclass
class EnergySeries:
    times: np.ndarray
    norms: dict[int, np.ndarray]     # s -> per-slice norm

    def rows(self) -> list[dict]:
        return [
            {"t": float(t), "s": s, "norm": float(vals[i])}
            for s, vals in sorted(self.norms.items())
            for i, t in enumerate(self.times)
        ]


@dataclass
class ConstraintResidual:
    c0: np.ndarray
    ci: np.ndarray

    def max_norm(self, interior: tuple[slice, ...] | None = None) -> float:
        c0, ci = self.c0, self.ci
        if interior is not None:
            c0 = c0[interior]
            ci = ci[(slice(None),) + interior]
        return float(max(np.max(np.abs(c0)), np.max(np.abs(ci))))


@dataclass
class ResidualReport:
    sup_norm: float
    slice_norms: list[float]
    bound: float

    @property
    def passed(self) -> bool:
        return self.sup_norm <= self.bound

    def to_dict(self) -> dict:
        return {"sup_norm": self.sup_norm, "slice_norms": self.slice_norms,
                "bound": self.bound, "pass": self.passed}


@dataclass
class StageRecord:
    label: str
    norm_c0: float
    norm_h1: float
    residual: float
    gauge_norm: float
    derivative_order: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class IterationTrace:
    stages: list[StageRecord] = field(default_factory=list)

    def add(self, record: StageRecord) -> None:
        self.stages.append(record)

    def correction_norms(self) -> list[float]:
        """C0 norms of the E_m corrections (stages labelled E_m)."""
        return [s.norm_c0 for s in self.stages if s.label.startswith("E_")]

    @property
    def ratios(self) -> list[float]:
        """|E_{m+1}| / |E_m| over consecutive corrections."""
        norms = self.correction_norms()
        return [b / a if a > 0 else 0.0 for a, b in zip(norms, norms[1:])]

    def mean_ratio(self) -> float:
        r = self.ratios
        return float(np.mean(r)) if r else 0.0

    def to_dict(self) -> dict:
        return {"stages": [s.to_dict() for s in self.stages], "ratios": self.ratios}


@dataclass
class VerificationReport:
    residuals: dict[str, float]
    bound: float

    @property
    def passed(self) -> bool:
        return all(v <= self.bound for v in self.residuals.values())

    def to_dict(self) -> dict:
        return {"residuals": dict(sorted(self.residuals.items())),
                "bound": self.bound, "pass": self.passed}


@dataclass
class DecayReport:
    """Max-norm of h on the last slice and its peak over every slice."""

    seed: float
    initial_norm: float
    final_norm: float
    peak_norm: float
    peak_time: float

    @property
    def growth(self) -> float:
        return self.peak_norm / self.initial_norm if self.initial_norm > 0 else 0.0

    @property
    def passed(self) -> bool:
        return self.peak_norm <= 100.0 * self.seed

    def to_dict(self) -> dict:
        return {"seed": self.seed, "initial_norm": self.initial_norm,
                "final_norm": self.final_norm, "peak_norm": self.peak_norm,
                "peak_time": self.peak_time, "growth": self.growth, "pass": self.passed}
