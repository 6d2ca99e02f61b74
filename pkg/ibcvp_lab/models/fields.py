"""
Field containers. Arrays carry component axes first, coordinate axes last.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from ibcvp_lab.errors import GeometryError, InvalidInputError, NumericalFailure
from ibcvp_lab.models.grid import BoundaryGrid, CornerGrid

Rank = Literal["scalar", "vector", "one_form", "sym2"]

_RANK_AXES = {"scalar": 0, "vector": 1, "one_form": 1, "sym2": 2}


@dataclass(frozen=True)
class TensorField:
    rank: Rank
    data: np.ndarray
    grid: CornerGrid

    def __post_init__(self) -> None:
        axes = _RANK_AXES.get(self.rank)
        if axes is None:
            raise InvalidInputError(f"unknown rank {self.rank!r}")
        expected = (self.grid.dim,) * axes + self.grid.shape
        if self.data.shape != expected:
            raise InvalidInputError(
                f"{self.rank} field has shape {self.data.shape}, expected {expected}"
            )
        if self.rank == "sym2" and not np.allclose(self.data, np.swapaxes(self.data, 0, 1)):
            raise InvalidInputError("sym2 field is not symmetric")

    @classmethod
    def zeros(cls, rank: Rank, grid: CornerGrid) -> "TensorField":
        shape = (grid.dim,) * _RANK_AXES[rank] + grid.shape
        return cls(rank, np.zeros(shape), grid)

    def __add__(self, other: "TensorField") -> "TensorField":
        return TensorField(self.rank, self.data + other.data, self.grid)

    def scaled(self, factor: float) -> "TensorField":
        return TensorField(self.rank, factor * self.data, self.grid)


@dataclass(frozen=True)
class MetricField:
    """Lorentzian metric g_{ab} on the corner grid."""

    components: np.ndarray
    grid: CornerGrid | BoundaryGrid
    signature: str = "-+"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        d = self.grid.dim
        if self.components.shape != (d, d) + self.grid.shape:
            raise InvalidInputError(f"metric has shape {self.components.shape}")
        if not np.allclose(self.components, np.swapaxes(self.components, 0, 1)):
            raise InvalidInputError("metric components are not symmetric")
        det = np.linalg.det(np.moveaxis(self.components.real, (0, 1), (-2, -1)))
        if not np.all(np.isfinite(det)) or np.any(det >= 0):
            raise GeometryError("metric is not Lorentzian at every node")

    @property
    def inverse(self) -> np.ndarray:
        if "ginv" not in self._cache:
            self._cache["ginv"] = inverse_metric(self.components)
        return self._cache["ginv"]


@dataclass(frozen=True)
class ConnectionCoefficients:
    """Gamma^c_{ab}, stored as gamma[c, a, b, ...]."""

    gamma: np.ndarray
    grid: CornerGrid

    def max_asymmetry(self) -> float:
        return float(np.max(np.abs(self.gamma - np.swapaxes(self.gamma, 1, 2))))


def inverse_metric(g: np.ndarray) -> np.ndarray:
    mats = np.moveaxis(g, (0, 1), (-2, -1))
    try:
        inv = np.linalg.inv(mats)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("singular metric node") from exc
    return np.moveaxis(inv, (-2, -1), (0, 1))
