"""
Corner grid on {t >= 0, x1 <= 0}.

Field arrays keep component axes first and coordinate axes last, in the
order (t, x1, x2, ..., xn). S is t-index 0, C is x1-index -1 and the
corner Sigma is their intersection. The outer faces of the slab are
x1-index 0 and both ends of every x^A axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from pydantic import BaseModel, Field

from ibcvp_lab.logconf import logger
from ibcvp_lab.settings import settings


class GridParams(BaseModel):
    n: int = Field(settings.n, ge=2, le=3)
    dt: float = Field(settings.dt, gt=0)
    dx: float = Field(settings.dx, gt=0)
    t_max: float = Field(settings.t_max, gt=0)
    l1: float = Field(settings.l1, gt=0)
    la: float = Field(settings.la, gt=0)
    cfl_bound: float = Field(settings.cfl_bound, gt=0)


@dataclass(frozen=True)
class BoundaryGrid:
    """Coordinates (t, x^A) on the timelike boundary C."""

    t: np.ndarray
    xa: tuple[np.ndarray, ...]
    dt: float
    dx: float

    @property
    def spacings(self) -> tuple[float, ...]:
        return (self.dt,) + (self.dx,) * len(self.xa)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.t.size,) + tuple(a.size for a in self.xa)

    @property
    def dim(self) -> int:
        return 1 + len(self.xa)

    def coords(self) -> list[np.ndarray]:
        return np.meshgrid(self.t, *self.xa, indexing="ij")


@dataclass(frozen=True)
class CornerGrid:
    n: int
    dt: float
    dx: float
    t: np.ndarray
    x1: np.ndarray
    xa: tuple[np.ndarray, ...]
    cfl_bound: float = settings.cfl_bound

    # ------------------------------------------------------------------ #
    @property
    def dim(self) -> int:
        return self.n + 1

    @property
    def spacings(self) -> tuple[float, ...]:
        return (self.dt,) + (self.dx,) * self.n

    @property
    def spatial_spacings(self) -> tuple[float, ...]:
        return (self.dx,) * self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.t.size, self.x1.size) + tuple(a.size for a in self.xa)

    @property
    def spatial_shape(self) -> tuple[int, ...]:
        return self.shape[1:]

    @property
    def steps(self) -> int:
        return self.t.size - 1

    @property
    def cfl(self) -> float:
        return self.dt / self.dx

    @property
    def sigma_shape(self) -> tuple[int, ...]:
        return tuple(a.size for a in self.xa)

    @property
    def sigma_count(self) -> int:
        return int(np.prod(self.sigma_shape))

    # ------------------------------------------------------------------ #
    def coords(self) -> list[np.ndarray]:
        """Coordinate fields t, x1, x2, ... broadcast to the full grid."""
        return np.meshgrid(self.t, self.x1, *self.xa, indexing="ij")

    def spatial_coords(self) -> list[np.ndarray]:
        return np.meshgrid(self.x1, *self.xa, indexing="ij")

    def sigma_coords(self) -> list[np.ndarray]:
        return np.meshgrid(*self.xa, indexing="ij")

    def boundary(self) -> BoundaryGrid:
        return BoundaryGrid(t=self.t, xa=self.xa, dt=self.dt, dx=self.dx)

    def refined(self, factor: int = 2) -> "CornerGrid":
        """Same extents, spacings divided by `factor`."""
        return make_grid(
            self.n, self.dt / factor, self.dx / factor, float(self.t[-1]),
            float(-self.x1[0]), float(self.xa[0][-1]), self.cfl_bound,
        )

    # masks ------------------------------------------------------------ #
    @cached_property
    def outer_mask(self) -> np.ndarray:
        """Spatial nodes on the artificial outer faces."""
        mask = np.zeros(self.spatial_shape, dtype=bool)
        mask[0] = True
        for axis in range(1, self.n):
            idx = [slice(None)] * self.n
            idx[axis] = 0
            mask[tuple(idx)] = True
            idx[axis] = -1
            mask[tuple(idx)] = True
        return mask

    @cached_property
    def face_mask(self) -> np.ndarray:
        """Spatial nodes carrying Dirichlet data: C plus the outer faces."""
        mask = self.outer_mask.copy()
        mask[-1] = True
        return mask

    @cached_property
    def interior_mask(self) -> np.ndarray:
        """Spacetime nodes away from S, the final slice and every face."""
        mask = np.zeros(self.shape, dtype=bool)
        mask[1:-1] = ~self.face_mask
        return mask


def _steps(name: str, extent: float, step: float) -> int:
    count = int(round(extent / step))
    if abs(count * step - extent) > 1e-12:
        logger.warning("%s=%g is not a multiple of %g; grid extent is %.17g",
                       name, extent, step, count * step)
    return count


def make_grid(
    n: int, dt: float, dx: float, t_max: float, l1: float, la: float,
    cfl_bound: float = settings.cfl_bound,
) -> CornerGrid:
    nt = _steps("t_max", t_max, dt)
    n1 = _steps("l1", l1, dx)
    na = _steps("la", la, dx)
    t = dt * np.arange(nt + 1)
    x1 = np.linspace(-n1 * dx, 0.0, n1 + 1)
    xa = tuple(dx * np.arange(-na, na + 1) for _ in range(n - 1))
    return CornerGrid(n=n, dt=dt, dx=dx, t=t, x1=x1, xa=xa, cfl_bound=cfl_bound)
