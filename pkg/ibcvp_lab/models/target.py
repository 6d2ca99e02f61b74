"""
Linearized target data and the boundary/corner records built from them.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from ibcvp_lab.models.grid import CornerGrid


@dataclass(frozen=True)
class TargetData:
    """
    tau' = (F, (gamma', kappa', nu', V'_S)_S, (sigma', ell', V'_C)_C, (alpha')_Sigma).

    Shapes: f (D, D, *grid); gamma_p, kappa_p (n, n, *S); nu_p, v_s (D, *S);
    sigma_p (n, n, *C) in boundary indices (t, x^A); ell_p (*C); v_c (D, *C);
    alpha_p (*Sigma). S = grid.shape[1:], C = (Nt+1, *Sigma).
    """

    f: np.ndarray
    gamma_p: np.ndarray
    kappa_p: np.ndarray
    nu_p: np.ndarray
    v_s: np.ndarray
    sigma_p: np.ndarray
    ell_p: np.ndarray
    v_c: np.ndarray
    alpha_p: np.ndarray

    @classmethod
    def zeros(cls, grid: CornerGrid) -> "TargetData":
        d, n = grid.dim, grid.n
        s_shape = grid.spatial_shape
        c_shape = grid.boundary().shape
        return cls(
            f=np.zeros((d, d) + grid.shape),
            gamma_p=np.zeros((n, n) + s_shape),
            kappa_p=np.zeros((n, n) + s_shape),
            nu_p=np.zeros((d,) + s_shape),
            v_s=np.zeros((d,) + s_shape),
            sigma_p=np.zeros((n, n) + c_shape),
            ell_p=np.zeros(c_shape),
            v_c=np.zeros((d,) + c_shape),
            alpha_p=np.zeros(grid.sigma_shape),
        )

    # linear structure -------------------------------------------------- #
    def scaled(self, factor: float) -> "TargetData":
        return TargetData(**{f.name: factor * getattr(self, f.name) for f in fields(self)})

    def __add__(self, other: "TargetData") -> "TargetData":
        return TargetData(**{
            f.name: getattr(self, f.name) + getattr(other, f.name) for f in fields(self)
        })

    def __sub__(self, other: "TargetData") -> "TargetData":
        return self + other.scaled(-1.0)

    def with_fields(self, **changes: np.ndarray) -> "TargetData":
        return replace(self, **changes)

    def weighted(self, weight_sigma: np.ndarray) -> "TargetData":
        """Multiply every field by a weight depending on x^A only."""
        out = {}
        for f in fields(self):
            arr = getattr(self, f.name)
            out[f.name] = arr * weight_sigma.reshape((1,) * (arr.ndim - weight_sigma.ndim) + weight_sigma.shape)
        return TargetData(**out)

    def max_norm(self) -> float:
        return max(float(np.max(np.abs(getattr(self, f.name)))) for f in fields(self))


@dataclass
class BoundaryEvolutionState:
    """
    Boundary unknowns on C: u = (1/n) tr_C h, hnu_t = h(nu)^T (n components in
    boundary indices), h_nunu = h(nu, nu), plus the assembled right-hand sides.
    """

    u: np.ndarray
    hnu_t: np.ndarray
    h_nunu: np.ndarray
    sources: dict[str, np.ndarray]

    def reconciliation(self, other: "BoundaryEvolutionState") -> dict[str, float]:
        return {
            "u": float(np.max(np.abs(self.u - other.u))),
            "hnu_t": float(np.max(np.abs(self.hnu_t - other.hnu_t))),
            "h_nunu": float(np.max(np.abs(self.h_nunu - other.h_nunu))),
        }


@dataclass(frozen=True)
class CornerDataReport:
    residuals: dict[str, float]
    gating: tuple[str, ...]
    first_order: tuple[str, ...]
    tolerance: float
    first_order_tolerance: float

    @property
    def passed(self) -> bool:
        return all(self.residuals[k] <= self.tolerance for k in self.gating)

    @property
    def first_order_passed(self) -> bool:
        return all(
            v <= self.first_order_tolerance
            for k, v in self.residuals.items() if k in self.first_order
        )

    def failing(self) -> list[str]:
        return [k for k in self.gating if self.residuals[k] > self.tolerance]

    def to_dict(self) -> dict:
        return {
            "residuals": dict(sorted(self.residuals.items())),
            "gating": list(self.gating),
            "passed": self.passed,
            "first_order_passed": self.first_order_passed,
        }
