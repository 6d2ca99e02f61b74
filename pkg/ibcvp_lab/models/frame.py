from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BoundaryFrame:
    """
    Hypersurface frame of a background. Shapes: nu_s, n_s on S as (D, *S);
    nu_c, t_c on C as (D, *C); a_c (n, n, *C) in boundary indices (t, x^A);
    alpha, h_sigma_s, h_sigma_c on Sigma.
    """

    nu_s: np.ndarray
    n_s: np.ndarray
    k_s: np.ndarray
    nu_c: np.ndarray
    t_c: np.ndarray
    a_c: np.ndarray
    h_c: np.ndarray
    alpha: np.ndarray
    b_sigma: np.ndarray
    h_sigma_s: np.ndarray    # mean curvature of Sigma in (S, gamma)
    h_sigma_c: np.ndarray    # mean curvature of Sigma in (C, g_C)


@dataclass(frozen=True)
class LocalizationReport:
    eps_k: tuple[float, ...]
    alpha0: float

    @property
    def eps(self) -> float:
        return max(self.eps_k)

    @property
    def k_max(self) -> int:
        return len(self.eps_k) - 1
