"""
Corner grids, model metrics, smooth perturbations, hypersurface frames and
the localization utilities (rescaling and epsilon measurement).
"""

from __future__ import annotations

import numpy as np
import pandas as pd
from pydantic import ValidationError
from scipy.ndimage import map_coordinates

from ibcvp_lab.errors import GeometryError, InvalidInputError, NumericalFailure
from ibcvp_lab.logconf import logger
from ibcvp_lab.models.fields import MetricField, inverse_metric
from ibcvp_lab.models.frame import BoundaryFrame, LocalizationReport
from ibcvp_lab.models.grid import CornerGrid, GridParams, make_grid
from ibcvp_lab.services.discrete_calculus import (
    boundary_metric, ein, geometry, gradient, hessian,
    second_fundamental_form, tangential, unit_normal,
)
from ibcvp_lab.settings import settings

PROFILES = ("bump", "gaussian", "curved_corner")


# ---------------------------------------------------------------------- #
# grid                                                                   #
# ---------------------------------------------------------------------- #
def build_grid(params: GridParams | dict | None = None, **overrides) -> CornerGrid:
    """Validated corner grid; CFL above the bound is rejected."""
    try:
        if params is None or isinstance(params, dict):
            params = GridParams(**{**(params or {}), **overrides})
        elif overrides:
            params = params.model_copy(update=overrides)
    except ValidationError as exc:
        raise InvalidInputError(f"invalid grid parameters: {exc}") from exc

    cfl = params.dt / params.dx
    if cfl > params.cfl_bound + 1e-12:
        raise InvalidInputError(
            f"CFL number {cfl:.3g} exceeds the bound {params.cfl_bound:.3g}"
        )
    grid = make_grid(params.n, params.dt, params.dx, params.t_max, params.l1, params.la,
                     params.cfl_bound)
    if min(grid.shape) < 4:
        raise InvalidInputError(f"grid {grid.shape} is too small for the one-sided stencils")
    logger.debug("Built corner grid %s (cfl %.3g)", grid.shape, cfl)
    return grid


def check_support_margin(grid: CornerGrid, support: np.ndarray, speed: float = 1.0) -> float:
    """
    Distance from a spatial support set to the outer faces, minus the light
    cone reach over the run. Raises when the data can reach an outer face.
    """
    if not np.any(support):
        return np.inf
    coords = grid.spatial_coords()
    margin = float(np.min(coords[0][support]) - grid.x1[0])
    for axis, xa in enumerate(grid.xa, start=1):
        sel = coords[axis][support]
        margin = min(margin, float(np.min(sel) - xa[0]), float(xa[-1] - np.max(sel)))
    slack = margin - speed * float(grid.t[-1]) - grid.dx
    if slack < 0:
        raise InvalidInputError(
            f"data support reaches the outer faces before t={grid.t[-1]:.3g} "
            f"(margin {margin:.3g})"
        )
    return slack


# ---------------------------------------------------------------------- #
# metrics                                                                #
# ---------------------------------------------------------------------- #
def model_components(alpha0: float, dim: int) -> np.ndarray:
    g = np.eye(dim)
    g[0, 0] = -1.0
    g[0, 1] = g[1, 0] = -alpha0
    return g


def minkowski_corner(alpha0: float, grid: CornerGrid) -> MetricField:
    """Flat model metric g_00 = -1, g_01 = -alpha0, g_ii = 1."""
    if abs(alpha0) >= settings.alpha_max:
        raise InvalidInputError(f"|alpha0| = {abs(alpha0)} must stay below {settings.alpha_max}")
    comp = model_components(alpha0, grid.dim)
    data = np.broadcast_to(comp.reshape(comp.shape + (1,) * len(grid.shape)),
                           comp.shape + grid.shape).copy()
    return MetricField(data, grid)


def smooth_bump(rho: np.ndarray) -> np.ndarray:
    """exp(1 - 1/(1 - rho^2)) inside the unit ball, 0 outside; peak 1."""
    rho = np.asarray(rho, dtype=float)
    out = np.zeros_like(rho)
    inside = rho < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - rho[inside] ** 2))
    return out


def profile_field(
    grid: CornerGrid, profile: str, radius: float = 0.6,
    center: tuple[float, ...] | None = None,
) -> np.ndarray:
    """Perturbation direction q (sym2 on the grid) for a named profile."""
    if profile not in PROFILES:
        raise InvalidInputError(f"unknown profile {profile!r}")
    coords = grid.coords()[1:]
    center = center or (0.0,) * grid.n
    rho2 = sum((x - c) ** 2 for x, c in zip(coords, center)) / radius**2
    q = np.zeros((grid.dim, grid.dim) + grid.shape)
    if profile == "bump":
        q[2, 2] = smooth_bump(np.sqrt(rho2))
    elif profile == "gaussian":
        q[2, 2] = np.exp(-4.5 * rho2)
    else:
        # bends Sigma inside S: H_Sigma = eps/2 at the center
        q[2, 2] = coords[0] * smooth_bump(np.sqrt(rho2))
    return q


def perturb_metric(
    g0: MetricField, profile: str, eps: float, radius: float = 0.6,
    center: tuple[float, ...] | None = None,
) -> MetricField:
    if eps == 0:
        return MetricField(g0.components.copy(), g0.grid)
    q = profile_field(g0.grid, profile, radius, center)
    try:
        return MetricField(g0.components + eps * q, g0.grid)
    except GeometryError as exc:
        raise NumericalFailure(f"perturbation lost Lorentzian signature: {exc}") from exc


# ---------------------------------------------------------------------- #
# frames                                                                 #
# ---------------------------------------------------------------------- #
def _on_s(arr: np.ndarray, ncoord: int) -> np.ndarray:
    return np.take(arr, 0, axis=arr.ndim - ncoord)


def _on_c(arr: np.ndarray, ncoord: int) -> np.ndarray:
    return np.take(arr, -1, axis=arr.ndim - ncoord + 1)


def corner_angle(g_sigma: np.ndarray) -> np.ndarray:
    """alpha = g(nu_S, nu_C) = -g^{01} / (sqrt(-g^{00}) sqrt(g^{11}))."""
    ginv = inverse_metric(g_sigma)
    return -ginv[0, 1] / (np.sqrt(-ginv[0, 0]) * np.sqrt(ginv[1, 1]))


def boundary_time_vector(g_c: np.ndarray) -> np.ndarray:
    """T^C in boundary indices: future unit normal of Sigma within (C, g_C)."""
    return unit_normal(inverse_metric(g_c), 0, timelike=True)


def embed_boundary_vector(w: np.ndarray, dim: int) -> np.ndarray:
    """(t, x^A) components to spacetime components with zero x^1 slot."""
    out = np.zeros((dim,) + w.shape[1:], dtype=w.dtype)
    out[tangential(1, dim)] = w
    return out


def slice_normal_vector(gamma: np.ndarray, dim: int) -> np.ndarray:
    """N^i = gamma^{i1}/sqrt(gamma^{11}) embedded with zero t slot."""
    n_sp = unit_normal(inverse_metric(gamma), 0, timelike=False)
    out = np.zeros((dim,) + n_sp.shape[1:], dtype=n_sp.dtype)
    out[1:] = n_sp
    return out


def sigma_curvature_in_slice(gamma: np.ndarray, spacings: tuple[float, ...]) -> tuple[np.ndarray, np.ndarray]:
    """(B_Sigma, H_Sigma) of Sigma = {x^1 = 0} inside (S, gamma)."""
    dgam = gradient(gamma, spacings)
    return _face(gamma, dgam, len(spacings), 0, False, -1)


def sigma_curvature_in_boundary(g_c: np.ndarray, spacings: tuple[float, ...]) -> np.ndarray:
    """H_sigma of Sigma = {t = 0} inside (C, g_C), future normal."""
    dg = gradient(g_c, spacings)
    return _face(g_c, dg, len(spacings), 0, True, 0)[1]


def _face(g, dg, ncoord, k, timelike, index):
    gs = np.take(g, index, axis=g.ndim - ncoord + k)
    dgs = np.take(dg, index, axis=dg.ndim - ncoord + k)
    a, h, _ = second_fundamental_form(gs, dgs, k, timelike)
    return a, h


def boundary_metric_field(g: MetricField) -> MetricField:
    """(C, g_C) as a metric on the boundary grid."""
    return MetricField(boundary_metric(geometry(g)), g.grid.boundary())


def hypersurface_frame(g: MetricField, grid: CornerGrid | None = None) -> BoundaryFrame:
    grid = grid or g.grid
    bg = geometry(g)
    ncoord = len(bg.spacings)
    s_inv = _on_s(bg.ginv, ncoord)
    c_inv = _on_c(bg.ginv, ncoord)
    if np.any(s_inv[0, 0].real >= 0):
        raise GeometryError("initial slice S is not spacelike")
    if np.any(c_inv[1, 1].real <= 0):
        raise GeometryError("boundary C is not timelike")

    bg_s = bg.at_slice(0)
    nu_s = unit_normal(bg_s.ginv, 0, timelike=True)
    k_s, _, _ = second_fundamental_form(bg_s.g, bg_s.dg, 0, timelike=True)
    gamma = bg_s.g[1:, 1:]
    n_s = slice_normal_vector(gamma, grid.dim)

    g_c_full = _on_c(bg.g, ncoord)
    nu_c = unit_normal(c_inv, 1, timelike=False)
    a_c, h_c, _ = second_fundamental_form(g_c_full, _on_c(bg.dg, ncoord), 1, timelike=False)
    g_c = boundary_metric(bg)
    t_c = embed_boundary_vector(boundary_time_vector(g_c), grid.dim)

    alpha = corner_angle(g_c_full[:, :, 0])
    b_sigma, h_sigma_s = sigma_curvature_in_slice(gamma, grid.spatial_spacings)
    h_sigma_c = sigma_curvature_in_boundary(g_c, grid.boundary().spacings)
    return BoundaryFrame(
        nu_s=nu_s, n_s=n_s, k_s=k_s, nu_c=nu_c, t_c=t_c, a_c=a_c, h_c=h_c,
        alpha=alpha, b_sigma=b_sigma, h_sigma_s=h_sigma_s, h_sigma_c=h_sigma_c,
    )


def frame_residuals(g: MetricField, frame: BoundaryFrame) -> dict[str, float]:
    """Orthonormality and angle-consistency defects of a frame."""
    bg = geometry(g)
    ncoord = len(bg.spacings)
    g_s = _on_s(bg.g, ncoord)
    g_c = _on_c(bg.g, ncoord)
    g_sigma = g_c[:, :, 0]

    def pair(gm, a, b):
        return ein("ab...,a...,b...->...", gm, a, b)

    nu_s_sigma = frame.nu_s[:, -1]
    nu_c_sigma = frame.nu_c[:, 0]
    return {
        "nu_s_norm": float(np.max(np.abs(pair(g_s, frame.nu_s, frame.nu_s) + 1.0))),
        "nu_c_norm": float(np.max(np.abs(pair(g_c, frame.nu_c, frame.nu_c) - 1.0))),
        "angle": float(np.max(np.abs(pair(g_sigma, nu_s_sigma, nu_c_sigma) - frame.alpha))),
        "angle_tn": float(np.max(np.abs(
            -pair(g_sigma, frame.t_c[:, 0], frame.n_s[:, -1]) - frame.alpha
        ))),
        "t_norm": float(np.max(np.abs(pair(g_sigma, frame.t_c[:, 0], frame.t_c[:, 0]) + 1.0))),
    }


# ---------------------------------------------------------------------- #
# localization                                                           #
# ---------------------------------------------------------------------- #
def rescale(g: MetricField, lam: float) -> MetricField:
    """Components sampled at lam * x on the same coordinate grid."""
    if not 0.0 < lam <= 1.0:
        raise InvalidInputError(f"rescaling factor {lam} outside (0, 1]")
    if lam == 1.0:
        return MetricField(g.components.copy(), g.grid)
    grid = g.grid
    axes = (grid.t, grid.x1) + grid.xa
    idx = np.meshgrid(
        *[(lam * ax - ax[0]) / (ax[1] - ax[0]) for ax in axes], indexing="ij"
    )
    for i, (ix, ax) in enumerate(zip(idx, axes)):
        if np.min(ix) < -1e-9 or np.max(ix) > ax.size - 1 + 1e-9:
            raise InvalidInputError(f"rescaled samples leave the domain along axis {i}")
    coords = np.stack(idx)
    out = np.empty_like(g.components)
    d = grid.dim
    for a in range(d):
        for b in range(a, d):
            out[a, b] = out[b, a] = map_coordinates(
                g.components[a, b], coords, order=3, mode="nearest"
            )
    return MetricField(out, grid)


def _derivative_stack(f: np.ndarray, spacings: tuple[float, ...], k: int) -> np.ndarray:
    if k == 0:
        return f
    if k == 1:
        return gradient(f, spacings)
    if k == 2:
        return hessian(f, spacings)
    return gradient(hessian(f, spacings), spacings)


def fit_corner_angle(g: MetricField, width: int = 3) -> float:
    """
    alpha0 from a least-squares fit g01 ~ c0 + c_t t + c_1 x1 over the first
    `width` slices and the last `width` x1 columns; Sigma sits at t = x1 = 0,
    so alpha0 = -c0.
    """
    block = (slice(0, width), slice(-width, None))
    t, x1 = (c[block].ravel() for c in g.grid.coords()[:2])
    y = g.components[0, 1].real[block].ravel()
    design = np.column_stack([np.ones_like(t), t, x1])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return float(-coef[0])


def localization_epsilon(g: MetricField, k_max: int = settings.eps_k_max) -> LocalizationReport:
    """eps_k = max-norm of k-th differences of g - g_alpha0 for k <= k_max."""
    if not 0 <= k_max <= 3:
        raise InvalidInputError(f"k_max={k_max} exceeds the stencil width (3)")
    alpha0 = fit_corner_angle(g)
    dev = g.components.real - model_components(alpha0, g.grid.dim).reshape(
        (g.grid.dim,) * 2 + (1,) * len(g.grid.shape)
    )
    eps_k = tuple(
        float(np.max(np.abs(_derivative_stack(dev, g.grid.spacings, k))))
        for k in range(k_max + 1)
    )
    return LocalizationReport(eps_k=eps_k, alpha0=alpha0)


# ---------------------------------------------------------------------- #
# snapshots                                                              #
# ---------------------------------------------------------------------- #
def metric_frame(g: MetricField) -> pd.DataFrame:
    """One row per node: coordinates then the independent components."""
    grid = g.grid
    names = ["t", "x1"] + [f"x{a}" for a in range(2, grid.n + 1)]
    cols = {name: c.ravel() for name, c in zip(names, grid.coords())}
    for a in range(grid.dim):
        for b in range(a, grid.dim):
            cols[f"g{a}{b}"] = g.components[a, b].real.ravel()
    return pd.DataFrame(cols)

