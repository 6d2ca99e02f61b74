"""
Corner compatibility, corner Cauchy data and the three boundary evolution
equations on C for u = (1/n) tr_C h, h(nu)^T and h(nu, nu).

Index bookkeeping: bulk fields carry spacetime components, C fields carry
boundary components (t, x^A) unless a docstring says otherwise, and Sigma
fields are C fields at t = 0 (equivalently S fields at x^1 = 0).
"""

from __future__ import annotations

import numpy as np
import pandas as pd

from ibcvp_lab.errors import InvalidInputError, NumericalFailure
from ibcvp_lab.logconf import logger
from ibcvp_lab.models.fields import MetricField, inverse_metric
from ibcvp_lab.models.gauge import GaugeState
from ibcvp_lab.models.reports import ResidualReport
from ibcvp_lab.models.target import BoundaryEvolutionState, CornerDataReport, TargetData
from ibcvp_lab.services.corner_geometry import (
    boundary_metric_field, boundary_time_vector, corner_angle, embed_boundary_vector,
    sigma_curvature_in_slice, smooth_bump, _face,
)
from ibcvp_lab.services.discrete_calculus import (
    BackgroundGeometry, bianchi, boundary_geometry_variation, boundary_metric,
    complex_step, covariant_one_form, divergence, dot, ein, extended_normal,
    gamma_dot_h, gauge_variation, geometry, gradient, killing, lie_derivative,
    lin_einstein_components, scalar_curvature, second_fundamental_form, slice_jet,
    tangential, trace, unit_normal,
)
from ibcvp_lab.services.wave_solvers import solve_boundary_cauchy_wave, solve_transport
from ibcvp_lab.settings import settings

GATING = ("c1_metric", "c15_lapse_shift")
FIRST_ORDER = ("c2_normal", "c3_first_order", "u_velocity", "x1_angle", "mean_curvature_relation")
U_MODES = ("Y", "E", "full")
MODES = ("Y", "Z", "E", "ZE", "full")
_PARTS = {
    "Y": frozenset("Y"), "Z": frozenset("Z"), "E": frozenset("E"),
    "ZE": frozenset("ZE"), "full": frozenset("YZE"),
}


# ---------------------------------------------------------------------- #
# restrictions                                                           #
# ---------------------------------------------------------------------- #
def _sigma_of_s(arr: np.ndarray, nsp: int) -> np.ndarray:
    return np.take(arr, -1, axis=arr.ndim - nsp)


def _sigma_of_c(arr: np.ndarray, nsp: int) -> np.ndarray:
    return np.take(arr, 0, axis=arr.ndim - nsp)


def _on_s(arr: np.ndarray, ncoord: int) -> np.ndarray:
    return np.take(arr, 0, axis=arr.ndim - ncoord)


def _on_c(arr: np.ndarray, ncoord: int, index: int = -1) -> np.ndarray:
    return np.take(arr, index, axis=arr.ndim - ncoord + 1)


def _unit_sym(dim: int, a: int, b: int, shape: tuple[int, ...]) -> np.ndarray:
    e = np.zeros((dim, dim) + shape)
    e[a, b] = e[b, a] = 1.0
    return e


def _pointwise_solve(m: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve m[i, k] x[k] = rhs[i] at every node."""
    a = np.moveaxis(m, (0, 1), (-2, -1))
    b = np.moveaxis(rhs, 0, -1)[..., None]
    try:
        x = np.linalg.solve(a, b)[..., 0]
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"singular pointwise system: {exc}") from exc
    return np.moveaxis(x, -1, 0)


def tangential_block(h: np.ndarray) -> np.ndarray:
    """h^T: the (t, x^A) block of a spacetime sym2."""
    tan = tangential(1, h.shape[0])
    return h[np.ix_(tan, tan)]


# ---------------------------------------------------------------------- #
# induced data                                                           #
# ---------------------------------------------------------------------- #
def corner_angle_variation(g: MetricField, h: np.ndarray) -> np.ndarray:
    """alpha'_h on Sigma for a bulk sym2 h."""
    ncoord, nsp = g.grid.dim, g.grid.n
    g_sigma = _sigma_of_s(_on_s(g.components, ncoord), nsp)
    h_sigma = _sigma_of_s(_on_s(h, ncoord), nsp)
    return complex_step(lambda s: corner_angle(g_sigma + s * h_sigma))


def _slice_normal_variation(g_s: np.ndarray, h_s: np.ndarray) -> np.ndarray:
    return complex_step(lambda s: unit_normal(inverse_metric(g_s + s * h_s), 0, timelike=True))


def induced_target_data(g: MetricField, h: np.ndarray) -> TargetData:
    """Target data tau' = (F, ...) read off a bulk field h."""
    bg = geometry(g)
    grid = g.grid
    ncoord = grid.dim
    dh = gradient(h, bg.spacings)
    h_s, dh_s = _on_s(h, ncoord), _on_s(dh, ncoord)
    g_s, dg_s = _on_s(bg.g, ncoord), _on_s(bg.dg, ncoord)
    kappa_p = complex_step(
        lambda s: second_fundamental_form(g_s + s * h_s, dg_s + s * dh_s, 0, timelike=True)[0]
    )
    v_p = gauge_variation(bg, h, dh)
    g_c = boundary_metric(bg)
    h_t = _on_c(tangential_block(h), ncoord)
    u = trace(h_t, inverse_metric(g_c)) / grid.n
    _, h_p, _ = boundary_geometry_variation(bg, h)
    return TargetData(
        f=lin_einstein_components(bg, h),
        gamma_p=h_s[1:, 1:],
        kappa_p=kappa_p,
        nu_p=_slice_normal_variation(g_s, h_s),
        v_s=_on_s(v_p, ncoord),
        sigma_p=h_t - u * g_c,
        ell_p=h_p,
        v_c=_on_c(v_p, ncoord),
        alpha_p=corner_angle_variation(g, h),
    )


# ---------------------------------------------------------------------- #
# corner Cauchy data                                                     #
# ---------------------------------------------------------------------- #
def _metric_from_normal(g_s: np.ndarray, gamma_p: np.ndarray, nu_p: np.ndarray) -> np.ndarray:
    """h on S with h_ij = gamma' and h_{0 alpha} fixed by nu'_{S,h} = nu'."""
    d = g_s.shape[0]
    shape = g_s.shape[2:]
    h = np.zeros_like(g_s)
    h[1:, 1:] = gamma_p
    base = _slice_normal_variation(g_s, h)
    cols = np.stack(
        [_slice_normal_variation(g_s, _unit_sym(d, 0, k, shape)) for k in range(d)], axis=1
    )
    x = _pointwise_solve(cols, nu_p - base)
    for k in range(d):
        h[0, k] = h[k, 0] = x[k]
    return h


def _corner_values(g: MetricField, tau: TargetData) -> tuple[np.ndarray, np.ndarray]:
    """(h, d_t h) on S before the angle correction."""
    bg_s = geometry(g).at_slice(0)
    sp = bg_s.spacings
    d = g.grid.dim
    shape = g.grid.spatial_shape
    h_s = _metric_from_normal(bg_s.g, tau.gamma_p, tau.nu_p)

    # K' is affine in d_t h_ij with slope 1/2 nu^0
    dt_h = np.zeros_like(h_s)
    k0 = complex_step(lambda s: second_fundamental_form(
        bg_s.g + s * h_s, bg_s.dg + s * slice_jet(h_s, dt_h, sp), 0, timelike=True)[0])
    nu0 = unit_normal(bg_s.ginv, 0, timelike=True)[0]
    dt_h[1:, 1:] = 2.0 * (tau.kappa_p - k0) / nu0

    base = gauge_variation(bg_s, h_s, slice_jet(h_s, dt_h, sp))
    zero = np.zeros_like(h_s)
    cols = np.stack([
        gauge_variation(bg_s, zero, slice_jet(zero, _unit_sym(d, 0, k, shape), sp))
        for k in range(d)
    ], axis=1)
    x = _pointwise_solve(cols, tau.v_s - base)
    for k in range(d):
        dt_h[0, k] = dt_h[k, 0] = x[k]
    return h_s, dt_h


def _angle_coefficient(g_sigma: np.ndarray) -> np.ndarray:
    d = g_sigma.shape[0]
    e01 = _unit_sym(d, 0, 1, g_sigma.shape[2:])
    return complex_step(lambda s: corner_angle(g_sigma + s * e01))


def _angle_defect(g: MetricField, tau: TargetData, h_s: np.ndarray) -> np.ndarray:
    nsp = g.grid.n
    g_sigma = _sigma_of_s(_on_s(g.components, g.grid.dim), nsp)
    h_sigma = _sigma_of_s(h_s, nsp)
    return tau.alpha_p - complex_step(lambda s: corner_angle(g_sigma + s * h_sigma))


def corner_cauchy_data(
    g: MetricField, tau: TargetData, check: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Full (h_ab, d_t h_ab) on S determined by the initial and corner data.
    h_ij = gamma', h_{0 alpha} from nu', d_t h_ij from kappa', d_t h_{0 alpha}
    from V'_S; a mismatch between alpha' and the angle variation of the
    slice data is carried by d_t h_01 near Sigma.
    """
    if check:
        report = corner_compatibility_check(g, tau)
        if not report.passed:
            raise InvalidInputError(f"corner data incompatible: {', '.join(report.failing())}")
    h_s, dt_h = _corner_values(g, tau)

    grid = g.grid
    g_sigma = _sigma_of_s(_on_s(g.components, grid.dim), grid.n)
    shift = _angle_defect(g, tau, h_s) / _angle_coefficient(g_sigma)
    x1 = grid.spatial_coords()[0]
    weight = smooth_bump(np.abs(x1) / abs(grid.x1[0]))
    dt_h[0, 1] = dt_h[1, 0] = dt_h[0, 1] + weight * shift[None]
    return h_s, dt_h


# ---------------------------------------------------------------------- #
# corner identities                                                      #
# ---------------------------------------------------------------------- #
def _velocity_terms(
    gamma: np.ndarray, kappa: np.ndarray, sigma: np.ndarray, alpha: np.ndarray,
    spatial_spacings: tuple[float, ...], boundary_spacings: tuple[float, ...],
) -> tuple[np.ndarray, np.ndarray]:
    """
    (T(phi), first-order corner residual) on Sigma for slice data (gamma,
    kappa), boundary conformal metric sigma and angle alpha:
    (n-1) T(phi) = sqrt(1+alpha^2) tr kappa - alpha H_Sigma - H_sigma,
    K^sigma + T(phi) sigma - sqrt(1+alpha^2) kappa + alpha B_Sigma.
    """
    n = len(spatial_spacings)
    b_sigma, h_sigma_s = sigma_curvature_in_slice(gamma, spatial_spacings)
    k_sig, h_sig_c = _face(sigma, gradient(sigma, boundary_spacings), n, 0, True, 0)
    kap = _sigma_of_s(kappa, n)[1:, 1:]
    gam = _sigma_of_s(gamma, n)[1:, 1:]
    root = np.sqrt(1.0 + alpha**2)
    vel = (root * trace(kap, inverse_metric(gam)) - alpha * h_sigma_s - h_sig_c) / (n - 1)
    sig = _sigma_of_c(sigma, n)[1:, 1:]
    return vel, k_sig + vel * sig - root * kap + alpha * b_sigma


def _background_corner(g: MetricField) -> dict[str, np.ndarray]:
    bg = geometry(g)
    bg_s = bg.at_slice(0)
    k_s, _, _ = second_fundamental_form(bg_s.g, bg_s.dg, 0, timelike=True)
    g_c = boundary_metric(bg)
    return {"gamma": bg_s.g[1:, 1:], "kappa": k_s, "sigma": g_c,
            "alpha": corner_angle(_sigma_of_c(_on_c(bg.g, g.grid.dim), g.grid.n))}


def _linearized_velocity_terms(g: MetricField, tau: TargetData) -> tuple[np.ndarray, np.ndarray]:
    grid = g.grid
    base = _background_corner(g)
    sp, bsp = grid.spatial_spacings, grid.boundary().spacings
    step = settings.complex_step

    vel, c3 = _velocity_terms(
        base["gamma"] + 1j * step * tau.gamma_p, base["kappa"] + 1j * step * tau.kappa_p,
        base["sigma"] + 1j * step * tau.sigma_p, base["alpha"] + 1j * step * tau.alpha_p,
        sp, bsp,
    )
    return np.imag(vel) / step, np.imag(c3) / step


def corner_u_velocity(g: MetricField, tau: TargetData) -> np.ndarray:
    """T(u)/2 on Sigma: the linearized conformal-factor velocity."""
    return _linearized_velocity_terms(g, tau)[0]


def mean_curvature_defect(g: MetricField) -> np.ndarray:
    """H_sigma - (sqrt(1+alpha^2) tr K - alpha H_Sigma) on the background."""
    grid = g.grid
    base = _background_corner(g)
    vel, _ = _velocity_terms(base["gamma"], base["kappa"], base["sigma"], base["alpha"],
                             grid.spatial_spacings, grid.boundary().spacings)
    return -(grid.n - 1) * vel


def _u_on_sigma(g: MetricField, h_s: np.ndarray, dt_h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(u, T(u)) on Sigma from Cauchy data on S."""
    grid = g.grid
    nsp = grid.n
    bg = geometry(g)
    g_c_sigma = _sigma_of_c(boundary_metric(bg), nsp)
    qinv = inverse_metric(g_c_sigma)
    dq = tangential_block(_sigma_of_s(_on_s(bg.dg[0], grid.dim), nsp))
    dqinv = -ein("ac...,cd...,db...->ab...", qinv, dq, qinv)
    h_t = tangential_block(_sigma_of_s(h_s, nsp))
    dh_t = tangential_block(_sigma_of_s(dt_h, nsp))
    u = trace(h_t, qinv) / grid.n
    du_t = (trace(dh_t, qinv) + trace(h_t, dqinv)) / grid.n
    t_b = boundary_time_vector(g_c_sigma)
    du_a = gradient(u, grid.spatial_spacings[1:])
    return u, t_b[0] * du_t + ein("a...,a...->...", t_b[1:], du_a)


def corner_compatibility_check(g: MetricField, tau: TargetData) -> CornerDataReport:
    grid = g.grid
    n, nsp = grid.n, grid.n
    bg = geometry(g)
    h_s, dt_h = _corner_values(g, tau)
    h_sigma = _sigma_of_s(h_s, nsp)
    g_c = boundary_metric(bg)
    g_c_sigma = _sigma_of_c(g_c, nsp)
    qinv = inverse_metric(g_c_sigma)
    sigma_p = _sigma_of_c(tau.sigma_p, nsp)

    h_tan = tangential_block(h_sigma)
    u = trace(h_tan, qinv) / n
    defect = h_tan - sigma_p - u * g_c_sigma

    # h* from (gamma', sigma' + u g_C, alpha') with u read off the Sigma block
    gam_sigma = _sigma_of_s(tau.gamma_p, nsp)[1:, 1:]
    u_star = trace(gam_sigma - sigma_p[1:, 1:], inverse_metric(g_c_sigma[1:, 1:])) / (n - 1)
    g_sigma = _sigma_of_c(_on_c(bg.g, grid.dim), nsp)
    h_star = np.zeros_like(h_sigma)
    h_star[1:, 1:] = _sigma_of_s(tau.gamma_p, nsp)
    h_star[0, 0] = sigma_p[0, 0] + u_star * g_c_sigma[0, 0]
    h_star[0, 2:] = sigma_p[0, 1:] + u_star * g_c_sigma[0, 1:]
    h_star[2:, 0] = h_star[0, 2:]
    h_star[0, 1] = h_star[1, 0] = 0.0
    rest = complex_step(lambda s: corner_angle(g_sigma + s * h_star))
    h_star[0, 1] = h_star[1, 0] = (tau.alpha_p - rest) / _angle_coefficient(g_sigma)
    nu_star = _slice_normal_variation(g_sigma, h_star)

    vel, c3 = _linearized_velocity_terms(g, tau)
    _, t_u = _u_on_sigma(g, h_s, dt_h)

    residuals = {
        "c1_metric": float(np.max(np.abs(defect[1:, 1:]))),
        "c15_lapse_shift": float(np.max(np.abs(defect[0]))),
        "fs_volume": float(np.max(np.abs(u))),
        "x1_angle": float(np.max(np.abs(_angle_defect(g, tau, h_s)))),
        "c2_normal": float(np.max(np.abs(_sigma_of_s(tau.nu_p, nsp) - nu_star))),
        "c3_first_order": float(np.max(np.abs(c3))),
        "u_velocity": float(np.max(np.abs(t_u - 2.0 * vel))),
        "mean_curvature_relation": float(np.max(np.abs(mean_curvature_defect(g)))),
    }
    report = CornerDataReport(
        residuals=residuals, gating=GATING, first_order=FIRST_ORDER,
        tolerance=settings.corner_tol,
        first_order_tolerance=settings.first_order_factor * max(grid.spacings) ** 2,
    )
    logger.debug("Corner compatibility: %s", report.to_dict())
    return report


# ---------------------------------------------------------------------- #
# boundary fields                                                        #
# ---------------------------------------------------------------------- #
def _context(g: MetricField) -> dict:
    """Background quantities on C shared by every boundary source."""
    cached = g._cache.get("boundary")
    if cached is None:
        bg = geometry(g)
        nc = g.grid.dim
        nu = extended_normal(bg)
        a_c, h_c, qinv = second_fundamental_form(_on_c(bg.g, nc), _on_c(bg.dg, nc), 1, timelike=False)
        g_c = boundary_metric_field(g)
        t_b = boundary_time_vector(g_c.components)
        cached = {
            "bg": bg, "bg_c": bg.at_slice(-1, axis=1), "cg": geometry(g_c), "g_c": g_c,
            "nu": nu, "dnu": gradient(nu, bg.spacings), "nu_c": _on_c(nu, nc),
            "a": a_c, "mean": h_c, "qinv": qinv, "t_b": t_b, "t": embed_boundary_vector(t_b, nc),
        }
        g._cache["boundary"] = cached
    return cached


def _lower(bg: BackgroundGeometry, vec: np.ndarray) -> np.ndarray:
    return ein("ab...,b...->a...", bg.g, vec)


def split_boundary_components(g: MetricField, h: np.ndarray) -> BoundaryEvolutionState:
    """(u, h(nu)^T, h_nunu) read off a bulk field at C."""
    ctx = _context(g)
    nc = g.grid.dim
    h_c = _on_c(h, nc)
    hnu = ein("ab...,b...->a...", h_c, ctx["nu_c"])
    return BoundaryEvolutionState(
        u=trace(tangential_block(h_c), ctx["qinv"]) / g.grid.n,
        hnu_t=hnu[tangential(1, nc)],
        h_nunu=ein("a...,a...->...", hnu, ctx["nu_c"]),
        sources={},
    )


def boundary_state_frame(g: MetricField, state: BoundaryEvolutionState) -> pd.DataFrame:
    """One row per C node: t, x^A, u, h(nu)^T components, h_nunu."""
    grid = g.grid
    names = ["t"] + [f"x{a}" for a in range(2, grid.n + 1)]
    cols = {name: c.ravel() for name, c in zip(names, grid.boundary().coords())}
    cols["u"] = np.real(state.u).ravel()
    for a, comp in enumerate(state.hnu_t):
        cols[f"hnu_t{a}"] = np.real(comp).ravel()
    cols["h_nunu"] = np.real(state.h_nunu).ravel()
    return pd.DataFrame(cols)


def assemble_boundary_metric(
    g: MetricField, sigma_p: np.ndarray, state: BoundaryEvolutionState,
) -> np.ndarray:
    """Spacetime h on C with h^T = sigma' + u g_C, h(nu)^T and h(nu, nu) prescribed."""
    ctx = _context(g)
    d = g.grid.dim
    tan = tangential(1, d)
    nu = ctx["nu_c"]
    nu1, nut = nu[1], nu[tan]
    h_tt = sigma_p + state.u * ctx["g_c"].components
    h1a = (state.hnu_t - ein("ab...,b...->a...", h_tt, nut)) / nu1
    h = np.zeros((d, d) + h_tt.shape[2:], dtype=np.result_type(h_tt, h1a))
    h[np.ix_(tan, tan)] = h_tt
    h[1, tan] = h1a
    h[tan, 1] = h1a
    rest = ein("ab...,a...,b...->...", h_tt, nut, nut) + 2.0 * nu1 * ein("a...,a...->...", h1a, nut)
    h[1, 1] = (state.h_nunu - rest) / nu1**2
    return h


def boundary_cauchy_data(g: MetricField, tau: TargetData) -> dict[str, tuple[np.ndarray, ...]]:
    """Values and t-derivatives of (u, h(nu)^T) and the value of h_nunu on Sigma."""
    grid = g.grid
    nsp = grid.n
    ctx = _context(g)
    h_s, dt_h = corner_cauchy_data(g, tau, check=False)
    u, _ = _u_on_sigma(g, h_s, dt_h)
    t_b = _sigma_of_c(ctx["t_b"], nsp)
    du_a = gradient(u, grid.spatial_spacings[1:])
    dt_u = (2.0 * corner_u_velocity(g, tau) - ein("a...,a...->...", t_b[1:], du_a)) / t_b[0]

    tan = tangential(1, grid.dim)
    nu = _sigma_of_c(ctx["nu_c"], nsp)
    dt_nu = _sigma_of_s(_on_s(ctx["dnu"][0], grid.dim), nsp)
    h_sig, dh_sig = _sigma_of_s(h_s, nsp), _sigma_of_s(dt_h, nsp)
    hnu = ein("ab...,b...->a...", h_sig, nu)
    dt_hnu = ein("ab...,b...->a...", dh_sig, nu) + ein("ab...,b...->a...", h_sig, dt_nu)
    return {
        "u": (u, dt_u),
        "hnu_t": (hnu[tan], dt_hnu[tan]),
        "h_nunu": (ein("a...,a...->...", hnu, nu),),
    }


# ---------------------------------------------------------------------- #
# sources                                                                #
# ---------------------------------------------------------------------- #
def _gauge_corrected_source(g: MetricField, tau: TargetData, gauge: GaugeState) -> np.ndarray:
    """F - delta* V'_F on C."""
    bg = geometry(g)
    vf = _lower(bg, gauge.v_f)
    return _on_c(tau.f - killing(bg, vf, gradient(vf, bg.spacings)), g.grid.dim)


def _error_tensor(g: MetricField, gauge: GaugeState, h: np.ndarray) -> np.ndarray:
    """delta* W'_h + 1/2 L_V h on C."""
    bg = geometry(g)
    w = _lower(bg, gauge.w_prime)
    g_err = killing(bg, w, gradient(w, bg.spacings)) + 0.5 * lie_derivative(
        bg.v, bg.dv, h, gradient(h, bg.spacings))
    return _on_c(g_err, g.grid.dim)


def _normal_derivative_of_hnu(g: MetricField, h: np.ndarray) -> np.ndarray:
    """nabla_nu of the one-form h(nu, .) - h_nunu nu_flat, at C."""
    ctx = _context(g)
    bg = ctx["bg"]
    nu = ctx["nu"]
    hnu = ein("ab...,b...->a...", h, nu)
    h_nunu = ein("a...,a...->...", hnu, nu)
    omega = hnu - h_nunu * _lower(bg, nu)
    nabla = covariant_one_form(bg, omega, gradient(omega, bg.spacings))
    return _on_c(ein("e...,eb...->b...", nu, nabla), g.grid.dim)


def _normal_acceleration(g: MetricField) -> np.ndarray:
    """(nabla_nu nu)^T at C, projected off nu."""
    ctx = _context(g)
    bg_c, nu = ctx["bg_c"], ctx["nu_c"]
    dnu = _on_c(ctx["dnu"], g.grid.dim)
    acc = ein("e...,ec...->c...", nu, dnu) + ein("e...,ced...,d...->c...", nu, bg_c.gamma, nu)
    along = ein("ab...,a...,b...->...", bg_c.g, acc, nu)
    return acc - along * nu


def _boundary_bianchi(g: MetricField, h: np.ndarray, index: int = -1) -> np.ndarray:
    """beta_C h^T on the x^1 slice `index`, boundary components."""
    nc = g.grid.dim
    bsp = g.grid.boundary().spacings
    g_j = _on_c(tangential_block(geometry(g).g), nc, index)
    h_j = _on_c(tangential_block(h), nc, index)
    bg_j = BackgroundGeometry.from_components(g_j, bsp)
    return bianchi(bg_j, h_j, gradient(h_j, bsp))


def u_sources(
    g: MetricField, tau: TargetData, gauge: GaugeState,
    h_prev: np.ndarray | None = None, mode: str = "full",
) -> dict[str, np.ndarray]:
    """Y and E of the conformal-factor equation on C."""
    ctx = _context(g)
    cg, nu, qinv = ctx["cg"], ctx["nu_c"], ctx["qinv"]
    bg_c = ctx["bg_c"]
    parts = _PARTS[mode]
    out: dict[str, np.ndarray] = {}
    if "Y" in parts:
        fv = _gauge_corrected_source(g, tau, gauge)
        r_p = complex_step(lambda s: scalar_curvature(cg.g + s * tau.sigma_p, cg.spacings))
        out["Y"] = -r_p + trace(fv, bg_c.ginv) - 2.0 * ein("ab...,a...,b...->...", fv, nu, nu)
    if "E" in parts:
        h = _require(h_prev)
        a, h_c = ctx["a"], ctx["mean"]
        a_p, h_p, nu_p = boundary_geometry_variation(ctx["bg"], h)
        h_t = _on_c(tangential_block(h), g.grid.dim)
        aa = ein("ac...,cd...,db...->ab...", a, qinv, a)
        err = _error_tensor(g, gauge, h)
        out["E"] = (
            -2.0 * dot(a_p, a, qinv) + 2.0 * h_c * h_p + 2.0 * dot(aa, h_t, qinv)
            - trace(err, bg_c.ginv) + 2.0 * ein("ab...,a...,b...->...", err, nu, nu)
            - 4.0 * ein("ab...,a...,b...->...", bg_c.ricci, nu, nu_p)
            - dot(bg_c.ricci, _on_c(h, g.grid.dim), bg_c.ginv)
        )
    return out


def hnu_sources(
    g: MetricField, tau: TargetData, gauge: GaugeState,
    h_prev: np.ndarray | None = None, mode: str = "full",
    z_field: np.ndarray | None = None,
) -> dict[str, np.ndarray]:
    """
    Y-hat, Z-hat and E-hat of the h(nu)^T equation, boundary components.
    Z-hat is read off `z_field` when given, otherwise off h_prev.
    """
    ctx = _context(g)
    nc = g.grid.dim
    tan = tangential(1, nc)
    cg, nu, qinv, a = ctx["cg"], ctx["nu_c"], ctx["qinv"], ctx["a"]
    bsp = cg.spacings
    parts = _PARTS[mode]
    out: dict[str, np.ndarray] = {}
    if "Y" in parts:
        fv = _gauge_corrected_source(g, tau, gauge)
        out["Y"] = 0.5 * gradient(tau.ell_p, bsp) + ein("ab...,b...->a...", fv, nu)[tan]
    if "Z" in parts:
        h = _require(h_prev if z_field is None else z_field)
        # second-order one-sided normal derivative into the bulk
        b0, b1, b2 = (_boundary_bianchi(g, h, j) for j in (-1, -2, -3))
        d1 = (3.0 * b0 - 4.0 * b1 + b2) / (2.0 * g.grid.dx)
        omega = embed_boundary_vector(b0, nc)
        jet = slice_jet(omega, embed_boundary_vector(d1, nc), bsp, axis=1)
        nabla = covariant_one_form(ctx["bg_c"], omega, jet)
        out["Z"] = 0.5 * ein("e...,eb...->b...", nu, nabla)[tan]
    if "E" in parts:
        h = _require(h_prev)
        _, _, nu_p = boundary_geometry_variation(ctx["bg"], h)
        h_c = _on_c(h, nc)
        h_t = tangential_block(h_c)
        h_nunu = ein("ab...,a...,b...->...", h_c, nu, nu)
        da = gradient(a, bsp)
        dh_t = gradient(h_t, bsp)
        beta_h_a = complex_step(lambda s: bianchi(
            BackgroundGeometry.from_components(cg.g + s * h_t, bsp), a, da))
        beta_a_h = complex_step(lambda s: bianchi(
            BackgroundGeometry.from_components(cg.g + 2.0 * s * a, bsp), h_t, dh_t))
        b_h = bianchi(cg, h_t, dh_t)
        ha = h_nunu * a
        err = _error_tensor(g, gauge, h)
        out["E"] = (
            beta_h_a
            - ein("ab...,b...->a...", err, nu)[tan]
            + ein("ab...,b...->a...", ctx["bg_c"].ricci, nu_p)[tan]
            - 0.5 * (
                ein("ac...,cb...,b...->a...", a, qinv, b_h)
                + beta_a_h
                + bianchi(cg, ha, gradient(ha, bsp))
            )
        )
    return out


def hnunu_sources(
    g: MetricField, tau: TargetData, gauge: GaugeState,
    h_prev: np.ndarray | None = None, mode: str = "full",
    z_field: np.ndarray | None = None,
) -> dict[str, np.ndarray]:
    """
    Y-tilde, Z-tilde and E-tilde of the h_nunu transport equation. Z-tilde
    depends on h^T and h(nu)^T of `z_field` (default h_prev).
    """
    ctx = _context(g)
    nc = g.grid.dim
    bg_c, t_b, t = ctx["bg_c"], ctx["t_b"], ctx["t"]
    parts = _PARTS[mode]
    out: dict[str, np.ndarray] = {}
    if "Y" in parts:
        out["Y"] = ein("ab...,a...,b...->...", bg_c.g, _on_c(gauge.v_f, nc), t)
    if "Z" in parts:
        h = _require(h_prev if z_field is None else z_field)
        state = split_boundary_components(g, h)
        h_c = _on_c(h, nc)
        a, qinv = ctx["a"], ctx["qinv"]
        out["Z"] = (
            -ein("a...,a...->...", _boundary_bianchi(g, h), t_b)
            + ein("a...,a...->...", state.hnu_t, t_b) * ctx["mean"]
            + ein("a...,ab...,bc...,c...->...", state.hnu_t, qinv, a, t_b)
            + ein("a...,a...->...", _normal_derivative_of_hnu(g, h), t)
            - ein("ab...,a...,b...->...", h_c, t, _normal_acceleration(g))
        )
    if "E" in parts:
        h = _require(h_prev)
        corr = _on_c(gauge.w_prime - gamma_dot_h(geometry(g), h), nc)
        out["E"] = ein("ab...,a...,b...->...", bg_c.g, corr, t)
    return out


def _require(h_prev: np.ndarray | None) -> np.ndarray:
    if h_prev is None:
        raise InvalidInputError("this mode needs the previous bulk field h_prev")
    return h_prev


def _check_mode(mode: str, allowed: tuple[str, ...]) -> None:
    if mode not in allowed:
        raise InvalidInputError(f"unknown mode {mode!r}; expected one of {allowed}")


def _total(sources: dict[str, np.ndarray], shape: tuple[int, ...]) -> np.ndarray:
    out = np.zeros(shape)
    for v in sources.values():
        out = out + v
    return out


# ---------------------------------------------------------------------- #
# boundary solves                                                        #
# ---------------------------------------------------------------------- #
# Cauchy data on Sigma come from the target only when Y terms are present;
# every other mode solves for a correction with zero data.
def solve_u_equation(
    g: MetricField, tau: TargetData, gauge: GaugeState,
    h_prev: np.ndarray | None = None, mode: str = "full",
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """
    -(n-1)/n box_C tr - (1/n) R_C tr = Y + E for tr = tr_C h^T; returns
    u = tr / n on C with the assembled sources.
    """
    _check_mode(mode, U_MODES)
    ctx = _context(g)
    n = g.grid.n
    sources = u_sources(g, tau, gauge, h_prev, mode)
    rhs = _total(sources, ctx["g_c"].grid.shape)
    if "Y" in _PARTS[mode]:
        u0, u1 = boundary_cauchy_data(g, tau)["u"]
    else:
        u0 = u1 = np.zeros(g.grid.sigma_shape)
    hist = solve_boundary_cauchy_wave(ctx["g_c"], rhs, n * u0, n * u1, kind="scalar")
    return hist.values[0] / n, sources


def solve_hnu_equation(
    g: MetricField, tau: TargetData, gauge: GaugeState,
    h_prev: np.ndarray | None = None, mode: str = "full",
    z_field: np.ndarray | None = None,
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """-1/2 [box_C + Ric_C] h(nu)^T = Y-hat + Z-hat + E-hat on C."""
    _check_mode(mode, MODES)
    ctx = _context(g)
    n = g.grid.n
    sources = hnu_sources(g, tau, gauge, h_prev, mode, z_field)
    rhs = _total(sources, (n,) + ctx["g_c"].grid.shape)
    if "Y" in _PARTS[mode]:
        w0, w1 = boundary_cauchy_data(g, tau)["hnu_t"]
    else:
        w0 = w1 = np.zeros((n,) + g.grid.sigma_shape)
    hist = solve_boundary_cauchy_wave(ctx["g_c"], rhs, w0, w1, kind="one_form")
    return hist.field(), sources


def solve_hnunu_equation(
    g: MetricField, tau: TargetData, gauge: GaugeState,
    h_prev: np.ndarray | None = None, mode: str = "full",
    z_field: np.ndarray | None = None,
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """1/2 T^C(h_nunu) = Y-tilde + Z-tilde + E-tilde along C."""
    _check_mode(mode, MODES)
    ctx = _context(g)
    sources = hnunu_sources(g, tau, gauge, h_prev, mode, z_field)
    rhs = _total(sources, ctx["g_c"].grid.shape)
    if "Y" in _PARTS[mode]:
        (init,) = boundary_cauchy_data(g, tau)["h_nunu"]
    else:
        init = np.zeros(g.grid.sigma_shape)
    hist = solve_transport(ctx["t_b"], rhs, init, ctx["cg"].spacings)
    return hist.values[0], sources


def solve_boundary_system(
    g: MetricField, tau: TargetData, gauge: GaugeState,
    h_prev: np.ndarray | None = None, mode: str = "full",
) -> BoundaryEvolutionState:
    """u, then h(nu)^T, then h_nunu, all Z terms read off h_prev."""
    _check_mode(mode, MODES)
    u_parts = _PARTS[mode] - {"Z"}
    if not u_parts:
        u, su = np.zeros(_context(g)["g_c"].grid.shape), {}
    else:
        u_mode = "full" if u_parts == {"Y", "E"} else next(iter(u_parts))
        u, su = solve_u_equation(g, tau, gauge, h_prev, u_mode)
    hnu_t, sh = solve_hnu_equation(g, tau, gauge, h_prev, mode)
    h_nunu, sn = solve_hnunu_equation(g, tau, gauge, h_prev, mode)
    sources = {f"u_{k}": v for k, v in su.items()}
    sources.update({f"hnu_{k}": v for k, v in sh.items()})
    sources.update({f"hnunu_{k}": v for k, v in sn.items()})
    logger.debug("Boundary system solved in mode %s", mode)
    return BoundaryEvolutionState(u=u, hnu_t=hnu_t, h_nunu=h_nunu, sources=sources)


# ---------------------------------------------------------------------- #
# identities                                                             #
# ---------------------------------------------------------------------- #
def gauge_boundary_identity_check(g: MetricField, h: np.ndarray) -> ResidualReport:
    """
    Tangential and normal splitting of beta h at C:
    (beta h)^T = -nabla_nu h(nu)^T + delta_C h_check + 1/2 d_C((1 - 2/n) tr_C h + h_nunu)
                 - (A + H_C g_C) h(nu)^T,
    beta h(nu) = -1/2 nu(h_nunu) + H'_h - h_nunu H_C + <A, h^T>.
    """
    ctx = _context(g)
    grid = g.grid
    nc, n = grid.dim, grid.n
    tan = tangential(1, nc)
    bg, cg = ctx["bg"], ctx["cg"]
    a, h_c, qinv, nu_c = ctx["a"], ctx["mean"], ctx["qinv"], ctx["nu_c"]
    bsp = cg.spacings

    beta = _on_c(bianchi(bg, h, gradient(h, bg.spacings)), nc)
    state = split_boundary_components(g, h)
    h_t = tangential_block(_on_c(h, nc))
    tr = n * state.u
    h_check = h_t - state.u * cg.g
    level = (1.0 - 2.0 / n) * tr + state.h_nunu
    tangential_rhs = (
        -_normal_derivative_of_hnu(g, h)[tan]
        + divergence(cg, h_check, gradient(h_check, bsp))
        + 0.5 * gradient(level, bsp)
        - ein("ac...,cb...,b...->a...", a, qinv, state.hnu_t)
        - h_c * state.hnu_t
    )
    tangential_res = np.max(np.abs(beta[tan] - tangential_rhs), axis=0)

    nu = ctx["nu"]
    h_nunu_bulk = ein("ab...,a...,b...->...", h, nu, nu)
    nu_hnn = _on_c(ein("e...,e...->...", nu, gradient(h_nunu_bulk, bg.spacings)), nc)
    _, h_p, _ = boundary_geometry_variation(bg, h)
    normal_rhs = -0.5 * nu_hnn + h_p - state.h_nunu * h_c + dot(a, h_t, qinv)
    normal_res = np.abs(ein("a...,a...->...", beta, nu_c) - normal_rhs)

    worst = np.maximum(tangential_res, normal_res)
    slice_norms = [float(np.max(worst[k])) for k in range(worst.shape[0])]
    report = ResidualReport(
        sup_norm=max(slice_norms), slice_norms=slice_norms,
        bound=settings.first_order_factor * grid.dx**2,
    )
    logger.info("Gauge boundary identities: tangential %.3e, normal %.3e",
                float(np.max(tangential_res)), float(np.max(normal_res)))
    return report
