"""
Harmonic gauge V_g = box_g x^mu, its linearization V'_h and the gauge wave
equations: Cauchy data of V' from the target data, the split
V' = V'_F + W'_h, propagation checks and harmonic coordinates.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import map_coordinates

from ibcvp_lab.errors import GeometryError, NumericalFailure
from ibcvp_lab.logconf import logger
from ibcvp_lab.models.fields import MetricField, TensorField, inverse_metric
from ibcvp_lab.models.gauge import GaugeCauchyData, GaugeState
from ibcvp_lab.models.reports import Coupling, ResidualReport, WaveProblemSpec
from ibcvp_lab.models.target import TargetData
from ibcvp_lab.services.boundary_corner_system import corner_cauchy_data
from ibcvp_lab.services.discrete_calculus import (
    BackgroundGeometry, bianchi, complex_step, connection_terms_vector,
    covariant_one_form, ein, gamma_dot_h, gauge_variation, geometry, gradient,
    killing, lie_derivative, lin_constraints, slice_jet, unit_normal, vector_coupling,
)
from ibcvp_lab.services.wave_solvers import solve_bulk_wave
from ibcvp_lab.settings import settings


def _data(h: TensorField | np.ndarray) -> np.ndarray:
    return h.data if isinstance(h, TensorField) else np.asarray(h)


def gauge_field(g: MetricField) -> TensorField:
    """V^mu = box_g x^mu = -g^{ab} Gamma^mu_ab."""
    return TensorField("vector", geometry(g).v, g.grid)


def lin_gauge(g: MetricField, h: TensorField | np.ndarray) -> TensorField:
    """V'_h = beta h - <D^2 x^mu, h> d_mu."""
    bg = geometry(g)
    hd = _data(h)
    return TensorField("vector", gauge_variation(bg, hd, gradient(hd, bg.spacings)), g.grid)


def _sliced_coupling(g: MetricField, kernel) -> Coupling:
    bg = geometry(g)
    slices: dict[int, BackgroundGeometry] = {}

    def coupling(k: int, w: np.ndarray, dw: np.ndarray) -> np.ndarray:
        if k not in slices:
            slices[k] = bg.at_slice(k)
        return kernel(slices[k], w, dw)

    return coupling


def _vector_wave(
    g: MetricField, source: np.ndarray, v0: np.ndarray | None = None,
    v1: np.ndarray | None = None, boundary: np.ndarray | None = None, kernel=vector_coupling,
) -> np.ndarray:
    d = g.grid.dim
    zero = np.zeros((d,) + g.grid.spatial_shape)
    spec = WaveProblemSpec(
        metric=g, source=source,
        initial_value=zero if v0 is None else v0,
        initial_velocity=zero if v1 is None else v1,
        boundary_data=boundary, coupling=_sliced_coupling(g, kernel),
    )
    return solve_bulk_wave(spec).field()


# ---------------------------------------------------------------------- #
# Cauchy data                                                            #
# ---------------------------------------------------------------------- #
def gauge_cauchy_data(g: MetricField, tau: TargetData) -> GaugeCauchyData:
    """
    V' on S and C from tau'; d_t V' on S from the linearized constraints.
    With R the constraint residual of (gamma', kappa', nu') against
    Q' = F - 1/2 L_V h, the normal derivative W_b = nu^a nabla_a V'_b obeys
    W_i = -2 R_i - (nabla_i V')(nu) and W(nu) = R_0 - gamma^{ij} nabla_i V'_j.
    """
    d = g.grid.dim
    bg_s = geometry(g).at_slice(0)
    sp = bg_s.spacings
    h_s, dt_h = corner_cauchy_data(g, tau)
    lie = lie_derivative(bg_s.v, bg_s.dv, h_s, slice_jet(h_s, dt_h, sp))
    f_s = np.take(tau.f, 0, axis=tau.f.ndim - d)
    res = lin_constraints(bg_s, tau.gamma_p, tau.kappa_p, f_s - 0.5 * lie, tau.nu_p)

    nu = unit_normal(bg_s.ginv, 0, timelike=True)
    v = tau.v_s
    v_low = ein("ab...,b...->a...", bg_s.g, v)
    d_low = ein("iab...,b...->ia...", bg_s.dg[1:], v) + ein("ab...,ib...->ia...", bg_s.g, gradient(v, sp))
    nab = d_low - ein("mia...,m...->ia...", bg_s.gamma[:, 1:], v_low)

    w = np.empty((d,) + v.shape[1:], dtype=np.result_type(nab, res.c0))
    w[1:] = -2.0 * res.ci - ein("a...,ia...->i...", nu, nab)
    w_nu = res.c0 - ein("ij...,ij...->...", inverse_metric(bg_s.g[1:, 1:]), nab[:, 1:])
    w[0] = (w_nu - ein("i...,i...->...", nu[1:], w[1:])) / nu[0]

    conn = ein("a...,mab...,m...->b...", nu, bg_s.gamma, v_low)
    dt_low = (w + conn - ein("i...,ib...->b...", nu[1:], d_low)) / nu[0]
    dt_v = ein("mb...,b...->m...", bg_s.ginv, dt_low - ein("bk...,k...->b...", bg_s.dg[0], v))
    return GaugeCauchyData(v_s=np.array(v), dt_v_s=dt_v, v_c=np.array(tau.v_c))


# ---------------------------------------------------------------------- #
# split                                                                  #
# ---------------------------------------------------------------------- #
def _raised_bianchi(bg: BackgroundGeometry, f: np.ndarray) -> np.ndarray:
    return ein("ab...,b...->a...", bg.ginv, bianchi(bg, f, gradient(f, bg.spacings)))


def _w_source(g: MetricField, h: np.ndarray) -> np.ndarray:
    """beta'_h Ric + beta[(delta*)'_h V] - 1/2 nabla_V beta h, raised."""
    bg = geometry(g)
    sp = bg.spacings
    ric, dric = bg.ricci, gradient(bg.ricci, sp)
    one_form = complex_step(lambda s: bianchi(
        BackgroundGeometry.from_components(bg.g + s * h, sp), ric, dric))
    if np.any(bg.v):
        dh = gradient(h, sp)
        lie = 0.5 * lie_derivative(bg.v, bg.dv, h, dh)
        bh = bianchi(bg, h, dh)
        nabla = covariant_one_form(bg, bh, gradient(bh, sp))
        one_form = (
            one_form + bianchi(bg, lie, gradient(lie, sp))
            - 0.5 * ein("e...,eb...->b...", bg.v, nabla)
        )
    return ein("mb...,b...->m...", bg.ginv, one_form)


def propagate_and_split(
    g: MetricField, tau: TargetData, h: TensorField | np.ndarray | None = None,
    residual: np.ndarray | None = None,
) -> GaugeState:
    """
    V'_F from -1/2 [box V + Ric(V)] + 1/2 nabla_V V = beta F with the gauge
    Cauchy/Dirichlet data; W'_h from the same operator with zero data. A
    bulk `residual` L(h) - F left by h adds its part X' = (beta residual)^#
    to W', so that V'_F + W' tracks V'_h.
    """
    bg = geometry(g)
    cauchy = gauge_cauchy_data(g, tau)
    source = _raised_bianchi(bg, tau.f)
    boundary = np.zeros((g.grid.dim,) + g.grid.shape)
    boundary[:, :, -1] = cauchy.v_c
    v_f = _vector_wave(g, source, cauchy.v_s, cauchy.dt_v_s, boundary)

    w_src = np.zeros_like(v_f)
    if h is not None:
        w_src = w_src + _w_source(g, _data(h))
    if residual is not None:
        w_src = w_src + _raised_bianchi(bg, residual)
    w_prime = _vector_wave(g, w_src) if np.any(w_src) else np.zeros_like(v_f)
    norms = {"v_f": float(np.max(np.abs(v_f))), "w_prime": float(np.max(np.abs(w_prime)))}
    logger.info("Gauge split: |V'_F| %.3e, |W'_h| %.3e", norms["v_f"], norms["w_prime"])
    return GaugeState(v=bg.v, v_f=v_f, w_prime=w_prime, cauchy=cauchy, norms=norms)


# ---------------------------------------------------------------------- #
# checks                                                                 #
# ---------------------------------------------------------------------- #
def gauge_propagation_check(
    g: MetricField, h: TensorField | np.ndarray, tau: TargetData | None = None,
    constant: float | None = None,
) -> ResidualReport:
    """sup |V'_h| over the interior of the slab against C dx^2."""
    if tau is not None and (np.any(tau.v_s) or np.any(tau.v_c)):
        logger.warning("Gauge propagation check run with nonzero gauge data")
    grid = g.grid
    constant = settings.first_order_factor if constant is None else constant
    vp = np.abs(lin_gauge(g, h).data)
    mask = grid.interior_mask
    masked = np.where(mask, np.max(vp, axis=0), 0.0)
    slice_norms = [float(np.max(masked[k])) for k in range(grid.shape[0])]
    report = ResidualReport(
        sup_norm=max(slice_norms), slice_norms=slice_norms, bound=constant * grid.dx**2,
    )
    logger.info("Gauge propagation: sup %.3e, bound %.3e", report.sup_norm, report.bound)
    return report


def _correction_kernel(bk: BackgroundGeometry, w: np.ndarray, dw: np.ndarray) -> np.ndarray:
    """Lower-order part of X -> V'_{delta* X}."""
    low = ein("ab...,b...->a...", bk.g, w)
    dlow = ein("eab...,b...->ea...", bk.dg, w) + ein("ab...,eb...->ea...", bk.g, dw)
    ric_up = ein("mc...,cy...->my...", bk.ginv, bk.ricci)
    return (
        -0.5 * connection_terms_vector(bk, w, dw)
        - 0.5 * ein("my...,y...->m...", ric_up, w)
        + gamma_dot_h(bk, killing(bk, low, dlow))
    )


def gauge_correction(g: MetricField, h: TensorField | np.ndarray) -> np.ndarray:
    """
    X with zero Cauchy and Dirichlet data such that V'_{h - delta* X} = 0:
    -1/2 [box X + Ric(X)] + Gamma.(delta* X) = V'_h.
    """
    source = lin_gauge(g, h).data
    return _vector_wave(g, source, kernel=_correction_kernel)


# ---------------------------------------------------------------------- #
# harmonic coordinates                                                   #
# ---------------------------------------------------------------------- #
def _sample(field: np.ndarray, idx: np.ndarray, ncoord: int) -> np.ndarray:
    lead = field.shape[: field.ndim - ncoord]
    flat = field.reshape((-1,) + field.shape[field.ndim - ncoord:])
    out = np.stack([map_coordinates(c, idx, order=3, mode="nearest") for c in flat])
    return out.reshape(lead + idx.shape[1:])


def harmonic_coordinates(
    g: MetricField, iterations: int = 4, min_jacobian: float = 0.1,
) -> tuple[np.ndarray, MetricField]:
    """
    Wave coordinates y^mu with box_g y = 0 and y = x on S and on every face,
    and the metric expressed in them on the same coordinate grid.
    """
    grid = g.grid
    d = grid.dim
    x = np.stack(grid.coords())
    velocity = np.zeros((d,) + grid.spatial_shape)
    velocity[0] = 1.0
    spec = WaveProblemSpec(
        metric=g, source=np.zeros_like(x), initial_value=x[:, 0],
        initial_velocity=velocity, boundary_data=x,
    )
    y = solve_bulk_wave(spec).field()

    jac = np.swapaxes(gradient(y, grid.spacings), 0, 1)  # jac[a, b] = d_b y^a
    det = np.linalg.det(np.moveaxis(jac, (0, 1), (-2, -1)))
    if not np.all(np.isfinite(det)) or np.min(det) <= min_jacobian:
        raise NumericalFailure("coordinate map degenerate", min_jacobian=float(np.nanmin(det)))
    jinv = np.moveaxis(np.linalg.inv(np.moveaxis(jac, (0, 1), (-2, -1))), (-2, -1), (0, 1))
    g_y = ein("ca...,db...,cd...->ab...", jinv, jinv, g.components)

    axes = (grid.t, grid.x1) + grid.xa
    origin = np.array([ax[0] for ax in axes]).reshape((d,) + (1,) * d)
    spacing = np.array(grid.spacings).reshape((d,) + (1,) * d)
    shift = y - x
    pre = x.copy()
    for _ in range(iterations):
        pre = x - _sample(shift, (pre - origin) / spacing, d)
    g_tilde = _sample(g_y, (pre - origin) / spacing, d)
    g_tilde = 0.5 * (g_tilde + np.swapaxes(g_tilde, 0, 1))
    try:
        out = MetricField(g_tilde, grid)
    except GeometryError as exc:
        raise NumericalFailure(f"pulled-back metric lost its signature: {exc}") from exc
    logger.info("Harmonic coordinates: max |y - x| %.3e", float(np.max(np.abs(shift))))
    return y, out
