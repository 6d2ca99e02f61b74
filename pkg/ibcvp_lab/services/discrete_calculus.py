"""
Finite-difference tensor calculus on corner grids.

Every kernel works on arrays with component axes first and coordinate axes
last, and only touches the trailing ``len(spacings)`` axes, so the same code
runs on the bulk grid, on the boundary C (t, x^A) and on slices (x^1, x^A).

First-order operators are written in jet form ``f(bg, h, dh)``: ``dh[e]`` is
the derivative along spacetime coordinate ``e``. On a slice the missing
derivative is supplied by the caller (a velocity or a normal derivative).

All kernels accept complex input; linearizations of nonlinear geometric maps
are taken with the complex-step method.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Callable

import numpy as np

from ibcvp_lab.errors import InvalidInputError
from ibcvp_lab.logconf import logger
from ibcvp_lab.models.fields import (
    ConnectionCoefficients, MetricField, TensorField, inverse_metric,
)
from ibcvp_lab.models.reports import ConstraintResidual
from ibcvp_lab.settings import settings


def ein(subscripts: str, *operands: np.ndarray) -> np.ndarray:
    return np.einsum(subscripts, *operands, optimize=len(operands) > 2)


# ---------------------------------------------------------------------- #
# stencils                                                               #
# ---------------------------------------------------------------------- #
def first_difference(f: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Centered in the interior, second-order one-sided at both ends."""
    return np.gradient(f, h, axis=axis, edge_order=2)


def second_difference(f: np.ndarray, h: float, axis: int) -> np.ndarray:
    f = np.moveaxis(f, axis, 0)
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - 2.0 * f[1:-1] + f[:-2]) / h**2
    out[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / h**2
    out[-1] = (2.0 * f[-1] - 5.0 * f[-2] + 4.0 * f[-3] - f[-4]) / h**2
    return np.moveaxis(out, 0, axis)


def gradient(f: np.ndarray, spacings: tuple[float, ...]) -> np.ndarray:
    """Stack of first differences along the trailing coordinate axes."""
    m = len(spacings)
    base = f.ndim - m
    return np.stack([first_difference(f, h, base + j) for j, h in enumerate(spacings)])


def hessian(f: np.ndarray, spacings: tuple[float, ...]) -> np.ndarray:
    m = len(spacings)
    base = f.ndim - m
    d1 = [first_difference(f, h, base + j) for j, h in enumerate(spacings)]
    out = np.empty((m, m) + f.shape, dtype=f.dtype)
    for a in range(m):
        out[a, a] = second_difference(f, spacings[a], base + a)
        for b in range(a + 1, m):
            out[a, b] = out[b, a] = first_difference(d1[a], spacings[b], base + b)
    return out


def slice_jet(
    w: np.ndarray, w_normal: np.ndarray, spacings: tuple[float, ...], axis: int = 0,
) -> np.ndarray:
    """Full jet of a field on a coordinate slice, `w_normal` filling slot `axis`."""
    parts = list(gradient(w, spacings))
    parts.insert(axis, w_normal)
    return np.stack(parts)


# ---------------------------------------------------------------------- #
# metric algebra                                                         #
# ---------------------------------------------------------------------- #
def raise_both(h: np.ndarray, ginv: np.ndarray) -> np.ndarray:
    return ein("ac...,cd...,bd...->ab...", ginv, h, ginv)


def dot(a: np.ndarray, b: np.ndarray, ginv: np.ndarray) -> np.ndarray:
    """Full contraction <a, b> of two symmetric 2-tensors."""
    return ein("ab...,cd...,ac...,bd...->...", a, b, ginv, ginv)


def trace(h: np.ndarray, ginv: np.ndarray) -> np.ndarray:
    return ein("ab...,ab...->...", ginv, h)


def christoffel_from_jet(
    g: np.ndarray, ginv: np.ndarray, dg: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """(Gamma^c_ab, Gamma_cab) from the metric jet dg[e, a, b] = d_e g_ab."""
    first = 0.5 * (
        ein("acb...->cab...", dg) + ein("bca...->cab...", dg) - dg
    )
    return ein("cd...,dab...->cab...", ginv, first), first


def riemann_from_connection(gamma: np.ndarray, dgamma: np.ndarray) -> np.ndarray:
    """R^r_{smn} = d_m G^r_ns - d_n G^r_ms + G^r_ml G^l_ns - G^r_nl G^l_ms."""
    return (
        ein("mrns...->rsmn...", dgamma)
        - ein("nrms...->rsmn...", dgamma)
        + ein("rml...,lns...->rsmn...", gamma, gamma)
        - ein("rnl...,lms...->rsmn...", gamma, gamma)
    )


def ricci_from_riemann(riemann: np.ndarray) -> np.ndarray:
    return ein("rsrn...->sn...", riemann)


@dataclass(frozen=True)
class BackgroundGeometry:
    """
    Precomputed jets of a metric: connection, its derivative, curvature and
    the gauge field V^mu = -g^{ab} Gamma^mu_ab. ``spacings`` lists the
    coordinate axes still present; derivative slots always cover all
    components.
    """

    g: np.ndarray
    ginv: np.ndarray
    dg: np.ndarray
    dginv: np.ndarray
    gamma: np.ndarray
    gamma1: np.ndarray
    dgamma: np.ndarray
    dgamma1: np.ndarray
    gcontr: np.ndarray
    ricci: np.ndarray
    riem_low: np.ndarray
    v: np.ndarray
    dv: np.ndarray
    spacings: tuple[float, ...]

    @property
    def dim(self) -> int:
        return self.g.shape[0]

    @classmethod
    def from_components(cls, g: np.ndarray, spacings: tuple[float, ...]) -> "BackgroundGeometry":
        if len(spacings) != g.shape[0]:
            raise InvalidInputError("background jets need one coordinate axis per component")
        ginv = inverse_metric(g)
        dg = gradient(g, spacings)
        dginv = -ein("ac...,ecd...,db...->eab...", ginv, dg, ginv)
        gamma, gamma1 = christoffel_from_jet(g, ginv, dg)
        dgamma = gradient(gamma, spacings)
        dgamma1 = gradient(gamma1, spacings)
        gcontr = ein("ab...,cab...->c...", ginv, gamma)
        riemann = riemann_from_connection(gamma, dgamma)
        ricci = ricci_from_riemann(riemann)
        riem_low = ein("ar...,rmbn...->ambn...", g, riemann)
        v = -gcontr
        dv = gradient(v, spacings)
        return cls(g, ginv, dg, dginv, gamma, gamma1, dgamma, dgamma1, gcontr,
                   ricci, riem_low, v, dv, tuple(spacings))

    def at_slice(self, index: int, axis: int = 0) -> "BackgroundGeometry":
        """Restriction to coordinate slice `index` along coordinate `axis`."""
        m = len(self.spacings)
        out = {}
        for f in fields(self):
            if f.name == "spacings":
                continue
            arr = getattr(self, f.name)
            out[f.name] = np.take(arr, index, axis=arr.ndim - m + axis)
        spacings = self.spacings[:axis] + self.spacings[axis + 1:]
        return replace(self, spacings=spacings, **out)


def geometry(g: MetricField) -> BackgroundGeometry:
    """Cached background jets of a metric on its corner grid."""
    cached = g._cache.get("bg")
    if cached is None:
        cached = BackgroundGeometry.from_components(g.components, g.grid.spacings)
        logger.debug("Background jets computed on grid %s", g.grid.shape)
        g._cache["bg"] = cached
    return cached


# ---------------------------------------------------------------------- #
# jet-form first-order operators                                         #
# ---------------------------------------------------------------------- #
def covariant_one_form(bg: BackgroundGeometry, w: np.ndarray, dw: np.ndarray) -> np.ndarray:
    """nabla_a w_b."""
    return dw - ein("cab...,c...->ab...", bg.gamma, w)


def killing(bg: BackgroundGeometry, w: np.ndarray, dw: np.ndarray) -> np.ndarray:
    """delta* w = 1/2 (nabla_a w_b + nabla_b w_a)."""
    nw = covariant_one_form(bg, w, dw)
    return 0.5 * (nw + np.swapaxes(nw, 0, 1))


def covariant_sym2(bg: BackgroundGeometry, h: np.ndarray, dh: np.ndarray) -> np.ndarray:
    """T_eab = nabla_e h_ab."""
    return (
        dh
        - ein("dea...,db...->eab...", bg.gamma, h)
        - ein("deb...,ad...->eab...", bg.gamma, h)
    )


def divergence(bg: BackgroundGeometry, h: np.ndarray, dh: np.ndarray) -> np.ndarray:
    """(delta h)_b = -g^{ac} nabla_a h_cb."""
    return -ein("ac...,acb...->b...", bg.ginv, covariant_sym2(bg, h, dh))


def bianchi(bg: BackgroundGeometry, h: np.ndarray, dh: np.ndarray) -> np.ndarray:
    """beta h = delta h + 1/2 d tr h (covariant trace derivative)."""
    t = covariant_sym2(bg, h, dh)
    return (
        -ein("ac...,acb...->b...", bg.ginv, t)
        + 0.5 * ein("ac...,bac...->b...", bg.ginv, t)
    )


def raised_jet(bg: BackgroundGeometry, h: np.ndarray, dh: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(h^{ab}, d_e h^{ab})."""
    hup = raise_both(h, bg.ginv)
    dhup = (
        ein("ac...,ecd...,bd...->eab...", bg.ginv, dh, bg.ginv)
        + ein("eac...,cd...,bd...->eab...", bg.dginv, h, bg.ginv)
        + ein("ac...,cd...,ebd...->eab...", bg.ginv, h, bg.dginv)
    )
    return hup, dhup


def gamma_dot_h(bg: BackgroundGeometry, h: np.ndarray) -> np.ndarray:
    """Vector Gamma^mu_ab h^{ab}."""
    return ein("mab...,ab...->m...", bg.gamma, raise_both(h, bg.ginv))


def gauge_variation(bg: BackgroundGeometry, h: np.ndarray, dh: np.ndarray) -> np.ndarray:
    """V'_h = (beta h)^sharp + Gamma^mu_ab h^{ab}, the derivative of V along h."""
    return ein("mb...,b...->m...", bg.ginv, bianchi(bg, h, dh)) + gamma_dot_h(bg, h)


def lie_derivative(vec: np.ndarray, dvec: np.ndarray, h: np.ndarray, dh: np.ndarray) -> np.ndarray:
    """(L_X h)_ab for a vector X with jet dvec[e, c] = d_e X^c."""
    return (
        ein("c...,cab...->ab...", vec, dh)
        + ein("cb...,ac...->ab...", h, dvec)
        + ein("ac...,bc...->ab...", h, dvec)
    )


def ricci_circ(bg: BackgroundGeometry, h: np.ndarray) -> np.ndarray:
    """Ric o h = 1/2 (R_a^m h_mb + R_b^m h_am)."""
    rh = ein("ac...,cm...,mb...->ab...", bg.ricci, bg.ginv, h)
    return 0.5 * (rh + np.swapaxes(rh, 0, 1))


def riemann_action(bg: BackgroundGeometry, h: np.ndarray) -> np.ndarray:
    """Rm(h)_ab = R_ambn h^{mn}, so that Rm(g) = Ric."""
    return ein("ambn...,mn...->ab...", bg.riem_low, raise_both(h, bg.ginv))


def connection_terms(bg: BackgroundGeometry, h: np.ndarray, dh: np.ndarray) -> np.ndarray:
    """
    C(h): trace of nabla nabla h minus the componentwise wave operator
    g^{mn} d_m d_n h - Gamma^e d_e h. First order in h.
    """
    t = covariant_sym2(bg, h, dh)
    gi, gam, dgam = bg.ginv, bg.gamma, bg.dgamma
    return (
        -ein("e...,eab...->ab...", bg.gcontr, t - dh)
        - ein("mn...,mdna...,db...->ab...", gi, dgam, h)
        - ein("mn...,mdnb...,ad...->ab...", gi, dgam, h)
        - ein("mn...,dna...,mdb...->ab...", gi, gam, dh)
        - ein("mn...,dnb...,mad...->ab...", gi, gam, dh)
        - ein("mn...,ema...,neb...->ab...", gi, gam, t)
        - ein("mn...,emb...,nae...->ab...", gi, gam, t)
    )


def connection_terms_vector(bg: BackgroundGeometry, w: np.ndarray, dw: np.ndarray) -> np.ndarray:
    """Rough wave operator on a vector minus the componentwise one."""
    gi, gam = bg.ginv, bg.gamma
    return (
        ein("ab...,amby...,y...->m...", gi, bg.dgamma, w)
        + 2.0 * ein("ab...,may...,by...->m...", gi, gam, dw)
        + ein("ab...,mak...,kby...->m...", gi, gam, gam, w)
        - ein("s...,msy...,y...->m...", bg.gcontr, gam, w)
    )


def connection_terms_one_form(bg: BackgroundGeometry, w: np.ndarray, dw: np.ndarray) -> np.ndarray:
    """Rough wave operator on a one-form minus the componentwise one."""
    gi, gam = bg.ginv, bg.gamma
    return (
        -2.0 * ein("mn...,dna...,md...->a...", gi, gam, dw)
        - ein("mn...,mdna...,d...->a...", gi, bg.dgamma, w)
        + ein("e...,dea...,d...->a...", bg.gcontr, gam, w)
        + ein("mn...,ema...,dne...,d...->a...", gi, gam, gam, w)
    )


def lower_order_coupling(bg: BackgroundGeometry, h: np.ndarray, dh: np.ndarray) -> np.ndarray:
    """
    P(h) with L(h) = -1/2 box h + P(h):
    P = -1/2 C(h) + Ric o h - Rm(h) + delta*((Gamma.h)^flat) + 1/2 L_V h.
    Vanishes identically on constant-coefficient backgrounds.
    """
    hup, dhup = raised_jet(bg, h, dh)
    y = ein("mab...,ab...->m...", bg.gamma1, hup)
    dy = ein("emab...,ab...->em...", bg.dgamma1, hup) + ein("mab...,eab...->em...", bg.gamma1, dhup)
    return (
        -0.5 * connection_terms(bg, h, dh)
        + ricci_circ(bg, h)
        - riemann_action(bg, h)
        + killing(bg, y, dy)
        + 0.5 * lie_derivative(bg.v, bg.dv, h, dh)
    )


def vector_coupling(bg: BackgroundGeometry, w: np.ndarray, dw: np.ndarray) -> np.ndarray:
    """P_vec for -1/2 [box W + Ric(W)] + 1/2 nabla_V W in componentwise form."""
    ric_up = ein("mc...,cy...->my...", bg.ginv, bg.ricci)
    nabla_v = ein("a...,am...->m...", bg.v, dw) + ein("a...,may...,y...->m...", bg.v, bg.gamma, w)
    return (
        -0.5 * connection_terms_vector(bg, w, dw)
        - 0.5 * ein("my...,y...->m...", ric_up, w)
        + 0.5 * nabla_v
    )


# ---------------------------------------------------------------------- #
# full-grid operators                                                    #
# ---------------------------------------------------------------------- #
def box_components(bg: BackgroundGeometry, f: np.ndarray, df: np.ndarray | None = None) -> np.ndarray:
    """g^{mn} d_m d_n f - Gamma^l d_l f applied to every component of f."""
    if df is None:
        df = gradient(f, bg.spacings)
    hess = hessian(f, bg.spacings)
    return ein("mn...,mn...->...", bg.ginv, hess) - ein("e...,e...->...", bg.gcontr, df)


def hessian_covariant(bg: BackgroundGeometry, f: np.ndarray) -> np.ndarray:
    """D^2 f = d_a d_b f - Gamma^c_ab d_c f."""
    return hessian(f, bg.spacings) - ein("cab...,c...->ab...", bg.gamma, gradient(f, bg.spacings))


def lin_ricci_components(bg: BackgroundGeometry, h: np.ndarray) -> np.ndarray:
    dh = gradient(h, bg.spacings)
    rough = box_components(bg, h, dh) + connection_terms(bg, h, dh)
    b = bianchi(bg, h, dh)
    return (
        -0.5 * rough
        + ricci_circ(bg, h)
        - riemann_action(bg, h)
        - killing(bg, b, gradient(b, bg.spacings))
    )


def lin_einstein_components(bg: BackgroundGeometry, h: np.ndarray) -> np.ndarray:
    dh = gradient(h, bg.spacings)
    return -0.5 * box_components(bg, h, dh) + lower_order_coupling(bg, h, dh)


def lin_einstein_gauged_components(bg: BackgroundGeometry, h: np.ndarray) -> np.ndarray:
    """-1/2 rough(h) - Rm(h) - 1/2 D^2 tr h + 1/2 (box tr h - delta delta h) g."""
    dh = gradient(h, bg.spacings)
    rough = box_components(bg, h, dh) + connection_terms(bg, h, dh)
    tr = trace(h, bg.ginv)
    box_tr = box_components(bg, tr)
    dvg = divergence(bg, h, dh)
    nabla = covariant_one_form(bg, dvg, gradient(dvg, bg.spacings))
    delta_delta = -ein("ab...,ab...->...", bg.ginv, nabla)
    return (
        -0.5 * rough
        - riemann_action(bg, h)
        - 0.5 * hessian_covariant(bg, tr)
        + 0.5 * (box_tr - delta_delta) * bg.g
    )


# ---------------------------------------------------------------------- #
# public operations on grid fields                                       #
# ---------------------------------------------------------------------- #
def christoffel(g: MetricField) -> ConnectionCoefficients:
    return ConnectionCoefficients(geometry(g).gamma, g.grid)


def box_scalar(g: MetricField, f: TensorField) -> TensorField:
    if f.rank != "scalar":
        raise InvalidInputError(f"box_scalar expects a scalar, got {f.rank}")
    return TensorField("scalar", box_components(geometry(g), f.data), g.grid)


_KINDS = {
    "div": ("sym2", "one_form"),
    "killing": ("one_form", "sym2"),
    "bianchi": ("sym2", "one_form"),
    "trace": ("sym2", "scalar"),
}


def first_order_ops(g: MetricField, field: TensorField, kind: str) -> TensorField:
    """delta, delta*, beta or trace of a grid field."""
    if kind not in _KINDS:
        raise InvalidInputError(f"unknown operator kind {kind!r}")
    wanted, produced = _KINDS[kind]
    rank = field.rank
    if kind == "killing" and rank == "vector":
        data = ein("ab...,b...->a...", g.components, field.data)
    elif rank != wanted:
        raise InvalidInputError(f"{kind} expects a {wanted} field, got {rank}")
    else:
        data = field.data
    bg = geometry(g)
    d = gradient(data, bg.spacings)
    if kind == "div":
        out = divergence(bg, data, d)
    elif kind == "killing":
        out = killing(bg, data, d)
    elif kind == "bianchi":
        out = bianchi(bg, data, d)
    else:
        out = trace(data, bg.ginv)
    return TensorField(produced, out, g.grid)


def _sym2(h: TensorField) -> np.ndarray:
    if h.rank != "sym2":
        raise InvalidInputError(f"expected a sym2 field, got {h.rank}")
    return h.data


def lin_ricci(g: MetricField, h: TensorField) -> TensorField:
    """Ric'_h = 1/2 D*D h + Ric o h - Rm(h) - delta* beta h."""
    return TensorField("sym2", lin_ricci_components(geometry(g), _sym2(h)), g.grid)


def lin_einstein(g: MetricField, h: TensorField) -> TensorField:
    """Gauged linearization L(h) = Ric'_h + delta*(V'_h) + 1/2 L_V h."""
    return TensorField("sym2", lin_einstein_components(geometry(g), _sym2(h)), g.grid)


def lin_einstein_gauged(g: MetricField, h: TensorField) -> TensorField:
    return TensorField("sym2", lin_einstein_gauged_components(geometry(g), _sym2(h)), g.grid)


def bianchi_of_ricci(g: MetricField) -> np.ndarray:
    """beta_g Ric_g; vanishes to truncation order for every metric."""
    bg = geometry(g)
    return bianchi(bg, bg.ricci, gradient(bg.ricci, bg.spacings))


# ---------------------------------------------------------------------- #
# hypersurfaces                                                          #
# ---------------------------------------------------------------------- #
def tangential(k: int, dim: int) -> list[int]:
    return [a for a in range(dim) if a != k]


def unit_conormal(ginv: np.ndarray, k: int, timelike: bool) -> np.ndarray:
    """N_k for the face x^k = const: future timelike or outward spacelike."""
    gkk = ginv[k, k]
    return -1.0 / np.sqrt(-gkk) if timelike else 1.0 / np.sqrt(gkk)


def unit_normal(ginv: np.ndarray, k: int, timelike: bool) -> np.ndarray:
    """nu^mu = g^{mu k} N_k."""
    return ginv[:, k] * unit_conormal(ginv, k, timelike)


def second_fundamental_form(
    g: np.ndarray, dg: np.ndarray, k: int, timelike: bool,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    (A, H, q^{-1}) of the face x^k = const: A_ab = -N_k Gamma^k_ab on the
    tangential coordinates, H its trace against the induced metric q.
    """
    ginv = inverse_metric(g)
    gamma, _ = christoffel_from_jet(g, ginv, dg)
    tan = tangential(k, g.shape[0])
    a = -unit_conormal(ginv, k, timelike) * gamma[k][np.ix_(tan, tan)]
    qinv = inverse_metric(g[np.ix_(tan, tan)])
    return a, trace(a, qinv), qinv


def complex_step(fn: Callable[[complex], np.ndarray], step: float | None = None) -> np.ndarray:
    """d/ds fn(s) at s = 0 for a map analytic in s."""
    step = settings.complex_step if step is None else step
    return np.imag(fn(1j * step)) / step


# ---------------------------------------------------------------------- #
# constraints                                                            #
# ---------------------------------------------------------------------- #
def scalar_curvature(q: np.ndarray, spacings: tuple[float, ...]) -> np.ndarray:
    qinv = inverse_metric(q)
    gamma, _ = christoffel_from_jet(q, qinv, gradient(q, spacings))
    ric = ricci_from_riemann(riemann_from_connection(gamma, gradient(gamma, spacings)))
    return trace(ric, qinv)


def constraint_map(
    gamma: np.ndarray, k: np.ndarray, q: np.ndarray, nu: np.ndarray,
    spacings: tuple[float, ...],
) -> ConstraintResidual:
    """
    Gauss and Gauss-Codazzi residuals on a spacelike slice:
    C0 = |K|^2 - (tr K)^2 - R_gamma + tr_gamma Q + Q(nu, nu),
    C_i = div(K - tr K gamma)_i - Q(nu, d_i).
    `q` and `nu` carry spacetime components; gamma, k the slice block.
    """
    ginv = inverse_metric(gamma)
    chris, _ = christoffel_from_jet(gamma, ginv, gradient(gamma, spacings))
    ric = ricci_from_riemann(riemann_from_connection(chris, gradient(chris, spacings)))
    r_gamma = trace(ric, ginv)
    tr_k = trace(k, ginv)
    spatial = slice(1, None)
    q_s = q[spatial, spatial]
    c0 = dot(k, k, ginv) - tr_k**2 - r_gamma + trace(q_s, ginv) + ein("ab...,a...,b...->...", q, nu, nu)
    dk = gradient(k, spacings)
    nabla_k = (
        dk
        - ein("ljk...,li...->jki...", chris, k)
        - ein("lji...,kl...->jki...", chris, k)
    )
    div_k = ein("jk...,jki...->i...", ginv, nabla_k)
    ci = div_k - gradient(tr_k, spacings) - ein("ai...,a...->i...", q[:, spatial], nu)
    return ConstraintResidual(c0=c0, ci=ci)


def slice_data(bg: BackgroundGeometry) -> dict[str, np.ndarray]:
    """Background (gamma, K, Q = Ric, nu) on a t-slice of the geometry."""
    k_s, _, _ = second_fundamental_form(bg.g, bg.dg, 0, timelike=True)
    return {
        "gamma": bg.g[1:, 1:],
        "k": k_s,
        "q": bg.ricci,
        "nu": unit_normal(bg.ginv, 0, timelike=True),
    }


def lin_constraints(
    bg_slice: BackgroundGeometry, gamma_p: np.ndarray, kappa_p: np.ndarray,
    q_p: np.ndarray, nu_p: np.ndarray,
) -> ConstraintResidual:
    """Complex-step linearization of constraint_map about the slice background."""
    base = slice_data(bg_slice)
    step = settings.complex_step

    def perturbed(s: complex) -> ConstraintResidual:
        return constraint_map(
            base["gamma"] + s * gamma_p, base["k"] + s * kappa_p,
            base["q"] + s * q_p, base["nu"] + s * nu_p, bg_slice.spacings,
        )

    res = perturbed(1j * step)
    return ConstraintResidual(c0=np.imag(res.c0) / step, ci=np.imag(res.ci) / step)


# ---------------------------------------------------------------------- #
# boundary C                                                             #
# ---------------------------------------------------------------------- #
def extended_normal(bg: BackgroundGeometry) -> np.ndarray:
    """nu_C = g^{mu 1}/sqrt(g^{11}) at every node of the geometry."""
    return unit_normal(bg.ginv, 1, timelike=False)


def boundary_metric(bg: BackgroundGeometry) -> np.ndarray:
    """Induced metric on C in boundary indices (t, x^A), as a C-grid field."""
    tan = tangential(1, bg.dim)
    return np.take(bg.g[np.ix_(tan, tan)], -1, axis=bg.g.ndim - len(bg.spacings) + 1)


def boundary_geometry(bg: BackgroundGeometry) -> BackgroundGeometry:
    """Jets of (C, g_C) on the C grid."""
    spacings = bg.spacings[:1] + bg.spacings[2:]
    return BackgroundGeometry.from_components(boundary_metric(bg), spacings)


def boundary_geometry_variation(
    bg: BackgroundGeometry, h: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    (A'_h, H'_h, nu'_h) on C:
    A' = 1/2 (L_nu h)^T - delta*_C h(nu)^T - 1/2 h_nunu A,
    H' = 1/2 nu(tr_C h) - div_C h(nu)^T - 1/2 h_nunu H_C.
    nu'_h is the derivative of g^{mu 1}/sqrt(g^{11}) along g + s h.
    """
    dim = bg.dim
    tan = tangential(1, dim)
    dh = gradient(h, bg.spacings)
    nu = extended_normal(bg)
    dnu = gradient(nu, bg.spacings)
    lie = lie_derivative(nu, dnu, h, dh)[np.ix_(tan, tan)]

    def on_c(arr: np.ndarray) -> np.ndarray:
        return np.take(arr, -1, axis=arr.ndim - len(bg.spacings) + 1)

    hnu = ein("ab...,b...->a...", h, nu)
    h_nunu = on_c(ein("a...,a...->...", hnu, nu))
    hnu_t = on_c(hnu[tan])

    cg = boundary_geometry(bg)
    d_hnu_t = gradient(hnu_t, cg.spacings)
    a_c, h_c, qinv = second_fundamental_form(on_c(bg.g), on_c(bg.dg), 1, timelike=False)
    a_p = 0.5 * on_c(lie) - killing(cg, hnu_t, d_hnu_t) - 0.5 * h_nunu * a_c

    qinv_bulk = inverse_metric(bg.g[np.ix_(tan, tan)])
    tr_c = ein("ab...,ab...->...", qinv_bulk, h[np.ix_(tan, tan)])
    nu_tr = on_c(ein("e...,e...->...", nu, gradient(tr_c, bg.spacings)))
    div_c = -divergence_one_form(cg, hnu_t, d_hnu_t)
    h_p = 0.5 * nu_tr - div_c - 0.5 * h_nunu * h_c

    g_c_full = on_c(bg.g)
    h_c_full = on_c(h)
    nu_p = complex_step(lambda s: unit_normal(inverse_metric(g_c_full + s * h_c_full), 1, False))
    return a_p, h_p, nu_p


def divergence_one_form(bg: BackgroundGeometry, w: np.ndarray, dw: np.ndarray) -> np.ndarray:
    """delta w = -g^{ab} nabla_a w_b."""
    return -ein("ab...,ab...->...", bg.ginv, covariant_one_form(bg, w, dw))

