"""
Linear solve of L(h) = F for target data tau' by staged corrections, plus
target verification, multi-patch assembly and the harness behind the
uniqueness argument (self-adjointness defect, slice symplectic form and a
zero-data probe).

Stage schedule:
    Step 0  boundary solves with Y terms only, -1/2 box h0 = F;
    chi     Z terms of h0 on C, -1/2 box chi = -P(h0), h1 = h0 + chi;
    E_m     E terms of the previous field, Z terms of E_m itself,
            -1/2 box E_m = -P(E_{m-1}) with E_1 = chi.
"""

from __future__ import annotations

import asyncio

import numpy as np

from ibcvp_lab.errors import GeometryError, InvalidInputError, NumericalFailure
from ibcvp_lab.logconf import logger
from ibcvp_lab.models.fields import MetricField, inverse_metric
from ibcvp_lab.models.gauge import GaugeState
from ibcvp_lab.models.grid import CornerGrid
from ibcvp_lab.models.iteration import IterationOptions, PatchChart
from ibcvp_lab.models.reports import (
    DecayReport, FieldHistory, IterationTrace, StageRecord, VerificationReport,
    WaveProblemSpec,
)
from ibcvp_lab.models.target import BoundaryEvolutionState, TargetData
from ibcvp_lab.services.boundary_corner_system import (
    assemble_boundary_metric, corner_cauchy_data, induced_target_data,
    solve_boundary_system, solve_hnu_equation, solve_hnunu_equation, solve_u_equation,
    split_boundary_components,
)
from ibcvp_lab.services.corner_geometry import localization_epsilon, smooth_bump
from ibcvp_lab.services.discrete_calculus import (
    boundary_metric, complex_step, dot, ein, geometry, gradient,
    lin_einstein_components, lin_einstein_gauged_components, lower_order_coupling,
    second_fundamental_form, trace,
)
from ibcvp_lab.services.gauge_system import lin_gauge, propagate_and_split
from ibcvp_lab.services.wave_solvers import (
    quadrature_weights, slice_norm, solve_bulk_wave, support_containment,
)
from ibcvp_lab.settings import settings
from ibcvp_lab.utils.async_utils import run_sync

# highest difference order a stage takes from the field it is sourced by
_DERIVATIVE_ORDER = {"step0": 0, "chi": 2, "E": 2}


# ---------------------------------------------------------------------- #
# helpers                                                                #
# ---------------------------------------------------------------------- #
def _zeros_sym2(g: MetricField) -> np.ndarray:
    return np.zeros((g.grid.dim, g.grid.dim) + g.grid.shape)


def _coupling(g: MetricField, h: np.ndarray) -> np.ndarray:
    """P(h), the lower-order part of L(h) = -1/2 box h + P(h)."""
    bg = geometry(g)
    return lower_order_coupling(bg, h, gradient(h, bg.spacings))


def _bulk_solve(
    g: MetricField, source: np.ndarray, h_c: np.ndarray,
    h_s: np.ndarray | None = None, dt_h: np.ndarray | None = None,
) -> np.ndarray:
    """-1/2 box_g w = source with w = h_c on C, zero on the outer faces."""
    grid = g.grid
    d = grid.dim
    zero = np.zeros((d, d) + grid.spatial_shape)
    boundary = np.zeros((d, d) + grid.shape)
    boundary[:, :, :, -1] = np.real(h_c)
    spec = WaveProblemSpec(
        metric=g,
        source=source,
        initial_value=zero if h_s is None else h_s,
        initial_velocity=zero if dt_h is None else dt_h,
        boundary_data=boundary,
    )
    return np.real(solve_bulk_wave(spec).field())


def _interior_max(g: MetricField, arr: np.ndarray) -> float:
    return float(np.max(np.abs(arr[..., g.grid.interior_mask]), initial=0.0))


def _bulk_residual(g: MetricField, h: np.ndarray, f: np.ndarray) -> float:
    return _interior_max(g, lin_einstein_components(geometry(g), h) - f)


def _record(
    label: str, g: MetricField, field: np.ndarray, h: np.ndarray,
    tau: TargetData, order: int,
) -> StageRecord:
    grid = g.grid
    h1 = max(slice_norm(field[:, :, k], grid.spatial_spacings, 1) for k in range(grid.t.size))
    record = StageRecord(
        label=label,
        norm_c0=float(np.max(np.abs(field))),
        norm_h1=float(h1),
        residual=_bulk_residual(g, h, tau.f),
        gauge_norm=_interior_max(g, lin_gauge(g, h).data),
        derivative_order=order,
    )
    logger.info("Stage %s: |.|_C0 %.3e, |L(h)-F| %.3e", label, record.norm_c0, record.residual)
    return record


def _boundary_state(
    g: MetricField, u: np.ndarray | None = None, hnu_t: np.ndarray | None = None,
    h_nunu: np.ndarray | None = None,
) -> BoundaryEvolutionState:
    c_shape = g.grid.boundary().shape
    return BoundaryEvolutionState(
        u=np.zeros(c_shape) if u is None else u,
        hnu_t=np.zeros((g.grid.n,) + c_shape) if hnu_t is None else hnu_t,
        h_nunu=np.zeros(c_shape) if h_nunu is None else h_nunu,
        sources={},
    )


def _precheck(g: MetricField, opts: IterationOptions) -> float:
    loc = localization_epsilon(g, opts.eps_order)
    if loc.eps > opts.eps_max:
        raise InvalidInputError(
            f"background localization eps={loc.eps:.3g} exceeds eps_max={opts.eps_max:g}"
        )
    return loc.eps


# ---------------------------------------------------------------------- #
# stages                                                                 #
# ---------------------------------------------------------------------- #
def _correction_stage(
    g: MetricField, zero_tau: TargetData, prev: np.ndarray, residual: np.ndarray,
    source: np.ndarray,
) -> np.ndarray:
    """
    One E_m: E terms read off `prev` with the gauge W' + X' of `prev`, Z
    terms read off provisional bulk solves of E_m itself.
    """
    zero_sigma = np.zeros((g.grid.n, g.grid.n) + g.grid.boundary().shape)
    gauge = propagate_and_split(g, zero_tau, prev, residual=residual)
    u, _ = solve_u_equation(g, zero_tau, gauge, prev, "E")

    trial = _bulk_solve(g, source, assemble_boundary_metric(g, zero_sigma, _boundary_state(g, u)))
    hnu_t, _ = solve_hnu_equation(g, zero_tau, gauge, prev, "ZE", z_field=trial)

    trial = _bulk_solve(
        g, source, assemble_boundary_metric(g, zero_sigma, _boundary_state(g, u, hnu_t)),
    )
    h_nunu, _ = solve_hnunu_equation(g, zero_tau, gauge, prev, "ZE", z_field=trial)

    state = _boundary_state(g, u, hnu_t, h_nunu)
    return _bulk_solve(g, source, assemble_boundary_metric(g, zero_sigma, state))


def _solve(
    g: MetricField, tau: TargetData, opts: IterationOptions,
    seed_velocity: np.ndarray | None = None,
) -> tuple[np.ndarray, GaugeState, IterationTrace]:
    eps = _precheck(g, opts)
    trace_ = IterationTrace()
    zero_sigma = np.zeros_like(tau.sigma_p)

    # Step 0
    h_s, dt_h = corner_cauchy_data(g, tau)
    if seed_velocity is not None:
        dt_h = dt_h + seed_velocity
    gauge0 = propagate_and_split(g, tau)
    state = solve_boundary_system(g, tau, gauge0, mode="Y")
    h0 = _bulk_solve(g, tau.f, assemble_boundary_metric(g, tau.sigma_p, state), h_s, dt_h)
    gap = state.reconciliation(split_boundary_components(g, h0))
    if max(gap.values()) > settings.corner_tol:
        logger.warning("Boundary unknowns and bulk trace on C disagree: %s", gap)
    p_h0 = _coupling(g, h0)
    trace_.add(_record("step0", g, h0, h0, tau, _DERIVATIVE_ORDER["step0"]))

    # chi
    gauge = propagate_and_split(g, tau, h0, residual=p_h0)
    z_state = solve_boundary_system(g, tau, gauge, h0, mode="Z")
    chi = _bulk_solve(g, -p_h0, assemble_boundary_metric(g, zero_sigma, z_state))
    h = h0 + chi
    trace_.add(_record("chi", g, chi, h, tau, _DERIVATIVE_ORDER["chi"]))

    last, p_last = chi, _coupling(g, chi)
    if opts.mode == "staged":
        zero_tau = TargetData.zeros(g.grid)
        prev, prev_residual = h, p_last
        stalls = 0
        for m in range(2, opts.m_max + 1):
            e_m = _correction_stage(g, zero_tau, prev, prev_residual, -p_last)
            h = h + e_m
            trace_.add(_record(f"E_{m}", g, e_m, h, tau, _DERIVATIVE_ORDER["E"]))
            p_e = _coupling(g, e_m)
            prev, prev_residual = e_m, p_e - p_last
            last, p_last = e_m, p_e

            size = float(np.max(np.abs(e_m)))
            if size <= opts.tol:
                break
            ratios = trace_.ratios
            if ratios and ratios[-1] > opts.stall_ratio:
                stalls += 1
                if stalls >= opts.stall_count:
                    raise NumericalFailure(
                        f"iteration is not contracting: ratio {ratios[-1]:.3f} at eps={eps:.3g}",
                        step=m, eps=eps, ratios=ratios,
                    )
            else:
                stalls = 0

    final_gauge = propagate_and_split(g, tau, h, residual=p_last)
    logger.info("Linear solve done: %d stages, last correction %.3e",
                len(trace_.stages), float(np.max(np.abs(last))))
    return h, final_gauge, trace_


def solve_linear_ibcvp(
    g: MetricField, tau: TargetData, opts: IterationOptions | dict | None = None,
) -> tuple[np.ndarray, GaugeState, IterationTrace]:
    """
    Solve L(h) = F with target data tau'. Returns h = h0 + chi + sum E_m,
    the gauge state of h and the per-stage trace. The last correction E
    leaves L(h) - F = P(E) on the interior.
    """
    if opts is None:
        opts = IterationOptions()
    elif isinstance(opts, dict):
        opts = IterationOptions(**opts)
    logger.info("Linear solve: mode %s, m_max %d, grid %s", opts.mode, opts.m_max, g.grid.shape)
    return _solve(g, tau, opts)


# ---------------------------------------------------------------------- #
# verification                                                           #
# ---------------------------------------------------------------------- #
def _trace_free(s: np.ndarray, g_c: np.ndarray) -> np.ndarray:
    qinv = inverse_metric(g_c)
    return s - trace(s, qinv) / g_c.shape[0] * g_c


def verify_target(
    g: MetricField, h: np.ndarray, gauge: GaugeState | None, tau: TargetData,
) -> VerificationReport:
    """Induced data of h against tau', the bulk residual and, with a gauge, V'_h."""
    grid = g.grid
    bg = geometry(g)
    induced = induced_target_data(g, h)
    g_c = boundary_metric(bg)

    def gap(a: np.ndarray, b: np.ndarray) -> float:
        return float(np.max(np.abs(a - b), initial=0.0))

    residuals = {
        "c1_gamma": gap(induced.gamma_p, tau.gamma_p),
        "c1_kappa": gap(induced.kappa_p, tau.kappa_p),
        "c1_normal": gap(induced.nu_p, tau.nu_p),
        "c1_gauge_s": gap(induced.v_s, tau.v_s),
        "c2_sigma": gap(_trace_free(induced.sigma_p, g_c), _trace_free(tau.sigma_p, g_c)),
        "c2_mean_curvature": gap(induced.ell_p, tau.ell_p),
        "c2_gauge_c": gap(induced.v_c, tau.v_c),
        "c3_angle": gap(induced.alpha_p, tau.alpha_p),
        "bulk": _interior_max(g, induced.f - tau.f),
    }
    if gauge is not None:
        residuals["gauge"] = _interior_max(g, lin_gauge(g, h).data - gauge.v_prime)
    report = VerificationReport(residuals=residuals, bound=settings.first_order_factor * grid.dx**2)
    logger.info("Target verification: %s", "PASS" if report.passed else "FAIL")
    return report


# ---------------------------------------------------------------------- #
# multi-patch assembly                                                   #
# ---------------------------------------------------------------------- #
def _sigma_support(tau: TargetData, nsig: int) -> np.ndarray:
    support = np.zeros(tau.alpha_p.shape, dtype=bool)
    for arr in (tau.f, tau.gamma_p, tau.kappa_p, tau.nu_p, tau.v_s,
                tau.sigma_p, tau.ell_p, tau.v_c, tau.alpha_p):
        lead = tuple(range(arr.ndim - nsig))
        support |= np.any(arr != 0, axis=lead) if lead else arr != 0
    return support


def _patch_distance(grid: CornerGrid, patch: PatchChart, coords: list[np.ndarray]) -> np.ndarray:
    if len(patch.center) != grid.n - 1:
        raise InvalidInputError(f"patch center needs {grid.n - 1} coordinates, got {len(patch.center)}")
    return np.sqrt(sum((x - c) ** 2 for x, c in zip(coords, patch.center))) / patch.radius


def partition_of_unity(
    grid: CornerGrid, patches: list[PatchChart], tau: TargetData | None = None,
) -> list[np.ndarray]:
    """Weights rho_i(x^A) with sum 1 wherever some chart reaches."""
    if not patches:
        raise InvalidInputError("multipatch solve needs at least one patch")
    coords = grid.sigma_coords()
    raw = [smooth_bump(_patch_distance(grid, p, coords)) for p in patches]
    total = sum(raw)
    if tau is not None and np.any(_sigma_support(tau, grid.n - 1) & (total == 0)):
        raise InvalidInputError("patches do not cover the support of the target data")
    covered = total > 0
    safe = np.where(covered, total, 1.0)
    return [np.where(covered, r / safe, 0.0) for r in raw]


def _check_containment(g: MetricField, h_i: np.ndarray, patch: PatchChart, index: int) -> None:
    grid = g.grid
    peak = float(np.max(np.abs(h_i)))
    if peak == 0.0:
        return
    xa = grid.spatial_coords()[1:]
    support = _patch_distance(grid, patch, xa) < 1.0
    history = FieldHistory(
        values=h_i.reshape((-1,) + grid.shape), times=grid.t, cfl=grid.cfl,
        component_shape=h_i.shape[:2],
    )
    excess = support_containment(
        history, support, grid.dx, speed=1.0 / grid.cfl,
        threshold=1e-10 * peak, slack=patch.margin, cells=True,
    )
    if excess > 0:
        raise NumericalFailure("patch solution leaked beyond its margin", patch=index, excess=excess)


async def multipatch_solve_async(
    g: MetricField, tau: TargetData, patches: list[PatchChart],
    opts: IterationOptions | dict | None = None,
) -> np.ndarray:
    weights = partition_of_unity(g.grid, patches, tau)
    sem = asyncio.Semaphore(settings.max_concurrency)
    solve = run_sync(solve_linear_ibcvp)

    async def one(i: int, patch: PatchChart, rho: np.ndarray) -> np.ndarray:
        tau_i = tau.weighted(rho)
        if tau_i.max_norm() == 0.0:
            logger.info("Patch %d carries no data", i)
            return _zeros_sym2(g)
        async with sem:
            logger.info("Patch %d: solving", i)
            h_i, _, _ = await solve(g, tau_i, opts)
        _check_containment(g, h_i, patch, i)
        return h_i

    parts = await asyncio.gather(*(one(i, p, w) for i, (p, w) in enumerate(zip(patches, weights))))
    return sum(parts[1:], parts[0])


def multipatch_solve(
    g: MetricField, tau: TargetData, patches: list[PatchChart],
    opts: IterationOptions | dict | None = None,
) -> np.ndarray:
    """h = sum_i h_i, h_i solving the problem with data rho_i tau'."""
    return asyncio.run(multipatch_solve_async(g, tau, patches, opts))


# ---------------------------------------------------------------------- #
# uniqueness harness                                                     #
# ---------------------------------------------------------------------- #
def _require_vacuum(g: MetricField) -> None:
    ric = float(np.max(np.abs(geometry(g).ricci)))
    if ric > settings.corner_tol:
        raise GeometryError(f"needs a vacuum background (|Ric| = {ric:.2e})")


def _check_window(f: np.ndarray, rows: slice, name: str, where: str) -> None:
    size = float(np.max(np.abs(f[:, :, rows])))
    if size > settings.corner_tol:
        raise InvalidInputError(f"{name} has nonzero data at {where} ({size:.2e})")
    on_c = float(np.max(np.abs(f[:, :, :, -1])))
    if on_c > settings.corner_tol:
        raise InvalidInputError(f"{name} has nonzero boundary data on C ({on_c:.2e})")


def _volume(g: MetricField) -> np.ndarray:
    comps = np.moveaxis(g.components.real, (0, 1), (-2, -1))
    return np.sqrt(np.abs(np.linalg.det(comps)))


def _pairing(ginv: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return ein("ac...,bd...,ab...,cd...->...", ginv, ginv, a, b)


def selfadjoint_defect(
    g: MetricField, h: np.ndarray, k: np.ndarray, check_classes: bool = True,
) -> float:
    """
    |int <L~h, k> - int <h, L~k>| with L~ the divergence-gauged operator.
    h must vanish near the bottom slice and k near the top one.
    """
    _require_vacuum(g)
    if check_classes:
        _check_window(h, slice(0, 2), "h", "the bottom slice")
        _check_window(k, slice(-2, None), "k", "the top slice")
    bg = geometry(g)
    grid = g.grid
    weights = quadrature_weights(grid.shape, grid.spacings) * _volume(g)
    lh = lin_einstein_gauged_components(bg, h)
    lk = lin_einstein_gauged_components(bg, k)
    left = float(np.sum(weights * _pairing(bg.ginv, lh, k).real))
    right = float(np.sum(weights * _pairing(bg.ginv, h, lk).real))
    return abs(left - right)


def _slice_variation(g: MetricField, f: np.ndarray, index: int) -> tuple[np.ndarray, np.ndarray]:
    """(f on the slice, K'_f) at time index `index`."""
    bg = geometry(g)
    axis = f.ndim - len(bg.spacings)
    df = gradient(f, bg.spacings)
    f_s = np.take(f, index, axis=axis)
    df_s = np.take(df, index, axis=axis + 1)
    g_s = np.take(bg.g, index, axis=axis)
    dg_s = np.take(bg.dg, index, axis=axis + 1)
    k_p = complex_step(
        lambda s: second_fundamental_form(g_s + s * f_s, dg_s + s * df_s, 0, timelike=True)[0]
    )
    return f_s[1:, 1:], k_p


def symplectic_form(g: MetricField, h: np.ndarray, k: np.ndarray, index: int = 0) -> float:
    """
    Omega_S(h, k) = -int_S <K'_h, k> - <K'_k, h>
        + 1/2 [tr h (<K, k> + 2 (tr K)'_k) - tr k (<K, h> + 2 (tr K)'_h)]
    on the slice t = t[index], all pairings with the induced metric.
    """
    bg = geometry(g)
    grid = g.grid
    axis = bg.g.ndim - len(bg.spacings)
    g_s = np.take(bg.g, index, axis=axis)
    dg_s = np.take(bg.dg, index, axis=axis + 1)
    k_s, _, _ = second_fundamental_form(g_s, dg_s, 0, timelike=True)
    gamma = g_s[1:, 1:].real
    ginv = inverse_metric(gamma)

    h_t, kh = _slice_variation(g, h, index)
    k_t, kk = _slice_variation(g, k, index)
    tr_kh = trace(kh, ginv) - dot(k_s, h_t, ginv)
    tr_kk = trace(kk, ginv) - dot(k_s, k_t, ginv)
    density = -(
        dot(kh, k_t, ginv) - dot(kk, h_t, ginv)
        + 0.5 * (trace(h_t, ginv) * (dot(k_s, k_t, ginv) + 2.0 * tr_kk)
                 - trace(k_t, ginv) * (dot(k_s, h_t, ginv) + 2.0 * tr_kh))
    )
    area = np.sqrt(np.abs(np.linalg.det(np.moveaxis(gamma, (0, 1), (-2, -1)))))
    weights = quadrature_weights(grid.spatial_shape, grid.spatial_spacings) * area
    return float(np.sum(weights * density.real))


def _seed_pattern(g: MetricField) -> np.ndarray:
    grid = g.grid
    x1, *xa = grid.spatial_coords()
    depth = float(-grid.x1[0])
    radius = 0.4 * min(depth, float(grid.xa[0][-1]))
    rho = np.sqrt((x1 + 0.5 * depth) ** 2 + sum(x**2 for x in xa)) / radius
    return ein("ab,...->ab...", np.eye(grid.dim), smooth_bump(rho))


def uniqueness_probe(
    g: MetricField, seed: float, opts: IterationOptions | dict | None = None,
) -> DecayReport:
    """
    Zero target data with `seed` times a compact bump added to the Step-0
    velocity; reports the size of h on the last slice and its peak over
    [0, T_max].
    """
    _require_vacuum(g)
    if opts is None:
        opts = IterationOptions()
    elif isinstance(opts, dict):
        opts = IterationOptions(**opts)
    pattern = _seed_pattern(g)
    h, _, _ = _solve(g, TargetData.zeros(g.grid), opts, seed_velocity=seed * pattern)
    per_slice = np.max(np.abs(np.moveaxis(h, 2, 0)).reshape(h.shape[2], -1), axis=1)
    peak = int(np.argmax(per_slice))
    report = DecayReport(
        seed=abs(seed),
        initial_norm=abs(seed) * float(np.max(np.abs(pattern))),
        final_norm=float(per_slice[-1]),
        peak_norm=float(per_slice[peak]),
        peak_time=float(g.grid.t[peak]),
    )
    logger.info("Uniqueness check: seed %.1e, peak %.3e at t=%.3g, final %.3e",
                seed, report.peak_norm, report.peak_time, report.final_norm)
    return report
