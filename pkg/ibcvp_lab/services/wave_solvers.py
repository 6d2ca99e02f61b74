"""
Time-stepping kernels: the bulk Dirichlet problem for stacks of scalar wave
equations, Cauchy evolution on the boundary cylinder C, transport along
T^C, and discrete slice norms.

Unknowns are stacks of components with the time axis right after the
component axes; `FieldHistory` stores them with the component axes
flattened into one.
"""

from __future__ import annotations

from itertools import product
from typing import Callable

import numpy as np
import pandas as pd
from scipy.ndimage import distance_transform_cdt, distance_transform_edt

from ibcvp_lab.errors import InvalidInputError, NumericalFailure
from ibcvp_lab.logconf import logger
from ibcvp_lab.models.fields import MetricField
from ibcvp_lab.models.grid import CornerGrid
from ibcvp_lab.models.reports import Coupling, EnergySeries, FieldHistory, WaveProblemSpec
from ibcvp_lab.services.corner_geometry import build_grid, minkowski_corner
from ibcvp_lab.services.discrete_calculus import (
    connection_terms_one_form, ein, first_difference, geometry, gradient,
    hessian, second_difference, trace,
)
from ibcvp_lab.settings import settings


def edge_mask(shape: tuple[int, ...]) -> np.ndarray:
    """Nodes on any face of a box of the given shape."""
    mask = np.zeros(shape, dtype=bool)
    for axis in range(len(shape)):
        idx = [slice(None)] * len(shape)
        idx[axis] = 0
        mask[tuple(idx)] = True
        idx[axis] = -1
        mask[tuple(idx)] = True
    return mask


def _cfl(grid) -> tuple[float, float]:
    ratio = grid.spacings[0] / min(grid.spacings[1:])
    return ratio, getattr(grid, "cfl_bound", settings.cfl_bound)


def _von_neumann(ginv: np.ndarray, spacings: tuple[float, ...]) -> float:
    """Worst-node amplification bound dt^2 lambda / 4 of the frozen-coefficient scheme."""
    dt, sp = spacings[0], spacings[1:]
    lam = sum(
        4.0 * np.abs(ginv[i + 1, i + 1].real) / h**2 for i, h in enumerate(sp)
    ) / np.abs(ginv[0, 0].real)
    return float(dt**2 * np.max(lam) / 4.0)


def _flat(arr: np.ndarray, ncomp: int) -> np.ndarray:
    return arr.reshape((-1,) + arr.shape[ncomp:])


def solve_bulk_wave(spec: WaveProblemSpec, steps: int | None = None) -> FieldHistory:
    """
    Leapfrog for -1/2 box_g w + P(w, dw) = F with Dirichlet data on every
    face, the first step by Taylor expansion through the equation.

    box_g w = g^00 w_tt + 2 g^0i d_i w_t + g^ij d_ij w - Gamma^l d_l w;
    P and the w_t in the cross terms are lagged (explicit).
    """
    g = spec.metric
    grid = g.grid
    spacings = grid.spacings
    dt, sp = spacings[0], spacings[1:]
    nsp = len(sp)
    steps = grid.shape[0] - 1 if steps is None else steps
    if not 1 <= steps <= grid.shape[0] - 1:
        raise InvalidInputError(f"step count {steps} outside the grid")

    cfl, bound = _cfl(grid)
    if cfl > bound + 1e-12:
        raise InvalidInputError(f"CFL number {cfl:.3f} exceeds {bound:.3f}")
    bg = geometry(g)
    amplification = _von_neumann(bg.ginv, spacings)
    if amplification > 1.0:
        raise NumericalFailure("frozen-coefficient von Neumann check failed", amplification=amplification)

    w0 = np.asarray(spec.initial_value)
    space = w0.shape[w0.ndim - nsp:]
    comp_shape = w0.shape[:w0.ndim - nsp] or (1,)
    ncomp = w0.ndim - nsp
    dtype = np.result_type(w0, spec.initial_velocity, spec.source, bg.g)

    faces = edge_mask(space) if spec.face_mask is None else spec.face_mask
    time_shape = comp_shape + (grid.shape[0],) + space
    source = np.broadcast_to(spec.source, time_shape) if ncomp else np.asarray(spec.source)[None]
    bdata = np.zeros(time_shape) if spec.boundary_data is None else np.asarray(spec.boundary_data)
    if not ncomp and spec.boundary_data is not None:
        bdata = bdata[None]

    w_prev = _flat(w0, ncomp).astype(dtype) if ncomp else w0[None].astype(dtype)
    v0 = _flat(np.asarray(spec.initial_velocity), ncomp) if ncomp else np.asarray(spec.initial_velocity)[None]
    src = source.reshape((-1,) + source.shape[len(comp_shape):])
    bd = bdata.reshape((-1,) + bdata.shape[len(comp_shape):])

    if spec.check_compatibility:
        mismatch = float(np.max(np.abs(w_prev[..., faces] - bd[:, 0][..., faces]), initial=0.0))
        if mismatch > settings.corner_tol:
            raise InvalidInputError(f"initial and boundary data incompatible at faces ({mismatch:.2e})")

    dim = len(spacings)
    coupling: Coupling | None = spec.coupling

    def accel(k: int, w: np.ndarray, wt: np.ndarray) -> np.ndarray:
        gi = np.take(bg.ginv, k, axis=2)
        gc = np.take(bg.gcontr, k, axis=1)
        dws = gradient(w, sp)
        lap = ein("ij...,ij...->...", gi[1:, 1:], hessian(w, sp))
        cross = 2.0 * ein("i...,i...->...", gi[0, 1:], gradient(wt, sp))
        dw = np.concatenate([wt[None], dws])
        rhs = -2.0 * src[:, k]
        if coupling is not None:
            p = coupling(k, w.reshape(comp_shape + space), dw.reshape((dim,) + comp_shape + space))
            rhs = rhs + 2.0 * p.reshape(w.shape)
        return (rhs - cross - lap + ein("e...,e...->...", gc, dw)) / gi[0, 0]

    def impose(w: np.ndarray, k: int) -> np.ndarray:
        w[..., faces] = bd[:, k][..., faces]
        if not np.all(np.isfinite(w)):
            raise NumericalFailure("non-finite values in wave solve", step=k)
        return w

    logger.info("Wave solve: %d steps, %d components, cfl %.3f", steps, w_prev.shape[0], cfl)
    a0 = accel(0, w_prev, v0.astype(dtype))
    w_cur = impose(w_prev + dt * v0 + 0.5 * dt**2 * a0, 1)
    slices = [w_prev, w_cur]
    for k in range(1, steps):
        if k == 1:
            wt = (w_cur - w_prev) / dt + 0.5 * dt * a0
        else:
            wt = (3.0 * w_cur - 4.0 * w_prev + slices[-3]) / (2.0 * dt)
        w_next = 2.0 * w_cur - w_prev + dt**2 * accel(k, w_cur, wt)
        w_prev, w_cur = w_cur, impose(w_next, k + 1)
        slices.append(w_cur)
        logger.debug("step %d max|w| %.3e", k + 1, float(np.max(np.abs(w_cur))))
    return FieldHistory(
        values=np.stack(slices, axis=1), times=grid.t[: steps + 1],
        cfl=cfl, component_shape=comp_shape,
    )


def solve_boundary_cauchy_wave(
    g_c: MetricField,
    rhs: np.ndarray,
    init_value: np.ndarray,
    init_velocity: np.ndarray,
    kind: str = "scalar",
    steps: int | None = None,
) -> FieldHistory:
    """
    Cauchy problem on (C, g_C) with zero data on the outer faces of C:
    scalar: -(n-1)/n box_C u - (1/n) R_C u = rhs,
    one_form: -1/2 [box_C + Ric_C] w = rhs.
    """
    bgc = geometry(g_c)
    n = g_c.grid.dim
    if kind == "scalar":
        r_c = trace(bgc.ricci, bgc.ginv)

        def coupling(k: int, w: np.ndarray, dw: np.ndarray) -> np.ndarray:
            return -np.take(r_c, k, axis=0) * w / (2.0 * (n - 1))

        source = n / (2.0 * (n - 1)) * rhs
    elif kind == "one_form":
        slices: dict[int, object] = {}

        def coupling(k: int, w: np.ndarray, dw: np.ndarray) -> np.ndarray:
            if k not in slices:
                slices[k] = bgc.at_slice(k)
            bk = slices[k]
            ric_w = ein("ab...,bc...,c...->a...", bk.ricci, bk.ginv, w)
            return -0.5 * connection_terms_one_form(bk, w, dw) - 0.5 * ric_w

        source = rhs
    else:
        raise InvalidInputError(f"unknown boundary wave kind {kind!r}")
    spec = WaveProblemSpec(
        metric=g_c, source=source, initial_value=init_value,
        initial_velocity=init_velocity, coupling=coupling,
    )
    return solve_bulk_wave(spec, steps)


def _upwind(w: np.ndarray, c: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Second-order upwind derivative; centered values where the stencil runs out."""
    f = np.moveaxis(w, axis, 0)
    back = np.gradient(f, h, axis=0, edge_order=2)
    fwd = back.copy()
    back[2:] = (3.0 * f[2:] - 4.0 * f[1:-1] + f[:-2]) / (2.0 * h)
    fwd[:-2] = (-3.0 * f[:-2] + 4.0 * f[1:-1] - f[2:]) / (2.0 * h)
    out = np.where(np.moveaxis(c, axis, 0) > 0, back, fwd)
    return np.moveaxis(out, 0, axis)


def solve_transport(
    t_c: np.ndarray,
    rhs: np.ndarray,
    init: np.ndarray,
    spacings: tuple[float, ...],
    steps: int | None = None,
) -> FieldHistory:
    """
    1/2 T^C(w) = rhs along C by Heun's method. `t_c` carries boundary
    components (t, x^A) on the C grid; `rhs` is a C-grid field.
    """
    dt, sp = spacings[0], spacings[1:]
    if np.any(t_c[0].real <= 0):
        raise InvalidInputError("transport vector is not future directed")
    steps = rhs.shape[0] - 1 if steps is None else steps
    speed = t_c[1:] / t_c[0]

    def slope(k: int, w: np.ndarray) -> np.ndarray:
        adv = sum(
            speed[a, k] * _upwind(w, speed[a, k], h, a) for a, h in enumerate(sp)
        )
        return 2.0 * rhs[k] / t_c[0, k] - adv

    w = np.asarray(init, dtype=np.result_type(init, rhs, t_c))
    out = [w]
    for k in range(steps):
        k1 = slope(k, w)
        k2 = slope(k + 1, w + dt * k1)
        w = w + 0.5 * dt * (k1 + k2)
        if not np.all(np.isfinite(w)):
            raise NumericalFailure("non-finite values in transport", step=k + 1)
        out.append(w)
    times = dt * np.arange(steps + 1)
    return FieldHistory(values=np.stack(out)[None], times=times, cfl=float(dt / min(sp)))


# ---------------------------------------------------------------------- #
# norms and checks                                                       #
# ---------------------------------------------------------------------- #
def quadrature_weights(shape: tuple[int, ...], spacings: tuple[float, ...]) -> np.ndarray:
    """Tensor-product trapezoid weights."""
    weights = np.ones(shape)
    for axis, (m, h) in enumerate(zip(shape, spacings)):
        w1 = np.full(m, h)
        w1[[0, -1]] = 0.5 * h
        view = [1] * len(shape)
        view[axis] = m
        weights = weights * w1.reshape(view)
    return weights


def _multi_indices(nsp: int, s: int):
    return [beta for beta in product(range(s + 1), repeat=nsp) if sum(beta) <= s]


def slice_norm(w: np.ndarray, spacings: tuple[float, ...], s: int) -> float:
    """Discrete H^s norm of a stack of components on one slice."""
    if not 0 <= s <= 3:
        raise InvalidInputError(f"Sobolev order {s} outside 0..3")
    nsp = len(spacings)
    weights = quadrature_weights(w.shape[w.ndim - nsp:], spacings)
    total = 0.0
    for beta in _multi_indices(nsp, s):
        d = w
        for axis, order in enumerate(beta):
            for _ in range(order):
                d = first_difference(d, spacings[axis], d.ndim - nsp + axis)
        total += float(np.sum(weights * np.abs(d) ** 2))
    return float(np.sqrt(total))


def energy_norm(history: FieldHistory, k: int, s: int, spacings: tuple[float, ...]) -> float:
    return slice_norm(history.values[:, k], spacings, s)


def energy_series(history: FieldHistory, spacings: tuple[float, ...], s_max: int = 1) -> EnergySeries:
    norms = {
        s: np.array([energy_norm(history, k, s, spacings) for k in range(history.steps + 1)])
        for s in range(s_max + 1)
    }
    return EnergySeries(times=history.times, norms=norms)


def energy_frame(series: EnergySeries) -> pd.DataFrame:
    return pd.DataFrame(series.rows(), columns=["t", "s", "norm"])


def history_frame(
    history: FieldHistory, coords: list[np.ndarray], names: list[str], every: int = 1,
) -> pd.DataFrame:
    """
    One row per node of every `every`-th slice (the last slice always kept):
    t, the spatial coordinates in `names`, then components w0, w1, ...
    """
    if every < 1:
        raise InvalidInputError("snapshot stride must be at least 1")
    keep = sorted(set(range(0, history.steps + 1, every)) | {history.steps})
    nodes = coords[0].size
    frames = []
    for k in keep:
        cols = {"t": np.full(nodes, float(history.times[k]))}
        cols.update({name: c.ravel() for name, c in zip(names, coords)})
        for c, w in enumerate(history.values[:, k]):
            cols[f"w{c}"] = np.real(w).ravel()
        frames.append(pd.DataFrame(cols))
    return pd.concat(frames, ignore_index=True)


def wave_energy(history: FieldHistory, g: MetricField) -> np.ndarray:
    """
    E^{k+1/2} = sum over interior nodes of
    -g^00 |(w^{k+1} - w^k)/dt|^2 - w^k g^ii D_ii w^{k+1}, per dx^n.
    Conserved by the leapfrog on constant diagonal coefficients with zero
    face data.
    """
    spacings = g.grid.spacings
    dt, sp = spacings[0], spacings[1:]
    nsp = len(sp)
    ginv = g.inverse[(slice(None), slice(None)) + (0,) * len(spacings)].real
    vals = history.values
    interior = ~edge_mask(vals.shape[2:])
    cell = float(np.prod(sp))
    out = []
    for k in range(history.steps):
        wk, wk1 = vals[:, k], vals[:, k + 1]
        lap = sum(
            ginv[i + 1, i + 1] * second_difference(wk1, h, wk1.ndim - nsp + i)
            for i, h in enumerate(sp)
        )
        kinetic = -ginv[0, 0] * np.abs((wk1 - wk) / dt) ** 2
        density = kinetic - (np.conj(wk) * lap).real
        out.append(cell * float(np.sum(density[..., interior])))
    return np.array(out)


def support_containment(
    history: FieldHistory,
    initial_support: np.ndarray,
    spacing: float,
    speed: float = 1.0,
    threshold: float = 0.0,
    slack: float = 0.0,
    cells: bool = False,
) -> float:
    """
    Largest distance by which nodes with |w| > threshold leave the initial
    support fattened by speed * t + slack. Non-positive means contained.
    `cells` measures chessboard distance (numerical stencil reach) instead
    of Euclidean distance (light cone).
    """
    if cells:
        dist = spacing * distance_transform_cdt(~initial_support, metric="chessboard")
    else:
        dist = spacing * distance_transform_edt(~initial_support)
    excess = -np.inf
    for k, t in enumerate(history.times):
        live = np.any(np.abs(history.values[:, k]) > threshold, axis=0)
        if np.any(live):
            excess = max(excess, float(np.max(dist[live]) - speed * t - slack))
    return excess


def convergence_study(
    family: Callable[[float], dict[str, float]],
    resolutions: list[float],
) -> pd.DataFrame:
    """
    Observed orders log2(e_h / e_{h/2}) per quantity. `family` maps a mesh
    width to the errors against its oracle.
    """
    if len(resolutions) < 3:
        raise InvalidInputError("convergence study needs at least three resolutions")
    for coarse, fine in zip(resolutions, resolutions[1:]):
        if not np.isclose(coarse / fine, 2.0, rtol=1e-9):
            raise InvalidInputError("resolutions must be nested by a factor of 2")
    errors = [family(h) for h in resolutions]
    rows = []
    for name in errors[0]:
        series = [e[name] for e in errors]
        monotone = all(a > b for a, b in zip(series, series[1:]))
        if not monotone:
            logger.warning("Non-monotone errors for %s: %s", name, series)
        for i, (h, err) in enumerate(zip(resolutions, series)):
            order = float(np.log2(series[i - 1] / err)) if i else float("nan")
            rows.append({"quantity": name, "resolution": h, "error": err, "order": order, "monotone": monotone})
    return pd.DataFrame(rows)


# ---------------------------------------------------------------------- #
# manufactured problem families                                          #
# ---------------------------------------------------------------------- #
def _bulk_manufactured(dx: float, t_max: float):
    grid = build_grid(n=2, dx=dx, dt=dx / 2, t_max=t_max, l1=1.0, la=0.5)
    t, x1, x2 = grid.coords()
    a, k = np.pi, np.pi / (2 * 0.5)
    profile = np.sin(a * (x1 + 1.0)) * np.sin(k * (x2 + 0.5))
    exact = np.sin(t) * profile
    spec = WaveProblemSpec(
        metric=minkowski_corner(0.0, grid),
        source=-0.5 * (1.0 - a**2 - k**2) * exact,
        initial_value=np.zeros(grid.spatial_shape),
        initial_velocity=profile[0],
    )
    return grid, solve_bulk_wave(spec), exact


def bulk_manufactured_history(dx: float, t_max: float = 0.5) -> tuple[CornerGrid, FieldHistory]:
    grid, hist, _ = _bulk_manufactured(dx, t_max)
    return grid, hist


def bulk_manufactured_error(dx: float, t_max: float = 0.5) -> dict[str, float]:
    """w = sin t sin(pi (x1 + l1)/l1) sin(k (x2 + la)) on the flat corner, n = 2."""
    grid, hist, exact = _bulk_manufactured(dx, t_max)
    weights = quadrature_weights(grid.spatial_shape, grid.spatial_spacings)
    err = max(
        float(np.sqrt(np.sum(weights * (hist.values[0, k_] - exact[k_]) ** 2)))
        for k_ in range(grid.shape[0])
    )
    return {"bulk_l2": err}


def boundary_manufactured_error(dx: float, t_max: float = 0.5) -> dict[str, float]:
    """u = cos t sin(k (x2 + la)) on flat C, scalar form, n = 2."""
    grid = build_grid(n=2, dx=dx, dt=dx / 2, t_max=t_max, l1=0.5, la=0.5)
    bgrid = grid.boundary()
    t, x2 = bgrid.coords()
    k = np.pi / (2 * 0.5)
    exact = np.cos(t) * np.sin(k * (x2 + 0.5))
    g_c = MetricField(np.array([[-np.ones(bgrid.shape), np.zeros(bgrid.shape)],
                                [np.zeros(bgrid.shape), np.ones(bgrid.shape)]]), bgrid)
    hist = solve_boundary_cauchy_wave(
        g_c, -0.5 * (1.0 - k**2) * exact, exact[0], np.zeros(bgrid.shape[1:]),
    )
    return {"boundary_max": float(np.max(np.abs(hist.values[0] - exact)))}


def transport_manufactured_error(dx: float, t_max: float = 1.0) -> dict[str, float]:
    """1/2 d_t w = sin t from zero: w = 2 (1 - cos t)."""
    grid = build_grid(n=2, dx=dx, dt=dx / 2, t_max=t_max, l1=0.5, la=0.5)
    bgrid = grid.boundary()
    t, _ = bgrid.coords()
    t_c = np.stack([np.ones(bgrid.shape), np.zeros(bgrid.shape)])
    hist = solve_transport(t_c, np.sin(t), np.zeros(bgrid.shape[1:]), bgrid.spacings)
    return {"transport_max": float(np.max(np.abs(hist.values[0] - 2.0 * (1.0 - np.cos(t)))))}
