"""
Flat solid cylinders with boundary radius r(t), r(0) = 1, r'(0) = alpha.

Keeping the boundary mean curvature at H = 2 gives

    r''/r + (r'/r)^2 = 2 (sqrt(V) - 1),   V = r^2 + r'^2,

so every member has the same conformal boundary data and the same initial
slice; only the corner angle differs. The ODE is stepped in q = r^2,
w = 2 r r', where it reads q'' = 2 sqrt(q (4 q^2 + w^2)) - 4 q and stays
regular as r -> 0. Collapse times are integrated with r itself as the
independent variable, dt/dr = 2 r / w.
"""

from __future__ import annotations

import math

import numpy as np
import pandas as pd

from ibcvp_lab.errors import InvalidInputError, NumericalFailure
from ibcvp_lab.logconf import logger
from ibcvp_lab.models.cylinder import (
    CylinderDiagnostics, CylinderTrajectory, FamilyRow, FamilyScan,
)
from ibcvp_lab.settings import settings

_BISECTIONS = 60
_MAX_HALVINGS = 40

# step-halving reference runs, frozen
REFERENCE_COLLAPSE_TIMES = {-0.1: 2.300806323005, -0.2: 1.775567092175}


def _rhs(q: float, w: float) -> tuple[float, float]:
    q = max(q, 0.0)
    return w, 2.0 * math.sqrt(q * (4.0 * q * q + w * w)) - 4.0 * q


def _rk4(q: float, w: float, s: float) -> tuple[float, float]:
    k1 = _rhs(q, w)
    k2 = _rhs(q + 0.5 * s * k1[0], w + 0.5 * s * k1[1])
    k3 = _rhs(q + 0.5 * s * k2[0], w + 0.5 * s * k2[1])
    k4 = _rhs(q + s * k3[0], w + s * k3[1])
    return (
        q + s / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        w + s / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    )


def _event(q: float, w: float, q_min: float, q_max: float) -> str | None:
    if not (math.isfinite(q) and math.isfinite(w)):
        return "overflow"
    if q <= q_min:
        return "collapsed"
    if q >= q_max:
        return "expanded"
    return None


def _locate(q, w, s, q_min, q_max):
    """Bisect the step length for the first event inside (0, s]."""
    lo, hi = 0.0, s
    for _ in range(_BISECTIONS):
        mid = 0.5 * (lo + hi)
        if _event(*_rk4(q, w, mid), q_min, q_max) is None:
            lo = mid
        else:
            hi = mid
    end = _rk4(q, w, hi)
    if _event(*end, q_min, q_max) == "overflow":
        return lo, _rk4(q, w, lo)
    return hi, end


def integrate_cylinder(
    alpha: float,
    t_max: float,
    h_ode: float | None = None,
    r_min: float | None = None,
    r_bound: float | None = None,
) -> CylinderTrajectory:
    """
    RK4 from (r, r') = (1, alpha) up to t_max, stopping early at
    r <= r_min (collapsed) or r >= r_bound (expanded). Event times are
    refined by bisection of the last step.
    """
    h = settings.h_ode if h_ode is None else h_ode
    r_min = settings.r_min if r_min is None else r_min
    r_bound = settings.r_bound if r_bound is None else r_bound
    if not abs(alpha) <= 1.0:
        raise InvalidInputError(f"cylinder slope alpha={alpha} outside [-1, 1]")
    if not h > 0 or not t_max > 0:
        raise InvalidInputError("h_ode and t_max must be positive")
    q_min, q_max = r_min * r_min, r_bound * r_bound

    t, q, w = 0.0, 1.0, 2.0 * alpha
    samples = [(t, q, w)]
    step, status = h, "completed"
    while t < t_max:
        s = min(step, t_max - t)
        nq, nw = _rk4(q, w, s)
        event = _event(nq, nw, q_min, q_max)
        if event == "overflow":
            step *= 0.5
            if step < h * 2.0 ** -_MAX_HALVINGS:
                raise NumericalFailure(
                    f"cylinder step underflow at t={t:.6g}", step=len(samples),
                    alpha=alpha, t=t, r=math.sqrt(q), rdot=w / (2.0 * math.sqrt(q)),
                )
            continue
        if event is not None:
            ds, (q, w) = _locate(q, w, s, q_min, q_max)
            t += ds
            samples.append((t, q, w))
            status = event
            break
        t, q, w = t + s, nq, nw
        samples.append((t, q, w))

    ts, qs, ws = np.array(samples).T
    r = np.sqrt(qs)
    traj = CylinderTrajectory(
        alpha=alpha, t=ts, r=r, rdot=ws / (2.0 * r), status=status, end_time=t,
    )
    logger.debug("Cylinder alpha=%.3g: %s at t=%.6g (r=%.3e, %d samples)",
                 alpha, status, t, r[-1], r.size)
    return traj


def trajectory_diagnostics(traj: CylinderTrajectory) -> CylinderDiagnostics:
    """
    H = (1/sqrt V)(r''/r + (r'/r)^2 + 2) with the bracket read off the ODE,
    the conformal identity -V + r'^2 + r^2, and the corner angle -alpha.
    """
    r, rdot = traj.r, traj.rdot
    v = traj.v
    q, w = r * r, 2.0 * r * rdot
    # r r'' + r'^2 = q''/2
    qddot = 2.0 * np.sqrt(q * (4.0 * q * q + w * w)) - 4.0 * q
    h = (qddot / (2.0 * q) + 2.0) / np.sqrt(v)
    return CylinderDiagnostics(
        h=h,
        conformal_residual=np.abs(-v + rdot**2 + r**2),
        corner_angle=-traj.alpha,
        slope=traj.alpha,
    )


def _collapse_rhs(r: float, w: float) -> tuple[float, float]:
    dt = 2.0 * r / w
    return dt, dt * (2.0 * r * math.sqrt(4.0 * r**4 + w * w) - 4.0 * r * r)


def collapse_estimate(
    alpha: float,
    h_ode: float | None = None,
    t_max: float = 100.0,
    r_min: float | None = None,
) -> float:
    """
    One RK4 pass with r as the independent variable, from r = 1 down to
    r_min in equal steps of about h_ode. r is monotone on a collapsing
    member and (t, w) stay smooth in r down to r_min.
    """
    h = settings.h_ode if h_ode is None else h_ode
    r_min = settings.r_min if r_min is None else r_min
    if alpha >= 0:
        raise InvalidInputError(f"alpha={alpha} does not collapse; collapse_time needs alpha < 0")
    if not alpha >= -1.0:
        raise InvalidInputError(f"cylinder slope alpha={alpha} outside [-1, 1]")
    if not h > 0:
        raise InvalidInputError("h_ode must be positive")
    steps = math.ceil((1.0 - r_min) / h)
    dr = -(1.0 - r_min) / steps
    t, w = 0.0, 2.0 * alpha
    for i in range(steps):
        r = 1.0 + i * dr
        k1 = _collapse_rhs(r, w)
        k2 = _collapse_rhs(r + 0.5 * dr, w + 0.5 * dr * k1[1])
        k3 = _collapse_rhs(r + 0.5 * dr, w + 0.5 * dr * k2[1])
        k4 = _collapse_rhs(r + dr, w + dr * k3[1])
        t += dr / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        w += dr / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        if not (math.isfinite(t) and math.isfinite(w)) or w >= 0:
            raise NumericalFailure(
                f"alpha={alpha} stopped collapsing at r={r + dr:.6g}", step=i,
                alpha=alpha, t=t, r=r + dr, rdot=w / (2.0 * (r + dr)),
            )
        if t > t_max:
            raise InvalidInputError(f"alpha={alpha} did not collapse before t={t_max}")
    return t


def collapse_time(
    alpha: float,
    tol: float = 1e-8,
    t_max: float = 100.0,
    h_ode: float | None = None,
    max_halvings: int = 12,
) -> float:
    """Collapse time, halving the RK4 step until two estimates agree to tol."""
    h = settings.h_ode if h_ode is None else h_ode
    previous = collapse_estimate(alpha, h, t_max)
    for _ in range(max_halvings):
        h *= 0.5
        current = collapse_estimate(alpha, h, t_max)
        logger.debug("Collapse time alpha=%.3g h=%.3e: %.15g", alpha, h, current)
        if abs(current - previous) <= tol:
            return current
        previous = current
    raise NumericalFailure(
        f"collapse time for alpha={alpha} not converged to {tol:g}",
        alpha=alpha, last=previous,
    )


def family_scan(
    alphas: list[float],
    t_max: float,
    h_ode: float | None = None,
) -> FamilyScan:
    if not alphas:
        raise InvalidInputError("family_scan needs at least one alpha")
    rows, trajectories = [], []
    for alpha in alphas:
        traj = integrate_cylinder(alpha, t_max, h_ode)
        diag = trajectory_diagnostics(traj)
        rows.append(FamilyRow(
            alpha=alpha,
            status=traj.status,
            t_or_final_r=traj.end_time if traj.status == "collapsed" else float(traj.r[-1]),
            max_h_dev=diag.max_h_deviation,
            max_conformal_residual=float(np.max(diag.conformal_residual / traj.v)),
        ))
        trajectories.append(traj)
    scan = FamilyScan(rows=rows, trajectories=trajectories)
    logger.info("Cylinder family: %d members, separation %.3e", len(rows), scan.separation())
    return scan


def family_witness(scan: FamilyScan, tol: float = 1e-8) -> dict:
    """
    Same initial slice and boundary data ([gamma_0], H = 2) for every member,
    distinct trajectories for distinct alpha.
    """
    same_slice = all(t.r[0] == 1.0 for t in scan.trajectories)
    same_data = all(r.max_h_dev <= tol and r.max_conformal_residual <= 1e-14 for r in scan.rows)
    distinct = len(scan.rows) < 2 or scan.separation() > 0.01
    return {
        "initial_slice_identical": same_slice,
        "boundary_data_identical": same_data,
        "separation": scan.separation(),
        "corner_angles": [-r.alpha for r in scan.rows],
        "pass": bool(same_slice and same_data and distinct),
    }


def family_frame(scan: FamilyScan) -> pd.DataFrame:
    return pd.DataFrame(scan.to_rows(), columns=["alpha", "status", "T_or_final_r", "maxHdev"])


def trajectory_frame(traj: CylinderTrajectory) -> pd.DataFrame:
    diag = trajectory_diagnostics(traj)
    return pd.DataFrame({
        "t": traj.t, "r": traj.r, "rdot": traj.rdot,
        "H": diag.h, "conf_residual": diag.conformal_residual,
    })
