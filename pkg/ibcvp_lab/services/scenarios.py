"""
Named acceptance scenarios. Each one builds its grids and backgrounds from a
ScenarioConfig, runs the solvers off the event loop and writes CSV tables,
a summary and a manifest into <output_dir>/<scenario>.
"""

from __future__ import annotations

import asyncio
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import scipy

from ibcvp_lab.errors import InvalidInputError
from ibcvp_lab.logconf import logger
from ibcvp_lab.models.fields import MetricField, TensorField
from ibcvp_lab.models.grid import CornerGrid
from ibcvp_lab.models.iteration import IterationOptions, PatchChart
from ibcvp_lab.models.scenario import RunArtifacts, ScenarioConfig
from ibcvp_lab.models.target import TargetData
from ibcvp_lab.services.boundary_corner_system import (
    boundary_state_frame, gauge_boundary_identity_check, induced_target_data,
    split_boundary_components,
)
from ibcvp_lab.services.corner_geometry import (
    build_grid, minkowski_corner, perturb_metric, smooth_bump,
)
from ibcvp_lab.services.cylinder_family import (
    REFERENCE_COLLAPSE_TIMES, collapse_time, family_frame, family_scan, family_witness,
    trajectory_frame,
)
from ibcvp_lab.services.discrete_calculus import (
    bianchi, first_order_ops, geometry, gradient, lin_ricci,
)
from ibcvp_lab.services.gauge_system import gauge_propagation_check
from ibcvp_lab.services.linear_ibvp import (
    multipatch_solve, selfadjoint_defect, solve_linear_ibcvp, uniqueness_probe, verify_target,
)
from ibcvp_lab.services.wave_solvers import (
    boundary_manufactured_error, bulk_manufactured_error, bulk_manufactured_history,
    convergence_study, energy_frame, energy_series, history_frame, transport_manufactured_error,
)
from ibcvp_lab.settings import settings
from ibcvp_lab.utils.async_utils import run_sync
from ibcvp_lab.utils.json_utils import write_json
from ibcvp_lab.utils.csv_utils import write_csv


@dataclass
class Outcome:
    summary: dict
    tables: dict[str, pd.DataFrame] = field(default_factory=dict)
    documents: dict[str, dict] = field(default_factory=dict)


# ---------------------------------------------------------------------- #
# shared fields                                                          #
# ---------------------------------------------------------------------- #
def background(config: ScenarioConfig, grid: CornerGrid) -> MetricField:
    g0 = minkowski_corner(config.alpha0, grid)
    if config.profile == "none" or config.eps == 0:
        return g0
    return perturb_metric(g0, config.profile, config.eps, radius=config.profile_radius)


def _weights(dim: int, seed: int) -> np.ndarray:
    w = 1.0 + 0.25 * np.random.default_rng(seed).uniform(-1.0, 1.0, (dim, dim))
    return 0.5 * (w + w.T)


def _time_window(t: np.ndarray) -> np.ndarray:
    """Smooth in t, zero near S and near the last slice."""
    big_t = float(t.max())
    return smooth_bump(np.abs(t - 0.5 * big_t) / (0.4 * big_t))


def compact_field(
    grid: CornerGrid, amp: float, seed: int = 0,
    center: tuple[float, ...] = (-0.4,), radius: float = 0.55, omega: float = 1.0,
) -> np.ndarray:
    """amp * W_ab * bump(|x - center| / radius) * cos(omega t); x^A centers default to 0."""
    t, x1, *xa = grid.coords()
    center = tuple(center) + (0.0,) * (grid.n - len(center))
    rho2 = (x1 - center[0]) ** 2 + sum((x - c) ** 2 for x, c in zip(xa, center[1:]))
    profile = amp * smooth_bump(np.sqrt(rho2) / radius) * np.cos(omega * t)
    return np.einsum("ab,...->ab...", _weights(grid.dim, seed), profile)


def target_data(config: ScenarioConfig, g: MetricField) -> TargetData:
    grid = g.grid
    kind, amp = config.target_profile, config.amplitude
    if kind == "zero":
        return TargetData.zeros(grid)
    if kind == "ambient":
        return induced_target_data(g, compact_field(grid, amp, config.seed))
    if kind == "source_bump":
        t, x1, *xa = grid.coords()
        rho = np.sqrt((x1 + 0.5) ** 2 + sum(x**2 for x in xa)) / 0.3
        f = np.einsum("ab,...->ab...", _weights(grid.dim, config.seed),
                      amp * _time_window(t) * smooth_bump(rho))
        return TargetData.zeros(grid).with_fields(f=f)
    t, *xa = grid.boundary().coords()
    rho = np.sqrt(sum(x**2 for x in xa)) / 0.5
    return TargetData.zeros(grid).with_fields(ell_p=amp * _time_window(t) * smooth_bump(rho))


def _box(grid: CornerGrid, t=(0.2, 0.3), x1=(-0.6, -0.4), xa=(-0.4, 0.4)) -> np.ndarray:
    coords = grid.coords()
    tol = 1e-9
    mask = (coords[0] >= t[0] - tol) & (coords[0] <= t[1] + tol)
    mask &= (coords[1] >= x1[0] - tol) & (coords[1] <= x1[1] + tol)
    for c in coords[2:]:
        mask &= (c >= xa[0] - tol) & (c <= xa[1] + tol)
    return mask


def _smooth_sym2(grid: CornerGrid) -> np.ndarray:
    t, x1, *xa = grid.coords()
    h = np.zeros((grid.dim, grid.dim) + grid.shape)
    for a in range(grid.dim):
        for b in range(a, grid.dim):
            phase = 0.3 * a + 0.7 * b
            h[a, b] = h[b, a] = np.sin(t + 0.5 * x1 + phase) * np.cos(xa[0] - 0.4 * x1 + phase)
    return h


def _smooth_one_form(grid: CornerGrid) -> np.ndarray:
    t, x1, y, *_ = grid.coords()
    parts = [np.sin(t + x1) * np.cos(y), np.cos(0.5 * t - x1) * np.sin(y + 0.3)]
    parts += [np.sin(x1 + 0.7 * y + 0.2 * a) * np.cos(t) for a in range(grid.n - 1)]
    return np.stack(parts)


def window_pair(grid: CornerGrid, seed: int = 3, traceless: bool = True):
    """h vanishing for t <= 0.2 and k for t >= T - 0.2, both compact in space."""
    t, x1, *xa = grid.coords()
    big_t = float(grid.t[-1])
    margin = big_t - 0.2
    space = smooth_bump(np.sqrt((x1 + 0.5) ** 2 + sum(x**2 for x in xa)) / 0.35)
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, grid.dim, grid.dim))
    a, b = a + a.T, b + b.T
    if traceless:
        a[0, 0] = np.trace(a[1:, 1:])
        b[0, 0] = np.trace(b[1:, 1:])
    h = np.einsum("ab,...->ab...", a, smooth_bump(np.abs(t - big_t) / margin) * space)
    k = np.einsum("ab,...->ab...", b, smooth_bump(t / margin) * space)
    return h, k, space


def _two_levels(config: ScenarioConfig) -> list[CornerGrid]:
    coarse = build_grid(config.grid_params())
    return [coarse, coarse.refined(2)]


def _ratio(coarse: float, fine: float) -> float:
    return coarse / fine if fine > 0 else float("inf")


def second_order_under_halving(coarse: float, fine: float, floor: float = 1e-13) -> bool:
    """Ratio 4 +- 20% between two levels, or both levels below rounding."""
    if coarse < floor and fine < floor:
        return True
    return 3.2 <= _ratio(coarse, fine) <= 4.8


# ---------------------------------------------------------------------- #
# runner                                                                 #
# ---------------------------------------------------------------------- #
class ScenarioRunner:
    def __init__(self, config: ScenarioConfig) -> None:
        self.config = config
        self.grid = build_grid(config.grid_params())
        self.sem = asyncio.Semaphore(settings.max_concurrency)

    @property
    def out_dir(self) -> Path:
        return Path(self.config.output_dir) / self.config.scenario

    def options(self, **overrides) -> IterationOptions:
        values = {"m_max": self.config.m_max, "tol": self.config.tol, "mode": self.config.mode}
        return IterationOptions(**{**values, **overrides})

    # scenarios -------------------------------------------------------- #
    def _wave_convergence(self) -> Outcome:
        dx = self.grid.dx
        table = convergence_study(
            lambda h: {**bulk_manufactured_error(h), **boundary_manufactured_error(h),
                       **transport_manufactured_error(h)},
            [dx, dx / 2, dx / 4],
        )
        finest = table.groupby("quantity").tail(1)
        orders = dict(zip(finest["quantity"], finest["order"]))
        passed = all(abs(order - 2.0) <= 0.3 for order in orders.values())
        grid, hist = bulk_manufactured_history(dx)
        snapshots = history_frame(hist, grid.spatial_coords(), ["x1", "x2"],
                                  every=max(1, hist.steps // 4))
        energy = energy_frame(energy_series(hist, grid.spatial_spacings, s_max=1))
        return Outcome({"orders": orders, "pass": passed},
                       {"convergence": table, "bulk_history": snapshots, "energy": energy})

    def _operator_identities(self) -> Outcome:
        rows = []
        for dx in (self.grid.dx, self.grid.dx / 2):
            grid = build_grid(n=2, dt=dx / 2, dx=dx, t_max=0.5, l1=1.0, la=1.0)
            flat = minkowski_corner(0.0, grid)
            bg = geometry(flat)
            box = _box(grid)
            pure = first_order_ops(flat, TensorField("one_form", _smooth_one_form(grid), grid), "killing")
            ric_gauge = lin_ricci(flat, TensorField("sym2", pure.data, grid)).data
            ric = lin_ricci(flat, TensorField("sym2", _smooth_sym2(grid), grid)).data
            beta = bianchi(bg, ric, gradient(ric, bg.spacings))
            boundary = gauge_boundary_identity_check(flat, _smooth_sym2(grid))
            rows += [
                {"quantity": "ricci_pure_gauge", "dx": dx, "residual": float(np.max(np.abs(ric_gauge[:, :, box])))},
                {"quantity": "bianchi_of_ricci", "dx": dx, "residual": float(np.max(np.abs(beta[:, box])))},
                {"quantity": "gauge_boundary", "dx": dx, "residual": boundary.sup_norm,
                 "bound": boundary.bound},
            ]
        table = pd.DataFrame(rows)
        levels = {name: group["residual"].tolist()
                  for name, group in table.groupby("quantity", sort=False)}
        ratios = {name: _ratio(*pair) for name, pair in levels.items()}
        boundary_rows = table[table["quantity"] == "gauge_boundary"]
        passed = (
            all(second_order_under_halving(*levels[q]) for q in ("ricci_pure_gauge", "bianchi_of_ricci"))
            and bool((boundary_rows["residual"] <= boundary_rows["bound"]).all())
        )
        return Outcome({"ratios": ratios, "pass": passed}, {"identities": table})

    def _gauge_propagation(self) -> Outcome:
        """F = Ric'(k) with k compact in the bulk, so beta F = 0 up to truncation."""
        rows = []
        for grid in _two_levels(self.config):
            flat = minkowski_corner(0.0, grid)
            t, x1, *xa = grid.coords()
            rho = np.sqrt((x1 + 0.5) ** 2 + sum(x**2 for x in xa)) / 0.3
            k = np.einsum("ab,...->ab...", _weights(grid.dim, self.config.seed),
                          self.config.amplitude * _time_window(t) * smooth_bump(rho))
            f = lin_ricci(flat, TensorField("sym2", k, grid)).data
            tau = TargetData.zeros(grid).with_fields(f=f)
            h, _, _ = solve_linear_ibcvp(flat, tau, self.options())
            report = gauge_propagation_check(flat, h, tau)
            rows.append({"dx": grid.dx, **report.to_dict()})
        coarse, fine = (r["sup_norm"] for r in rows)
        passed = all(r["pass"] for r in rows) and second_order_under_halving(coarse, fine)
        brief = [{key: v for key, v in r.items() if key != "slice_norms"} for r in rows]
        return Outcome(
            {"levels": brief, "ratio": _ratio(coarse, fine), "pass": passed},
            {"gauge_propagation": pd.DataFrame(brief)},
            {"gauge_residual": {"levels": rows}},
        )

    def _boundary_identities(self) -> Outcome:
        rows = []
        h = compact_field(self.grid, 0.05, self.config.seed, center=(-0.1,))
        for name, g in (("flat", minkowski_corner(self.config.alpha0, self.grid)),
                        ("curved", background(self.config, self.grid))):
            report = gauge_boundary_identity_check(g, h)
            rows.append({"background": name, "sup_norm": report.sup_norm,
                         "bound": report.bound, "pass": report.passed})
        return Outcome({"backgrounds": rows, "pass": all(r["pass"] for r in rows)},
                       {"boundary_identities": pd.DataFrame(rows)})

    def _solve_ibcvp(self) -> Outcome:
        g = background(self.config, self.grid)
        tau = target_data(self.config, g)
        h, gauge, trace = solve_linear_ibcvp(g, tau, self.options())
        report = verify_target(g, h, gauge, tau)
        summary = {
            "verification": report.to_dict(),
            "iteration": trace.to_dict(),
            "pass": report.passed,
        }
        stages = pd.DataFrame([s.to_dict() for s in trace.stages])
        residuals = pd.DataFrame(sorted(report.residuals.items()), columns=["check", "residual"])
        boundary = boundary_state_frame(g, split_boundary_components(g, h))
        return Outcome(summary, {"stages": stages, "residuals": residuals, "boundary_state": boundary})

    def _contraction_scan(self) -> Outcome:
        rows = []
        for eps in self.config.eps_values:
            g = perturb_metric(minkowski_corner(self.config.alpha0, self.grid), "bump", eps,
                               radius=self.config.profile_radius)
            tau = induced_target_data(g, compact_field(self.grid, self.config.amplitude, self.config.seed))
            _, _, trace = solve_linear_ibcvp(g, tau, self.options(m_max=max(self.config.m_max, 4), tol=0.0))
            rows.append({"eps": eps, "mean_ratio": trace.mean_ratio(),
                         "ratios": ";".join(f"{r:.17g}" for r in trace.ratios)})
        scaling = [
            (b["mean_ratio"] / a["mean_ratio"]) / (b["eps"] / a["eps"])
            for a, b in zip(rows, rows[1:]) if a["mean_ratio"] > 0
        ]
        passed = (
            all(0 < r["mean_ratio"] < 1 for r in rows)
            and all(0.7 <= s <= 1.3 for s in scaling)
        )
        return Outcome({"rows": rows, "scaling": scaling, "pass": passed},
                       {"contraction": pd.DataFrame(rows)})

    def _selfadjoint(self) -> Outcome:
        rows = []
        for dx in (self.grid.dx, self.grid.dx / 2):
            grid = build_grid(n=2, dt=dx / 2, dx=dx, t_max=0.6, l1=1.0, la=1.0)
            g = minkowski_corner(0.0, grid)
            h, k, space = window_pair(grid, seed=self.config.seed + 3)
            h_gen, k_gen, _ = window_pair(grid, seed=self.config.seed + 3, traceless=False)
            tail = 1e-2 * (grid.coords()[0] / grid.t[-1]) ** 4 * space
            k_bad = k + np.einsum("ab,...->ab...", np.eye(grid.dim), tail)
            rows.append({
                "dx": dx,
                "traceless": selfadjoint_defect(g, h, k),
                "general": selfadjoint_defect(g, h_gen, k_gen),
                "window_violation": selfadjoint_defect(g, h, k_bad, check_classes=False),
            })
        coarse, fine = rows
        ratio = _ratio(coarse["general"], fine["general"])
        passed = (
            max(r["traceless"] for r in rows) <= 1e-10
            and second_order_under_halving(coarse["general"], fine["general"])
            and all(r["window_violation"] > 100.0 * max(r["traceless"], 1e-12) for r in rows)
        )
        return Outcome({"levels": rows, "ratio": ratio, "pass": passed},
                       {"selfadjoint": pd.DataFrame(rows)})

    def _uniqueness_probe(self) -> Outcome:
        rows = []
        for grid in _two_levels(self.config):
            report = uniqueness_probe(minkowski_corner(self.config.alpha0, grid), 1e-12, self.options())
            rows.append({"dx": grid.dx, **report.to_dict()})
        return Outcome({"levels": rows, "pass": all(r["pass"] for r in rows)},
                       {"uniqueness": pd.DataFrame(rows)})

    def _multipatch(self) -> Outcome:
        g = background(self.config, self.grid)
        tau = target_data(self.config, g)
        direct, _, _ = solve_linear_ibcvp(g, tau, self.options())
        la, rest = self.config.la, (0.0,) * (self.grid.n - 2)
        patches = [PatchChart(center=(-0.5 * la,) + rest, radius=1.2 * la),
                   PatchChart(center=(0.5 * la,) + rest, radius=1.2 * la)]
        h = multipatch_solve(g, tau, patches, self.options())
        gap = float(np.max(np.abs(h - direct)))
        bound = settings.first_order_factor * self.grid.dx**2 * max(float(np.max(np.abs(direct))), 1e-300)
        report = verify_target(g, h, None, tau)
        summary = {"difference": gap, "bound": bound, "verification": report.to_dict(),
                   "pass": gap <= bound and report.passed}
        return Outcome(summary)

    def _cylinder(self) -> Outcome:
        scan = family_scan(self.config.alphas, self.config.cylinder_t_max)
        witness = family_witness(scan)
        stationary = [t for t in scan.trajectories if t.alpha == 0.0]
        drift = max((float(np.max(np.abs(t.r - 1.0))) for t in stationary), default=0.0)
        monotone = all(
            bool(np.all(np.sign(np.diff(t.r)) == np.sign(t.alpha)))
            for t in scan.trajectories if t.alpha != 0.0
        )
        collapse = {a: collapse_time(a, tol=1e-9) for a in self.config.alphas if a < 0}
        reference = {
            str(a): abs(collapse[a] - REFERENCE_COLLAPSE_TIMES[a])
            for a in collapse if a in REFERENCE_COLLAPSE_TIMES
        }
        summary = {
            **witness, "stationary_drift": drift, "monotone": monotone,
            "collapse_times": {str(a): t for a, t in collapse.items()},
            "reference_gaps": reference,
            "pass": (witness["pass"] and drift <= 1e-10 and monotone
                     and all(gap <= 1e-6 for gap in reference.values())),
        }
        tables = {"family": family_frame(scan)}
        for i, traj in enumerate(scan.trajectories):
            tables[f"trajectory_{i}"] = trajectory_frame(traj)
        return Outcome(summary, tables)

    def _corner_necessity(self) -> Outcome:
        return corner_necessity_demo(self.config, self.grid)

    # orchestration ---------------------------------------------------- #
    async def _write(self, outcome: Outcome) -> list[Path]:
        async with self.sem:
            paths = await asyncio.gather(
                *(write_csv(df, self.out_dir / f"{name}.csv") for name, df in outcome.tables.items()),
                *(write_json(doc, self.out_dir / f"{name}.json") for name, doc in outcome.documents.items()),
            )
        return list(paths)

    async def run(self) -> RunArtifacts:
        name = self.config.scenario
        logger.info("Scenario %s started (digest %s)", name, self.config.digest()[:12])
        start = time.perf_counter()
        handler = getattr(self, "_" + name.replace("-", "_"))
        outcome = await run_sync(handler)()

        summary = {"scenario": name, "digest": self.config.digest(), **outcome.summary}
        summary["pass"] = bool(outcome.summary.get("pass", False))
        files = await self._write(outcome)
        files.append(await write_json(summary, self.out_dir / "summary.json"))
        manifest = {
            "scenario": name,
            "inputs_sha256": self.config.digest(),
            "config": self.config.model_dump(mode="json"),
            "versions": {"python": platform.python_version(), "numpy": np.__version__,
                         "scipy": scipy.__version__, "pandas": pd.__version__},
            "wall_time_s": time.perf_counter() - start,
            "files": sorted(p.name for p in files) + ["manifest.json"],
        }
        files.append(await write_json(manifest, self.out_dir / "manifest.json"))
        logger.info("Scenario %s: %s (%.2f s)", name, "PASS" if summary["pass"] else "FAIL",
                    manifest["wall_time_s"])
        return RunArtifacts(scenario=name, out_dir=self.out_dir, summary=summary,
                            files=files, manifest=manifest)


def corner_necessity_demo(config: ScenarioConfig, grid: CornerGrid | None = None) -> Outcome:
    """
    Two solves differing only in alpha' on a background with H_Sigma != 0,
    compared against the discretization error of a convergence pair. In
    cylinder mode the family scan {0, alpha'} is the witness instead.
    """
    if config.cylinder_mode:
        scan = family_scan([0.0, config.alpha_prime], config.cylinder_t_max)
        witness = family_witness(scan)
        return Outcome({"mode": "cylinder", **witness}, {"family": family_frame(scan)})
    if config.profile != "curved_corner" or config.eps == 0:
        raise InvalidInputError(
            "corner-necessity needs a curved_corner background with eps > 0 "
            "(the alpha' coupling vanishes at a flat corner)"
        )
    grid = grid or build_grid(config.grid_params())
    g = background(config, grid)
    tau = target_data(config, g)
    shifted = tau.with_fields(alpha_p=tau.alpha_p + config.alpha_prime)
    opts = IterationOptions(m_max=config.m_max, tol=config.tol, mode=config.mode)

    h0, _, _ = solve_linear_ibcvp(g, tau, opts)
    h1, _, _ = solve_linear_ibcvp(g, shifted, opts)
    u0 = split_boundary_components(g, h0).u
    u1 = split_boundary_components(g, h1).u
    u_gap = float(np.max(np.abs(u1 - u0)))
    h_gap = float(np.max(np.abs(h1 - h0)))

    fine_grid = grid.refined(2)
    g_fine = background(config, fine_grid)
    h_fine, _, _ = solve_linear_ibcvp(g_fine, target_data(config, g_fine), opts)
    u_fine = split_boundary_components(g_fine, h_fine).u
    coarse_nodes = tuple(slice(None, None, 2) for _ in u0.shape)
    disc = float(np.max(np.abs(u_fine[coarse_nodes] - u0)))

    logger.info("Corner necessity: |du|_C %.3e, discretization %.3e", u_gap, disc)
    summary = {"mode": "solve", "alpha_prime": config.alpha_prime, "u_difference": u_gap,
               "h_difference": h_gap, "discretization_error": disc,
               "pass": u_gap > 10.0 * disc}
    table = pd.DataFrame([
        {"alpha_prime": 0.0, "u_sup": float(np.max(np.abs(u0)))},
        {"alpha_prime": config.alpha_prime, "u_sup": float(np.max(np.abs(u1)))},
    ])
    return Outcome(summary, {"corner_necessity": table})


def run_scenario(config: ScenarioConfig) -> RunArtifacts:
    return asyncio.run(ScenarioRunner(config).run())
