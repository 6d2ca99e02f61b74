import numpy as np
import pytest

from conftest import compact_sym2, make_grid, smooth_sym2, sym2
from ibcvp_lab.errors import InvalidInputError, NumericalFailure
from ibcvp_lab.models.iteration import IterationOptions, PatchChart
from ibcvp_lab.models.target import TargetData
from ibcvp_lab.services.boundary_corner_system import induced_target_data
from ibcvp_lab.services.corner_geometry import minkowski_corner, perturb_metric, smooth_bump
from ibcvp_lab.services.linear_ibvp import (
    multipatch_solve, partition_of_unity, selfadjoint_defect, solve_linear_ibcvp,
    symplectic_form, uniqueness_probe, verify_target,
)


def _bump_background(grid, eps, radius=0.6):
    return perturb_metric(minkowski_corner(0.0, grid), "bump", eps, radius=radius)


# ---------------------------------------------------------------------- #
# staged solve                                                           #
# ---------------------------------------------------------------------- #
def test_zero_target_gives_zero_solution(flat, grid):
    h, gauge, trace = solve_linear_ibcvp(flat, TargetData.zeros(grid))
    assert not h.any()
    assert not gauge.v_prime.any()
    assert len(trace.stages) >= 2


def test_flat_background_stops_after_chi(flat, grid):
    tau = induced_target_data(flat, compact_sym2(grid))
    h, _, trace = solve_linear_ibcvp(flat, tau)
    assert [s.label for s in trace.stages] == ["step0", "chi", "E_2"]
    assert trace.stages[-1].norm_c0 < 1e-10
    assert trace.stages[-1].residual <= 10.0 * grid.dx**2
    assert trace.stages[1].derivative_order > trace.stages[0].derivative_order


def test_flat_solution_recovers_reference_field(flat, grid):
    h_ref = compact_sym2(grid)
    h, _, _ = solve_linear_ibcvp(flat, induced_target_data(flat, h_ref))
    assert np.max(np.abs(h - h_ref)) < 0.3 * np.max(np.abs(h_ref))


def test_on_shell_mode_skips_error_stages(grid):
    g = _bump_background(grid, 0.02)
    tau = induced_target_data(g, compact_sym2(grid))
    _, _, trace = solve_linear_ibcvp(g, tau, {"mode": "on_shell"})
    assert [s.label for s in trace.stages] == ["step0", "chi"]
    assert trace.ratios == []


def test_superposition_at_fixed_schedule(grid):
    g = _bump_background(grid, 0.02, radius=1.0)
    tau1 = induced_target_data(g, compact_sym2(grid, center=(-0.4, -0.2)))
    tau2 = induced_target_data(g, compact_sym2(grid, amp=0.02, center=(-0.5, 0.3), omega=2.0))
    opts = IterationOptions(m_max=3, tol=0.0, stall_count=10)
    h1, _, _ = solve_linear_ibcvp(g, tau1, opts)
    h2, _, _ = solve_linear_ibcvp(g, tau2, opts)
    h12, _, _ = solve_linear_ibcvp(g, tau1 + tau2, opts)
    assert np.allclose(h1 + h2, h12, rtol=0.0, atol=1e-12)


def test_corrections_shrink_on_curved_background(grid):
    g = _bump_background(grid, 0.02)
    tau = induced_target_data(g, compact_sym2(grid))
    _, _, trace = solve_linear_ibcvp(g, tau, IterationOptions(m_max=4, tol=0.0))
    norms = trace.correction_norms()
    assert len(norms) == 3 and norms[0] > 0
    assert all(r <= 0.5 for r in trace.ratios)


def test_contraction_ratio_scales_with_eps(grid):
    tau_field = compact_sym2(grid)
    ratios = []
    for eps in (0.02, 0.04):
        g = _bump_background(grid, eps)
        _, _, trace = solve_linear_ibcvp(g, induced_target_data(g, tau_field), IterationOptions(m_max=4, tol=0.0))
        ratios.append(trace.mean_ratio())
    assert ratios[0] > 0
    assert 1.4 <= ratios[1] / ratios[0] <= 2.6


def test_non_contraction_is_reported_with_eps(grid):
    g = _bump_background(grid, 0.05)
    tau = induced_target_data(g, compact_sym2(grid))
    opts = IterationOptions(m_max=5, tol=0.0, stall_ratio=1e-9, stall_count=1)
    with pytest.raises(NumericalFailure, match="not contracting") as info:
        solve_linear_ibcvp(g, tau, opts)
    assert info.value.context["eps"] == pytest.approx(0.05, rel=0.05)


def test_rough_background_is_rejected(grid):
    g = _bump_background(grid, 0.3)
    with pytest.raises(InvalidInputError, match="eps_max"):
        solve_linear_ibcvp(g, TargetData.zeros(grid))


def test_incompatible_corner_data_is_rejected(flat, grid):
    tau = induced_target_data(flat, compact_sym2(grid))
    gamma_p = tau.gamma_p.copy()
    gamma_p[0, 0, -1, :] += 1e-3
    with pytest.raises(InvalidInputError, match="c1_metric"):
        solve_linear_ibcvp(flat, tau.with_fields(gamma_p=gamma_p))


# ---------------------------------------------------------------------- #
# verification                                                           #
# ---------------------------------------------------------------------- #
def test_verify_target_is_exact_on_the_inducing_field(bump_metric, grid):
    h = compact_sym2(grid, amp=0.05)
    report = verify_target(bump_metric, h, None, induced_target_data(bump_metric, h))
    assert "gauge" not in report.residuals
    assert max(report.residuals.values()) == 0.0
    assert report.to_dict()["pass"]


def test_verify_target_after_solve(flat, grid):
    tau = induced_target_data(flat, compact_sym2(grid))
    h, gauge, _ = solve_linear_ibcvp(flat, tau)
    report = verify_target(flat, h, gauge, tau)
    assert report.passed, report.to_dict()
    assert report.bound == pytest.approx(10.0 * grid.dx**2)


def test_verify_target_is_linear(flat, grid):
    h = compact_sym2(grid)
    tau = induced_target_data(flat, h)
    off = h + 1e-3 * smooth_sym2(grid)
    one = verify_target(flat, off, None, tau).residuals
    two = verify_target(flat, 2.0 * off, None, tau.scaled(2.0)).residuals
    for key, value in one.items():
        assert two[key] == pytest.approx(2.0 * value, rel=1e-9, abs=1e-15)


# ---------------------------------------------------------------------- #
# multi-patch                                                            #
# ---------------------------------------------------------------------- #
def test_partition_of_unity_sums_to_one(grid):
    weights = partition_of_unity(grid, [PatchChart(center=(-0.5,), radius=1.2),
                                        PatchChart(center=(0.5,), radius=1.2)])
    assert np.allclose(sum(weights), 1.0)
    assert all(w.min() >= 0.0 for w in weights)


def test_single_patch_equals_direct_solve(flat, grid):
    tau = induced_target_data(flat, compact_sym2(grid))
    direct, _, _ = solve_linear_ibcvp(flat, tau)
    h = multipatch_solve(flat, tau, [PatchChart(center=(0.0,), radius=10.0)])
    assert np.array_equal(h, direct)


def test_two_patches_sum_to_single_solve(flat, grid):
    tau = induced_target_data(flat, compact_sym2(grid))
    direct, _, _ = solve_linear_ibcvp(flat, tau)
    patches = [PatchChart(center=(-0.5,), radius=1.2), PatchChart(center=(0.5,), radius=1.2)]
    h = multipatch_solve(flat, tau, patches)
    assert np.max(np.abs(h - direct)) <= 10.0 * grid.dx**2 * np.max(np.abs(direct))
    assert verify_target(flat, h, None, tau).passed


def test_patch_without_data_contributes_nothing(flat, grid):
    tau = induced_target_data(flat, compact_sym2(grid, center=(-0.4, -0.5), radius=0.45))
    patches = [PatchChart(center=(-0.5,), radius=0.6), PatchChart(center=(0.6,), radius=0.5)]
    direct, _, _ = solve_linear_ibcvp(flat, tau)
    assert np.array_equal(multipatch_solve(flat, tau, patches), direct)


def test_uncovered_support_is_rejected(flat, grid):
    tau = induced_target_data(flat, compact_sym2(grid))
    with pytest.raises(InvalidInputError, match="do not cover"):
        multipatch_solve(flat, tau, [PatchChart(center=(-0.8,), radius=0.2)])


# ---------------------------------------------------------------------- #
# uniqueness harness                                                     #
# ---------------------------------------------------------------------- #
def _window_pair(grid, seed=3, traceless=True):
    """h vanishing for t <= 0.2, k for t >= T - 0.2, both compact in space."""
    t, x1, y = grid.coords()
    big_t = grid.t[-1]
    margin = big_t - 0.2
    space = smooth_bump(np.sqrt((x1 + 0.5) ** 2 + y**2) / 0.35)
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, grid.dim, grid.dim))
    a, b = a + a.T, b + b.T
    if traceless:
        # trace against diag(-1, 1, 1)
        a[0, 0] = a[1, 1] + a[2, 2]
        b[0, 0] = b[1, 1] + b[2, 2]
    h = np.einsum("ab,...->ab...", a, smooth_bump(np.abs(t - big_t) / margin) * space)
    k = np.einsum("ab,...->ab...", b, smooth_bump(t / margin) * space)
    return h, k, space


def test_selfadjoint_defect_of_zero_pair(flat, grid):
    zero = np.zeros((grid.dim, grid.dim) + grid.shape)
    assert selfadjoint_defect(flat, zero, zero) == 0.0


def test_selfadjoint_defect_for_traceless_pair():
    grid = make_grid(dx=0.1, t_max=0.6)
    g = minkowski_corner(0.0, grid)
    h, k, space = _window_pair(grid)
    defect = selfadjoint_defect(g, h, k)
    assert defect <= 1e-10

    t = grid.coords()[0]
    tail = 1e-2 * (t / grid.t[-1]) ** 4 * space
    k_bad = k + np.einsum("ab,...->ab...", np.eye(grid.dim), tail)
    with pytest.raises(InvalidInputError, match="top slice"):
        selfadjoint_defect(g, h, k_bad)
    bad = selfadjoint_defect(g, h, k_bad, check_classes=False)
    assert bad > 100.0 * max(defect, 1e-12)


def test_selfadjoint_defect_converges_at_second_order():
    defects = []
    for dx in (0.1, 0.05):
        grid = make_grid(dx=dx, t_max=0.6)
        h, k, _ = _window_pair(grid, traceless=False)
        defects.append(selfadjoint_defect(minkowski_corner(0.0, grid), h, k))
    assert defects[0] <= 10.0 * 0.1**2
    assert 2.5 <= defects[0] / defects[1] <= 6.0


def test_selfadjoint_defect_needs_vacuum(bump_metric, grid):
    zero = np.zeros((grid.dim, grid.dim) + grid.shape)
    with pytest.raises(InvalidInputError, match="vacuum"):
        selfadjoint_defect(bump_metric, zero, zero)


def test_symplectic_form_vanishes_for_zero_initial_data():
    grid = make_grid(dx=0.1, t_max=0.6)
    g = minkowski_corner(0.0, grid)
    h, k, _ = _window_pair(grid)
    assert symplectic_form(g, h, smooth_sym2(grid), 0) == 0.0
    assert symplectic_form(g, h, k, 0) == 0.0


def test_symplectic_form_is_antisymmetric(bump_metric, grid):
    h, k = smooth_sym2(grid, amp=0.3), compact_sym2(grid, amp=0.5)
    for index in (0, 2):
        forward = symplectic_form(bump_metric, h, k, index)
        assert forward != 0.0
        assert symplectic_form(bump_metric, k, h, index) == pytest.approx(-forward, rel=1e-12, abs=1e-15)


def test_symplectic_form_of_hand_built_pair():
    grid = make_grid(dx=0.05)
    g = minkowski_corner(0.0, grid)
    t, x1, y = grid.coords()
    width = 0.05
    bump = np.exp(-((x1 + 0.5) ** 2 + y**2) / width)
    # K'_h = a/2 delta on S for h_ij = t a delta_ij, static k_ij = b delta_ij
    h = sym2(grid, {(1, 1): t * bump, (2, 2): t * bump})
    k = sym2(grid, {(1, 1): bump, (2, 2): bump})
    assert symplectic_form(g, h, k, 0) == pytest.approx(np.pi * width / 2.0, rel=1e-3)


def test_uniqueness_probe_with_zero_seed(flat):
    report = uniqueness_probe(flat, 0.0)
    assert report.final_norm == 0.0 and report.passed


def test_uniqueness_probe_keeps_rounding_seed_small(flat):
    report = uniqueness_probe(flat, 1e-12)
    assert report.final_norm <= 1e-10
    assert report.passed


def test_uniqueness_probe_growth_is_resolution_independent():
    coarse = uniqueness_probe(minkowski_corner(0.0, make_grid(dx=0.1)), 1e-6)
    fine = uniqueness_probe(minkowski_corner(0.0, make_grid(dx=0.05)), 1e-6)
    assert coarse.growth > 0
    assert fine.growth == pytest.approx(coarse.growth, rel=0.5)


def test_uniqueness_check_reports_transient_peak(flat, grid, monkeypatch):
    from ibcvp_lab.services import linear_ibvp

    mid = grid.steps // 2

    def spike_then_decay(g, tau, opts, seed_velocity):
        h = np.zeros((grid.dim, grid.dim) + grid.shape)
        h[1, 1, mid] = 1e-8
        h[1, 1, -1] = 1e-14
        return h, None, None

    monkeypatch.setattr(linear_ibvp, "_solve", spike_then_decay)
    report = uniqueness_probe(flat, 1e-12)
    assert report.final_norm == 1e-14
    assert report.peak_norm == 1e-8
    assert report.peak_time == pytest.approx(grid.t[mid])
    assert not report.passed
