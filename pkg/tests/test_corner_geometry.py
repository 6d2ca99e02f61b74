import numpy as np
import pytest

from conftest import make_grid
from ibcvp_lab.errors import InvalidInputError
from ibcvp_lab.models.fields import MetricField
from ibcvp_lab.services.corner_geometry import (
    build_grid, check_support_margin, fit_corner_angle, hypersurface_frame, frame_residuals,
    localization_epsilon, metric_frame, minkowski_corner, perturb_metric,
    rescale, smooth_bump,
)


# ---------------------------------------------------------------------- #
# grid                                                                   #
# ---------------------------------------------------------------------- #
def test_build_grid_tags_sigma_on_c():
    grid = build_grid(n=2, dt=0.1, dx=0.1, t_max=1.0, l1=1.0, la=1.0, cfl_bound=1.0)
    assert grid.sigma_count == grid.xa[0].size == 21
    assert grid.x1[-1] == 0.0 and grid.t[0] == 0.0
    assert np.all(grid.x1 <= 0) and np.all(grid.t >= 0)
    assert grid.cfl == pytest.approx(1.0)


def test_build_grid_rejects_cfl_violation():
    with pytest.raises(InvalidInputError, match="CFL"):
        build_grid(n=2, dt=0.5, dx=0.1, t_max=1.0, cfl_bound=0.5)


def test_build_grid_rejects_non_positive_extent():
    with pytest.raises(InvalidInputError):
        build_grid(n=2, dt=-0.05, dx=0.1)


def test_build_grid_warns_when_extent_is_rounded(caplog):
    with caplog.at_level("WARNING", logger="ibcvp_lab"):
        grid = build_grid(n=2, dt=0.05, dx=0.1, t_max=0.33, l1=1.0, la=1.0)
    assert grid.t[-1] == pytest.approx(0.35)
    assert "t_max=0.33 is not a multiple" in caplog.text


def test_build_grid_is_quiet_for_whole_steps(caplog):
    with caplog.at_level("WARNING", logger="ibcvp_lab"):
        build_grid(n=2, dt=0.05, dx=0.1, t_max=0.3, l1=1.0, la=1.0)
    assert "not a multiple" not in caplog.text


def test_three_dimensional_sigma_is_two_dimensional():
    grid = build_grid(n=3, dt=0.025, dx=0.05, t_max=0.1, l1=0.5, la=0.5)
    assert len(grid.sigma_shape) == 2
    assert grid.sigma_count == 21 * 21


def test_masks_are_consistent(grid):
    assert grid.face_mask[-1].all()
    assert not grid.outer_mask[-1, 5:-5].any()
    assert not grid.interior_mask[0].any() and not grid.interior_mask[-1].any()


def test_support_margin_check(grid):
    support = np.zeros(grid.spatial_shape, dtype=bool)
    support[-3:, 8:13] = True
    assert check_support_margin(grid, support) > 0
    support[1, 1] = True
    with pytest.raises(InvalidInputError):
        check_support_margin(grid, support)


# ---------------------------------------------------------------------- #
# model metric and frames                                                #
# ---------------------------------------------------------------------- #
def test_minkowski_corner_components(grid):
    g = minkowski_corner(0.0, grid).components
    assert np.array_equal(g[..., 0, 0, 0], np.diag([-1.0, 1.0, 1.0]))
    g = minkowski_corner(0.4, grid).components
    assert g[0, 1, 2, 3, 4] == g[1, 0, 2, 3, 4] == -0.4


def test_minkowski_corner_rejects_large_angle(grid):
    with pytest.raises(InvalidInputError):
        minkowski_corner(2.5, grid)


def test_unit_angle_normals(grid):
    frame = hypersurface_frame(minkowski_corner(1.0, grid))
    s = 1 / np.sqrt(2)
    assert np.allclose(frame.nu_s[..., 0, 0], [s, s, 0.0])
    assert np.allclose(frame.nu_c[..., 0, 0], [-s, s, 0.0])
    assert np.allclose(frame.alpha, 1.0)


@pytest.mark.parametrize("alpha0", [0.0, 0.3, 0.5])
def test_flat_frame(grid, alpha0):
    g = minkowski_corner(alpha0, grid)
    frame = hypersurface_frame(g)
    assert np.allclose(frame.alpha, alpha0, atol=1e-14)
    assert np.max(np.abs(frame.a_c)) == 0.0
    assert np.max(np.abs(frame.h_c)) == 0.0
    for value in frame_residuals(g, frame).values():
        assert value <= 1e-12


def test_perturbed_frame_is_orthonormal(bump_metric):
    frame = hypersurface_frame(bump_metric)
    for value in frame_residuals(bump_metric, frame).values():
        assert value <= 1e-10


def test_second_fundamental_form_matches_bump_derivative():
    eps, radius, c1 = 0.05, 0.8, -0.2

    def error(dx):
        grid = make_grid(dx=dx, t_max=0.15)
        g = perturb_metric(minkowski_corner(0.0, grid), "bump", eps, radius, center=(c1, 0.0))
        frame = hypersurface_frame(g)
        y = grid.xa[0]
        rho2 = (c1**2 + y**2) / radius**2
        b = smooth_bump(np.sqrt(rho2))
        exact = np.zeros_like(y)
        inside = rho2 < 1
        exact[inside] = 0.5 * eps * b[inside] * (-1 / (1 - rho2[inside]) ** 2) * 2 * (0 - c1) / radius**2
        return np.max(np.abs(frame.a_c[1, 1, 0] - exact))

    coarse, fine = error(0.1), error(0.05)
    assert 2.5 < coarse / fine < 6.0


def test_curved_corner_bends_sigma(grid):
    g = perturb_metric(minkowski_corner(0.0, grid), "curved_corner", 0.2, radius=0.6)
    frame = hypersurface_frame(g)
    assert np.max(np.abs(frame.h_sigma_s)) > 0
    center = grid.xa[0].size // 2
    assert frame.h_sigma_s[center] == pytest.approx(0.1, rel=0.12)


# ---------------------------------------------------------------------- #
# localization                                                           #
# ---------------------------------------------------------------------- #
def test_perturb_zero_is_identity(flat):
    assert np.array_equal(perturb_metric(flat, "bump", 0.0).components, flat.components)


def test_gaussian_epsilon(flat):
    report = localization_epsilon(perturb_metric(flat, "gaussian", 0.01), k_max=0)
    assert 0.005 <= report.eps <= 0.02


def test_bump_epsilon_is_exact(flat):
    report = localization_epsilon(perturb_metric(flat, "bump", 0.01), k_max=0)
    assert report.eps_k[0] == pytest.approx(0.01, abs=1e-12)


def test_flat_epsilon_and_angle_fit(grid):
    report = localization_epsilon(minkowski_corner(0.7, grid), k_max=2)
    assert report.eps <= 1e-13
    assert report.alpha0 == pytest.approx(0.7, abs=1e-13)


def test_angle_fit_extrapolates_to_sigma(grid):
    g = minkowski_corner(0.3, grid)
    t, x1, *_ = grid.coords()
    comps = g.components.copy()
    comps[0, 1] = comps[1, 0] = -(0.3 + 0.05 * t + 0.02 * x1)
    tilted = MetricField(comps, grid)
    assert fit_corner_angle(tilted) == pytest.approx(0.3, abs=1e-12)
    # the block mean sits away from Sigma
    assert abs(-np.mean(comps[0, 1][:3, -3:]) - 0.3) > 1e-3
    assert localization_epsilon(tilted, k_max=0).alpha0 == pytest.approx(0.3, abs=1e-12)


def test_epsilon_monotone_in_k(bump_metric):
    eps = [localization_epsilon(bump_metric, k_max=k).eps for k in range(3)]
    assert eps == sorted(eps)


def test_localization_rejects_wide_stencils(flat):
    with pytest.raises(InvalidInputError):
        localization_epsilon(flat, k_max=4)


def test_rescale_identity_and_constant(grid):
    g = minkowski_corner(0.3, grid)
    assert np.array_equal(rescale(g, 1.0).components, g.components)
    assert np.allclose(rescale(g, 0.5).components, g.components, atol=1e-12)


def test_rescale_rejects_bad_factor(flat):
    with pytest.raises(InvalidInputError):
        rescale(flat, 1.5)


def test_rescale_halves_first_derivatives():
    grid = make_grid(dx=0.05, t_max=0.15)
    g = perturb_metric(minkowski_corner(0.0, grid), "bump", 0.05, radius=0.5)
    before = localization_epsilon(g, k_max=1).eps_k[1]
    after = localization_epsilon(rescale(g, 0.5), k_max=1).eps_k[1]
    assert after / before == pytest.approx(0.5, rel=0.1)


def test_metric_frame_layout(flat):
    df = metric_frame(flat)
    assert list(df.columns[:3]) == ["t", "x1", "x2"]
    assert len(df) == int(np.prod(flat.grid.shape))
    assert (df["g00"] == -1.0).all()
