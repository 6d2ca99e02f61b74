import numpy as np
import pytest

from conftest import make_grid
from ibcvp_lab.errors import InvalidInputError, NumericalFailure
from ibcvp_lab.models.fields import MetricField
from ibcvp_lab.models.reports import FieldHistory, WaveProblemSpec
from ibcvp_lab.services.corner_geometry import build_grid, minkowski_corner, smooth_bump
from ibcvp_lab.services.wave_solvers import (
    boundary_manufactured_error, bulk_manufactured_error, convergence_study,
    edge_mask, energy_frame, energy_norm, energy_series, history_frame, solve_boundary_cauchy_wave,
    solve_bulk_wave, solve_transport, support_containment,
    transport_manufactured_error, wave_energy,
)


def flat_problem(grid, w0=None, v0=None, source=None, **kw):
    return WaveProblemSpec(
        metric=minkowski_corner(0.0, grid),
        source=np.zeros(grid.shape) if source is None else source,
        initial_value=np.zeros(grid.spatial_shape) if w0 is None else w0,
        initial_velocity=np.zeros(grid.spatial_shape) if v0 is None else v0,
        **kw,
    )


def bump_data(grid, center=(-0.5, 0.0), radius=0.3):
    x1, y = grid.spatial_coords()
    return smooth_bump(np.hypot(x1 - center[0], y - center[1]) / radius)


# ---------------------------------------------------------------------- #
# bulk                                                                   #
# ---------------------------------------------------------------------- #
def test_zero_data_gives_zero_history(grid):
    hist = solve_bulk_wave(flat_problem(grid))
    assert hist.values.shape == (1, grid.shape[0]) + grid.spatial_shape
    assert hist.steps == grid.steps
    assert np.all(hist.values == 0)


def test_bulk_manufactured_solution_converges_at_second_order():
    table = convergence_study(bulk_manufactured_error, [0.1, 0.05, 0.025])
    orders = table["order"].dropna()
    assert table["monotone"].all()
    assert np.all(np.abs(orders - 2.0) < 0.3)


def test_coupled_stack_matches_klein_gordon_modes():
    grid = build_grid(n=2, dx=0.05, dt=0.025, t_max=0.5, l1=1.0, la=0.5)
    t, x1, y = grid.coords()
    profile = (np.sin(np.pi * (x1 + 1.0)) * np.sin(np.pi * (y + 0.5)))[0]
    mass = np.array([0.0, 1.5])
    omega = np.sqrt(2 * np.pi**2 + 2 * mass)

    def coupling(k, w, dw):
        assert w.shape == (2,) + grid.spatial_shape
        assert dw.shape == (3, 2) + grid.spatial_shape
        return mass[:, None, None] * w

    spec = WaveProblemSpec(
        metric=minkowski_corner(0.0, grid),
        source=np.zeros((2,) + grid.shape),
        initial_value=np.zeros((2,) + grid.spatial_shape),
        initial_velocity=omega[:, None, None] * profile,
        coupling=coupling,
    )
    hist = solve_bulk_wave(spec)
    exact = np.sin(omega[:, None, None, None] * t[None]) * profile
    assert hist.component_shape == (2,)
    assert np.max(np.abs(hist.field() - exact)) < 2e-2


def test_dirichlet_data_is_reproduced_exactly_on_faces(grid):
    t, x1, y = grid.coords()
    data = np.sin(t) * np.cos(y) * (1.0 + x1)
    hist = solve_bulk_wave(flat_problem(grid, boundary_data=data))
    faces = grid.face_mask
    for k in range(grid.shape[0]):
        assert np.array_equal(hist.values[0, k][faces], data[k][faces])


def test_incompatible_corner_data_is_rejected(grid):
    with pytest.raises(InvalidInputError, match="incompatible"):
        solve_bulk_wave(flat_problem(grid, w0=np.ones(grid.spatial_shape)))


def test_unstable_step_fails_the_von_neumann_check():
    grid = make_grid(cfl=1.5, cfl_bound=2.0, t_max=0.6)
    with pytest.raises(NumericalFailure, match="von Neumann"):
        solve_bulk_wave(flat_problem(grid))


def test_non_finite_source_reports_the_step(grid):
    source = np.zeros(grid.shape)
    source[3, 5, 5] = np.nan
    with pytest.raises(NumericalFailure) as err:
        solve_bulk_wave(flat_problem(grid, source=source))
    assert err.value.step == 4
    assert err.value.exit_code == 2


def test_leapfrog_energy_is_conserved():
    grid = make_grid(t_max=1.0, la=1.0)
    g = minkowski_corner(0.0, grid)
    hist = solve_bulk_wave(flat_problem(grid, w0=bump_data(grid)))
    energy = wave_energy(hist, g)
    assert energy[0] > 0
    assert np.max(np.abs(energy - energy[0])) / energy[0] < 1e-10


def test_numerical_support_grows_one_cell_per_step(grid):
    w0 = bump_data(grid)
    hist = solve_bulk_wave(flat_problem(grid, w0=w0))
    excess = support_containment(hist, w0 != 0, grid.dx, speed=grid.dx / grid.dt, cells=True)
    assert excess <= 1e-12


def test_bump_stays_inside_light_cone():
    grid = make_grid(dx=0.05, t_max=0.3)
    w0 = bump_data(grid)
    hist = solve_bulk_wave(flat_problem(grid, w0=w0))
    excess = support_containment(
        hist, w0 != 0, grid.dx, speed=1.0, threshold=1e-3 * w0.max(), slack=2 * grid.dx,
    )
    assert excess <= 0


# ---------------------------------------------------------------------- #
# boundary cylinder                                                      #
# ---------------------------------------------------------------------- #
def flat_boundary_metric(bgrid):
    one, zero = np.ones(bgrid.shape), np.zeros(bgrid.shape)
    return MetricField(np.array([[-one, zero], [zero, one]]), bgrid)


def test_boundary_wave_zero_data():
    bgrid = make_grid().boundary()
    hist = solve_boundary_cauchy_wave(
        flat_boundary_metric(bgrid), np.zeros(bgrid.shape),
        np.zeros(bgrid.shape[1:]), np.zeros(bgrid.shape[1:]),
    )
    assert np.all(hist.values == 0)


def test_boundary_wave_converges_at_second_order():
    table = convergence_study(boundary_manufactured_error, [0.1, 0.05, 0.025])
    assert np.all(np.abs(table["order"].dropna() - 2.0) < 0.3)


def test_boundary_one_form_wave_is_componentwise_on_flat_c():
    bgrid = make_grid(dx=0.05, la=1.0).boundary()
    t, y = bgrid.coords()
    k = np.pi / 2
    exact = np.cos(t) * np.sin(k * (y + 1.0))
    rhs = np.stack([exact, 2 * exact]) * (-0.5 * (1 - k**2))
    hist = solve_boundary_cauchy_wave(
        flat_boundary_metric(bgrid), rhs, np.stack([exact[0], 2 * exact[0]]),
        np.zeros((2,) + bgrid.shape[1:]), kind="one_form",
    )
    assert np.max(np.abs(hist.field() - np.stack([exact, 2 * exact]))) < 5e-3


def test_boundary_bump_travels_at_unit_speed():
    bgrid = make_grid(dx=0.05, t_max=0.5, la=1.0).boundary()
    _, y = bgrid.coords()
    u0 = smooth_bump(np.abs(y[0]) / 0.2)
    hist = solve_boundary_cauchy_wave(
        flat_boundary_metric(bgrid), np.zeros(bgrid.shape), u0, np.zeros_like(u0),
    )
    excess = support_containment(hist, u0 != 0, bgrid.dx, threshold=1e-3, slack=bgrid.dx)
    assert excess <= 0


def test_boundary_grid_cfl_is_checked():
    bgrid = make_grid(cfl=0.8, cfl_bound=1.0).boundary()
    with pytest.raises(InvalidInputError, match="CFL"):
        solve_boundary_cauchy_wave(
            flat_boundary_metric(bgrid), np.zeros(bgrid.shape),
            np.zeros(bgrid.shape[1:]), np.zeros(bgrid.shape[1:]),
        )


def test_unknown_boundary_wave_kind():
    bgrid = make_grid().boundary()
    with pytest.raises(InvalidInputError):
        solve_boundary_cauchy_wave(
            flat_boundary_metric(bgrid), np.zeros(bgrid.shape),
            np.zeros(bgrid.shape[1:]), np.zeros(bgrid.shape[1:]), kind="sym2",
        )


# ---------------------------------------------------------------------- #
# transport                                                              #
# ---------------------------------------------------------------------- #
def static_vector(bgrid, speed=0.0):
    return np.stack([np.ones(bgrid.shape), speed * np.ones(bgrid.shape)])


def test_transport_constant_rhs_is_linear_in_time():
    bgrid = make_grid(t_max=1.0).boundary()
    t, _ = bgrid.coords()
    hist = solve_transport(static_vector(bgrid), np.ones(bgrid.shape), np.zeros(bgrid.shape[1:]), bgrid.spacings)
    assert np.allclose(hist.values[0], 2 * t, atol=1e-12)


def test_transport_converges_at_second_order():
    table = convergence_study(transport_manufactured_error, [0.1, 0.05, 0.025])
    assert np.all(np.abs(table["order"].dropna() - 2.0) < 0.3)


def test_transport_keeps_data_constant_along_curves():
    bgrid = make_grid(dx=0.05, t_max=1.0, la=1.0).boundary()
    t, y = bgrid.coords()
    c = 0.3
    hist = solve_transport(
        static_vector(bgrid, c), np.zeros(bgrid.shape), np.exp(-4 * y[0] ** 2), bgrid.spacings,
    )
    exact = np.exp(-4 * (y - c * t) ** 2)
    away = y[0] >= -0.5
    assert np.max(np.abs(hist.values[0][:, away] - exact[:, away])) < 1e-2


def test_transport_rejects_past_directed_vector():
    bgrid = make_grid().boundary()
    with pytest.raises(InvalidInputError):
        solve_transport(-static_vector(bgrid), np.zeros(bgrid.shape), np.zeros(bgrid.shape[1:]), bgrid.spacings)


# ---------------------------------------------------------------------- #
# norms and studies                                                      #
# ---------------------------------------------------------------------- #
def constant_history(c, m=11, h=0.1):
    return FieldHistory(values=np.full((1, 2, m, m), c), times=np.array([0.0, 0.1]), cfl=0.5)


def test_energy_norm_of_zero_and_constant():
    assert energy_norm(constant_history(0.0), 0, 2, (0.1, 0.1)) == 0.0
    assert energy_norm(constant_history(-3.0), 1, 0, (0.1, 0.1)) == pytest.approx(3.0, rel=1e-12)
    assert energy_norm(constant_history(-3.0), 1, 1, (0.1, 0.1)) == pytest.approx(3.0, rel=1e-12)


def test_energy_norm_rejects_high_order():
    with pytest.raises(InvalidInputError):
        energy_norm(constant_history(1.0), 0, 4, (0.1, 0.1))


def test_energy_series_is_monotone_in_s(grid):
    hist = solve_bulk_wave(flat_problem(grid, w0=bump_data(grid)))
    series = energy_series(hist, grid.spatial_spacings, s_max=2)
    assert np.all(series.norms[0] <= series.norms[1])
    assert np.all(series.norms[1] <= series.norms[2])
    assert len(series.rows()) == 3 * hist.times.size


def test_energy_frame_columns(grid):
    hist = solve_bulk_wave(flat_problem(grid, w0=bump_data(grid)))
    frame = energy_frame(energy_series(hist, grid.spatial_spacings, s_max=1))
    assert list(frame.columns) == ["t", "s", "norm"]
    assert sorted(frame["s"].unique()) == [0, 1]
    assert len(frame) == 2 * hist.times.size


def test_history_frame_keeps_strided_and_last_slices(grid):
    hist = solve_bulk_wave(flat_problem(grid, w0=bump_data(grid)))
    frame = history_frame(hist, grid.spatial_coords(), ["x1", "x2"], every=4)
    assert list(frame.columns) == ["t", "x1", "x2", "w0"]
    kept = sorted(set(range(0, hist.steps + 1, 4)) | {hist.steps})
    assert np.allclose(sorted(frame["t"].unique()), hist.times[kept])
    assert len(frame) == len(kept) * np.prod(grid.spatial_shape)
    first = frame[frame["t"] == 0.0]["w0"].to_numpy()
    assert np.array_equal(first, bump_data(grid).ravel())


def test_history_frame_rejects_zero_stride(grid):
    hist = solve_bulk_wave(flat_problem(grid))
    with pytest.raises(InvalidInputError):
        history_frame(hist, grid.spatial_coords(), ["x1", "x2"], every=0)


def test_h1_energy_constant_is_stable_under_refinement():
    ratios = []
    for dx in (0.1, 0.05):
        grid = make_grid(dx=dx, t_max=0.5)
        w0 = bump_data(grid, radius=0.45)
        hist = solve_bulk_wave(flat_problem(grid, w0=w0))
        series = energy_series(hist, grid.spatial_spacings, s_max=1)
        ratios.append(series.norms[1].max() / series.norms[1][0])
    assert ratios[1] == pytest.approx(ratios[0], rel=0.2)


def test_convergence_study_flags_non_monotone_errors():
    table = convergence_study(lambda h: {"flat": 1.0}, [0.4, 0.2, 0.1])
    assert not table["monotone"].any()
    assert np.allclose(table["order"].dropna(), 0.0)


@pytest.mark.parametrize("resolutions", [[0.1, 0.05], [0.1, 0.04, 0.02]])
def test_convergence_study_validates_resolutions(resolutions):
    with pytest.raises(InvalidInputError):
        convergence_study(lambda h: {"e": h}, resolutions)


def test_edge_mask_counts_faces():
    assert edge_mask((4, 5)).sum() == 4 * 5 - 2 * 3
