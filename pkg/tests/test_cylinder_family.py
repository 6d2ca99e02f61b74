import numpy as np
import pytest

from ibcvp_lab.errors import InvalidInputError
from ibcvp_lab.services.cylinder_family import (
    REFERENCE_COLLAPSE_TIMES, collapse_estimate, collapse_time, family_frame, family_scan,
    family_witness, integrate_cylinder, trajectory_diagnostics, trajectory_frame,
)

# step-halving reference for alpha = -0.1, extrapolated from steps down to 6.25e-4
T_COLLAPSE_MINUS_01 = 2.300806323005


def test_zero_slope_is_stationary():
    traj = integrate_cylinder(0.0, t_max=5.0)
    assert traj.status == "completed"
    assert traj.end_time == pytest.approx(5.0)
    assert np.max(np.abs(traj.r - 1.0)) <= 1e-10
    assert np.max(np.abs(traj.rdot)) <= 1e-10


def test_negative_slope_collapses():
    traj = integrate_cylinder(-0.1, t_max=20.0)
    assert traj.status == "collapsed"
    assert 0 < traj.end_time < 20.0
    assert np.all(np.diff(traj.r) < 0)
    assert np.all(traj.r > 0)
    assert traj.r[-1] == pytest.approx(1e-6, rel=1e-3)


def test_positive_slope_expands():
    traj = integrate_cylinder(0.1, t_max=5.0)
    assert traj.status in ("completed", "expanded")
    assert np.all(np.diff(traj.r) > 0)
    assert np.all(traj.r[1:] > 1.0)


@pytest.mark.parametrize("alpha", [-0.5, -0.1, 0.0, 0.1, 0.5])
def test_slope_sign_is_kept(alpha):
    traj = integrate_cylinder(alpha, t_max=3.0)
    assert np.all(np.sign(traj.rdot) == np.sign(alpha))


@pytest.mark.parametrize("alpha", [-0.2, -0.1, 0.0, 0.1, 0.3])
def test_mean_curvature_stays_two(alpha):
    diag = trajectory_diagnostics(integrate_cylinder(alpha, t_max=5.0))
    assert diag.max_h_deviation <= 1e-8


def test_conformal_identity_holds_to_rounding():
    traj = integrate_cylinder(-0.1, t_max=20.0)
    diag = trajectory_diagnostics(traj)
    assert np.all(diag.conformal_residual <= 4 * np.finfo(float).eps * traj.v)


def test_corner_angle_is_minus_slope():
    diag = trajectory_diagnostics(integrate_cylinder(0.25, t_max=0.5))
    assert diag.corner_angle == -0.25
    assert diag.slope == 0.25


@pytest.mark.parametrize("alpha", [1.5, -1.01])
def test_slope_outside_unit_interval_is_rejected(alpha):
    with pytest.raises(InvalidInputError, match="outside"):
        integrate_cylinder(alpha, t_max=1.0)


def test_nonpositive_step_is_rejected():
    with pytest.raises(InvalidInputError):
        integrate_cylinder(0.1, t_max=1.0, h_ode=0.0)


def test_collapse_time_matches_frozen_reference():
    assert collapse_time(-0.1, tol=1e-9) == pytest.approx(T_COLLAPSE_MINUS_01, abs=1e-6)
    assert REFERENCE_COLLAPSE_TIMES[-0.1] == pytest.approx(T_COLLAPSE_MINUS_01, abs=1e-12)


def test_collapse_time_converges_at_fourth_order():
    t_h, t_h2, t_h4 = (collapse_estimate(-0.1, h_ode=h) for h in (0.04, 0.02, 0.01))
    order = np.log2(abs(t_h - t_h2) / abs(t_h2 - t_h4))
    assert order >= 3.5


def test_collapse_time_matches_fine_integration():
    t_collapse = collapse_time(-0.1, tol=1e-9)
    fine = integrate_cylinder(-0.1, t_max=20.0, h_ode=1e-3 / 64)
    assert fine.status == "collapsed"
    assert t_collapse == pytest.approx(fine.end_time, abs=1e-6)


def test_steeper_slope_collapses_sooner():
    assert collapse_time(-0.2, tol=1e-7) < collapse_time(-0.1, tol=1e-7)


def test_halving_tol_moves_estimate_less_than_tol():
    coarse = collapse_time(-0.1, tol=1e-6)
    fine = collapse_time(-0.1, tol=5e-7)
    assert abs(fine - coarse) <= 1e-6


@pytest.mark.parametrize("alpha", [0.0, 0.1])
def test_collapse_time_needs_negative_slope(alpha):
    with pytest.raises(InvalidInputError, match="does not collapse"):
        collapse_time(alpha)


def test_collapse_time_rejects_short_horizon():
    with pytest.raises(InvalidInputError, match="did not collapse before"):
        collapse_time(-0.1, t_max=1.0)


def test_collapse_estimate_rejects_steep_slope():
    with pytest.raises(InvalidInputError, match="outside"):
        collapse_estimate(-1.5)


def test_family_scan_separates_members():
    scan = family_scan([-0.1, 0.0, 0.1], t_max=5.0)
    assert len(scan.rows) == 3
    assert scan.separation() > 0.01
    assert all(row.max_h_dev <= 1e-8 for row in scan.rows)
    stationary = scan.rows[1]
    assert stationary.status == "completed"
    assert stationary.t_or_final_r == pytest.approx(1.0, abs=1e-10)

    witness = family_witness(scan)
    assert witness["pass"]
    assert witness["corner_angles"] == [0.1, -0.0, -0.1]


def test_single_member_family():
    scan = family_scan([0.0], t_max=1.0)
    assert len(scan.rows) == 1
    assert scan.rows[0].status == "completed"
    assert family_witness(scan)["pass"]


def test_empty_family_is_rejected():
    with pytest.raises(InvalidInputError):
        family_scan([], t_max=1.0)


def test_frames_have_the_documented_columns():
    scan = family_scan([0.0, 0.1], t_max=1.0)
    assert list(family_frame(scan).columns) == ["alpha", "status", "T_or_final_r", "maxHdev"]
    frame = trajectory_frame(scan.trajectories[1])
    assert list(frame.columns) == ["t", "r", "rdot", "H", "conf_residual"]
    assert len(frame) == scan.trajectories[1].t.size
