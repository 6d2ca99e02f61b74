import numpy as np
import pytest

from ibcvp_lab.services.corner_geometry import build_grid, minkowski_corner, perturb_metric


def make_grid(dx=0.1, t_max=0.3, n=2, l1=1.0, la=1.0, cfl=0.5, cfl_bound=0.5):
    return build_grid(n=n, dt=cfl * dx, dx=dx, t_max=t_max, l1=l1, la=la, cfl_bound=cfl_bound)


def box_mask(grid, t=(0.1, 0.2), x1=(-0.7, -0.3), xa=(-0.4, 0.4)):
    """Spacetime nodes inside a fixed physical box, for resolution studies."""
    coords = grid.coords()
    tol = 1e-9
    mask = (coords[0] >= t[0] - tol) & (coords[0] <= t[1] + tol)
    mask &= (coords[1] >= x1[0] - tol) & (coords[1] <= x1[1] + tol)
    for c in coords[2:]:
        mask &= (c >= xa[0] - tol) & (c <= xa[1] + tol)
    return mask


def sym2(grid, entries):
    """Symmetric field from {(a, b): array} on the grid."""
    h = np.zeros((grid.dim, grid.dim) + grid.shape)
    for (a, b), val in entries.items():
        h[a, b] = h[b, a] = np.broadcast_to(val, grid.shape)
    return h


def smooth_sym2(grid, amp=1.0, k=1.0):
    """Generic smooth sym2 field built from trig products."""
    t, x1, *xa = grid.coords()
    y = xa[0]
    h = np.zeros((grid.dim, grid.dim) + grid.shape)
    for a in range(grid.dim):
        for b in range(a, grid.dim):
            phase = 0.3 * a + 0.7 * b
            h[a, b] = h[b, a] = amp * np.sin(k * (t + 0.5 * x1) + phase) * np.cos(k * (y - 0.4 * x1) + phase)
    return h


@pytest.fixture
def grid():
    return make_grid()


@pytest.fixture
def flat(grid):
    return minkowski_corner(0.0, grid)


@pytest.fixture
def bump_metric(grid):
    return perturb_metric(minkowski_corner(0.0, grid), "bump", 0.05, radius=0.6)


def ambient_sym2(grid, amp=0.1, center=(-0.3, 0.0), width=0.08, omega=1.0):
    """Smooth sym2 field concentrated near `center`, every component active."""
    t, x1, *xa = grid.coords()
    rho2 = (x1 - center[0]) ** 2 + sum((x - c) ** 2 for x, c in zip(xa, center[1:]))
    profile = amp * np.exp(-rho2 / width) * np.cos(omega * t)
    h = np.zeros((grid.dim, grid.dim) + grid.shape)
    for a in range(grid.dim):
        for b in range(a, grid.dim):
            h[a, b] = h[b, a] = (1.0 + 0.25 * a - 0.1 * b) * profile * (1.0 + 0.5 * x1 * (a == b))
    return h


def zero_gauge(grid):
    from ibcvp_lab.models.gauge import GaugeCauchyData, GaugeState

    d = grid.dim
    zero = np.zeros((d,) + grid.shape)
    cauchy = GaugeCauchyData(
        v_s=np.zeros((d,) + grid.spatial_shape),
        dt_v_s=np.zeros((d,) + grid.spatial_shape),
        v_c=np.zeros((d,) + grid.boundary().shape),
    )
    return GaugeState(v=zero, v_f=zero.copy(), w_prime=zero.copy(), cauchy=cauchy)


def compact_sym2(grid, amp=0.01, center=(-0.4, 0.0), radius=0.55, omega=1.0):
    """Like ambient_sym2 but exactly zero outside a ball, so outer faces stay clean."""
    from ibcvp_lab.services.corner_geometry import smooth_bump

    t, x1, *xa = grid.coords()
    rho2 = (x1 - center[0]) ** 2 + sum((x - c) ** 2 for x, c in zip(xa, center[1:]))
    profile = amp * smooth_bump(np.sqrt(rho2) / radius) * np.cos(omega * t)
    h = np.zeros((grid.dim, grid.dim) + grid.shape)
    for a in range(grid.dim):
        for b in range(a, grid.dim):
            h[a, b] = h[b, a] = (1.0 + 0.25 * a - 0.1 * b) * profile
    return h
