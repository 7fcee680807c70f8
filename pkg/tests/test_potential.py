import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from atomlens.potential import force, potential_energy
from atomlens.units import GaussianBeam

W = 30e-6


def test_peak_and_one_waist(fig3_beam):
    assert potential_energy(fig3_beam, 0.0, 0.0) == -2e-28
    assert potential_energy(fig3_beam, W, 0.0) == pytest.approx(-2e-28 * math.exp(-1), rel=1e-15)
    assert potential_energy(fig3_beam, W, 0.0) == pytest.approx(-7.358e-29, rel=1e-4)
    assert abs(potential_energy(fig3_beam, 0.0, 300e-6)) < 1e-71


def test_force_examples(fig3_beam):
    assert force(fig3_beam, 0.0, 0.0) == (0.0, 0.0)
    fy, fz = force(fig3_beam, W, 0.0)
    assert fy == pytest.approx(-4.905e-24, rel=1e-3)
    assert fz == 0.0
    h = 1e-3 * W
    fd = -(potential_energy(fig3_beam, W + h, 0.0) - potential_energy(fig3_beam, W - h, 0.0)) / (2 * h)
    assert fy == pytest.approx(fd, rel=1e-6)


def test_force_is_minus_gradient_at_random_points():
    rng = np.random.default_rng(7)
    beam = GaussianBeam(-2e-28, W, 5e-6, -3e-6)
    y = beam.center_y + rng.uniform(-3 * W, 3 * W, 200)
    z = beam.center_z + rng.uniform(-3 * W, 3 * W, 200)
    h = 1e-3 * W
    fy, fz = force(beam, y, z)
    # five-point central stencil: the plain two-point one has O(h^2) error near 1e-6 out here
    def grad(u):
        return (-u(2 * h) + 8 * u(h) - 8 * u(-h) + u(-2 * h)) / (12 * h)
    gy = -grad(lambda d: potential_energy(beam, y + d, z))
    gz = -grad(lambda d: potential_energy(beam, y, z + d))
    for f, g in ((fy, gy), (fz, gz)):
        big = np.abs(f) > 1e-30
        assert big.sum() > 100
        assert np.max(np.abs(f[big] / g[big] - 1)) <= 1e-6


@given(st.floats(-1e-4, 1e-4), st.floats(-1e-4, 1e-4))
def test_symmetries_and_bound(dy, dz):
    beam = GaussianBeam(-2e-28, W, 1e-6, 2e-6)
    u = potential_energy(beam, beam.center_y + dy, beam.center_z + dz)
    # offsets from a non-zero centre round, so mirror images agree to rounding only
    assert potential_energy(beam, beam.center_y - dy, beam.center_z + dz) == pytest.approx(u, rel=1e-12)
    assert potential_energy(beam, beam.center_y + dy, beam.center_z - dz) == pytest.approx(u, rel=1e-12)
    assert abs(u) <= abs(beam.depth)
    if (dy * dy + dz * dz) / W**2 > 1e-15:
        assert abs(u) < abs(beam.depth)
    fy, _ = force(beam, beam.center_y + dy, beam.center_z)
    fy_m, _ = force(beam, beam.center_y - dy, beam.center_z)
    assert fy_m == pytest.approx(-fy, rel=1e-12, abs=1e-300)


@given(st.floats(-1e-4, 1e-4))
def test_force_exactly_odd_about_centred_beam(dy):
    beam = GaussianBeam(-2e-28, W)
    assert force(beam, -dy, 0.0)[0] == -force(beam, dy, 0.0)[0]


def test_broadcasting(fig3_beam):
    y = np.linspace(-W, W, 5)
    u = potential_energy(fig3_beam, y[:, None], y[None, :])
    assert u.shape == (5, 5)
    fy, fz = force(fig3_beam, y, 0.0)
    assert fy.shape == (5,) and np.all(fz == 0)
