import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from atomlens import thinlens
from atomlens.potential import force
from atomlens.units import G_ACCEL, RB87, GaussianBeam

W, V = 30e-6, 0.3
M = RB87.mass
FIG7 = GaussianBeam(-2.77e-29, 35e-6)


def test_kick_zero_on_axis(fig3_beam):
    assert thinlens.impulse_delta_vy(fig3_beam, RB87, 0.0, V) == 0.0


def test_kick_fig3_one_waist(fig3_beam):
    dv = thinlens.impulse_delta_vy(fig3_beam, RB87, W, V)
    assert dv == pytest.approx(-6.03e-3, rel=2e-3)
    assert dv == pytest.approx(2 * math.sqrt(math.pi) * -2e-28 * math.exp(-1) / (M * V), rel=1e-14)
    # time integral of the force along the undeflected straight path
    val, _ = integrate.quad(lambda t: force(fig3_beam, W, V * t)[0], -12 * W / V, 12 * W / V,
                            epsabs=0, epsrel=1e-12, points=[0.0])
    assert dv == pytest.approx(val / M, rel=1e-10)


def test_kick_points_toward_axis_for_red_detuning(fig3_beam):
    assert thinlens.impulse_delta_vy(fig3_beam, RB87, 5e-6, V) < 0
    assert thinlens.impulse_delta_vy(fig3_beam, RB87, -5e-6, V) > 0
    assert thinlens.impulse_delta_vy(GaussianBeam(2e-28, W), RB87, 5e-6, V) > 0


def test_kick_gaussian_tail(fig3_beam):
    a = thinlens.impulse_delta_vy(fig3_beam, RB87, 5 * W, V)
    b = thinlens.impulse_delta_vy(fig3_beam, RB87, W, V)
    assert abs(a / b) == pytest.approx(5 * math.exp(-24), rel=1e-12)


@pytest.mark.parametrize("fn", [thinlens.impulse_delta_vy, thinlens.deflection_angle])
def test_speed_must_be_positive(fig3_beam, fn):
    with pytest.raises(ValueError):
        fn(fig3_beam, RB87, 1e-6, 0.0)


def test_angle_identity(fig3_beam):
    assert thinlens.deflection_angle(fig3_beam, RB87, 0.0, V) == 0.0
    h = 3e-6
    th = thinlens.deflection_angle(fig3_beam, RB87, h, V)
    assert th == pytest.approx(abs(thinlens.impulse_delta_vy(fig3_beam, RB87, h, V)) / V, rel=1e-12)
    d = thinlens.deflect(fig3_beam, RB87, h, V)
    assert d.deflection_angle == pytest.approx(abs(d.delta_vy) / V, rel=1e-15)


def test_angle_maximum_at_waist_over_root2(fig3_beam):
    h = np.linspace(0, 3 * W, 300001)
    th = thinlens.deflection_angle(fig3_beam, RB87, h, V)
    assert h[np.argmax(th)] == pytest.approx(W / math.sqrt(2), abs=2 * (h[1] - h[0]))


def test_aberration_focal_length_grows_with_offset(fig3_beam):
    h = np.linspace(1e-9, W / math.sqrt(2), 2000)
    f_h = h / np.tan(thinlens.deflection_angle(fig3_beam, RB87, h, V))
    assert np.all(np.diff(f_h) > 0)


def test_focal_length_fig3(fig3_beam):
    e0 = 0.5 * 1.44316e-25 * 0.3**2
    assert e0 == pytest.approx(6.494e-27, rel=1e-4)
    f = thinlens.focal_length(e0, fig3_beam)
    assert f == pytest.approx(5.50e-4, rel=2e-3)
    assert f == pytest.approx(e0 * 30e-6 / (math.sqrt(math.pi) * 2e-28), rel=1e-14)
    assert thinlens.focal_length(e0, GaussianBeam(-4e-28, W)) == pytest.approx(f / 2, rel=1e-15)
    assert thinlens.focal_length_for_speed(RB87, fig3_beam, 2 * V) == pytest.approx(4 * f, rel=1e-14)


def test_no_lens():
    with pytest.raises(thinlens.NoLensError):
        thinlens.focal_length(1e-27, GaussianBeam(0.0, W))


def test_image_distance_examples():
    f = 1e-3
    assert thinlens.image_distance(2 * f, f) == pytest.approx(2 * f, rel=1e-15)
    assert thinlens.image_distance(1e9 * f, f) == pytest.approx(f, rel=1e-8)
    assert thinlens.image_distance(f / 2, f) == pytest.approx(-f, rel=1e-15)
    with pytest.raises(thinlens.ImageAtInfinity):
        thinlens.image_distance(f, f)
    with pytest.raises(ValueError):
        thinlens.image_distance(-f, f)


@given(st.floats(1e-5, 1e-1), st.floats(1e-5, 1e-1))
def test_lens_solution_satisfies_lens_law(L_o, f):
    if abs(L_o / f - 1) < 1e-6:
        return
    s = thinlens.solve_lens(L_o, f)
    assert 1 / s.object_distance + 1 / s.image_distance == pytest.approx(1 / f, rel=1e-12)


def test_gravity_lens_fig7_beam():
    H = 3.1e-3
    g = thinlens.gravity_lens(RB87, FIG7, H)
    assert g.focal_length == pytest.approx(3.13e-3, rel=2e-3)
    assert g.t_o == pytest.approx(25.1e-3, rel=2e-3)
    assert 2 * H / g.focal_length == pytest.approx(1.98, abs=5e-3)
    assert g.t_i == pytest.approx(25.6e-3, rel=5e-3)
    assert g.t_o == pytest.approx(math.sqrt(2 * H / G_ACCEL), rel=1e-12)
    assert g.L_og == 2 * H
    f = g.focal_length
    assert g.L_ig == pytest.approx(g.H_i / (1 + f / (4 * H - 2 * f)), rel=1e-12)
    assert 1 / g.L_og + 1 / g.L_ig == pytest.approx(1 / f, rel=1e-12)
    assert g.v_z0 == pytest.approx(math.sqrt(2 * G_ACCEL * H), rel=1e-12)


def test_gravity_lens_signals():
    with pytest.raises(thinlens.NoRecrossing):
        thinlens.gravity_lens(RB87, GaussianBeam(0.0, 35e-6), 3e-3)
    weak = GaussianBeam(-1e-31, 35e-6)
    with pytest.raises(thinlens.NoRecrossing):
        thinlens.gravity_lens(RB87, weak, 3e-3)
    with pytest.raises(ValueError):
        thinlens.gravity_lens(RB87, FIG7, 0.0)


def test_gravity_ratio():
    assert thinlens.gravity_strength_ratio(RB87, GaussianBeam(0.0, 35e-6)) == 0.0
    r = thinlens.gravity_strength_ratio(RB87, FIG7)
    assert r == pytest.approx(1.98, abs=5e-3)
    for H in (1e-3, 3.1e-3, 10e-3):
        g = thinlens.gravity_lens(RB87, FIG7, H)
        assert g.L_og / g.focal_length == pytest.approx(r, rel=1e-12)
    half = GaussianBeam(FIG7.depth, FIG7.waist / 2)
    assert thinlens.gravity_strength_ratio(RB87, half) == pytest.approx(2 * r, rel=1e-15)


@given(st.floats(1e-4, 1.0))
def test_gravity_ratio_height_independent(H):
    r = thinlens.gravity_strength_ratio(RB87, FIG7)
    f = thinlens.focal_length(M * G_ACCEL * H, FIG7)
    assert 2 * H / f == pytest.approx(r, rel=1e-12)
