import math

import numba
import numpy as np
import pytest
from scipy import integrate, stats

from atomlens import collimation as c
from atomlens import ensemble as E
from atomlens import streams, thinlens
from atomlens.tracer import default_params, launch_to_plane, trace
from atomlens.units import G_ACCEL, RB87, CloudSpec, GaussianBeam, PhaseSpacePoint, rms_thermal_velocity

FIG3 = GaussianBeam(-2e-28, 30e-6)
VZ = 0.3
F3 = thinlens.focal_length_for_speed(RB87, FIG3, VZ)


def cloud(T=0.2e-6, R=0.0, n=100_000, vz=VZ, z=0.0):
    return CloudSpec(T, R, center_position=(0, 0, z), center_velocity=(0, 0, vz), count=n, species=RB87)


# -- sampling

def test_delta_cloud():
    ens = E.sample_cloud(CloudSpec(0.0, 0.0, (1e-3, 2e-3, 3e-3), (0.1, 0.2, 0.3), count=5), 1)
    assert np.all(ens.state == np.array([0, 1e-3, 2e-3, 3e-3, 0.1, 0.2, 0.3]))
    assert len(ens) == 5 and ens[2] == PhaseSpacePoint(1e-3, 2e-3, 3e-3, 0.1, 0.2, 0.3, 0.0)


def test_sample_velocity_std():
    N = 100_000
    ens = E.sample_cloud(cloud(n=N, R=1e-6), 3)
    s = rms_thermal_velocity(RB87, 0.2e-6)
    bound = 3 / math.sqrt(2 * N - 2)
    for k in (4, 5, 6):
        assert abs(ens.state[:, k].std(ddof=1) / s - 1) < bound
    for k in (1, 2, 3):
        assert abs(ens.state[:, k].std(ddof=1) / 1e-6 - 1) < bound


def test_sampling_is_deterministic():
    a = E.sample_cloud(cloud(n=1000), 11)
    b = E.sample_cloud(cloud(n=1000), 11)
    assert np.array_equal(a.state, b.state)
    assert not np.array_equal(a.state, E.sample_cloud(cloud(n=1000), 12).state)


def test_stream_slices_agree():
    full = streams.normals(5, 0, 100)
    assert np.array_equal(streams.normals(5, 37, 20), full[37:57])
    assert np.array_equal(streams.normals(5, 99, 1), full[99:])
    u = streams.uniforms(5, 0, 1000)
    assert np.all((u > 0) & (u < 1))
    with pytest.raises(ValueError):
        streams.normals(5, 0, 3, width=9)


def test_ensemble_shape_checked():
    with pytest.raises(ValueError):
        E.Ensemble(np.zeros((3, 6)), 0, cloud(n=3))


# -- evolution

def test_zero_depth_traced_is_ballistic():
    spec = cloud(n=200, R=2e-6, z=-3e-3)
    ens = E.sample_cloud(spec, 2)
    beam = GaussianBeam(0.0, 30e-6)
    out = E.evolve_traced(ens, beam, False, default_params(beam, RB87, VZ))
    dt = out.state[:, 0] - ens.state[:, 0]
    assert np.allclose(out.state[:, 1:4], ens.state[:, 1:4] + ens.state[:, 4:7] * dt[:, None],
                       rtol=0, atol=1e-15)
    assert np.array_equal(out.state[:, 4:7], ens.state[:, 4:7])
    assert out.trapped_count == 0


def test_single_particle_matches_trace():
    start = PhaseSpacePoint(0.0, 3e-6, -8 * FIG3.waist, 0.0, 0.0, VZ)
    spec = CloudSpec(0.0, 0.0, (0, 3e-6, -8 * FIG3.waist), (0, 0, VZ), count=1)
    ens = E.sample_cloud(spec, 0)
    p = default_params(FIG3, RB87, VZ)
    out = E.evolve_traced(ens, FIG3, False, p)
    traj = trace(start, FIG3, RB87, False, p)
    assert np.array_equal(out.state[0, 2:], traj.data[-1, 2:])
    assert out.state[0, 0] == pytest.approx(traj.data[-1, 0], rel=1e-12)


def test_traced_at_optimum_matches_closed_form():
    T = 0.2e-6
    xs = np.logspace(-0.5, 0.5, 801)
    ratios = [c.transverse_rms_uniform(c.CollimationInput(RB87, FIG3, T, c.UniformMotion(x * F3, VZ)),
                                       with_vertical=False).ratio for x in xs]
    L_o = xs[int(np.argmin(ratios))] * F3
    pred = c.transverse_rms_uniform(c.CollimationInput(RB87, FIG3, T, c.UniformMotion(L_o, VZ)),
                                    with_vertical=False)
    spec = CloudSpec(T, 0.0, (0, 0, -L_o), (0, 0, VZ), count=100_000, species=RB87)
    out = E.evolve_traced(E.sample_cloud(spec, 42), FIG3, False, default_params(FIG3, RB87, VZ))
    mc, se = E.rms_velocity(out, "y"), E.rms_velocity_se(out, "y")
    assert abs(mc - pred.vy_rms) < 3 * se


def test_kickmap_cold_particle_at_focus():
    spec = CloudSpec(0.0, 0.0, (0, 0, 0), (0, 1e-6, VZ), count=2)
    out = E.evolve_kickmap(E.sample_cloud(spec, 0), FIG3, E.UniformKick(F3, VZ))
    assert abs(out.state[0, 5]) < 1e-12 * 1e-6 + 1e-6 * 1e-4


def test_kickmap_matches_quadrature():
    T, L_o = 0.6e-6, 1.3 * F3
    s = rms_thermal_velocity(RB87, T)

    def g(t):
        v = t * s
        vy = v + thinlens.impulse_delta_vy(FIG3, RB87, v * L_o / VZ, VZ)
        return vy * vy * math.exp(-0.5 * t * t)

    ms, _ = integrate.quad(g, -np.inf, np.inf, epsrel=1e-11, epsabs=0, limit=400)
    ref = math.sqrt(ms / math.sqrt(2 * math.pi))
    out = E.evolve_kickmap(E.sample_cloud(cloud(T), 9), FIG3, E.UniformKick(L_o, VZ))
    assert abs(E.rms_velocity(out, "y") - ref) < 3 * E.rms_velocity_se(out, "y")


def test_kickmap_gravity_matches_closed_form():
    beam = GaussianBeam(-2.77e-29, 35e-6)
    T, H = 1e-6, 3.1e-3
    pred = c.transverse_rms_gravity(c.CollimationInput(RB87, beam, T, c.FreeFall(H)))
    spec = CloudSpec(T, 0.0, (0, 0, -H), (0, 0, 0), count=100_000, species=RB87)
    out = E.evolve_kickmap(E.sample_cloud(spec, 4), beam, E.GravityKick(H))
    assert abs(E.rms_velocity(out, "y") - pred.vy_rms) < 3 * E.rms_velocity_se(out, "y")


def test_kickmap_zero_depth_is_flight():
    ens = E.sample_cloud(cloud(n=100), 1)
    out = E.evolve_kickmap(ens, GaussianBeam(0.0, 30e-6), E.UniformKick(1e-3, VZ))
    assert np.array_equal(out.state[:, 4:], ens.state[:, 4:])
    assert np.array_equal(out.state, E.free_expand(ens, 1e-3 / VZ, False).state)


def test_kickmap_conserves_kinetic_energy():
    ens = E.sample_cloud(cloud(n=1000), 1)
    out = E.evolve_kickmap(ens, FIG3, E.UniformKick(F3, VZ))
    ke = lambda s: (s[:, 4:] ** 2).sum(axis=1)
    assert np.allclose(ke(out.state), ke(ens.state), rtol=1e-12)


def test_kickmap_rejects_unknown_mode():
    with pytest.raises(TypeError):
        E.evolve_kickmap(E.sample_cloud(cloud(n=2), 0), FIG3, "uniform")


def test_free_expand():
    ens = E.sample_cloud(cloud(n=100_000), 8)
    assert np.array_equal(E.free_expand(ens, 0.0, True).state, ens.state)
    t = 5e-3
    out = E.free_expand(ens, t, False)
    want = rms_thermal_velocity(RB87, 0.2e-6) * t
    assert abs(E.rms_position(out, "y") - want) < 3 * E.rms_standard_error(out.state[:, 2])
    assert E.rms_velocity(out, "y") == E.rms_velocity(ens, "y")
    with pytest.raises(ValueError):
        E.free_expand(ens, -1.0, False)


def test_free_fall_centre():
    ens = E.sample_cloud(CloudSpec(0.0, 0.0, count=3), 0)
    out = E.free_expand(ens, 0.02, True)
    assert np.all(out.state[:, 3] == 0.5 * G_ACCEL * 0.02**2)
    assert np.all(out.state[:, 6] == G_ACCEL * 0.02)


def test_drift_to_time():
    ens = E.sample_cloud(cloud(n=10), 0)
    out = E.drift_to_time(ens, 1e-3, False)
    assert np.all(out.state[:, 0] == 1e-3)
    with pytest.raises(ValueError):
        E.drift_to_time(out, 0.0, False)


def test_beam_arrival_time():
    assert E.beam_arrival_time(cloud(z=-3e-3), FIG3, False) == pytest.approx(0.01, rel=1e-14)
    spec = CloudSpec(0.0, 0.0, (0, 0, -3.1e-3), count=1)
    assert E.beam_arrival_time(spec, FIG3, True) == pytest.approx(math.sqrt(2 * 3.1e-3 / G_ACCEL), rel=1e-14)


# -- reductions

def test_rms_needs_two():
    ens = E.sample_cloud(cloud(n=1), 0)
    with pytest.raises(ValueError):
        E.rms_velocity(ens, "y")
    with pytest.raises(ValueError):
        E.rms_position(E.sample_cloud(cloud(n=3), 0), "w")


def test_rms_identical_particles():
    ens = E.sample_cloud(CloudSpec(0.0, 0.0, (1, 1, 1), (0.3, 0.3, 0.3), count=10), 0)
    assert E.rms_velocity(ens, "y") == 0 and E.rms_position(ens, "z") == 0
    assert E.rms_velocity_se(ens, "y") == 0


def test_fresh_cloud_rms():
    ens = E.sample_cloud(cloud(), 6)
    s = rms_thermal_velocity(RB87, 0.2e-6)
    for ax in "xyz":
        assert abs(E.rms_velocity(ens, ax) - s) < 3 * E.rms_velocity_se(ens, ax)


def test_rms_se_matches_gaussian_theory():
    v = np.random.default_rng(0).normal(size=200_000)
    assert E.rms_standard_error(v) == pytest.approx(1 / math.sqrt(2 * len(v)), rel=0.02)


def test_density_profile_delta():
    ens = E.sample_cloud(CloudSpec(0.0, 0.0, (0, 1e-6, 0), count=50), 0)
    p = E.density_profile(ens, "y", 16, (-8e-6, 8e-6))
    assert np.count_nonzero(p.counts) == 1 and p.counts.sum() == 50 and p.dropped == 0


def test_density_profile_errors():
    ens = E.sample_cloud(cloud(n=10), 0)
    with pytest.raises(ValueError):
        E.density_profile(ens, "y", 4, (-1, 1))
    with pytest.raises(ValueError):
        E.density_profile(ens, "y", 10, (1, 1))
    with pytest.raises(ValueError):
        E.density_profile(ens, "x", 10, (-1, 1))


def test_density_profile_counts_dropped():
    ens = E.sample_cloud(CloudSpec(0.0, 1e-6, count=10_000), 0)
    p = E.density_profile(ens, "y", 10, (-1e-6, 1e-6))
    assert p.counts.sum() + p.dropped == 10_000 and p.dropped > 0


def test_density_profile_gaussian_width():
    from scipy.optimize import curve_fit

    ens = E.sample_cloud(CloudSpec(0.0, 10e-6, count=100_000), 5)
    p = E.density_profile(ens, "y", 200, (-50e-6, 50e-6))
    g = lambda x, a, m, s: a * np.exp(-(x - m) ** 2 / (2 * s * s))
    (a, m, s), _ = curve_fit(g, p.centers, p.counts, p0=(p.counts.max(), 0, 8e-6))
    assert abs(s) == pytest.approx(E.rms_position(ens, "y"), rel=0.02)


def test_density_profile_symmetry():
    ens = E.sample_cloud(CloudSpec(0.0, 10e-6, count=100_000), 13)
    p = E.density_profile(ens, "y", 40, (-40e-6, 40e-6))
    left, right = p.counts[:20], p.counts[::-1][:20]
    keep = (left + right) > 0
    chi2 = (((left - right) ** 2) / (left + right))[keep].sum()
    assert stats.chi2.sf(chi2, keep.sum()) > 0.01


# -- threads and export

def test_resolve_threads(monkeypatch):
    top = numba.config.NUMBA_NUM_THREADS
    monkeypatch.delenv(E.THREADS_ENV, raising=False)
    assert E.resolve_threads() == top
    assert E.resolve_threads(0) == 1
    assert E.resolve_threads(10_000) == top
    monkeypatch.setenv(E.THREADS_ENV, "1")
    assert E.resolve_threads() == 1


def test_thread_count_does_not_change_results():
    spec = cloud(n=300, z=-2e-3)
    ens = E.sample_cloud(spec, 3)
    p = default_params(FIG3, RB87, VZ)
    a = E.evolve_traced(ens, FIG3, False, p, threads=1)
    b = E.evolve_traced(ens, FIG3, False, p, threads=numba.config.NUMBA_NUM_THREADS)
    assert np.array_equal(a.state, b.state)


def test_launch_plane_is_far_upstream():
    start = np.array([[0, 0, 0, -1e-2, 0, 0, VZ]], dtype=float)
    moved = launch_to_plane(start, FIG3, False, 8.0)
    assert moved[0, 3] == pytest.approx(-8 * FIG3.waist, rel=1e-12)


def test_snapshot_export(tmp_path):
    ens = E.sample_cloud(cloud(n=5, R=1e-6), 21)
    meta = E.write_snapshot(ens, tmp_path / "snap.csv", FIG3, note="x")
    lines = (tmp_path / "snap.csv").read_text().splitlines()
    assert lines[0] == "id,x,y,z,vx,vy,vz"
    assert len(lines) == 6 and lines[1].startswith("0,")
    back = np.loadtxt(tmp_path / "snap.csv", delimiter=",", skiprows=1)
    assert np.array_equal(back[:, 1:], ens.state[:, 1:])
    kv = dict(l.split("=", 1) for l in meta.read_text().splitlines())
    assert kv["seed"] == "21" and kv["count"] == "5" and kv["note"] == "x"
    assert "beam.waist" in kv and "build" in kv
