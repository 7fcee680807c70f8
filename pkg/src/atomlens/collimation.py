"""Closed-form RMS velocities of a cloud after one pass through the beam.

The cloud is treated as a point source whose transverse position at the beam
is fixed by its velocity, h = v_y0 * L_o / v_z0 (uniform motion) or
h = v_y0 * t_o (free fall from rest). Averaging the deflected velocity over
a Maxwellian gives a quadratic in L_o/f with coefficients set by the
paraxial parameter alpha (uniform) or beta (gravity).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from . import thinlens
from .units import G_ACCEL, K_B, AtomSpecies, GaussianBeam, rms_thermal_velocity


@dataclass(frozen=True)
class UniformMotion:
    object_distance: float
    v_z0: float


@dataclass(frozen=True)
class FreeFall:
    height: float


@dataclass(frozen=True)
class CollimationInput:
    species: AtomSpecies
    beam: GaussianBeam
    temperature: float
    motion: UniformMotion | FreeFall

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        m = self.motion
        if isinstance(m, UniformMotion):
            if not (m.object_distance > 0 and m.v_z0 > 0):
                raise ValueError("uniform motion needs L_o > 0 and v_z0 > 0")
        elif isinstance(m, FreeFall):
            if not m.height > 0:
                raise ValueError("free fall needs H > 0")
        else:
            raise TypeError(f"motion must be UniformMotion or FreeFall, got {type(m).__name__}")


@dataclass(frozen=True)
class CollimationPrediction:
    vy_rms: float
    vz_rms: float
    alpha_or_beta: float
    cloud_size_at_beam: float
    velocity_scale: float
    focal_length: float
    lo_over_f: float
    v0_rms: float

    @property
    def ratio(self) -> float:
        return self.vy_rms / self.v0_rms


def rms_ratio_squared(paraxial, lo_over_f):
    """(v_rms/v0_rms)^2 = (2a+1)^-3/2 x^2 - 2 (a+1)^-3/2 x + 1 with x = L_o/f."""
    a = np.asarray(paraxial, dtype=float)
    x = np.asarray(lo_over_f, dtype=float)
    q = (2 * a + 1) ** -1.5 * x * x - 2 * (a + 1) ** -1.5 * x + 1
    return q if q.ndim else float(q)


def deflected_vy_uniform(v_y0, L_o, f, delta_v0):
    v = np.asarray(v_y0, dtype=float)
    out = v * (1 - L_o / f * np.exp(-v * v / delta_v0**2))
    return out if out.ndim else float(out)


def deflected_vy_gravity(v_y0, lo_over_f, delta_vg):
    v = np.asarray(v_y0, dtype=float)
    out = v * (1 - lo_over_f * np.exp(-v * v / delta_vg**2))
    return out if out.ndim else float(out)


def delta_vz_single(v_y0, v_z0, L_o, f, delta_v0):
    """Linearised change of v_z when the kick trades transverse for vertical energy.

    With k = (L_o/f) exp(-v_y0^2/delta_v0^2) the kick maps v_y0 to
    v_y0 (1 - k), and energy conservation to first order in dv_z gives
    dv_z = v_y0^2 k (2 - k) / (2 v_z0). It vanishes at k = 2, where the kick
    exactly reverses v_y. No thermal weight appears: this is one atom.
    """
    if np.any(np.asarray(v_z0) <= 0):
        raise ValueError("v_z0 must be positive")
    v = np.asarray(v_y0, dtype=float)
    k = L_o / f * np.exp(-v * v / delta_v0**2)
    out = v * v / (2 * v_z0) * k * (2 - k)
    return out if out.ndim else float(out)


def _focal_or_inf(species, beam, kinetic_energy):
    try:
        return thinlens.focal_length(kinetic_energy, beam)
    except thinlens.NoLensError:
        return math.inf


def transverse_rms_uniform(inp: CollimationInput, *, with_vertical: bool = True) -> CollimationPrediction:
    m = inp.motion
    if not isinstance(m, UniformMotion):
        raise TypeError("transverse_rms_uniform needs UniformMotion")
    sp, beam = inp.species, inp.beam
    v0 = rms_thermal_velocity(sp, inp.temperature)
    L_o, vz = m.object_distance, m.v_z0
    f = _focal_or_inf(sp, beam, 0.5 * sp.mass * vz**2)
    x = L_o / f
    size2 = 2 * K_B * inp.temperature * L_o**2 / (sp.mass * vz**2)
    alpha = size2 / beam.waist**2
    q = rms_ratio_squared(alpha, x)
    assert q >= 0, q
    vz_rms = vertical_rms_uniform(inp) if with_vertical else v0
    return CollimationPrediction(
        vy_rms=math.sqrt(q) * v0, vz_rms=vz_rms, alpha_or_beta=alpha,
        cloud_size_at_beam=math.sqrt(size2), velocity_scale=vz * beam.waist / L_o,
        focal_length=f, lo_over_f=x, v0_rms=v0)


def transverse_rms_gravity(inp: CollimationInput) -> CollimationPrediction:
    """Free fall from rest through height H. The vertical spread is returned unchanged."""
    m = inp.motion
    if not isinstance(m, FreeFall):
        raise TypeError("transverse_rms_gravity needs FreeFall")
    sp, beam = inp.species, inp.beam
    v0 = rms_thermal_velocity(sp, inp.temperature)
    H = m.height
    size2 = 4 * H * K_B * inp.temperature / (sp.mass * G_ACCEL)
    beta = size2 / beam.waist**2
    x = thinlens.gravity_strength_ratio(sp, beam)
    f = _focal_or_inf(sp, beam, sp.mass * G_ACCEL * H)
    q = rms_ratio_squared(beta, x)
    assert q >= 0, q
    return CollimationPrediction(
        vy_rms=math.sqrt(q) * v0, vz_rms=v0, alpha_or_beta=beta,
        cloud_size_at_beam=math.sqrt(size2), velocity_scale=beam.waist * math.sqrt(G_ACCEL / (2 * H)),
        focal_length=f, lo_over_f=x, v0_rms=v0)


def transverse_rms(inp: CollimationInput) -> CollimationPrediction:
    if isinstance(inp.motion, UniformMotion):
        return transverse_rms_uniform(inp)
    return transverse_rms_gravity(inp)


def vertical_rms_uniform(inp: CollimationInput, *, nodes: int = 24) -> float:
    """Vertical RMS velocity after the beam, v0_rms * (1 + eps).

    eps is obtained by averaging ``delta_vz_single`` over the thermal
    distribution of both v_y0 (adaptive quadrature) and v_z0 (Gauss-Hermite),
    with the focal length and velocity scale evaluated at each atom's own v_z0.
    """
    m = inp.motion
    if not isinstance(m, UniformMotion):
        raise TypeError("vertical_rms_uniform needs UniformMotion")
    sp, beam = inp.species, inp.beam
    s = rms_thermal_velocity(sp, inp.temperature)
    if beam.depth == 0:
        return s
    L_o = m.object_distance
    z_nodes, z_w = np.polynomial.hermite_e.hermegauss(nodes)
    z_w = z_w / z_w.sum()
    mean_d = 0.0
    mean_dd = 0.0
    mean_xd = 0.0  # E[thermal_z * delta]
    for u, wz in zip(z_nodes, z_w):
        dz = u * s
        vz = m.v_z0 + dz
        if vz <= 0:
            continue
        f = thinlens.focal_length(0.5 * sp.mass * vz**2, beam)
        dv0 = vz * beam.waist / L_o

        def moment(k):
            def integrand(t):
                d = delta_vz_single(t * s, vz, L_o, f, dv0)
                return d**k * math.exp(-0.5 * t * t)
            val, _ = integrate.quad(integrand, 0, np.inf, epsabs=0, epsrel=1e-11, limit=200)
            return 2 * val / math.sqrt(2 * math.pi)

        m1 = moment(1)
        m2 = moment(2)
        mean_d += wz * m1
        mean_dd += wz * m2
        mean_xd += wz * dz * m1
    var = s * s + 2 * mean_xd + mean_dd - mean_d**2
    return math.sqrt(var)
