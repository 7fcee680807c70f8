"""Impulse-approximation lens formulas for a Gaussian beam.

Uniform motion: kick, deflection angle, focal length f = E0*w/(sqrt(pi)|U0|)
and the Gaussian lens law 1/f = 1/L_o + 1/L_i. Free fall from rest at height
H: focal length with E0 = m g H, flight times and the effective object/image
distances L_og = 2H and L_ig.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .units import G_ACCEL, AtomSpecies, GaussianBeam

SQRT_PI = math.sqrt(math.pi)


class LensError(ValueError):
    """Base class for lens configurations without a finite answer."""


class NoLensError(LensError):
    """The beam has zero depth, so the focal length is infinite."""


class ImageAtInfinity(LensError):
    """Object at the focal plane: the output is collimated."""


class NoRecrossing(LensError):
    """In free fall the lens is too weak to bring the atom back to the axis."""


@dataclass(frozen=True)
class LensSolution:
    focal_length: float
    object_distance: float
    image_distance: float  # negative for a virtual image


@dataclass(frozen=True)
class GravityLensSolution:
    focal_length: float
    drop_height: float
    t_o: float  # fall time to the beam centre
    t_i: float  # time from the beam back to the axis
    H_i: float  # distance fallen between the beam and the re-crossing
    L_og: float
    L_ig: float

    @property
    def v_z0(self) -> float:
        return G_ACCEL * self.t_o


@dataclass(frozen=True)
class DeflectionResult:
    delta_vy: float
    deflection_angle: float


def _check_speed(v_z0):
    if np.any(np.asarray(v_z0) <= 0):
        raise ValueError(f"v_z0 must be positive, got {v_z0}")


def impulse_delta_vy(beam: GaussianBeam, species: AtomSpecies, h, v_z0):
    """Transverse velocity kick from integrating the force along a straight path.

    ``h`` is the offset from the beam axis. Signed so that a red-detuned beam
    (negative depth) pushes the atom back toward the axis.
    """
    _check_speed(v_z0)
    h = np.asarray(h, dtype=float)
    w = beam.waist
    out = 2 * SQRT_PI * h * beam.depth / (species.mass * w * v_z0) * np.exp(-h * h / w**2)
    return out if out.ndim else float(out)


def deflection_angle(beam: GaussianBeam, species: AtomSpecies, h, v_z0):
    _check_speed(v_z0)
    h = np.asarray(h, dtype=float)
    e0 = 0.5 * species.mass * v_z0**2
    w = beam.waist
    out = SQRT_PI * np.abs(h) * abs(beam.depth) / (w * e0) * np.exp(-h * h / w**2)
    return out if out.ndim else float(out)


def deflect(beam: GaussianBeam, species: AtomSpecies, h: float, v_z0: float) -> DeflectionResult:
    dv = impulse_delta_vy(beam, species, h, v_z0)
    return DeflectionResult(dv, abs(dv) / v_z0)


def focal_length(kinetic_energy: float, beam: GaussianBeam) -> float:
    if not kinetic_energy > 0:
        raise ValueError(f"kinetic energy must be positive, got {kinetic_energy}")
    if beam.depth == 0:
        raise NoLensError("zero beam depth: no lens")
    return kinetic_energy * beam.waist / (SQRT_PI * abs(beam.depth))


def focal_length_for_speed(species: AtomSpecies, beam: GaussianBeam, v_z0: float) -> float:
    return focal_length(0.5 * species.mass * v_z0**2, beam)


def image_distance(L_o: float, f: float) -> float:
    """Signed image distance from 1/f = 1/L_o + 1/L_i; negative means virtual."""
    if not (L_o > 0 and f > 0):
        raise ValueError(f"need L_o > 0 and f > 0, got L_o={L_o}, f={f}")
    if L_o == f:
        raise ImageAtInfinity(f"object at the focal plane (L_o = f = {f})")
    return 1.0 / (1.0 / f - 1.0 / L_o)


def solve_lens(L_o: float, f: float) -> LensSolution:
    return LensSolution(f, L_o, image_distance(L_o, f))


def gravity_strength_ratio(species: AtomSpecies, beam: GaussianBeam) -> float:
    """L_og/f = 2 sqrt(pi)|U0| / (m g w), independent of the drop height."""
    return 2 * SQRT_PI * abs(beam.depth) / (species.mass * G_ACCEL * beam.waist)


def gravity_lens(species: AtomSpecies, beam: GaussianBeam, H: float) -> GravityLensSolution:
    """Object-image relation for an atom dropped from rest at height ``H`` above the beam."""
    if not H > 0:
        raise ValueError(f"drop height must be positive, got {H}")
    if beam.depth == 0:
        raise NoRecrossing("zero beam depth: no lens, the atom never returns")
    f = focal_length(species.mass * G_ACCEL * H, beam)
    if f == 2 * H:
        raise ImageAtInfinity("2H = f: the atom leaves the beam parallel to the axis")
    if f > 2 * H:
        raise NoRecrossing(f"f = {f:.6g} m >= 2H = {2 * H:.6g} m: no re-crossing")
    t_o = math.sqrt(2 * H / G_ACCEL)
    v_z0 = G_ACCEL * t_o
    t_i = t_o / (v_z0 / f * t_o - 1.0)
    H_i = 2 * H * f / (2 * H - f) * (1 + f / (4 * H - 2 * f))
    L_ig = H_i / (1 + f / (4 * H - 2 * f))
    return GravityLensSolution(f, H, t_o, t_i, H_i, 2 * H, L_ig)
