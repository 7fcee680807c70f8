"""Physical constants, value types and unit conventions.

Everything inside the package is SI. Convenience units (uK, um, ms, GHz, MHz)
only appear in configuration files and are converted once, by the helpers at
the bottom of this module.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PhysicalConstants:
    hbar: float = 1.054571817e-34  # J s
    k_B: float = 1.380649e-23  # J/K
    g_accel: float = 9.80665  # m/s^2, standard gravity


CONSTANTS = PhysicalConstants()
HBAR = CONSTANTS.hbar
K_B = CONSTANTS.k_B
G_ACCEL = CONSTANTS.g_accel


@dataclass(frozen=True)
class AtomSpecies:
    """Particle being lensed.

    ``linewidth`` is the excited-state decay rate (rad/s) and
    ``transition_freq`` the angular transition frequency (rad/s).
    """

    mass: float
    linewidth: float = 0.0
    transition_freq: float = 1.0
    name: str = "custom"

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        if not self.linewidth >= 0:
            raise ValueError(f"linewidth must be non-negative, got {self.linewidth}")
        if not self.transition_freq > 0:
            raise ValueError(f"transition_freq must be positive, got {self.transition_freq}")


# D2 line; see decisions for the D1/D2 choice.
RB87 = AtomSpecies(
    mass=1.44316e-25,
    linewidth=2 * math.pi * 6.0666e6,
    transition_freq=2 * math.pi * 384.2304844685e12,
    name="rb87",
)

SPECIES_PRESETS = {"rb87": RB87}


@dataclass(frozen=True)
class GaussianBeam:
    """Two-dimensional Gaussian dipole potential, uniform along x.

    ``depth`` is the signed peak potential U0 in joules; negative values are
    red detuned and attractive.
    """

    depth: float
    waist: float
    center_y: float = 0.0
    center_z: float = 0.0

    def __post_init__(self):
        if not self.waist > 0:
            raise ValueError(f"waist must be positive, got {self.waist}")
        if not math.isfinite(self.depth):
            raise ValueError(f"depth must be finite, got {self.depth}")

    @classmethod
    def from_rabi(cls, species: AtomSpecies, rabi: float, detuning: float,
                  waist: float, center_y: float = 0.0, center_z: float = 0.0) -> "GaussianBeam":
        return cls(depth_from_rabi(species, rabi, detuning), waist, center_y, center_z)


@dataclass(frozen=True)
class PhaseSpacePoint:
    x: float
    y: float
    z: float
    vx: float
    vy: float
    vz: float
    t: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.as_tuple()):
            raise ValueError(f"non-finite phase-space point {self}")

    def as_tuple(self) -> tuple[float, ...]:
        """Return ``(t, x, y, z, vx, vy, vz)``, the column order used in arrays and CSV."""
        return (self.t, self.x, self.y, self.z, self.vx, self.vy, self.vz)

    @classmethod
    def from_row(cls, row) -> "PhaseSpacePoint":
        t, x, y, z, vx, vy, vz = (float(v) for v in row)
        return cls(x, y, z, vx, vy, vz, t)


@dataclass(frozen=True)
class CloudSpec:
    """Statistical description of a thermal cloud.

    Positions are an isotropic Gaussian with per-axis standard deviation
    ``initial_radius``; velocities are Maxwellian at ``temperature``.
    """

    temperature: float
    initial_radius: float
    center_position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    center_velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    count: int = 1
    species: AtomSpecies = RB87

    def __post_init__(self):
        if not self.temperature >= 0:
            raise ValueError(f"temperature must be non-negative, got {self.temperature}")
        if not self.initial_radius >= 0:
            raise ValueError(f"initial_radius must be non-negative, got {self.initial_radius}")
        if int(self.count) != self.count or self.count < 1:
            raise ValueError(f"count must be a positive integer, got {self.count}")
        object.__setattr__(self, "center_position", tuple(float(v) for v in self.center_position))
        object.__setattr__(self, "center_velocity", tuple(float(v) for v in self.center_velocity))
        object.__setattr__(self, "count", int(self.count))


def rms_thermal_velocity(species: AtomSpecies, temperature: float) -> float:
    """Per-axis RMS speed sqrt(k_B T / m) of a thermal cloud."""
    if temperature < 0:
        raise ValueError(f"temperature must be non-negative, got {temperature}")
    return math.sqrt(K_B * temperature / species.mass)


def depth_from_rabi(species: AtomSpecies, rabi: float, detuning: float) -> float:
    """Conservative part of the light shift, hbar*Omega^2*delta / (4(delta^2 + gamma^2/4)).

    Red detuning (``detuning < 0``) gives a negative, attractive depth.
    """
    if detuning == 0:
        raise ZeroDivisionError("depth_from_rabi is singular at zero detuning")
    gamma = species.linewidth
    return HBAR * rabi**2 * detuning / (4.0 * (detuning**2 + 0.25 * gamma**2))


# -- boundary conversions for configuration files

def uk(value: float) -> float:
    return value * 1e-6


def nk(value: float) -> float:
    return value * 1e-9


def um(value: float) -> float:
    return value * 1e-6


def mm(value: float) -> float:
    return value * 1e-3


def ms(value: float) -> float:
    return value * 1e-3


def ghz_to_angular(value: float) -> float:
    """delta/2pi in GHz -> angular frequency in rad/s."""
    return 2 * np.pi * value * 1e9


def mhz_to_angular(value: float) -> float:
    """Omega/2pi in MHz -> angular frequency in rad/s."""
    return 2 * np.pi * value * 1e6
