"""Gaussian dipole potential U0*exp(-r^2/w^2) in the (y, z) plane and its force.

Both functions broadcast over numpy arrays. No cutoff is applied; far from
the beam the exponential simply underflows to zero.
"""
from __future__ import annotations

import numpy as np

from .units import GaussianBeam


def potential_energy(beam: GaussianBeam, y, z):
    dy = np.subtract(y, beam.center_y)
    dz = np.subtract(z, beam.center_z)
    return beam.depth * np.exp(-(dy * dy + dz * dz) / beam.waist**2)


def force(beam: GaussianBeam, y, z):
    """Return ``(F_y, F_z)`` = -grad U. The x component is identically zero."""
    dy = np.subtract(y, beam.center_y)
    dz = np.subtract(z, beam.center_z)
    w2 = beam.waist**2
    pref = 2.0 * beam.depth / w2 * np.exp(-(dy * dy + dz * dz) / w2)
    return pref * dy, pref * dz
