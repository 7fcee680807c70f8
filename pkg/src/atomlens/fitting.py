"""Bi-Gaussian profile fits and the focused/unfocused velocity decomposition."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ensemble import DensityProfile

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))

DAMPING_START = 1e-3
DAMPING_FACTOR = 10.0
MAX_ITERATIONS = 200


@dataclass(frozen=True)
class BiGaussianFit:
    center: float
    amp_narrow: float
    amp_wide: float
    sigma_narrow: float
    sigma_wide: float
    residual_norm: float
    converged: bool
    iterations: int = 0

    @property
    def area_narrow(self) -> float:
        return self.amp_narrow * self.sigma_narrow * math.sqrt(2 * math.pi)

    @property
    def area_wide(self) -> float:
        return self.amp_wide * self.sigma_wide * math.sqrt(2 * math.pi)

    @property
    def fwhm_narrow(self) -> float:
        return FWHM_PER_SIGMA * self.sigma_narrow

    @property
    def fwhm_wide(self) -> float:
        return FWHM_PER_SIGMA * self.sigma_wide

    @property
    def dominant_sigma(self) -> float:
        return self.sigma_narrow if self.area_narrow >= self.area_wide else self.sigma_wide

    def __call__(self, x):
        return bigaussian(x, self.center, self.amp_narrow, self.amp_wide,
                          self.sigma_narrow, self.sigma_wide)


def bigaussian(x, center, a1, a2, s1, s2):
    d2 = (np.asarray(x, dtype=float) - center) ** 2
    return a1 * np.exp(-d2 / (2 * s1 * s1)) + a2 * np.exp(-d2 / (2 * s2 * s2))


def _model_and_jacobian(u, p):
    c, a1, a2, l1, l2 = p
    s1, s2 = math.exp(l1), math.exp(l2)
    d = u - c
    e1 = np.exp(-d * d / (2 * s1 * s1))
    e2 = np.exp(-d * d / (2 * s2 * s2))
    model = a1 * e1 + a2 * e2
    J = np.empty((len(u), 5))
    J[:, 0] = a1 * e1 * d / s1**2 + a2 * e2 * d / s2**2
    J[:, 1] = e1
    J[:, 2] = e2
    J[:, 3] = a1 * e1 * d * d / s1**2
    J[:, 4] = a2 * e2 * d * d / s2**2
    return model, J


def fit_bigaussian(profile: DensityProfile, *, max_iterations: int = MAX_ITERATIONS,
                   tol: float = 1e-12) -> BiGaussianFit:
    """Least-squares fit of two Gaussians sharing a centre.

    Levenberg-Marquardt: Gauss-Newton steps on (JtJ + lambda diag JtJ),
    lambda starting at 1e-3, x10 after a rejected step and /10 after an
    accepted one. Widths are fitted as logarithms and amplitudes are
    projected onto >= 0. Start: centroid, RMS width and a quarter of it,
    amplitudes split evenly.
    """
    y = np.asarray(profile.counts, dtype=float)
    x = profile.centers
    total = y.sum()
    if not total > 0:
        raise ValueError("cannot fit an empty profile")
    if len(y) < 8:
        raise ValueError("need at least 8 bins")
    # work in units of the profile RMS and peak height
    x0 = float((x * y).sum() / total)
    rms = math.sqrt(float((y * (x - x0) ** 2).sum() / total))
    if rms == 0:
        rms = profile.bin_width
    scale_y = float(y.max())
    u = (x - x0) / rms
    v = y / scale_y

    p = np.array([0.0, 0.5, 0.5, math.log(0.25), 0.0])
    model, J = _model_and_jacobian(u, p)
    r = v - model
    cost = float(r @ r)
    lam = DAMPING_START
    converged = False
    it = 0
    for it in range(1, max_iterations + 1):
        A = J.T @ J
        g = J.T @ r
        diag = np.diag(A).copy()
        diag[diag == 0] = 1e-12
        accepted = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), g)
            except np.linalg.LinAlgError:
                lam *= DAMPING_FACTOR
                continue
            trial = p + step
            trial[1:3] = np.maximum(trial[1:3], 0.0)
            trial[3:5] = np.clip(trial[3:5], -30.0, 30.0)
            m_t, J_t = _model_and_jacobian(u, trial)
            r_t = v - m_t
            c_t = float(r_t @ r_t)
            if c_t <= cost:
                accepted = True
                break
            lam *= DAMPING_FACTOR
        if not accepted:
            converged = True  # no downhill step at any damping: stationary point
            break
        gain = cost - c_t
        p, J, r = trial, J_t, r_t
        lam = max(lam / DAMPING_FACTOR, 1e-15)
        small_step = np.max(np.abs(step)) < 1e-10
        if gain <= tol * max(cost + c_t, 1e-300) or small_step:
            cost = c_t
            converged = True
            break
        cost = c_t

    c, a1, a2, l1, l2 = p
    s1, s2 = math.exp(l1) * rms, math.exp(l2) * rms
    a1, a2 = a1 * scale_y, a2 * scale_y
    if s1 > s2:
        s1, s2, a1, a2 = s2, s1, a2, a1
    resid = math.sqrt(cost) / math.sqrt(float(v @ v))
    return BiGaussianFit(float(x0 + c * rms), float(a1), float(a2), float(s1), float(s2),
                         float(resid), converged, it)


@dataclass(frozen=True)
class VelocityDecomposition:
    v_f_rms: float
    v_unf_rms: float
    n_f: float
    n_unf: float
    v_total_rms: float


def decompose_velocities(fit: BiGaussianFit, t_o: float, t_i: float, t_f: float, N: float,
                         *, width: str = "rms") -> VelocityDecomposition:
    """Split the cloud into focused (narrow) and unfocused (wide) parts.

    ``t_f`` is the flight time after the beam, ``t_o`` before it and ``t_i``
    the imaging time. ``width`` picks the convention for the component
    widths: ``"rms"`` (Gaussian sigma) or ``"fwhm"``.
    """
    if t_f == t_i:
        raise ZeroDivisionError("t_f = t_i: the focused width is source limited at the image plane")
    if not t_f + t_o > 0:
        raise ValueError("t_f + t_o must be positive")
    if width == "rms":
        r_f, r_unf = fit.sigma_narrow, fit.sigma_wide
    elif width == "fwhm":
        r_f, r_unf = fit.fwhm_narrow, fit.fwhm_wide
    else:
        raise ValueError(f"width must be 'rms' or 'fwhm', got {width!r}")
    area = fit.area_narrow + fit.area_wide
    n_f = N * fit.area_narrow / area
    n_unf = N * fit.area_wide / area
    v_f = r_f / abs(t_f - t_i)
    v_unf = r_unf / (t_f + t_o)
    return VelocityDecomposition(v_f, v_unf, n_f, n_unf, total_rms(n_f, v_f, n_unf, v_unf))


def total_rms(n_f, v_f, n_unf, v_unf) -> float:
    n = n_f + n_unf
    return math.sqrt((n_f * v_f**2 + n_unf * v_unf**2) / n)


def fwhm_vs_time(t_o: float, t_i: float, v0_rms: float, t_f):
    """RMS width (t_o/t_i) v0 |t_f - t_i| of the imaged cloud; multiply by FWHM_PER_SIGMA for FWHM."""
    if not t_i > 0:
        raise ValueError("t_i must be positive")
    out = t_o / t_i * v0_rms * np.abs(np.asarray(t_f, dtype=float) - t_i)
    return out if out.ndim else float(out)
