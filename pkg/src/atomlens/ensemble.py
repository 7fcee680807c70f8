"""Monte Carlo clouds: sampling, evolution through the beam and reduction.

An :class:`Ensemble` stores its particles as an (N, 7) array with columns
``t, x, y, z, vx, vy, vz``. Every particle carries its own clock: traced
particles leave the beam at different times, and :func:`drift_to_time`
brings them onto a common one before positions are compared.
"""
from __future__ import annotations

import math
import os
import subprocess
from dataclasses import dataclass, field, replace
from pathlib import Path

import numba
import numpy as np

from . import streams, thinlens
from .tracer import (COLUMNS, IntegratorParams, TerminalReason, ballistic, launch_to_plane,
                     time_to_plane, trace_final_states, write_rows_csv)
from .units import G_ACCEL, CloudSpec, GaussianBeam, PhaseSpacePoint, rms_thermal_velocity

THREADS_ENV = "ATOMLENS_THREADS"
AXES = {"x": 1, "y": 2, "z": 3}


@dataclass(frozen=True)
class Ensemble:
    state: np.ndarray
    seed: int
    spec: CloudSpec
    reasons: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        st = np.asarray(self.state, dtype=np.float64)
        if st.ndim != 2 or st.shape[1] != 7:
            raise ValueError(f"state must have shape (N, 7), got {st.shape}")
        st.setflags(write=False)
        object.__setattr__(self, "state", st)

    def __len__(self):
        return len(self.state)

    def __getitem__(self, i) -> PhaseSpacePoint:
        return PhaseSpacePoint.from_row(self.state[i])

    @property
    def particles(self) -> list[PhaseSpacePoint]:
        return [PhaseSpacePoint.from_row(r) for r in self.state]

    def column(self, name: str) -> np.ndarray:
        return self.state[:, COLUMNS.index(name)]

    @property
    def trapped_count(self) -> int:
        if self.reasons is None:
            return 0
        return int(sum(r is TerminalReason.TRAPPED for r in self.reasons))

    def with_state(self, state, reasons=None) -> "Ensemble":
        return replace(self, state=state, reasons=reasons)


@dataclass(frozen=True)
class UniformKick:
    """Cloud launched at distance ``object_distance`` upstream, centre speed ``v_z0``."""

    object_distance: float
    v_z0: float


@dataclass(frozen=True)
class GravityKick:
    """Cloud dropped from rest at ``height`` above the beam centre."""

    height: float


def sample_cloud(spec: CloudSpec, seed: int) -> Ensemble:
    """Gaussian positions (per-axis std R0) and Maxwellian velocities, all at t = 0."""
    n = normals(seed, spec.count)
    s_v = rms_thermal_velocity(spec.species, spec.temperature)
    state = np.zeros((spec.count, 7))
    state[:, 1:4] = np.asarray(spec.center_position) + spec.initial_radius * n[:, 0:3]
    state[:, 4:7] = np.asarray(spec.center_velocity) + s_v * n[:, 3:6]
    return Ensemble(state, int(seed), spec)


def normals(seed: int, count: int) -> np.ndarray:
    return streams.normals(seed, 0, count, 6)


def resolve_threads(threads: int | None = None) -> int:
    """Worker count: explicit argument, else $ATOMLENS_THREADS, else all cores."""
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        threads = int(env) if env else numba.config.NUMBA_NUM_THREADS
    return max(1, min(int(threads), numba.config.NUMBA_NUM_THREADS))


def evolve_traced(ens: Ensemble, beam: GaussianBeam, gravity: bool, params: IntegratorParams,
                  *, threads: int | None = None, launch_radii: float = 8.0) -> Ensemble:
    """Trace every particle through the beam with RK4.

    Particles first fly ballistically to ``launch_radii`` waists upstream,
    where the potential is below exp(-64)|U0|, then are integrated until
    their transit completes. Trapped particles are kept and counted.
    """
    start = launch_to_plane(ens.state, beam, gravity, launch_radii)
    old = numba.get_num_threads()
    numba.set_num_threads(resolve_threads(threads))
    try:
        final, reasons = trace_final_states(start, beam, ens.spec.species, gravity, params)
    finally:
        numba.set_num_threads(old)
    return ens.with_state(final, reasons)


def evolve_kickmap(ens: Ensemble, beam: GaussianBeam, mode: UniformKick | GravityKick) -> Ensemble:
    """Instantaneous impulse kick at the beam plane.

    All particles fly for the centre's transit time (L_o/v_z0, or
    sqrt(2H/g) in free fall) and are kicked by the impulse formula at their
    offset from the axis, with the mode's fixed centre speed. For a point
    source this is exactly v_y = v_y0 [1 - (L_o/f) exp(-v_y0^2/dv^2)]. The
    z velocity is then set by exact kinetic-energy balance.
    """
    species = ens.spec.species
    if isinstance(mode, UniformKick):
        t_b = mode.object_distance / mode.v_z0
        v_z0 = mode.v_z0
        gravity = False
    elif isinstance(mode, GravityKick):
        t_b = math.sqrt(2 * mode.height / G_ACCEL)
        v_z0 = G_ACCEL * t_b
        gravity = True
    else:
        raise TypeError(f"unknown kick mode {mode!r}")
    out = ballistic(ens.state, t_b, gravity)
    if beam.depth == 0:
        return ens.with_state(out)
    h = out[:, 2] - beam.center_y
    vy = out[:, 5]
    vy_new = vy + thinlens.impulse_delta_vy(beam, species, h, v_z0)
    vz = out[:, 6]
    vz2 = np.maximum(vz * vz + vy * vy - vy_new * vy_new, 0.0)
    out[:, 5] = vy_new
    out[:, 6] = np.copysign(np.sqrt(vz2), vz)
    return ens.with_state(out)


def free_expand(ens: Ensemble, dt: float, gravity: bool) -> Ensemble:
    if dt < 0:
        raise ValueError(f"dt must be non-negative, got {dt}")
    return ens.with_state(ballistic(ens.state, dt, gravity), ens.reasons)


def drift_to_time(ens: Ensemble, t: float, gravity: bool) -> Ensemble:
    """Free flight of every particle to the common absolute time ``t``."""
    dt = t - ens.state[:, 0]
    if np.any(dt < -1e-15 * max(abs(t), 1.0)):
        raise ValueError("drift_to_time cannot move particles backwards in time")
    return ens.with_state(ballistic(ens.state, np.maximum(dt, 0.0), gravity), ens.reasons)


def beam_arrival_time(spec: CloudSpec, beam: GaussianBeam, gravity: bool) -> float:
    """When the cloud centre reaches the beam-centre plane."""
    z, vz = spec.center_position[2], spec.center_velocity[2]
    return float(time_to_plane(z, vz, beam.center_z, gravity))


# -- reductions

def _axis_values(ens: Ensemble, axis: str, velocity: bool) -> np.ndarray:
    if axis not in AXES:
        raise ValueError(f"axis must be one of x, y, z; got {axis!r}")
    if len(ens) < 2:
        raise ValueError("need at least two particles for an RMS")
    return ens.state[:, AXES[axis] + (3 if velocity else 0)]


def _rms(v: np.ndarray) -> float:
    # numpy's pairwise sum, not BLAS: the order must not depend on threading
    # shifted by the first sample so identical values give exactly zero
    s = v - v[0]
    d = s - s.sum() / len(v)
    return math.sqrt((d * d).sum() / len(v))


def rms_velocity(ens: Ensemble, axis: str) -> float:
    """Population RMS about the ensemble mean."""
    return _rms(_axis_values(ens, axis, True))


def rms_position(ens: Ensemble, axis: str) -> float:
    return _rms(_axis_values(ens, axis, False))


def rms_standard_error(values: np.ndarray) -> float:
    """Delta-method standard error of the RMS, valid for non-Gaussian samples."""
    v = np.asarray(values, dtype=float)
    d = v - v.mean()
    m2 = np.mean(d * d)
    m4 = np.mean(d**4)
    if m2 == 0:
        return 0.0
    return math.sqrt(max(m4 - m2 * m2, 0.0) / len(v)) / (2 * math.sqrt(m2))


def rms_velocity_se(ens: Ensemble, axis: str) -> float:
    return rms_standard_error(_axis_values(ens, axis, True))


@dataclass(frozen=True)
class DensityProfile:
    axis: str
    bin_edges: np.ndarray
    counts: np.ndarray
    dropped: int = 0

    def __post_init__(self):
        if not np.all(np.diff(self.bin_edges) > 0):
            raise ValueError("bin edges must be strictly increasing")
        if len(self.counts) != len(self.bin_edges) - 1:
            raise ValueError("counts must have one entry per bin")

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def bin_width(self) -> float:
        return float(self.bin_edges[1] - self.bin_edges[0])


def density_profile(ens: Ensemble, axis: str, bins: int, range: tuple[float, float],
                    weights=None) -> DensityProfile:
    if axis not in ("y", "z"):
        raise ValueError(f"profile axis must be y or z, got {axis!r}")
    if bins < 8:
        raise ValueError(f"need at least 8 bins, got {bins}")
    lo, hi = float(range[0]), float(range[1])
    if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
        raise ValueError(f"degenerate profile range {range}")
    pos = ens.state[:, AXES[axis]]
    edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(pos, bins=edges, weights=weights)
    inside = np.count_nonzero((pos >= lo) & (pos <= hi))
    return DensityProfile(axis, edges, counts.astype(np.float64), int(len(pos) - inside))


# -- snapshot export

def write_snapshot(ens: Ensemble, path, beam: GaussianBeam | None = None, **extra) -> Path:
    """CSV ``id,x,y,z,vx,vy,vz`` plus a ``<path>.meta`` key=value sidecar."""
    path = Path(path)
    rows = np.column_stack([np.arange(len(ens)), ens.state[:, 1:7]])
    write_rows_csv(path, ("id", "x", "y", "z", "vx", "vy", "vz"),
                   ([int(r[0]), *r[1:]] for r in rows))
    meta = {"seed": ens.seed, "count": len(ens), "build": build_id()}
    for k, v in vars(ens.spec).items():
        meta[f"spec.{k}"] = v
    if beam is not None:
        for k, v in vars(beam).items():
            meta[f"beam.{k}"] = v
    meta.update(extra)
    meta_path = path.with_name(path.name + ".meta")
    with open(meta_path, "w") as fh:
        for k, v in meta.items():
            fh.write(f"{k}={v}\n")
    return meta_path


def build_id() -> str:
    from . import __version__
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                             text=True, cwd=Path(__file__).parent, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__
