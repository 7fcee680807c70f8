"""Fixed-step RK4 tracing of single atoms through the beam.

Coordinates: the beam runs along x; +z is the propagation direction of the
cloud and, when gravity is on, the direction of the fall. The x motion is
free flight and is evaluated in closed form, the (y, z) motion is
integrated numerically.

The same compiled kernel (:func:`_advance`) drives both :func:`trace` and the
ensemble path :func:`trace_final_states`, so a one-particle ensemble
reproduces :func:`trace` bit for bit.
"""
from __future__ import annotations

import csv
import enum
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

# numba probes TBB on first parallel launch; an old TBB only means another layer is used
warnings.filterwarnings("ignore", message="The TBB threading layer requires")

from .potential import potential_energy
from .units import G_ACCEL, AtomSpecies, GaussianBeam, PhaseSpacePoint

COLUMNS = ("t", "x", "y", "z", "vx", "vy", "vz")
DEFAULT_CUTOFF_RADII = 6.0
DEFAULT_LAUNCH_RADII = 8.0
_CHUNK = 4096


class TerminalReason(str, enum.Enum):
    TRANSIT_COMPLETE = "transit_complete"
    MAX_TIME = "max_time"
    TRAPPED = "trapped"


@dataclass(frozen=True)
class IntegratorParams:
    dt: float
    max_time: float
    cutoff_radii: float = DEFAULT_CUTOFF_RADII

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.max_time > 0:
            raise ValueError(f"max_time must be positive, got {self.max_time}")
        if not self.cutoff_radii >= 3:
            raise ValueError(f"cutoff_radii must be >= 3, got {self.cutoff_radii}")

    @property
    def max_steps(self) -> int:
        return int(math.ceil(self.max_time / self.dt - 1e-9))


def characteristic_speed(beam: GaussianBeam, species: AtomSpecies, v_z0: float) -> float:
    return max(abs(v_z0), math.sqrt(2 * abs(beam.depth) / species.mass))


def default_params(beam: GaussianBeam, species: AtomSpecies, v_z0: float, *,
                   steps_per_waist: float = 200.0, cutoff_radii: float = DEFAULT_CUTOFF_RADII,
                   max_transits: float = 200.0) -> IntegratorParams:
    """dt = waist / (200 * max(|v_z0|, sqrt(2|U0|/m))).

    ``max_time`` allows ``max_transits`` waist crossings at the characteristic
    speed, which is far longer than any unbound transit.
    """
    speed = characteristic_speed(beam, species, v_z0)
    if speed == 0:
        raise ValueError("cannot derive a time step for a motionless atom in a zero-depth beam")
    crossing = beam.waist / speed
    return IntegratorParams(dt=crossing / steps_per_waist, max_time=max_transits * crossing,
                            cutoff_radii=cutoff_radii)


@dataclass
class Trajectory:
    """Time-sampled path. ``data`` has columns ``t, x, y, z, vx, vy, vz``."""

    data: np.ndarray
    terminal_reason: TerminalReason
    dt: float
    beam_center: tuple[float, float] = (0.0, 0.0)
    gravity: bool = False
    extended: int = field(default=0)  # ballistic rows appended after the integration

    def __len__(self):
        return len(self.data)

    @property
    def points(self) -> list[PhaseSpacePoint]:
        return [PhaseSpacePoint.from_row(r) for r in self.data]

    @property
    def final(self) -> PhaseSpacePoint:
        return PhaseSpacePoint.from_row(self.data[-1])

    def column(self, name: str) -> np.ndarray:
        return self.data[:, COLUMNS.index(name)]

    def energy(self, beam: GaussianBeam, species: AtomSpecies) -> np.ndarray:
        """Mechanical energy per sample; with gravity the -m*g*z term is included."""
        d = self.data
        e = 0.5 * species.mass * (d[:, 4]**2 + d[:, 5]**2 + d[:, 6]**2)
        e = e + potential_energy(beam, d[:, 2], d[:, 3])
        if self.gravity:
            e = e - species.mass * G_ACCEL * d[:, 3]
        return e

    def to_csv(self, path) -> None:
        write_rows_csv(path, COLUMNS, self.data)


def write_rows_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


# -- compiled kernel

@njit(cache=True, inline="always")
def _accel(y, z, yc, zc, a0, inv_w2, g):
    dy = y - yc
    dz = z - zc
    pref = 2.0 * a0 * inv_w2 * math.exp(-(dy * dy + dz * dz) * inv_w2)
    return pref * dy, pref * dz + g


@njit(cache=True, inline="always")
def _receding_past(s, yc, zc, r_cut2):
    dy = s[0] - yc
    dz = s[1] - zc
    return dy * dy + dz * dz > r_cut2 and dy * s[2] + dz * s[3] > 0.0


@njit(cache=True)
def _advance(s, nsteps, dt, yc, zc, a0, inv_w2, g, r_cut2, out):
    """Take up to ``nsteps`` RK4 steps of ``s = [y, z, vy, vz]`` in place.

    Stops early once the atom is past the cutoff radius and receding. If
    ``out`` has rows, the state after step k is stored in ``out[k]``.
    Returns ``(steps_taken, transit_complete)``.
    """
    record = out.shape[0] > 0
    h2 = 0.5 * dt
    h6 = dt / 6.0
    for k in range(nsteps):
        if _receding_past(s, yc, zc, r_cut2):
            return k, True
        y = s[0]
        z = s[1]
        vy = s[2]
        vz = s[3]
        a1y, a1z = _accel(y, z, yc, zc, a0, inv_w2, g)
        a2y, a2z = _accel(y + h2 * vy, z + h2 * vz, yc, zc, a0, inv_w2, g)
        v2y = vy + h2 * a1y
        v2z = vz + h2 * a1z
        a3y, a3z = _accel(y + h2 * v2y, z + h2 * v2z, yc, zc, a0, inv_w2, g)
        v3y = vy + h2 * a2y
        v3z = vz + h2 * a2z
        a4y, a4z = _accel(y + dt * v3y, z + dt * v3z, yc, zc, a0, inv_w2, g)
        v4y = vy + dt * a3y
        v4z = vz + dt * a3z
        s[0] = y + h6 * (vy + 2.0 * v2y + 2.0 * v3y + v4y)
        s[1] = z + h6 * (vz + 2.0 * v2z + 2.0 * v3z + v4z)
        s[2] = vy + h6 * (a1y + 2.0 * a2y + 2.0 * a3y + a4y)
        s[3] = vz + h6 * (a1z + 2.0 * a2z + 2.0 * a3z + a4z)
        if record:
            out[k, 0] = s[0]
            out[k, 1] = s[1]
            out[k, 2] = s[2]
            out[k, 3] = s[3]
    return nsteps, _receding_past(s, yc, zc, r_cut2)


@njit(cache=True, parallel=True)
def _advance_many(S, nsteps, dt, yc, zc, a0, inv_w2, g, r_cut2):
    n = S.shape[0]
    taken = np.zeros(n, dtype=np.int64)
    done = np.zeros(n, dtype=np.bool_)
    for i in prange(n):
        buf = np.empty((0, 4))
        row = S[i]
        k, d = _advance(row, nsteps, dt, yc, zc, a0, inv_w2, g, r_cut2, buf)
        taken[i] = k
        done[i] = d
    return taken, done


def _kernel_args(beam: GaussianBeam, species: AtomSpecies, gravity: bool, params: IntegratorParams):
    return (params.dt, beam.center_y, beam.center_z, beam.depth / species.mass,
            1.0 / beam.waist**2, G_ACCEL if gravity else 0.0,
            (params.cutoff_radii * beam.waist)**2)


def _classify(y, z, vy, vz, beam, species, gravity, complete):
    """Terminal reason for states that did not complete their transit."""
    if complete:
        return TerminalReason.TRANSIT_COMPLETE
    if not gravity:
        e = 0.5 * (vy * vy + vz * vz) + potential_energy(beam, y, z) / species.mass
        if e < 0:
            return TerminalReason.TRAPPED
    return TerminalReason.MAX_TIME


def trace(start: PhaseSpacePoint, beam: GaussianBeam, species: AtomSpecies,
          gravity: bool, params: IntegratorParams) -> Trajectory:
    """Integrate m r'' = -grad U (+ m g z_hat) from ``start``.

    Sampling starts at ``start`` and has spacing ``params.dt``. Tracing ends
    once the atom is ``params.cutoff_radii`` waists from the beam centre and
    moving away, or at ``params.max_time``.
    """
    args = _kernel_args(beam, species, gravity, params)
    s = np.array([start.y, start.z, start.vy, start.vz], dtype=np.float64)
    pieces = [s[None, :].copy()]
    total = 0
    nmax = params.max_steps
    complete = False
    while total < nmax:
        chunk = min(_CHUNK, nmax - total)
        buf = np.empty((chunk, 4))
        taken, complete = _advance(s, chunk, *args, buf)
        pieces.append(buf[:taken])
        total += taken
        if complete:
            break
    yzv = np.concatenate(pieces)
    n = len(yzv)
    t = start.t + np.arange(n) * params.dt
    data = np.empty((n, 7))
    data[:, 0] = t
    data[:, 1] = start.x + start.vx * (t - start.t)
    data[:, 2:4] = yzv[:, 0:2]
    data[:, 4] = start.vx
    data[:, 5:7] = yzv[:, 2:4]
    reason = _classify(s[0], s[1], s[2], s[3], beam, species, gravity, complete)
    return Trajectory(data, reason, params.dt, (beam.center_y, beam.center_z), gravity)


def trace_final_states(states: np.ndarray, beam: GaussianBeam, species: AtomSpecies,
                       gravity: bool, params: IntegratorParams):
    """Trace many atoms to the end of their transit, returning final states only.

    ``states`` has shape (N, 7) with columns ``t, x, y, z, vx, vy, vz``.
    Returns ``(final_states, reasons)`` where ``reasons`` is an object array
    of :class:`TerminalReason`. Row i of the output belongs to row i of the
    input, whatever the thread count.
    """
    states = np.asarray(states, dtype=np.float64)
    args = _kernel_args(beam, species, gravity, params)
    S = np.ascontiguousarray(states[:, [2, 3, 5, 6]])
    taken, done = _advance_many(S, params.max_steps, *args)
    out = states.copy()
    elapsed = taken * params.dt
    out[:, 0] = states[:, 0] + elapsed
    out[:, 1] = states[:, 1] + states[:, 4] * elapsed
    out[:, 2] = S[:, 0]
    out[:, 3] = S[:, 1]
    out[:, 5] = S[:, 2]
    out[:, 6] = S[:, 3]
    reasons = np.empty(len(out), dtype=object)
    for i in range(len(out)):
        reasons[i] = (TerminalReason.TRANSIT_COMPLETE if done[i] else
                      _classify(S[i, 0], S[i, 1], S[i, 2], S[i, 3], beam, species, gravity, False))
    return out, reasons


# -- ballistic helpers (valid where the beam force is negligible)

def ballistic(states: np.ndarray, dt, gravity: bool) -> np.ndarray:
    """Free flight of (N, 7) states by ``dt`` (scalar or per-row array)."""
    states = np.asarray(states, dtype=np.float64)
    dt = np.broadcast_to(np.asarray(dt, dtype=np.float64), states.shape[:1])
    out = states.copy()
    out[:, 0] += dt
    out[:, 1] += states[:, 4] * dt
    out[:, 2] += states[:, 5] * dt
    out[:, 3] += states[:, 6] * dt
    if gravity:
        out[:, 3] += 0.5 * G_ACCEL * dt * dt
        out[:, 6] += G_ACCEL * dt
    return out


def time_to_plane(z, vz, z_plane, gravity: bool):
    """Flight time until z reaches ``z_plane`` from below; ``inf`` if it never does.

    Zero for atoms already at or past the plane.
    """
    z = np.asarray(z, dtype=np.float64)
    vz = np.asarray(vz, dtype=np.float64)
    d = np.maximum(z_plane - z, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        if gravity:
            root = np.sqrt(vz * vz + 2.0 * G_ACCEL * d)
            t = 2.0 * d / (vz + root)
            t = np.where(d == 0, 0.0, t)
        else:
            t = np.where(d == 0, 0.0, np.where(vz > 0, d / vz, np.inf))
    return t


def launch_to_plane(states: np.ndarray, beam: GaussianBeam, gravity: bool,
                    launch_radii: float = DEFAULT_LAUNCH_RADII) -> np.ndarray:
    """Move approaching atoms ballistically to ``launch_radii`` waists upstream of the beam.

    Atoms already closer than that, and atoms that never get there, are
    returned unchanged.
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    plane = beam.center_z - launch_radii * beam.waist
    t = time_to_plane(states[:, 3], states[:, 6], plane, gravity)
    t = np.where(np.isfinite(t), t, 0.0)
    return ballistic(states, t, gravity)


def extend_ballistic(traj: Trajectory, n_steps: int) -> Trajectory:
    """Append ``n_steps`` free-flight samples at the trajectory's own spacing."""
    last = traj.data[-1]
    k = np.arange(1, n_steps + 1) * traj.dt
    rows = ballistic(np.repeat(last[None, :], n_steps, axis=0), k, traj.gravity)
    rows[:, 0] = last[0] + k
    data = np.concatenate([traj.data, rows])
    return Trajectory(data, traj.terminal_reason, traj.dt, traj.beam_center, traj.gravity,
                      traj.extended + n_steps)


def transverse_crossing(traj: Trajectory, axis_y: float):
    """First crossing of ``y = axis_y`` after the beam centre, or ``None``.

    Returns a dict ``{"z_cross", "t_cross"}`` from linear interpolation between
    the two bracketing samples. Touching the axis without a sign change does
    not count.
    """
    d = traj.data[:, 2] - axis_y
    z = traj.data[:, 3]
    after = np.nonzero(z >= traj.beam_center[1])[0]
    if len(after) < 2:
        return None
    i0 = after[0]
    dd = d[i0:]
    prev = dd[:-1]
    nxt = dd[1:]
    hits = np.nonzero(((prev > 0) & (nxt <= 0)) | ((prev < 0) & (nxt >= 0)))[0]
    if len(hits) == 0:
        return None
    j = i0 + hits[0]
    frac = d[j] / (d[j] - d[j + 1])
    t = traj.data[:, 0]
    return {"z_cross": z[j] + frac * (z[j + 1] - z[j]),
            "t_cross": t[j] + frac * (t[j + 1] - t[j])}
