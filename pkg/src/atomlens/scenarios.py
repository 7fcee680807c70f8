"""Config-driven experiments: sweeps, Monte Carlo runs and result tables.

Each runner returns a :class:`ScenarioResult` holding one main table (plus
optional side tables), derived quantities and a list of built-in checks.
Analytic and Monte Carlo values sit side by side in every row where both
exist. The same config and seed always give the same numbers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from scipy import optimize

from . import collimation as col
from . import ensemble as ens_mod
from . import fitting, thinlens, tracer
from .config import ScenarioConfig
from .ensemble import GravityKick, UniformKick
from .units import G_ACCEL, K_B, CloudSpec, PhaseSpacePoint, rms_thermal_velocity


class ScenarioFailure(RuntimeError):
    """A numerical failure that stops the whole run."""


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


@dataclass
class Table:
    columns: tuple[str, ...]
    rows: list[list] = field(default_factory=list)

    def add(self, **values):
        unknown = set(values) - set(self.columns)
        if unknown:
            raise KeyError(f"unknown columns {sorted(unknown)}")
        self.rows.append([values.get(c) for c in self.columns])

    def column(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([np.nan if r[i] is None or r[i] == "" else r[i] for r in self.rows],
                        dtype=object if name == "flag" else float)

    def __len__(self):
        return len(self.rows)


@dataclass
class ScenarioResult:
    scenario: str
    config: ScenarioConfig
    table: Table
    extra_tables: dict[str, Table] = field(default_factory=dict)
    derived: dict[str, float] = field(default_factory=dict)
    checks: list[Check] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def summary(self) -> str:
        cfg = self.config
        out = [f"scenario: {self.scenario}",
               f"source: {cfg.source or '<inline>'}",
               f"seed: {cfg.seed}  particles: {cfg.particles}  rows: {len(self.table)}"]
        for k, v in self.derived.items():
            out.append(f"{k}: {_fmt_value(v)}")
        flagged = sum(1 for r in self.table.rows if r[-1])
        if flagged:
            out.append(f"flagged rows: {flagged}")
        out.extend(f"note: {n}" for n in self.notes)
        out.extend(c.line() for c in self.checks)
        return "\n".join(out) + "\n"

    def write(self, path) -> list[Path]:
        """Write the main CSV, side tables ``<stem>.<name>.csv`` and ``<stem>.summary.txt``."""
        path = Path(path)
        stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
        written = [path]
        _write_table(path, self.table, f"# atomlens {self.scenario} generated {stamp}")
        for name, t in self.extra_tables.items():
            p = path.with_name(f"{path.stem}.{name}.csv")
            _write_table(p, t, f"# atomlens {self.scenario}/{name} generated {stamp}")
            written.append(p)
        s = path.with_name(f"{path.stem}.summary.txt")
        s.write_text(self.summary())
        written.append(s)
        return written


def _fmt_value(v):
    if isinstance(v, float):
        return format(v, ".6g")
    return str(v)


def _write_table(path: Path, table: Table, comment: str):
    rows = ([("" if v is None else v) for v in r] for r in table.rows)
    with open(path, "w", newline="") as fh:
        fh.write(comment + "\n")
        _append_rows(fh, table.columns, rows)


def _append_rows(fh, header, rows):
    fh.write(",".join(header) + "\n")
    for r in rows:
        fh.write(",".join(_cell(v) for v in r) + "\n")


def _cell(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


# -- helpers

def _params(cfg: ScenarioConfig, beam, v_z0) -> tracer.IntegratorParams:
    o = cfg.integrator
    return tracer.default_params(beam, cfg.species, v_z0, steps_per_waist=o.steps_per_waist,
                                 cutoff_radii=o.cutoff_radii, max_transits=o.max_transits)


def _traced(cfg, ens, beam, gravity, v_z0):
    return ens_mod.evolve_traced(ens, beam, gravity, _params(cfg, beam, v_z0),
                                 launch_radii=cfg.integrator.launch_radii)


def _pick(n: int, k: int) -> list[int]:
    """k indices spread evenly over range(n), ends included."""
    if k <= 0:
        return []
    if k >= n:
        return list(range(n))
    return sorted({int(round(i)) for i in np.linspace(0, n - 1, k)})


def _within(mc, mc_se, ref, rel, ref_se=0.0) -> tuple[bool, float, float]:
    """|mc - ref| <= max(rel * ref, 3 combined SE)."""
    bound = max(rel * abs(ref), 3 * math.hypot(mc_se, ref_se))
    return abs(mc - ref) <= bound, abs(mc / ref - 1), bound


def _interior_minima(y: np.ndarray) -> int:
    y = np.asarray(y)
    inner = (y[1:-1] < y[:-2]) & (y[1:-1] <= y[2:])
    return int(np.count_nonzero(inner))


def _fit(profile) -> tuple[fitting.BiGaussianFit | None, str]:
    try:
        fit = fitting.fit_bigaussian(profile)
    except (ValueError, np.linalg.LinAlgError) as exc:
        return None, f"fit_failed:{exc}"
    return fit, "" if fit.converged else "fit_not_converged"


def _profile(e, span, bins, center=0.0):
    r = ens_mod.rms_position(e, "y")
    if not r > 0:
        r = 1e-9
    return ens_mod.density_profile(e, "y", bins, (center - span * r, center + span * r))


def _vz_rms_common_time(after, before) -> tuple[float, float]:
    """vz_rms of the lensed ensemble and of the free-falling original at one common time.

    Traced particles finish at different times and gravity keeps changing
    v_z, so both clouds are flown to the latest finishing time first.
    """
    t = float(np.max(after.state[:, 0]))
    a = ens_mod.drift_to_time(after, t, True)
    b = ens_mod.drift_to_time(before, t, True)
    return ens_mod.rms_velocity(a, "z"), ens_mod.rms_velocity(b, "z")


def _join_flags(*flags) -> str:
    return ";".join(f for f in flags if f)


# -- uniform motion

UNIFORM_COLUMNS = ("lo_over_f", "object_distance_m", "alpha", "ratio_analytic", "vy_rms_analytic",
                   "vy_rms_kickmap", "vy_rms_kickmap_se", "vy_rms_traced", "vy_rms_traced_se",
                   "vz_rms_initial", "vz_rms_analytic", "vz_rms_kickmap", "vz_rms_traced",
                   "trapped", "flag")


def run_uniform_collimation_scan(cfg: ScenarioConfig) -> ScenarioResult:
    sp, beam, v, T = cfg.species, cfg.beam(), cfg.velocity_z, cfg.temperature
    f = thinlens.focal_length_for_speed(sp, beam, v)
    L_values = _object_distances(cfg, f)
    traced_rows = set(_pick(len(L_values), cfg.option("traced_points")))
    table = Table(UNIFORM_COLUMNS)
    v0 = rms_thermal_velocity(sp, T)
    traced_pairs = []
    vz_changes = []
    for i, L in enumerate(L_values):
        spec = CloudSpec(T, cfg.radius, (0.0, 0.0, -L), (0.0, 0.0, v), cfg.particles, sp)
        ens = ens_mod.sample_cloud(spec, cfg.seed)
        pred = col.transverse_rms_uniform(col.CollimationInput(sp, beam, T, col.UniformMotion(L, v)))
        km = ens_mod.evolve_kickmap(ens, beam, UniformKick(L, v))
        vz_init = ens_mod.rms_velocity(ens, "z")
        row = dict(lo_over_f=L / f, object_distance_m=L, alpha=pred.alpha_or_beta,
                   ratio_analytic=pred.ratio, vy_rms_analytic=pred.vy_rms,
                   vy_rms_kickmap=ens_mod.rms_velocity(km, "y"),
                   vy_rms_kickmap_se=ens_mod.rms_velocity_se(km, "y"),
                   vz_rms_initial=vz_init, vz_rms_analytic=pred.vz_rms,
                   vz_rms_kickmap=ens_mod.rms_velocity(km, "z"), flag="")
        vz_changes.append(("kickmap", L / f, row["vz_rms_kickmap"] / vz_init - 1))
        if i in traced_rows:
            tr = _traced(cfg, ens, beam, False, v)
            row.update(vy_rms_traced=ens_mod.rms_velocity(tr, "y"),
                       vy_rms_traced_se=ens_mod.rms_velocity_se(tr, "y"),
                       vz_rms_traced=ens_mod.rms_velocity(tr, "z"), trapped=tr.trapped_count)
            if tr.trapped_count:
                row["flag"] = "trapped_particles"
            vz_changes.append(("traced", L / f, row["vz_rms_traced"] / vz_init - 1))
            traced_pairs.append(row)
        table.add(**row)

    res = ScenarioResult(cfg.scenario, cfg, table)
    res.derived.update(focal_length_m=f, v0_rms=v0, kinetic_over_depth=0.5 * sp.mass * v * v / abs(beam.depth))
    _minimum_checks(res, cfg, table, lambda x: col.rms_ratio_squared(
        2 * K_B * T * (x * f) ** 2 / (sp.mass * v * v) / beam.waist**2, x) ** 0.5, v0)
    _agreement_checks(res, cfg, traced_pairs, "lo_over_f")
    tol = cfg.option("vertical_tolerance")
    worst = max(vz_changes, key=lambda c: abs(c[2]))
    res.checks.append(Check("vertical invariance", abs(worst[2]) < tol,
                            f"max |vz_rms change| = {abs(worst[2]):.3g} ({worst[0]}, L_o/f = {worst[1]:.3g}); "
                            f"bound {tol:g}"))
    res.derived["max_vz_change"] = abs(worst[2])
    return res


def _object_distances(cfg, f) -> np.ndarray:
    s = cfg.sweep
    vals = s.si_values
    return vals * f if s.variable == "lo_over_f" else vals


def _minimum_checks(res, cfg, table, ratio_of_x, v0):
    x = table.column("lo_over_f")
    ra = table.column("ratio_analytic")
    rk = table.column("vy_rms_kickmap") / v0
    # continuous minimum of the closed form over the swept range
    lo, hi = float(np.min(x)), float(np.max(x))
    if hi > lo:
        opt = optimize.minimize_scalar(lambda lx: ratio_of_x(math.exp(lx)),
                                       bounds=(math.log(lo), math.log(hi)), method="bounded",
                                       options={"xatol": 1e-10})
        amin, xmin = float(opt.fun), math.exp(opt.x)
    else:
        amin, xmin = float(ra[0]), lo
    kmin = float(np.min(rk))
    res.derived.update(min_ratio_analytic=amin, argmin_lo_over_f=xmin, min_ratio_kickmap=kmin,
                       argmin_lo_over_f_kickmap=float(x[int(np.argmin(rk))]))
    band = cfg.option("expect_min")
    if band:
        a, b = band
        res.checks.append(Check("minimum ratio (closed form)", a <= amin <= b,
                                f"{amin:.4f} at L_o/f = {xmin:.3f}; band [{a:g}, {b:g}]"))
        res.checks.append(Check("minimum ratio (kick map)", a <= kmin <= b,
                                f"{kmin:.4f}; band [{a:g}, {b:g}]"))


def _agreement_checks(res, cfg, rows, xname):
    if not rows:
        return
    rel = cfg.option("agreement")
    worst_a = worst_k = 0.0
    ok_a = ok_k = True
    for r in rows:
        a_ok, a_dev, _ = _within(r["vy_rms_traced"], r["vy_rms_traced_se"], r["vy_rms_analytic"], rel)
        k_ok, k_dev, _ = _within(r["vy_rms_traced"], r["vy_rms_traced_se"], r["vy_rms_kickmap"], rel,
                                 r["vy_rms_kickmap_se"])
        ok_a &= a_ok
        ok_k &= k_ok
        worst_a = max(worst_a, a_dev)
        worst_k = max(worst_k, k_dev)
    pts = ", ".join(f"{r[xname]:.3g}" for r in rows)
    res.checks.append(Check("traced vs closed form", ok_a,
                            f"max deviation {worst_a:.2%} at {len(rows)} points ({xname} = {pts}); "
                            f"bound max({rel:.0%}, 3 SE)"))
    res.checks.append(Check("traced vs kick map", ok_k,
                            f"max deviation {worst_k:.2%}; bound max({rel:.0%}, 3 combined SE)"))
    res.derived["max_traced_deviation"] = worst_a


# -- gravity Rabi scan

RABI_COLUMNS = ("waist_m", "rabi_mhz", "depth_j", "lo_over_f", "beta", "ratio_analytic",
                "vy_rms_analytic", "vy_rms_kickmap", "vy_rms_kickmap_se", "vy_rms_traced",
                "vy_rms_traced_se", "vz_rms_initial", "vz_rms_kickmap", "vz_rms_traced",
                "trapped", "flag")


def run_gravity_rabi_scan(cfg: ScenarioConfig) -> ScenarioResult:
    sp, T, H = cfg.species, cfg.temperature, cfg.height
    rabis = cfg.sweep.si_values
    rabi_mhz = np.asarray(cfg.sweep.values)
    traced_waists = cfg.option("traced_waists_um")
    traced_waists = {round(w * 1e-6, 12) for w in traced_waists} if traced_waists else {max(cfg.waists)}
    traced_rows = set(_pick(len(rabis), cfg.option("traced_points")))
    spec = CloudSpec(T, cfg.radius, (0.0, 0.0, cfg.center_z - H), (0.0, 0.0, 0.0), cfg.particles, sp)
    ens = ens_mod.sample_cloud(spec, cfg.seed)
    vz_init = ens_mod.rms_velocity(ens, "z")
    v0 = rms_thermal_velocity(sp, T)
    v_z0 = math.sqrt(2 * G_ACCEL * H)
    table = Table(RABI_COLUMNS)
    traced_pairs, vz_changes, curves = [], [], {}
    for w in cfg.waists:
        ratios_a, ratios_k = [], []
        for i, (om, om_mhz) in enumerate(zip(rabis, rabi_mhz)):
            beam = cfg.beam(waist=w, rabi=om)
            pred = col.transverse_rms_gravity(col.CollimationInput(sp, beam, T, col.FreeFall(H)))
            km = ens_mod.evolve_kickmap(ens, beam, GravityKick(H))
            row = dict(waist_m=w, rabi_mhz=float(om_mhz), depth_j=beam.depth,
                       lo_over_f=pred.lo_over_f, beta=pred.alpha_or_beta,
                       ratio_analytic=pred.ratio, vy_rms_analytic=pred.vy_rms,
                       vy_rms_kickmap=ens_mod.rms_velocity(km, "y"),
                       vy_rms_kickmap_se=ens_mod.rms_velocity_se(km, "y"),
                       vz_rms_initial=vz_init, vz_rms_kickmap=ens_mod.rms_velocity(km, "z"), flag="")
            if round(w, 12) in traced_waists and i in traced_rows and beam.depth != 0:
                tr = _traced(cfg, ens, beam, True, v_z0)
                vz_tr, vz_ref = _vz_rms_common_time(tr, ens)
                row.update(vy_rms_traced=ens_mod.rms_velocity(tr, "y"),
                           vy_rms_traced_se=ens_mod.rms_velocity_se(tr, "y"),
                           vz_rms_traced=vz_tr, trapped=tr.trapped_count)
                vz_changes.append(vz_tr / vz_ref - 1)
                traced_pairs.append(row)
            ratios_a.append(pred.ratio)
            ratios_k.append(row["vy_rms_kickmap"] / v0)
            table.add(**row)
        curves[w] = (np.array(ratios_a), np.array(ratios_k))

    res = ScenarioResult(cfg.scenario, cfg, table)
    res.derived.update(drop_height_m=H, t_o_s=math.sqrt(2 * H / G_ACCEL), v0_rms=v0)
    mins_a, mins_k = [], []
    for w, (ra, rk) in curves.items():
        j = int(np.argmin(ra))
        mins_a.append(float(ra[j]))
        mins_k.append(float(np.min(rk)))
        res.derived[f"min_ratio_analytic_w{w * 1e6:g}um"] = float(ra[j])
        res.derived[f"argmin_rabi_mhz_w{w * 1e6:g}um"] = float(rabi_mhz[j])
        res.derived[f"min_ratio_kickmap_w{w * 1e6:g}um"] = float(np.min(rk))
        n_min = _interior_minima(ra)
        interior = 0 < j < len(ra) - 1
        res.checks.append(Check(f"single interior minimum (waist {w * 1e6:g} um)",
                                n_min == 1 and interior,
                                f"{n_min} local minima; argmin at {rabi_mhz[j]:g} MHz"))
    order = np.argsort(cfg.waists)
    sa = [mins_a[k] for k in order]
    sk = [mins_k[k] for k in order]
    res.checks.append(Check("minima decrease with waist (closed form)",
                            all(b < a for a, b in zip(sa, sa[1:])),
                            ", ".join(f"{m:.4f}" for m in sa)))
    res.checks.append(Check("minima decrease with waist (kick map)",
                            all(b < a for a, b in zip(sk, sk[1:])),
                            ", ".join(f"{m:.4f}" for m in sk)))
    _agreement_checks(res, cfg, traced_pairs, "rabi_mhz")
    if vz_changes:
        tol = cfg.option("vertical_tolerance")
        worst = max(abs(c) for c in vz_changes)
        res.checks.append(Check("vertical invariance", worst < tol,
                                f"max |vz_rms change| = {worst:.3g}; bound {tol:g}"))
    return res


# -- focusing snapshot (absorption-image style profiles)

SNAPSHOT_COLUMNS = ("temperature_k", "v0_rms", "t_i_analytic", "rms_ideal", "fwhm_ideal",
                    "fwhm_narrow_kickmap", "fwhm_wide_kickmap", "narrow_fraction_kickmap",
                    "fwhm_narrow_traced", "fwhm_wide_traced", "narrow_fraction_traced",
                    "v_f_traced", "v_unf_traced", "v_tot_traced", "vy_rms_traced",
                    "vy_rms_traced_se", "fwhm_reference", "trapped", "flag")
PROFILE_COLUMNS = ("temperature_k", "y_m", "counts_reference", "counts_kickmap", "counts_traced",
                   "fit_kickmap", "fit_traced")


def run_focusing_snapshot(cfg: ScenarioConfig) -> ScenarioResult:
    sp, beam, H, t_f = cfg.species, cfg.beam(), cfg.height, cfg.t_f
    gl = thinlens.gravity_lens(sp, beam, H)
    t_o, t_i = gl.t_o, gl.t_i
    bins, span = cfg.option("bins"), cfg.option("profile_span")
    table, profiles = Table(SNAPSHOT_COLUMNS), Table(PROFILE_COLUMNS)
    for T in _temperatures(cfg):
        spec = CloudSpec(T, cfg.radius, (0.0, 0.0, cfg.center_z - H), (0.0, 0.0, 0.0), cfg.particles, sp)
        ens = ens_mod.sample_cloud(spec, cfg.seed)
        t_obs = t_o + t_f
        ref = ens_mod.drift_to_time(ens, t_obs, True)
        km = ens_mod.drift_to_time(ens_mod.evolve_kickmap(ens, beam, GravityKick(H)), t_obs, True)
        tr_raw = _traced(cfg, ens, beam, True, gl.v_z0)
        tr = ens_mod.drift_to_time(tr_raw, t_obs, True)
        r = max(ens_mod.rms_position(ref, "y"), 1e-12)
        rng = (beam.center_y - span * r, beam.center_y + span * r)
        p_ref = ens_mod.density_profile(ref, "y", bins, rng)
        p_km = ens_mod.density_profile(km, "y", bins, rng)
        p_tr = ens_mod.density_profile(tr, "y", bins, rng)
        f_km, flag_km = _fit(p_km)
        f_tr, flag_tr = _fit(p_tr)
        v0 = rms_thermal_velocity(sp, T)
        rms_ideal = fitting.fwhm_vs_time(t_o, t_i, v0, t_f)
        row = dict(temperature_k=T, v0_rms=v0, t_i_analytic=t_i, rms_ideal=rms_ideal,
                   fwhm_ideal=fitting.FWHM_PER_SIGMA * rms_ideal,
                   fwhm_reference=fitting.FWHM_PER_SIGMA * ens_mod.rms_position(ref, "y"),
                   vy_rms_traced=ens_mod.rms_velocity(tr, "y"),
                   vy_rms_traced_se=ens_mod.rms_velocity_se(tr, "y"),
                   trapped=tr_raw.trapped_count, flag=_join_flags(
                       flag_km and "kickmap_" + flag_km, flag_tr and "traced_" + flag_tr))
        if f_km is not None:
            row.update(fwhm_narrow_kickmap=f_km.fwhm_narrow, fwhm_wide_kickmap=f_km.fwhm_wide,
                       narrow_fraction_kickmap=f_km.area_narrow / (f_km.area_narrow + f_km.area_wide))
        if f_tr is not None:
            dec = fitting.decompose_velocities(f_tr, t_o, t_i, t_f, len(tr))
            row.update(fwhm_narrow_traced=f_tr.fwhm_narrow, fwhm_wide_traced=f_tr.fwhm_wide,
                       narrow_fraction_traced=dec.n_f / len(tr), v_f_traced=dec.v_f_rms,
                       v_unf_traced=dec.v_unf_rms, v_tot_traced=dec.v_total_rms)
        table.add(**row)
        y = p_ref.centers
        fk = f_km(y) if f_km is not None else np.full_like(y, np.nan)
        ft = f_tr(y) if f_tr is not None else np.full_like(y, np.nan)
        for k in range(len(y)):
            profiles.add(temperature_k=T, y_m=y[k], counts_reference=p_ref.counts[k],
                         counts_kickmap=p_km.counts[k], counts_traced=p_tr.counts[k],
                         fit_kickmap=fk[k], fit_traced=ft[k])
    res = ScenarioResult(cfg.scenario, cfg, table, {"profiles": profiles})
    res.derived.update(focal_length_m=gl.focal_length, t_o_s=t_o, t_i_s=t_i, t_f_s=t_f,
                       kinetic_over_depth=sp.mass * G_ACCEL * H / abs(beam.depth))
    fr = table.column("fwhm_reference")
    fn = table.column("fwhm_narrow_traced")
    ok = bool(np.all(fn < fr))
    res.checks.append(Check("focused component narrower than unlensed cloud", ok,
                            ", ".join(f"{a * 1e6:.2f} um vs {b * 1e6:.2f} um" for a, b in zip(fn, fr))))
    frac = table.column("narrow_fraction_traced")
    if len(frac) >= 2:
        temps = table.column("temperature_k")
        o = np.argsort(temps)
        res.notes.append("narrow fraction vs temperature: " + ", ".join(
            f"{temps[k] * 1e9:g} nK -> {frac[k]:.3f}" for k in o))
    return res


def _temperatures(cfg) -> np.ndarray:
    if cfg.sweep is not None and cfg.sweep.variable in ("temperature_uk", "temperature_nk"):
        return cfg.sweep.si_values
    return np.array([cfg.temperature])


# -- imaging width vs flight time

FWHM_COLUMNS = ("tf_over_ti", "t_f_s", "rms_ideal", "fwhm_ideal",
                "fwhm_narrow_kickmap", "fwhm_wide_kickmap", "narrow_fraction_kickmap",
                "fwhm_narrow_traced", "fwhm_wide_traced", "narrow_fraction_traced", "flag")


@dataclass(frozen=True)
class VShape:
    slope_pre: float
    intercept_pre: float
    r2_pre: float
    slope_post: float
    intercept_post: float
    r2_post: float
    vertex: float  # in units of t_i

    @property
    def is_v(self) -> bool:
        return self.slope_pre < 0 < self.slope_post


def _linfit(x, y):
    A = np.column_stack([x, np.ones_like(x)])
    (a, b), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (a * x + b)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1 - float(resid @ resid) / ss if ss > 0 else 1.0
    return float(a), float(b), r2


def v_shape(x, width) -> VShape:
    """Straight lines through the pre-image (x < 1) and post-image (x > 1) points.

    ``x`` is t_f / t_i. The vertex is where the two lines meet.
    """
    x = np.asarray(x, dtype=float)
    width = np.asarray(width, dtype=float)
    ok = np.isfinite(width)
    pre = ok & (x < 1 - 1e-9)
    post = ok & (x > 1 + 1e-9)
    if pre.sum() < 3 or post.sum() < 3:
        raise ValueError("need at least three points on each side of the image time")
    a1, b1, r1 = _linfit(x[pre], width[pre])
    a2, b2, r2 = _linfit(x[post], width[post])
    vertex = (b2 - b1) / (a1 - a2) if a1 != a2 else math.nan
    return VShape(a1, b1, r1, a2, b2, r2, vertex)


def run_fwhm_vs_time(cfg: ScenarioConfig) -> ScenarioResult:
    sp, beam, H, T = cfg.species, cfg.beam(), cfg.height, cfg.temperature
    gl = thinlens.gravity_lens(sp, beam, H)
    t_o, t_i = gl.t_o, gl.t_i
    v0 = rms_thermal_velocity(sp, T)
    spec = CloudSpec(T, cfg.radius, (0.0, 0.0, cfg.center_z - H), (0.0, 0.0, 0.0), cfg.particles, sp)
    ens = ens_mod.sample_cloud(spec, cfg.seed)
    after = {"kickmap": ens_mod.evolve_kickmap(ens, beam, GravityKick(H)),
             "traced": _traced(cfg, ens, beam, True, gl.v_z0)}
    bins, span = cfg.option("bins"), cfg.option("profile_span")
    table = Table(FWHM_COLUMNS)
    for x in cfg.sweep.si_values:
        t_f = x * t_i
        rms_ideal = fitting.fwhm_vs_time(t_o, t_i, v0, t_f)
        row = dict(tf_over_ti=x, t_f_s=t_f, rms_ideal=rms_ideal, fwhm_ideal=fitting.FWHM_PER_SIGMA * rms_ideal)
        flags = []
        for name, e in after.items():
            try:
                d = ens_mod.drift_to_time(e, t_o + t_f, True)
            except ValueError:
                flags.append(f"{name}_inside_beam")
                continue
            fit, flag = _fit(_profile(d, span, bins, beam.center_y))
            if flag:
                flags.append(f"{name}_{flag}")
            if fit is not None:
                row[f"fwhm_narrow_{name}"] = fit.fwhm_narrow
                row[f"fwhm_wide_{name}"] = fit.fwhm_wide
                row[f"narrow_fraction_{name}"] = fit.area_narrow / (fit.area_narrow + fit.area_wide)
        row["flag"] = _join_flags(*flags)
        table.add(**row)

    res = ScenarioResult(cfg.scenario, cfg, table)
    res.derived.update(drop_height_m=H, focal_length_m=gl.focal_length, t_o_s=t_o, t_i_s=t_i,
                       v0_rms=v0, kinetic_over_depth=sp.mass * G_ACCEL * H / abs(beam.depth),
                       trapped=after["traced"].trapped_count)
    xs = table.column("tf_over_ti")
    tol, min_r2 = cfg.option("vertex_tolerance"), cfg.option("min_r2")
    for name in ("kickmap", "traced"):
        try:
            vs = v_shape(xs, table.column(f"fwhm_narrow_{name}"))
        except ValueError as exc:
            res.checks.append(Check(f"V shape ({name})", False, str(exc)))
            continue
        res.derived[f"vertex_{name}_over_ti"] = vs.vertex
        res.derived[f"r2_pre_{name}"] = vs.r2_pre
        res.derived[f"r2_post_{name}"] = vs.r2_post
        ok = vs.is_v and abs(vs.vertex - 1) <= tol and vs.r2_pre >= min_r2
        res.checks.append(Check(
            f"V shape ({name})", ok,
            f"slopes {vs.slope_pre * 1e6:.3g} / {vs.slope_post * 1e6:.3g} um per t_i, vertex at "
            f"{vs.vertex:.3f} t_i (tolerance {tol:g}), pre-image R^2 = {vs.r2_pre:.4f} "
            f"(min {min_r2:g}), post-image R^2 = {vs.r2_post:.4f}"))
    j = int(np.argmin(np.abs(xs - 1)))
    wk = table.column("fwhm_narrow_kickmap")[j]
    wt = table.column("fwhm_narrow_traced")[j]
    res.derived["fwhm_at_image_kickmap"] = float(wk)
    res.derived["fwhm_at_image_traced"] = float(wt)
    res.checks.append(Check("aberrated (traced) width >= ideal (kick map) width at t_f = t_i",
                            bool(wt >= wk),
                            f"{wt * 1e6:.3f} um vs {wk * 1e6:.3f} um at t_f = {xs[j]:.3g} t_i"))
    return res


# -- collimation vs temperature

TEMPERATURE_COLUMNS = ("temperature_k", "v0_rms", "beta", "ratio_analytic", "vy_rms_analytic",
                       "vy_rms_kickmap", "vy_rms_kickmap_se", "vy_rms_traced", "vy_rms_traced_se",
                       "v_f", "v_unf", "narrow_fraction", "v_tot", "v_tot_over_v0", "trapped",
                       "flag")


def run_collimation_vs_temperature(cfg: ScenarioConfig) -> ScenarioResult:
    sp, beam, H, t_f = cfg.species, cfg.beam(), cfg.height, cfg.t_f
    gl = thinlens.gravity_lens(sp, beam, H)
    t_o, t_i = gl.t_o, gl.t_i
    bins, span = cfg.option("bins"), cfg.option("profile_span")
    table = Table(TEMPERATURE_COLUMNS)
    for T in _temperatures(cfg):
        spec = CloudSpec(T, cfg.radius, (0.0, 0.0, cfg.center_z - H), (0.0, 0.0, 0.0), cfg.particles, sp)
        ens = ens_mod.sample_cloud(spec, cfg.seed)
        pred = col.transverse_rms_gravity(col.CollimationInput(sp, beam, T, col.FreeFall(H)))
        km = ens_mod.evolve_kickmap(ens, beam, GravityKick(H))
        tr = _traced(cfg, ens, beam, True, gl.v_z0)
        row = dict(temperature_k=T, v0_rms=pred.v0_rms, beta=pred.alpha_or_beta,
                   ratio_analytic=pred.ratio, vy_rms_analytic=pred.vy_rms,
                   vy_rms_kickmap=ens_mod.rms_velocity(km, "y"),
                   vy_rms_kickmap_se=ens_mod.rms_velocity_se(km, "y"),
                   vy_rms_traced=ens_mod.rms_velocity(tr, "y"),
                   vy_rms_traced_se=ens_mod.rms_velocity_se(tr, "y"), trapped=tr.trapped_count)
        flags = []
        try:
            d = ens_mod.drift_to_time(tr, t_o + t_f, True)
            fit, flag = _fit(_profile(d, span, bins, beam.center_y))
        except ValueError:
            fit, flag = None, "inside_beam"
        if flag:
            flags.append(flag)
        if fit is not None:
            dec = fitting.decompose_velocities(fit, t_o, t_i, t_f, len(tr))
            row.update(v_f=dec.v_f_rms, v_unf=dec.v_unf_rms, narrow_fraction=dec.n_f / len(tr),
                       v_tot=dec.v_total_rms, v_tot_over_v0=dec.v_total_rms / pred.v0_rms)
        row["flag"] = _join_flags(*flags)
        table.add(**row)
    res = ScenarioResult(cfg.scenario, cfg, table)
    res.derived.update(drop_height_m=H, focal_length_m=gl.focal_length, t_o_s=t_o, t_i_s=t_i,
                       t_f_s=t_f, kinetic_over_depth=sp.mass * G_ACCEL * H / abs(beam.depth))
    ratio = table.column("v_tot_over_v0")
    res.checks.append(Check("total spread below initial (bi-Gaussian decomposition)",
                            bool(np.all(ratio < 1)),
                            ", ".join(f"{r:.3f}" for r in ratio)))
    direct = table.column("vy_rms_traced") / table.column("v0_rms")
    res.checks.append(Check("traced vy_rms below initial", bool(np.all(direct < 1)),
                            ", ".join(f"{r:.3f}" for r in direct)))
    return res


# -- lens-law checks with single paraxial rays

LENS_COLUMNS = ("lo_over_f", "object_distance_m", "h_over_waist", "image_distance_traced",
                "image_distance_analytic", "lens_residual", "rel_err", "flag")
GRAVITY_LENS_COLUMNS = ("height_m", "h_over_waist", "H_i_traced", "H_i_analytic", "rel_err",
                        "t_i_traced", "t_i_analytic", "flag")


def ray_heights(cfg) -> np.ndarray:
    n, hmax = cfg.option("rays"), cfg.option("ray_max_h")
    return hmax * cfg.waist * np.arange(1, n + 1) / n


def trace_to_axis(start, beam, species, gravity, params, launch_radii=8.0):
    """Trace one ray through the beam and fly it on to its axis crossing.

    Returns the crossing dict from :func:`tracer.transverse_crossing`, or
    ``None`` when the ray leaves the beam moving away from the axis.
    """
    row = tracer.launch_to_plane(np.array([start.as_tuple()]), beam, gravity, launch_radii)[0]
    traj = tracer.trace(PhaseSpacePoint.from_row(row), beam, species, gravity, params)
    fin = traj.final
    off = fin.y - beam.center_y
    hit = tracer.transverse_crossing(traj, beam.center_y)
    if hit is not None:
        return hit
    if off == 0 or off * fin.vy >= 0:
        return None
    n = int(math.ceil(abs(off / fin.vy) / params.dt)) + 2
    return tracer.transverse_crossing(tracer.extend_ballistic(traj, n), beam.center_y)


def run_lens_law_check(cfg: ScenarioConfig) -> ScenarioResult:
    sp, beam, v = cfg.species, cfg.beam(), cfg.velocity_z
    f = thinlens.focal_length_for_speed(sp, beam, v)
    params = _params(cfg, beam, v)
    table = Table(LENS_COLUMNS)
    for L in _object_distances(cfg, f):
        try:
            Li_an = thinlens.image_distance(L, f)
        except thinlens.ImageAtInfinity:
            Li_an = math.inf
        for h in ray_heights(cfg):
            start = PhaseSpacePoint(0.0, beam.center_y, beam.center_z - L, 0.0, h * v / L, v)
            hit = trace_to_axis(start, beam, sp, False, params, cfg.integrator.launch_radii)
            row = dict(lo_over_f=L / f, object_distance_m=L, h_over_waist=h / beam.waist,
                       image_distance_analytic=Li_an, flag="")
            if hit is None:
                row["flag"] = "no_crossing"
            else:
                Li = hit["z_cross"] - beam.center_z
                row.update(image_distance_traced=Li, lens_residual=f * (1 / L + 1 / Li - 1 / f),
                           rel_err=Li / Li_an - 1 if math.isfinite(Li_an) else math.nan)
            table.add(**row)
    res = ScenarioResult(cfg.scenario, cfg, table)
    res.derived.update(focal_length_m=f, kinetic_over_depth=0.5 * sp.mass * v * v / abs(beam.depth))
    resid = table.column("lens_residual")
    tol = cfg.option("lens_tolerance")
    good = np.isfinite(resid)
    worst = float(np.max(np.abs(resid[good]))) if good.any() else math.inf
    res.derived["max_lens_residual"] = worst
    res.checks.append(Check("lens law |1/L_o + 1/L_i - 1/f| * f", bool(good.all() and worst <= tol),
                            f"max {worst:.4f} over {int(good.sum())}/{len(resid)} rays; bound {tol:g}"))
    return res


def run_gravity_lens_law_check(cfg: ScenarioConfig) -> ScenarioResult:
    sp, beam = cfg.species, cfg.beam()
    heights = cfg.sweep.si_values if cfg.sweep is not None else np.array([cfg.height])
    table = Table(GRAVITY_LENS_COLUMNS)
    res = ScenarioResult(cfg.scenario, cfg, table)
    for H in heights:
        try:
            gl = thinlens.gravity_lens(sp, beam, H)
        except thinlens.LensError as exc:
            raise ScenarioFailure(f"H = {H:g} m: {exc}") from exc
        params = _params(cfg, beam, gl.v_z0)
        for h in ray_heights(cfg):
            start = PhaseSpacePoint(0.0, beam.center_y, beam.center_z - H, 0.0, h / gl.t_o, 0.0)
            hit = trace_to_axis(start, beam, sp, True, params, cfg.integrator.launch_radii)
            row = dict(height_m=H, h_over_waist=h / beam.waist, H_i_analytic=gl.H_i,
                       t_i_analytic=gl.t_i, flag="")
            if hit is None:
                row["flag"] = "no_crossing"
            else:
                Hi = hit["z_cross"] - beam.center_z
                row.update(H_i_traced=Hi, rel_err=Hi / gl.H_i - 1, t_i_traced=hit["t_cross"] - gl.t_o)
            table.add(**row)
        res.derived[f"kinetic_over_depth_H{H * 1e3:g}mm"] = sp.mass * G_ACCEL * H / abs(beam.depth)
    rel = table.column("rel_err")
    tol = cfg.option("height_tolerance")
    hs = table.column("height_m")
    for H in heights:
        sel = hs == H
        errs = rel[sel]
        good = np.isfinite(errs)
        worst = float(np.max(np.abs(errs[good]))) if good.any() else math.inf
        res.derived[f"max_rel_err_H{H * 1e3:g}mm"] = worst
        res.checks.append(Check(f"re-crossing height H = {H * 1e3:g} mm",
                                bool(good.all() and worst <= tol),
                                f"max |H_i / H_i(analytic) - 1| = {worst:.4f}; bound {tol:g}"))
    return res


RUNNERS = {
    "uniform_collimation_scan": run_uniform_collimation_scan,
    "gravity_rabi_scan": run_gravity_rabi_scan,
    "focusing_snapshot": run_focusing_snapshot,
    "fwhm_vs_time": run_fwhm_vs_time,
    "collimation_vs_temperature": run_collimation_vs_temperature,
    "lens_law_check": run_lens_law_check,
    "gravity_lens_law_check": run_gravity_lens_law_check,
}


def run(cfg: ScenarioConfig) -> ScenarioResult:
    try:
        return RUNNERS[cfg.scenario](cfg)
    except thinlens.LensError as exc:
        raise ScenarioFailure(str(exc)) from exc
    except FloatingPointError as exc:
        raise ScenarioFailure(f"floating point failure: {exc}") from exc
