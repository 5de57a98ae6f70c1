"""Command-line pipelines: calibrate, phases, simulate, sweep, fringes, analyze.

Every CSV starts with comment lines carrying the command, the SHA-256 of the
canonical configuration and the seed. Numbers are written with a fixed
format, so identical configuration and seed give byte-identical files.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from qgi import __version__
from qgi.config import RunConfig
from qgi.core import MassPair, STATE_0
from qgi.dynamics import closure_metrics, integrate_com
from qgi.errors import ConfigError, NumericalError, QGIError
from qgi.fieldmap import ChipFieldModel, soz_acceleration, total_field
from qgi.fringe import (
    extract_phase,
    plot_fringes,
    plot_phase,
    read_scan_csv,
    synthesize_scan,
    write_scan_csv,
)
from qgi.phases import (
    NEWTONIAN,
    ActionContext,
    action_phase,
    action_route_phase,
    analytic_qgi_phase,
    analytic_qgi_phase_derivative,
    galilean_route_phase,
    gauge_route_phase,
    gedanken_phase,
    phase_difference,
)
from qgi.pulses import ARMS, BALLISTIC, REFERENCE, build_schedule, calibrate_levitation
from qgi.wavepacket import prepared_state, run_interferometer

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
COMMANDS = ("simulate", "calibrate", "phases", "fringes", "analyze", "sweep")
FMT = "{:.12g}"


# output helpers

def header_lines(cfg: RunConfig, command: str, extra: Iterable[str] = ()) -> list[str]:
    return [f"qgi {__version__} {command}", f"config_sha256={cfg.sha256()}", f"seed={cfg.seed}", *extra]


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Sequence], header: Sequence[str]) -> Path:
    lines = [f"# {h}" for h in header]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else FMT.format(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def _label(two_T: float) -> str:
    return f"{two_T / 1e-6:07.1f}us"


def _pool_map(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


# shared physics setup

def _fieldmodel(cfg: RunConfig) -> ChipFieldModel:
    return ChipFieldModel(cfg.geometry, cfg.bias, cfg.species)


def _i_hold(cfg: RunConfig) -> float:
    if cfg.i_hold is not None:
        return cfg.i_hold
    return calibrate_levitation(cfg.geometry, cfg.bias, cfg.species, z_atom=cfg.z_hold, y_atom=cfg.y_atom).I_hold


def _schedule(cfg: RunConfig, two_T: float, I_hold: float, eps: float = 0.0):
    sch = build_schedule(cfg.timings(two_T), I_hold, cfg.i_idle, square=cfg.square)
    return sch.perturbed(eps) if eps else sch


def _com_phase(cfg: RunConfig, sch, fm) -> tuple[float, dict]:
    trajs = {arm: integrate_com(sch, arm, fm, z_hold=cfg.z_hold, y=cfg.y_atom, dt=cfg.dt, g=cfg.g) for arm in ARMS}
    ctx = ActionContext(cfg.z_hold, NEWTONIAN, MassPair.equal(cfg.species))
    phi = phase_difference({arm: action_phase(tr, ctx) for arm, tr in trajs.items()})
    return phi, trajs


# commands

def cmd_calibrate(cfg: RunConfig, out: Path, args) -> list[Path]:
    cal = calibrate_levitation(cfg.geometry, cfg.bias, cfg.species, z_atom=cfg.z_hold, y_atom=cfg.y_atom)
    r = np.array([0.0, cfg.y_atom, cfg.z_hold])
    sample = total_field(r, cal.I_hold, cfg.geometry, cfg.bias)
    grad = float(np.linalg.norm(sample.grad_absB))
    a_soz = soz_acceleration(STATE_0, sample, cfg.species)
    rows = [
        ("i_hold", cal.I_hold / 1e-3, "mA"),
        ("residual_acceleration", cal.residual_a, "m/s^2"),
        ("field_at_atom", sample.absB, "G"),
        ("gradient_at_atom", grad / 100.0, "G/cm"),
        ("soz_acceleration_state0", a_soz, "m/s^2"),
        ("g_effective_state0", cfg.g + abs(a_soz), "m/s^2"),
    ]
    p = write_csv(out / "calibrate.csv", ("quantity", "value", "unit"), rows, header_lines(cfg, "calibrate"))
    print(f"I_hold = {cal.I_hold / 1e-3:.4f} mA (residual {cal.residual_a:.2e} m/s^2)")
    return [p]


def cmd_phases(cfg: RunConfig, out: Path, args) -> list[Path]:
    g = cfg.g_analytic
    sp = cfg.species
    rows = []
    for x in cfg.two_T_values:
        tm = cfg.timings(x)
        rows.append((x / 1e-6, analytic_qgi_phase(tm, g, sp), action_route_phase(tm, g, sp),
                     gauge_route_phase(tm, g, sp), galilean_route_phase(tm, g, MassPair.equal(sp)),
                     gedanken_phase(tm.T_half, g, sp), analytic_qgi_phase_derivative(tm, g, sp) * 1e-3))
    cols = ("two_T_us", "phi_analytic", "phi_action", "phi_gauge", "phi_galilean", "phi_gedanken", "dphi_d2T_per_ms")
    p = write_csv(out / "phases.csv", cols, rows, header_lines(cfg, "phases", [f"g={g}"]))
    return [p]


def _simulate_point(job) -> dict:
    cfg, two_T, I_hold = job
    fm = _fieldmodel(cfg)
    sch = _schedule(cfg, two_T, I_hold)
    phi_com, trajs = _com_phase(cfg, sch, fm)
    cm = closure_metrics(trajs[BALLISTIC], trajs[REFERENCE])
    widths = (cfg.num("wavepacket", "sigma_x_um") * 1e-6, cfg.num("wavepacket", "sigma_y_um") * 1e-6,
              cfg.num("wavepacket", "sigma_z_um") * 1e-6)
    init = prepared_state(cfg.timings(two_T), z_hold=cfg.z_hold, y=cfg.y_atom, g=cfg.g, model=cfg.wavepacket_model,
                          widths=widths, waist_delay=cfg.num("wavepacket", "waist_delay_us") * 1e-6,
                          dkc_rate=cfg.num("wavepacket", "dkc_rate_um_per_ms") * 1e-3, mass=cfg.species.mass_kg)
    run = run_interferometer(sch, fm, init, z_hold=cfg.z_hold, dt=cfg.wavepacket_dt, g=cfg.g)
    tb = trajs[BALLISTIC]
    zr = np.interp(tb.t, trajs[REFERENCE].t, trajs[REFERENCE].z)
    traj_rows = [(t / 1e-6, zb / 1e-6, z2 / 1e-6) for t, zb, z2 in zip(tb.t, tb.z, zr)]
    width_rows = {arm: h.rows() for arm, h in run.histories.items()}
    mid = run.mid_widths()
    ov = run.overlap
    return {
        "two_T": two_T,
        "summary": (two_T / 1e-6, phi_com, ov.phase, ov.path_phase, ov.shape_phase, ov.separation_phase,
                    ov.visibility, mid[BALLISTIC] / 1e-6, mid[REFERENCE] / 1e-6, cm.dz_final / 1e-6,
                    cm.dv_final / 1e-3, cm.max_split / 1e-6),
        "traj": traj_rows,
        "widths": width_rows,
    }


def cmd_simulate(cfg: RunConfig, out: Path, args) -> list[Path]:
    I_hold = _i_hold(cfg)
    hdr = header_lines(cfg, "simulate", [f"i_hold_ma={I_hold / 1e-3:.9g}",
                                         "model_gap=atom-atom interactions omitted"])
    results = _pool_map(_simulate_point, [(cfg, x, I_hold) for x in cfg.two_T_values], args.threads)
    results.sort(key=lambda r: r["two_T"])
    paths = []
    tdir = out / "trajectories"
    tdir.mkdir(exist_ok=True)
    for r in results:
        lab = _label(r["two_T"])
        paths.append(write_csv(tdir / f"trajectory_{lab}.csv", ("t_us", "z_ballistic_um", "z_reference_um"),
                               r["traj"], hdr))
        for arm, rows in r["widths"].items():
            paths.append(write_csv(tdir / f"widths_{arm}_{lab}.csv",
                                   ("t_s", "sigma_x_m", "sigma_y_m", "sigma_z_m", "tilt_yz_rad"), rows, hdr))
    cols = ("two_T_us", "phi_com_action", "phi_overlap", "phi_path", "phi_shape", "phi_separation", "visibility",
            "mid_width_ballistic_um", "mid_width_reference_um", "closure_dz_um", "closure_dv_mm_per_s",
            "max_split_um")
    paths.append(write_csv(out / "overlap.csv", cols, [r["summary"] for r in results], hdr))
    return paths


def _sweep_point(job) -> tuple:
    cfg, two_T, I_hold, eps, point_dir = job
    fm = _fieldmodel(cfg)
    vals = []
    for e in (0.0, eps, -eps):
        phi, _ = _com_phase(cfg, _schedule(cfg, two_T, I_hold, e), fm)
        vals.append(phi)
    tm = cfg.timings(two_T)
    row = (two_T / 1e-6, vals[0], vals[1], vals[2], analytic_qgi_phase(tm, cfg.g_analytic, cfg.species),
           gedanken_phase(tm.T_half, cfg.g_analytic, cfg.species))
    write_csv(Path(point_dir) / f"sweep_{_label(two_T)}.csv", SWEEP_COLUMNS, [row],
              header_lines(cfg, "sweep-point"))
    return row


SWEEP_COLUMNS = ("two_T_us", "phi_numeric", "phi_kick_plus", "phi_kick_minus", "phi_analytic", "phi_gedanken")


def cmd_sweep(cfg: RunConfig, out: Path, args) -> list[Path]:
    ppm = args.perturb_kick_ppm if args.perturb_kick_ppm is not None else cfg.num("analysis", "kick_perturbation_ppm")
    if ppm < 0:
        raise ConfigError("kick perturbation must be non-negative")
    eps = ppm * 1e-6
    I_hold = _i_hold(cfg)
    pdir = out / "points"
    pdir.mkdir(exist_ok=True)
    _pool_map(_sweep_point, [(cfg, x, I_hold, eps, str(pdir)) for x in cfg.two_T_values], args.threads)
    rows = []
    for f in sorted(pdir.glob("sweep_*.csv")):
        body = [ln for ln in f.read_text().splitlines() if ln and not ln.startswith("#")]
        rows.append(tuple(float(v) for v in body[1].split(",")))
    rows.sort(key=lambda r: r[0])
    hdr = header_lines(cfg, "sweep", [f"i_hold_ma={I_hold / 1e-3:.9g}", f"kick_perturbation_ppm={ppm:g}"])
    p = write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows, hdr)
    arr = np.array(rows)
    band = 0.5 * np.abs(arr[:, 2] - arr[:, 3])
    plot_phase(arr[:, 0] * 1e-6, {"numeric": arr[:, 1], "analytic": arr[:, 4], "gedanken": arr[:, 5]},
               out / "sweep.png", residual=(arr[:, 1] - arr[:, 4], band))
    return [p, out / "sweep.png"]


def _vis_model(x):
    return 0.8 * np.exp(-np.log(4.0) * (x - 0.2e-3) / 1.8e-3).clip(0, 1)


def cmd_fringes(cfg: RunConfig, out: Path, args) -> list[Path]:
    g, sp = cfg.g_analytic, cfg.species

    def phase_fn(x):
        return np.array([analytic_qgi_phase(cfg.timings(v), g, sp) for v in np.atleast_1d(x)])

    scan = synthesize_scan(phase_fn, _vis_model, lambda x: 0.5 + 0 * x, cfg.scan_grid,
                           phase_sigma=cfg.num("noise", "phase_sigma_rad"),
                           amp_sigma=cfg.num("noise", "population_sem"), seed=cfg.seed)
    p = out / "scan.csv"
    write_scan_csv(scan, p, header_lines(cfg, "fringes"))
    plot_fringes(scan, None, out / "fringes.png")
    return [p, out / "fringes.png"]


def cmd_analyze(cfg: RunConfig, out: Path, args) -> list[Path]:
    if not args.scan:
        raise ConfigError("analyze needs --scan PATH")
    scan = read_scan_csv(args.scan)
    fit = extract_phase(scan, envelope_order=int(cfg.num("analysis", "envelope_order")),
                        smoothing=int(cfg.num("analysis", "smoothing_window")))
    hdr = header_lines(cfg, "analyze", [f"scan={Path(args.scan).name}",
                                        f"cubic_coefficient_rad_per_s3={fit.cubic_coefficient:.12g}"])
    jpath = out / "phasefit.json"
    jpath.write_text(fit.to_json() + "\n")
    rows = [(x / 1e-6, y, m, ph, dph * 1e-3, s, "1" if k else "0")
            for x, y, m, ph, dph, s, k in zip(scan.two_T, scan.population, fit.model(scan.two_T),
                                              fit.phase(scan.two_T), fit.phase_derivative(scan.two_T),
                                              fit.phase_sigma, fit.fit_mask)]
    cpath = write_csv(out / "fit.csv", ("two_T_us", "population", "model", "phase", "dphi_d2T_per_ms",
                                        "phase_sigma", "in_fit"), rows, hdr)
    plot_fringes(scan, fit, out / "analyze.png")
    print(f"cubic coefficient = {fit.cubic_coefficient:.6e} rad/s^3")
    return [jpath, cpath, out / "analyze.png"]


HANDLERS = {
    "calibrate": cmd_calibrate,
    "phases": cmd_phases,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "fringes": cmd_fringes,
    "analyze": cmd_analyze,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qgi", description="Quantum Galileo interferometer simulation and analysis")
    ap.add_argument("--version", action="version", version=f"qgi {__version__}")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="INI configuration file (defaults used when omitted)")
    ap.add_argument("--out", default="qgi-out", help="output directory")
    ap.add_argument("--seed", type=int, help="override [run] seed")
    ap.add_argument("--threads", type=int, default=1, help="worker processes for sweeps")
    ap.add_argument("--perturb-kick-ppm", type=float, help="kick-current perturbation for sweep bands")
    ap.add_argument("--scan", help="scan CSV for the analyze command")
    return ap


def run_pipeline(cfg: RunConfig, command: str, out: Path, args: argparse.Namespace) -> list[Path]:
    if command not in HANDLERS:
        raise ConfigError(f"unknown command {command!r}")
    out.mkdir(parents=True, exist_ok=True)
    return HANDLERS[command](cfg, out, args)


def _error_record(out: Path | None, command: str, exc: BaseException, code: int) -> None:
    rec = {"command": command, "error": type(exc).__name__, "message": str(exc), "exit_code": code}
    text = json.dumps(rec, sort_keys=True)
    print(text, file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(text + "\n")
        except OSError:
            pass


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        cfg = RunConfig.from_file(args.config)
        if args.seed is not None:
            cfg = cfg.with_overrides(run={"seed": args.seed})
        if args.perturb_kick_ppm is not None:
            cfg = cfg.with_overrides(analysis={"kick_perturbation_ppm": args.perturb_kick_ppm})
        paths = run_pipeline(cfg, args.command, out, args)
    except ConfigError as exc:
        _error_record(out, args.command, exc, EXIT_CONFIG)
        return EXIT_CONFIG
    except (NumericalError, QGIError, ArithmeticError, np.linalg.LinAlgError) as exc:
        _error_record(out, args.command, exc, EXIT_NUMERICAL)
        return EXIT_NUMERICAL
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
