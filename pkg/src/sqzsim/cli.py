"""Command-line front end.

    sqzsim --scenario llo_10km --config calib_10km.cfg --seed 1 --out-dir runs/10km

Exit codes:

    0  success
    1  unexpected internal error
    2  bad command-line usage
    3  config syntax error (line number in message)
    4  config unit error
    5  config value violates a parameter invariant
    6  infeasible or inconsistent physics request
    7  file-system error
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import homodyne
from .config import (
    ConfigSyntaxError,
    ConfigUnitError,
    ConfigValueError,
    load_config,
    shipped_config,
)
from .lockloop import ConfigurationError, predicted_residual_sigma, run_lock
from .scenarios import ModeError, noise_budget_report, run_llo, run_tlo_reference
from .sqzmodel import InfeasibleError, ParameterError, transmittance_of

SCENARIOS = ("tlo_scan", "llo_b2b", "llo_10km", "lock_only", "sweep")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_SYNTAX = 3
EXIT_UNIT = 4
EXIT_VALUE = 5
EXIT_DOMAIN = 6
EXIT_IO = 7

# checked in order; first match wins
EXIT_CODES = (
    (ConfigSyntaxError, EXIT_SYNTAX),
    (ConfigUnitError, EXIT_UNIT),
    (ConfigValueError, EXIT_VALUE),
    (InfeasibleError, EXIT_DOMAIN),
    (ConfigurationError, EXIT_DOMAIN),
    (ModeError, EXIT_DOMAIN),
    (ParameterError, EXIT_VALUE),
    (OSError, EXIT_IO),
)


def exit_code_for(exc):
    for cls, code in EXIT_CODES:
        if isinstance(exc, cls):
            return code
    return EXIT_INTERNAL


@dataclass
class RunManifest:
    config_path: str
    scenario: str
    seed: int
    out_dir: str
    files: list = field(default_factory=list)
    runtime_s: float = 0.0
    notices: list = field(default_factory=list)

    def format(self):
        lines = [f"config: {self.config_path}", f"scenario: {self.scenario}",
                 f"seed: {self.seed}", f"out_dir: {self.out_dir}",
                 f"runtime_s: {self.runtime_s:.3f}", "files:"]
        lines += [f"  {name}" for name in self.files]
        lines.append("notices:")
        lines += [f"  {n}" for n in self.notices]
        return "\n".join(lines) + "\n"


def _atomic_write(path, writer):
    """Write via a temp file in the same directory, then rename into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_text(path, text):
    _atomic_write(path, lambda p: Path(p).write_text(text))


def resolve_config_path(path):
    p = Path(path)
    if not p.exists():
        shipped = shipped_config(p.name)
        if p.parent == Path(".") and shipped.exists():
            return shipped
    return p


def _lock_report(result, cfg, hist):
    lines = [
        "mode: lock_only",
        f"status: {'ok' if result.acquired else 'warning: lock not acquired'}",
        f"residual_phase_sigma_rad: {result.residual_sigma:.5f}",
        f"predicted_residual_sigma_rad: {predicted_residual_sigma(cfg.lock):.5f}",
        f"residual_mean_rad: {result.residual_mean:.5f}",
        f"lock_acquired: {str(result.acquired).lower()}",
        f"acquisition_time_s: {result.acquisition_time:.6g}",
        f"histogram_fit_sigma_rad: {hist.fit_sigma:.5f}",
        f"histogram_chi2_p_value: {hist.p_value:.4g}",
    ]
    return "\n".join(lines) + "\n"


def _sweep_rows(cfg, sweep):
    lengths = np.linspace(sweep.fiber_length_start, sweep.fiber_length_stop, sweep.points)
    rows = []
    for length in lengths:
        point = replace(cfg, channel=replace(cfg.channel, fiber_length=float(length)))
        rep = noise_budget_report(point)
        rows.append((float(length), transmittance_of(point.channel),
                     rep.squeezing_db, rep.antisqueezing_db))
    return rows


def run_scenario(scenario, config_path, seed, out_dir, duration=None, pin_sigma=None):
    """Run one scenario and write its artifacts into ``out_dir``."""
    if scenario not in SCENARIOS:
        raise ModeError(f"scenario must be one of {SCENARIOS}, got {scenario!r}")
    start = time.perf_counter()
    path = resolve_config_path(config_path)
    parsed = load_config(path.read_text())
    cfg = replace(parsed.config, seed=seed)
    if duration is not None:
        cfg = replace(cfg, duration=duration)
    if pin_sigma is not None:
        cfg = replace(cfg, pin_sigma=pin_sigma)
    if scenario in ("tlo_scan", "llo_b2b", "llo_10km"):
        cfg = replace(cfg, mode=scenario)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []

    def emit(name, writer):
        _atomic_write(out / name, writer)
        files.append(name)

    if scenario == "tlo_scan":
        report, scan = run_tlo_reference(cfg)
        emit("psd.csv", lambda p: homodyne.write_psd_csv(report.psd, p))
        emit("scan.csv", lambda p: _write_scan(scan, p))
        emit("report.txt", lambda p: Path(p).write_text(report.format()))
    elif scenario in ("llo_b2b", "llo_10km"):
        report = run_llo(cfg)
        emit("psd.csv", lambda p: homodyne.write_psd_csv(report.psd, p))
        emit("phase_hist.csv", lambda p: homodyne.write_histogram_csv(report.histogram, p))
        emit("report.txt", lambda p: Path(p).write_text(report.format()))
    elif scenario == "lock_only":
        result = run_lock(cfg.lock, cfg.duration, seed)
        hist = homodyne.phase_histogram_fit(result.locked_segment())
        emit("phase_hist.csv", lambda p: homodyne.write_histogram_csv(hist, p))
        emit("lock_trace.txt", result.write_trace)
        emit("report.txt", lambda p: Path(p).write_text(_lock_report(result, cfg, hist)))
    else:
        rows = _sweep_rows(cfg, parsed.sweep)
        emit("sweep.csv", lambda p: _write_sweep(rows, p))
        text = "mode: sweep\n" + "".join(
            f"fiber_length_km: {r[0]:.3f}  squeezing_db: {r[2]:.3f}\n" for r in rows)
        emit("report.txt", lambda p: Path(p).write_text(text))

    manifest = RunManifest(str(path), scenario, seed, str(out), list(files),
                           notices=parsed.notices)
    manifest.files.append("manifest.txt")
    manifest.runtime_s = time.perf_counter() - start
    _write_text(out / "manifest.txt", manifest.format())
    return manifest


def _write_scan(scan, path):
    with open(path, "w") as fh:
        fh.write("time_s,lo_phase_rad,band_power_rel_linear\n")
        for t, th, p in zip(scan.times, scan.theta, scan.power):
            fh.write(f"{t:.9e},{th:.9e},{p:.9e}\n")


def _write_sweep(rows, path):
    with open(path, "w") as fh:
        fh.write("fiber_length_km,transmittance,squeezing_db,antisqueezing_db\n")
        for row in rows:
            fh.write("{:.6f},{:.9e},{:.6f},{:.6f}\n".format(*row))


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sqzsim", description="Squeezed-light coexistence link simulator")
    parser.add_argument("--scenario", required=True, choices=SCENARIOS)
    parser.add_argument("--config", required=True, help="config file (or name of a shipped one)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--duration", type=float, help="override run duration (s)")
    parser.add_argument("--pin-sigma", type=float, help="pin residual phase std (rad)")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if args.seed < 0 or args.seed >= 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_USAGE
    try:
        manifest = run_scenario(args.scenario, args.config, args.seed, args.out_dir,
                                args.duration, args.pin_sigma)
    except Exception as exc:  # mapped to the documented exit codes
        code = exit_code_for(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code
    print(manifest.format(), end="")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
