"""Command-line entry point: simulate, calibrate, evaluate, selftest.

Exit codes:
    0  success (solver converged or hit its iteration limit)
    1  unexpected internal error
    2  configuration or usage error
    3  missing, malformed or insufficient input data
    4  unobservable calibration (excitation deficiency, single-axis rotation,
       coverage gaps, degenerate geometry)
    5  batch optimization diverged (a report with the last good state is still written)
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from .data_io import (
    CalibConfig, NoiseConfig, ensure_dir, load_config, load_grid_observations, load_imu,
    load_report, write_json, write_report,
)
from .errors import CalibError, ConfigError, DataError
from .estimator import Problem, SolverOptions, batch_optimize, residual_samples
from .initializer import initialize
from .simulator import SimSpec, compare_calibrations, load_truth, write_dataset

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_DIVERGED = 5

log = logging.getLogger("ctcalib")


def _fail(exc: CalibError, out_dir: Path | None = None) -> int:
    stage = exc.stage or "input"
    print(f"error: stage={stage} kind={type(exc).__name__}: {exc}", file=sys.stderr)
    if out_dir is not None and out_dir.is_dir():
        try:
            write_json({"status": "failed", "stage": stage, "error": type(exc).__name__,
                        "message": str(exc), "exit_code": exc.exit_code}, out_dir / "failure.json")
        except DataError:
            pass
    return exc.exit_code


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{what} file not found: {p}", stage="input")
    return p


def write_trace_csv(trace, path) -> None:
    """Accepted iterations only; rejected trial steps stay in report.json."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "cost", "gradient_norm"])
        for row in trace:
            if not row.get("accepted", True):
                continue
            w.writerow([row["iteration"], repr(float(row["cost"])), repr(float(row["gradient_norm"]))])


def write_residuals_csv(rows, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["factor_type", "time", "norm"])
        for name, t, n in rows:
            w.writerow([name, repr(float(t)), repr(float(n))])


def run_calibrate(observations, imu_path, config_path, out_dir, overrides=(), seed=None) -> int:
    out = Path(out_dir)
    try:
        obs_p = _require_file(observations, "observation")
        imu_p = _require_file(imu_path, "IMU")
        if config_path is not None:
            _require_file(config_path, "config")
        cfg = load_config(config_path, overrides)
        if seed is not None:
            cfg.seed = int(seed)
        out = ensure_dir(out)
        clock = time.perf_counter()
        patterns = load_grid_observations(obs_p)
        imu = load_imu(imu_p)
        state = initialize(patterns, imu, cfg)
        opts = SolverOptions.from_config(cfg)
        stages = dict(state.diagnostics)
        stages["initial_calib"] = state.calib.to_dict()
        full, report = batch_optimize(state, state.patterns, imu, opts, cfg.camera, stages=stages)
        report.timings.update(state.diagnostics.get("timings", {}))
        report.timings["total_s"] = time.perf_counter() - clock
        write_report(report, out / "report.json")
        write_trace_csv(report.trace, out / "trace.csv")
        problem = Problem(state.patterns, imu, cfg.camera, opts)
        write_residuals_csv(residual_samples(problem, full), out / "residuals.csv")
    except CalibError as exc:
        return _fail(exc, out if out.is_dir() else None)
    if report.status == "diverged":
        print("error: stage=batch_optimize kind=DivergenceError: "
              "cost increased for consecutive steps; report holds the last good state", file=sys.stderr)
        write_json({"status": "failed", "stage": "batch_optimize", "error": "DivergenceError",
                    "exit_code": EXIT_DIVERGED}, out / "failure.json")
        return EXIT_DIVERGED
    if report.status != "converged":
        log.warning("batch optimization stopped at the iteration limit")
    c = report.calib
    print(json.dumps({"status": report.status, "iterations": report.iterations,
                      "euler_cb_deg": c.to_dict()["euler_cb_deg"], "t_cb": c.t_cb.tolist(),
                      "time_offset": c.time_offset}))
    return EXIT_OK


def _load_sim_spec(path, overrides, seed) -> SimSpec:
    from .data_io import apply_overrides

    base = SimSpec().to_dict()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"simulation spec not found: {p}")
        try:
            user = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from None
        from .data_io import _merge
        base = _merge(base, user)
    d = apply_overrides(base, overrides)
    if seed is not None:
        d["seed"] = int(seed)
    return SimSpec.from_dict(d)


def matching_config(spec: SimSpec) -> CalibConfig:
    """Calibration config whose camera and noise model match a simulation."""
    n = spec.noise
    defaults = NoiseConfig()
    noise = NoiseConfig(gyro=n.gyro or defaults.gyro, accel=n.accel or defaults.accel,
                        pixel=n.pixel or defaults.pixel)
    return CalibConfig(camera=spec.camera, noise=noise,
                       gravity_magnitude=float(np.linalg.norm(spec.calib.gravity_w)))


def run_simulate(spec_path, out_dir, overrides=(), seed=None) -> int:
    try:
        spec = _load_sim_spec(spec_path, overrides, seed)
        out = ensure_dir(out_dir)
        paths = write_dataset(spec, out)
        write_json(matching_config(spec).to_dict(), out / "config.json")
    except CalibError as exc:
        return _fail(exc)
    print(json.dumps({k: str(v) for k, v in paths.items()}))
    return EXIT_OK


_ROWS = (
    ("roll_deg", lambda m: m["euler_delta_deg"][0]),
    ("pitch_deg", lambda m: m["euler_delta_deg"][1]),
    ("yaw_deg", lambda m: m["euler_delta_deg"][2]),
    ("rotation_deg", lambda m: m["rotation_deg"]),
    ("tx_cm", lambda m: m["translation_delta_cm"][0]),
    ("ty_cm", lambda m: m["translation_delta_cm"][1]),
    ("tz_cm", lambda m: m["translation_delta_cm"][2]),
    ("translation_cm", lambda m: m["translation_cm"]),
    ("time_offset_ms", lambda m: m["time_offset_ms"]),
    ("gravity_deg", lambda m: m["gravity_deg"]),
)


def evaluate_reports(report_paths, truth_path) -> dict:
    truth_calib, _ = _load_truth_checked(truth_path)
    metrics = [compare_calibrations(load_report(p).calib, truth_calib) for p in report_paths]
    table = {}
    for name, get in _ROWS:
        vals = np.array([get(m) for m in metrics])
        table[name] = {"mean": float(vals.mean()),
                       "std": float(vals.std(ddof=1)) if len(vals) > 1 else None}
    return {"count": len(metrics), "errors": table, "per_report": metrics}


def _load_truth_checked(path):
    p = _require_file(path, "truth")
    try:
        return load_truth(p)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{p}: not a ground-truth file ({exc})") from None


def run_evaluate(report_paths, truth_path, out=None) -> int:
    try:
        for p in report_paths:
            _require_file(p, "report")
        result = evaluate_reports(report_paths, truth_path)
    except CalibError as exc:
        return _fail(exc)
    print(f"{'error':<16}{'mean':>14}{'std':>14}   (n={result['count']})")
    for name, row in result["errors"].items():
        std = "" if row["std"] is None else f"{row['std']:14.6f}"
        print(f"{name:<16}{row['mean']:14.6f}{std:>14}")
    if out is not None:
        try:
            write_json(result, out)
        except CalibError as exc:
            return _fail(exc)
    return EXIT_OK


def run_selftest(seed: int = 0) -> int:
    """Short noise-free simulate-calibrate round trip."""
    spec = SimSpec(duration=12.0, seed=seed)
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        write_dataset(spec, tmp)
        write_json(matching_config(spec).to_dict(), tmp / "config.json")
        code = run_calibrate(tmp / "observations.jsonl", tmp / "imu.csv", tmp / "config.json", tmp / "out")
        if code != EXIT_OK:
            return code
        m = compare_calibrations(load_report(tmp / "out" / "report.json").calib, spec.calib)
    ok = (m["rotation_deg"] < 1e-3 and m["translation_cm"] < 0.01
          and abs(m["time_offset_ms"]) < 0.01 and m["gravity_deg"] < 1e-3)
    print(json.dumps({"selftest": "pass" if ok else "fail", **m}))
    return EXIT_OK if ok else EXIT_INTERNAL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctcalib", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", help="estimate camera-IMU calibration from recorded data")
    c.add_argument("--observations", required=True)
    c.add_argument("--imu", required=True)
    c.add_argument("--config")
    c.add_argument("--out", required=True)
    c.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    c.add_argument("--seed", type=int)

    s = sub.add_parser("simulate", help="write a synthetic dataset with ground truth")
    s.add_argument("--config", help="simulation spec JSON (defaults used when omitted)")
    s.add_argument("--out", required=True)
    s.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    s.add_argument("--seed", type=int)

    e = sub.add_parser("evaluate", help="compare reports against ground truth")
    e.add_argument("--report", action="append", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--out", help="optional JSON file for the metrics")

    t = sub.add_parser("selftest", help="noise-free simulate/calibrate round trip")
    t.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "calibrate":
            return run_calibrate(args.observations, args.imu, args.config, args.out, args.override, args.seed)
        if args.command == "simulate":
            return run_simulate(args.config, args.out, args.override, args.seed)
        if args.command == "evaluate":
            return run_evaluate(args.report, args.truth, args.out)
        return run_selftest(args.seed)
    except CalibError as exc:
        return _fail(exc)
    except Exception as exc:  # noqa: BLE001
        print(f"error: stage=internal kind={type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
