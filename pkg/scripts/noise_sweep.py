"""Monte-Carlo repeatability: calibrate noisy simulations over several seeds.

    python3 scripts/noise_sweep.py --seeds 10 --out results/noise_sweep.json
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from ctcalib.cli import matching_config
from ctcalib.estimator import SolverOptions, batch_optimize
from ctcalib.initializer import initialize
from ctcalib.simulator import SimNoiseSpec, SimSpec, compare_calibrations, simulate


def calibrate(spec):
    _, imu, patterns = simulate(spec)
    cfg = matching_config(spec)
    state = initialize(patterns, imu, cfg)
    _, report = batch_optimize(state, state.patterns, imu, SolverOptions.from_config(cfg), cfg.camera)
    return compare_calibrations(report.calib, spec.calib), report


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--duration", type=float, default=30.0)
    ap.add_argument("--gyro", type=float, default=0.005)
    ap.add_argument("--accel", type=float, default=0.02)
    ap.add_argument("--pixel", type=float, default=0.5)
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()

    noise = SimNoiseSpec(gyro=args.gyro, accel=args.accel, pixel=args.pixel, dropout=0.1, incomplete=0.2)
    rows = []
    for seed in range(args.seeds):
        clock = time.perf_counter()
        m, report = calibrate(SimSpec(duration=args.duration, noise=noise, seed=seed))
        m.update(seed=seed, iterations=report.iterations, status=report.status, seconds=time.perf_counter() - clock)
        rows.append(m)
        print(f"seed {seed}: rot {m['rotation_deg']:.4f} deg  trans {m['translation_cm']:.4f} cm  "
              f"offset {m['time_offset_ms']:+.4f} ms  ({m['seconds']:.1f} s, {report.status})")

    euler = np.array([r["euler_delta_deg"] for r in rows])
    trans = np.array([r["translation_delta_cm"] for r in rows])
    toff = np.array([r["time_offset_ms"] for r in rows])
    ddof = 1 if len(rows) > 1 else 0
    summary = {"euler_std_deg": euler.std(0, ddof=ddof).tolist(), "translation_std_cm": trans.std(0, ddof=ddof).tolist(),
               "time_offset_std_ms": float(toff.std(ddof=ddof)), "runs": rows}
    print("euler std (deg):", np.round(summary["euler_std_deg"], 4))
    print("translation std (cm):", np.round(summary["translation_std_cm"], 4))
    print(f"time offset std (ms): {summary['time_offset_std_ms']:.4f}")
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
