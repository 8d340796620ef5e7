"""Sweep the true camera-IMU time offset and report the coarse and refined estimates.

The coarse estimate comes from angular-speed cross-correlation alone; the
refined one from the full initialize + batch pipeline.
"""

import argparse

from ctcalib.cli import matching_config
from ctcalib.estimator import SolverOptions, batch_optimize
from ctcalib.initializer import initialize
from ctcalib.simulator import SimNoiseSpec, SimSpec, default_truth_calib, simulate


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--offsets-ms", type=float, nargs="+", default=[-100, -50, -20, 0, 20, 50, 100])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--duration", type=float, default=30.0)
    ap.add_argument("--noise-free", action="store_true")
    args = ap.parse_args()

    noise = SimNoiseSpec() if args.noise_free else SimNoiseSpec(0.005, 0.02, 0.5, 0.1, 0.2)
    print(f"{'true ms':>8} {'xcorr ms':>9} {'final ms':>9} {'final err ms':>13}")
    for off_ms in args.offsets_ms:
        calib = default_truth_calib()
        calib.time_offset = off_ms / 1000.0
        spec = SimSpec(duration=args.duration, calib=calib, noise=noise, seed=args.seed)
        _, imu, patterns = simulate(spec)
        cfg = matching_config(spec)
        state = initialize(patterns, imu, cfg)
        _, report = batch_optimize(state, state.patterns, imu, SolverOptions.from_config(cfg), cfg.camera)
        coarse = 1000.0 * state.diagnostics["cross_correlation_offset"]
        final = 1000.0 * report.calib.time_offset
        print(f"{off_ms:8.1f} {coarse:9.2f} {final:9.3f} {final - off_ms:13.4f}")


if __name__ == "__main__":
    main()
