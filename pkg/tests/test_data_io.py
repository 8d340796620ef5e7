import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctcalib.data_io import (
    CalibConfig, CalibrationReport, GridPattern, ImuStream, apply_overrides, load_config,
    load_grid_observations, load_imu, load_report, save_grid_observations, save_imu, write_report,
)
from ctcalib.errors import ConfigError, DataError, InsufficientDataError
from ctcalib.params import CalibParams, euler_to_matrix
from ctcalib.sensors import ImuIntrinsics


def pts_row(n, offset=0.0):
    return [[10.0 * i + offset, 5.0 * i, 0.05 * (i % 3), 0.05 * (i // 3), 0.0] for i in range(n)]


def write_lines(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records))
    return path


class TestObservations:
    def test_three_patterns_sorted(self, tmp_path):
        recs = [{"t": t, "complete": True, "pts": pts_row(6)} for t in (0.3, 0.1, 0.2)]
        pats = load_grid_observations(write_lines(tmp_path / "o.jsonl", recs), min_patterns=3)
        assert [p.timestamp for p in pats] == [0.1, 0.2, 0.3]
        assert len(pats[0]) == 6

    def test_three_point_pattern_rejected(self, tmp_path, caplog):
        recs = [{"t": 0.0, "complete": False, "pts": pts_row(3)}] + [{"t": 1.0 + i, "pts": pts_row(5)} for i in range(3)]
        rejected = []
        with caplog.at_level(logging.WARNING):
            pats = load_grid_observations(write_lines(tmp_path / "o.jsonl", recs), 3, rejected)
        assert len(pats) == 3
        assert rejected[0][0] == 1 and "pattern below PnP minimum" in rejected[0][1]
        assert "pattern below PnP minimum" in caplog.text

    def test_duplicated_board_point_rejected(self, tmp_path):
        bad = pts_row(5)
        bad[4][2:] = bad[0][2:]
        recs = [{"t": 0.0, "pts": bad}] + [{"t": 1.0 + i, "pts": pts_row(5)} for i in range(3)]
        rejected = []
        pats = load_grid_observations(write_lines(tmp_path / "o.jsonl", recs), 3, rejected)
        assert len(pats) == 3 and "duplicated" in rejected[0][1]

    def test_off_plane_point_rejected(self):
        pts = np.array(pts_row(5))
        pts[2, 4] = 0.01
        with pytest.raises(DataError):
            GridPattern(0.0, pts[:, :2], pts[:, 2:])

    def test_malformed_row_reports_line(self, tmp_path):
        p = tmp_path / "o.jsonl"
        p.write_text(json.dumps({"t": 0.0, "pts": pts_row(5)}) + "\n{not json\n")
        with pytest.raises(DataError, match=":2:"):
            load_grid_observations(p, 1)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_grid_observations(tmp_path / "nope.jsonl")

    def test_too_few_patterns(self, tmp_path):
        recs = [{"t": float(i), "pts": pts_row(5)} for i in range(19)]
        with pytest.raises(InsufficientDataError):
            load_grid_observations(write_lines(tmp_path / "o.jsonl", recs))

    def test_round_trip(self, tmp_path, short_sim):
        pats = short_sim[3]
        save_grid_observations(pats, tmp_path / "o.jsonl")
        back = load_grid_observations(tmp_path / "o.jsonl")
        assert len(back) == len(pats)
        for a, b in zip(pats, back):
            assert a.timestamp == b.timestamp and a.complete == b.complete
            np.testing.assert_array_equal(a.pixels, b.pixels)
            np.testing.assert_array_equal(a.board_points, b.board_points)

    def test_scientific_notation(self, tmp_path):
        p = tmp_path / "o.jsonl"
        rows = [f'{{"t": {i}e-1, "pts": {json.dumps(pts_row(4))}}}' for i in range(3)]
        p.write_text("\n".join(rows) + "\n")
        assert [x.timestamp for x in load_grid_observations(p, 3)] == [0.0, 0.1, 0.2]


def write_imu_csv(path, rows, header="t,wx,wy,wz,ax,ay,az"):
    path.write_text(header + "\n" + "".join(",".join(repr(float(v)) for v in r) + "\n" for r in rows))
    return path


class TestImu:
    def test_clean_200hz(self, tmp_path):
        rows = [[i * 0.005, 0.1, 0.2, 0.3, 0.0, 0.0, 9.8] for i in range(400)]
        s = load_imu(write_imu_csv(tmp_path / "imu.csv", rows))
        assert len(s) == 400
        assert s.median_interval == pytest.approx(0.005)

    def test_out_of_order_row(self, tmp_path):
        rows = [[t, 0, 0, 0, 0, 0, 0] for t in (0.0, 0.005, 0.003, 0.01)]
        with pytest.raises(DataError, match=":4:"):
            load_imu(write_imu_csv(tmp_path / "imu.csv", rows))

    def test_empty_file(self, tmp_path):
        p = tmp_path / "imu.csv"
        p.write_text("")
        with pytest.raises(InsufficientDataError):
            load_imu(p)

    def test_header_only(self, tmp_path):
        with pytest.raises(InsufficientDataError):
            load_imu(write_imu_csv(tmp_path / "imu.csv", []))

    def test_wrong_header(self, tmp_path):
        with pytest.raises(DataError, match="header"):
            load_imu(write_imu_csv(tmp_path / "imu.csv", [[0, 0, 0, 0, 0, 0, 0]], header="t,gx,gy,gz,ax,ay,az"))

    def test_jitter_warning(self, tmp_path, caplog):
        ts = np.cumsum(np.r_[0.0, np.full(50, 0.005), 0.009, np.full(10, 0.005)])
        rows = [[t, 0, 0, 0, 0, 0, 0] for t in ts]
        with caplog.at_level(logging.WARNING):
            load_imu(write_imu_csv(tmp_path / "imu.csv", rows))
        assert "jitter" in caplog.text

    def test_round_trip_bit_exact(self, tmp_path, short_sim):
        imu = short_sim[2]
        save_imu(imu, tmp_path / "imu.csv")
        back = load_imu(tmp_path / "imu.csv")
        np.testing.assert_array_equal(back.t, imu.t)
        np.testing.assert_array_equal(back.gyro, imu.gyro)
        np.testing.assert_array_equal(back.accel, imu.accel)

    def test_stream_indexing(self):
        s = ImuStream(np.arange(5.0), np.ones((5, 3)), np.zeros((5, 3)))
        assert s[2].timestamp == 2.0
        assert len(s[1:3]) == 2


class TestConfig:
    def test_defaults(self):
        cfg = load_config()
        assert cfg.gravity_magnitude == 9.80665
        assert cfg.time_offset_bound == 0.1
        assert not cfg.estimate_imu_mapping

    def test_file_and_overrides(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"noise": {"pixel": 1.5}, "seed": 4}))
        cfg = load_config(p, ["solver.max_iterations=7", "time_offset_bound=0.2"])
        assert cfg.noise.pixel == 1.5 and cfg.noise.gyro == 0.005
        assert cfg.solver.max_iterations == 7 and cfg.time_offset_bound == 0.2 and cfg.seed == 4

    @pytest.mark.parametrize("bad", [["noise.gyro=0"], ["time_offset_bound=-1"], ["nope=1"], ["seed"]])
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            load_config(None, bad)

    def test_unknown_key_in_file(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"bogus": 1}))
        with pytest.raises(ConfigError, match="bogus"):
            load_config(p)

    def test_override_parses_json_values(self):
        d = apply_overrides({"a": {"b": 1}, "c": "x"}, ["a.b=[1, 2]", "c=hello"])
        assert d == {"a": {"b": [1, 2]}, "c": "hello"}

    def test_dict_round_trip(self):
        cfg = load_config(None, ["noise.accel=0.05"])
        assert CalibConfig.from_dict(cfg.to_dict()) == cfg


floats = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def sample_report(values=(0.1, -0.2, 0.3)):
    calib = CalibParams(euler_to_matrix([1.0, 2.0, 3.0]), values, 0.0123456789012345678,
                        ImuIntrinsics(acc_bias=[1e-17, 2.0 / 3.0, np.pi]))
    return CalibrationReport(calib, calib.copy(), {"hand_eye": {"pairs": 12}},
                             {"gyro": {"count": 3, "rmse": 0.1, "downweighted_fraction": 0.0}},
                             [{"iteration": 0, "cost": 1.0 / 3.0, "gradient_norm": 2.0}],
                             {"total_s": 0.5}, "converged", 1, 1.0 / 3.0, 1e-20)


class TestReport:
    def test_round_trip(self, tmp_path):
        r = sample_report()
        write_report(r, tmp_path / "r.json")
        back = load_report(tmp_path / "r.json")
        assert back.to_dict() == r.to_dict()

    @settings(max_examples=25)
    @given(st.tuples(floats, floats, floats))
    def test_round_trip_floats(self, tmp_path_factory, t):
        path = tmp_path_factory.mktemp("r") / "r.json"
        r = sample_report(t)
        write_report(r, path)
        np.testing.assert_array_equal(load_report(path).calib.t_cb, r.calib.t_cb)

    def test_empty_trace(self, tmp_path):
        r = sample_report()
        r.trace = []
        write_report(r, tmp_path / "r.json")
        assert load_report(tmp_path / "r.json").trace == []

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(DataError, match="cannot write"):
            write_report(sample_report(), blocker / "r.json")

    def test_corrupt(self, tmp_path):
        p = tmp_path / "r.json"
        p.write_text("{")
        with pytest.raises(DataError):
            load_report(p)
