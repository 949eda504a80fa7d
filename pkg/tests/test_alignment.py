import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lcfusion.alignment import (
    REFERENCE_ATTITUDE,
    InitialAttitude,
    MotionDetected,
    align_static,
    inject_epsilon,
    level_from_accel,
    parse_axis_map,
)
from lcfusion.geo import GeodeticPosition, euler_to_attitude, gravity
from lcfusion.ins import NavState, stationary_imu
from lcfusion.sensors import AxisNoiseParams, BiasState, ImuLog, SensorParams, corrupt_series

LAT = math.radians(37.38)
G = gravity(LAT, 0.0)


def _static(euler, n=6001, rate=100.0, lat=LAT):
    s = NavState(euler_to_attitude(*euler), np.zeros(3), GeodeticPosition(lat, 0.0, 0.0))
    w, f = stationary_imu(s)
    return ImuLog(np.arange(n) / rate, np.tile(w, (n, 1)), np.tile(f, (n, 1)))


def _forward_tilt(roll, pitch, g=G):
    return euler_to_attitude(roll, pitch, 0.3).dcm.T @ np.array([0.0, 0.0, -g])


class TestLevel:
    def test_level(self):
        assert level_from_accel([0.0, 0.0, -G], G) == (0.0, 0.0)

    def test_forward_tilt_example(self):
        roll, pitch = level_from_accel(_forward_tilt(0.2, -0.4), G)
        assert roll == pytest.approx(0.2, abs=1e-12)
        assert pitch == pytest.approx(-0.4, abs=1e-12)

    @given(st.floats(-math.pi / 3, math.pi / 3), st.floats(-math.pi / 3, math.pi / 3))
    def test_inverts_forward_tilt(self, roll, pitch):
        r, p = level_from_accel(_forward_tilt(roll, pitch), G)
        assert abs(r - roll) < 1e-9 and abs(p - pitch) < 1e-9

    @pytest.mark.parametrize("scale", [0.3, 1.7])
    def test_gravity_band(self, scale):
        with pytest.raises(ValueError, match="static"):
            level_from_accel([0.0, 0.0, -scale * G], G)


class TestAlignStatic:
    def test_level_log(self):
        att = align_static(_static((0.0, 0.0, 0.0)), yaw=0.7, latitude=LAT)
        assert (att.roll, att.pitch, att.yaw) == (pytest.approx(0.0, abs=1e-15), pytest.approx(0.0, abs=1e-15), 0.7)
        np.testing.assert_array_equal(att.covariance, np.zeros((3, 3)))

    def test_reference_attitude_log(self):
        roll, pitch, yaw = REFERENCE_ATTITUDE
        att = align_static(_static(REFERENCE_ATTITUDE), yaw=yaw, latitude=LAT)
        assert abs(att.roll - roll) < 1e-9 and abs(att.pitch - pitch) < 1e-9
        assert att.yaw == yaw

    def test_gyrocompass_noise_free(self):
        att = align_static(_static(REFERENCE_ATTITUDE), yaw="gyrocompass", latitude=LAT)
        assert att.yaw == pytest.approx(REFERENCE_ATTITUDE[2], abs=1e-9)
        assert not att.low_confidence

    def test_gyrocompass_needs_latitude(self):
        with pytest.raises(ValueError, match="latitude"):
            align_static(_static((0.0, 0.0, 0.0)), yaw="gyrocompass")

    def test_motion_detected(self):
        log = _static((0.0, 0.0, 0.0))
        log.gyro[3000, 2] = 0.2
        with pytest.raises(MotionDetected):
            align_static(log, latitude=LAT)

    def test_short_log(self):
        with pytest.raises(ValueError, match="shorter"):
            align_static(_static((0.0, 0.0, 0.0), n=100), latitude=LAT)

    def test_axis_map(self):
        body = _static((0.1, -0.2, 0.0))
        M = parse_axis_map("x=+y, y=+x, z=-z")
        # device samples satisfy body = M @ device
        device = ImuLog(body.t, body.gyro @ M, body.accel @ M)
        a = align_static(device, latitude=LAT, axis_map=M)
        b = align_static(body, latitude=LAT)
        assert a.roll == pytest.approx(b.roll, abs=1e-12) and a.pitch == pytest.approx(b.pitch, abs=1e-12)

    def test_gyrocompass_monte_carlo(self):
        # white gyro noise at the tabulated random-walk density over a 2 h log; the
        # propagated heading sigma should match the spread over 50 seeds within a factor of 2
        rw = 7.1242e-6
        ax = AxisNoiseParams(rw, 0.0, 0.0, 0.0, 1000.0)
        quiet = AxisNoiseParams(0.0, 0.0, 0.0, 0.0, 1.0)
        params = SensorParams((ax,) * 3, (quiet,) * 3)
        clean = _static(REFERENCE_ATTITUDE, n=720000)
        errs, sig = [], []
        for seed in range(50):
            log, _ = corrupt_series(clean.t, clean.gyro, clean.accel, params, BiasState(), np.random.default_rng(seed))
            att = align_static(log, yaw="gyrocompass", latitude=LAT)
            errs.append(att.yaw - REFERENCE_ATTITUDE[2])
            sig.append(math.sqrt(att.covariance[2, 2]))
        ratio = np.std(errs) / np.mean(sig)
        assert 0.5 <= ratio <= 2.0


class TestAxisMap:
    def test_identity(self):
        np.testing.assert_array_equal(parse_axis_map("identity"), np.eye(3))

    @pytest.mark.parametrize("text", ["x=+y, y=+y, z=+z", "w=+x", "x=+q"])
    def test_rejects(self, text):
        with pytest.raises(ValueError):
            parse_axis_map(text)


class TestInject:
    def test_zero(self):
        att = InitialAttitude(*REFERENCE_ATTITUDE, covariance=np.eye(3) * 1e-6)
        assert inject_epsilon(att, 0.0) == att

    def test_tenth_degree(self):
        eps = math.radians(0.1)
        att = InitialAttitude(*REFERENCE_ATTITUDE, covariance=np.eye(3) * 1e-6)
        out = inject_epsilon(att, eps)
        np.testing.assert_array_equal(out.angles, np.array(REFERENCE_ATTITUDE) + eps)
        np.testing.assert_array_equal(out.covariance, att.covariance)

    def test_rejects_bad_covariance(self):
        with pytest.raises(ValueError):
            InitialAttitude(0.0, 0.0, 0.0, covariance=-np.eye(3))
