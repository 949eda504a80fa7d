import math

import numpy as np
import pytest
from scipy.linalg import expm

import fd_oracle
from lcfusion.alignment import InitialAttitude
from lcfusion.ekf import (
    ATT,
    BA,
    BG,
    POS,
    VEL,
    FilterBreakdown,
    FilterDivergence,
    FilterState,
    FuseConfig,
    GnssAccuracy,
    GnssFix,
    LinearModel,
    build_F,
    build_G,
    build_H,
    check_covariance,
    continuous_noise,
    discretize,
    feedback,
    fuse_run,
    make_measurement,
    predict,
    update,
)
from lcfusion.geo import (
    GeodeticPosition,
    earth_radii,
    euler_to_attitude,
    gravity_height_derivative,
    gravity_latitude_derivative,
    quat_multiply,
    quat_to_rotvec,
    skew,
)
from lcfusion.ins import NavState
from lcfusion.scenario import Scenario, default_params
from lcfusion.sensors import BiasState, ImuLog

PARAMS = default_params()
TAU = PARAMS.vector("correlation_time")


def _nav(lat=0.6, v=(3.0, -2.0, 0.5), euler=(0.1, -0.05, 1.0)):
    return NavState(euler_to_attitude(*euler), np.array(v), GeodeticPosition(lat, 0.3, 100.0))


def _model(H, R, n):
    return LinearModel(np.eye(n), np.zeros((n, 1)), np.zeros((n, n)), H, R)


def _random_spd(rng, n, scale=1.0):
    A = rng.normal(size=(n, n))
    return scale * (A @ A.T + n * np.eye(n))


class TestBuildF:
    def test_blocks(self):
        nav = _nav()
        C = nav.attitude.dcm
        f_n = np.array([0.3, -0.1, -9.8])
        F = build_F(nav, f_n, PARAMS)
        np.testing.assert_array_equal(F[ATT, BG], -C)
        np.testing.assert_array_equal(F[VEL, BA], C)
        np.testing.assert_array_equal(F[VEL, ATT], skew(f_n))
        np.testing.assert_array_equal(F[POS, VEL], np.eye(3))
        np.testing.assert_array_equal(F[ATT, BA], np.zeros((3, 3)))
        np.testing.assert_array_equal(F[BG, :9], np.zeros((3, 9)))

    def test_bias_diagonals(self):
        F = build_F(_nav(), [0.0, 0.0, -9.8], PARAMS)
        np.testing.assert_allclose(np.diag(F)[BG], [-0.001] * 3, rtol=1e-15)
        np.testing.assert_allclose(np.diag(F)[BA], [-1 / 30, -1 / 200, -1 / 300], rtol=1e-15)
        assert np.all(np.diag(F)[9:] < 0)

    def test_gravity_position_terms(self):
        nav = _nav(v=(0.0, 0.0, 0.0))
        F = build_F(nav, [0.0, 0.0, -9.8], PARAMS)
        lat, h = nav.position.latitude, nav.position.height
        r_m, _ = earth_radii(lat)
        assert F[5, 8] == pytest.approx(-gravity_height_derivative(lat, h), rel=1e-12)
        assert F[5, 6] == pytest.approx(gravity_latitude_derivative(lat, h) / (r_m + h), rel=1e-12)

    def test_rate_position_terms_at_rest(self):
        # at rest only the Earth rate depends on position: d(w_ie)/d(lat) / (R_M + h)
        nav = _nav(v=(0.0, 0.0, 0.0))
        F = build_F(nav, [0.0, 0.0, -9.8], PARAMS)
        lat = nav.position.latitude
        r_m, _ = earth_radii(lat)
        expected = 7.292115e-5 * np.array([-math.sin(lat), 0.0, -math.cos(lat)]) / (r_m + nav.position.height)
        np.testing.assert_allclose(F[ATT, 6], expected, rtol=1e-12)
        np.testing.assert_array_equal(F[ATT, 8], np.zeros(3))
        np.testing.assert_array_equal(F[ATT, 7], np.zeros(3))

    def test_rejects_polar(self):
        with pytest.raises(ValueError):
            build_F(_nav(lat=math.radians(89.9)), [0.0, 0.0, -9.8], PARAMS)

    @pytest.mark.parametrize("nav,w,f", list(fd_oracle.operating_points(5, seed=11)))
    def test_finite_difference_nonzero(self, nav, w, f):
        F = build_F(nav, nav.attitude.dcm @ f, PARAMS)
        Ffd = fd_oracle.fd_jacobian(nav, w, f, TAU)
        assert fd_oracle.compare(F, Ffd) < 1e-3
        assert fd_oracle.tiny_error(F, Ffd) < fd_oracle.TINY_TOL

    @pytest.mark.parametrize("nav,w,f", list(fd_oracle.operating_points(5, seed=12)))
    def test_finite_difference_zero_pattern(self, nav, w, f):
        F = build_F(nav, nav.attitude.dcm @ f, PARAMS)
        Ffd = fd_oracle.fd_jacobian(nav, w, f, TAU, step=fd_oracle.ZERO_STEP)
        assert fd_oracle.compare(F, Ffd, nonzero=False) < 1e-9


class TestModel:
    def test_build_G(self):
        nav = _nav()
        C = nav.attitude.dcm
        G = build_G(nav)
        assert G.shape == (15, 12)
        np.testing.assert_array_equal(G[ATT, 0:3], -C)
        np.testing.assert_array_equal(G[VEL, 3:6], C)
        np.testing.assert_array_equal(G[BG, 6:9], np.eye(3))
        np.testing.assert_array_equal(G[BA, 9:12], np.eye(3))
        assert np.count_nonzero(G[POS]) == 0

    def test_noise_density(self):
        Q = continuous_noise(PARAMS)
        assert Q[0, 0] == 7.1242e-6**2
        assert Q[6, 6] == 3.1686e-6**2
        assert Q[11, 11] == 0.0135**2

    def test_discretize_matches_expm(self):
        nav = _nav()
        G, Q = build_G(nav), continuous_noise(PARAMS)
        rng = np.random.default_rng(8)
        A = rng.normal(scale=0.1, size=(15, 15))
        stable = A - (np.abs(np.linalg.eigvals(A)).max() + 0.1) * np.eye(15)
        for F in (build_F(nav, nav.attitude.dcm @ [0.2, 0.1, -9.8], PARAMS), stable):
            Phi, _ = discretize(F, G, Q, 0.01)
            E = expm(F * 0.01)
            assert np.linalg.norm(Phi - E) / np.linalg.norm(E) < 1e-6

    def test_discretize_zero_dt(self):
        Phi, Qd = discretize(np.ones((15, 15)), build_G(_nav()), continuous_noise(PARAMS), 0.0)
        np.testing.assert_array_equal(Phi, np.eye(15))
        np.testing.assert_array_equal(Qd, np.zeros((15, 15)))

    def test_discretize_noise(self):
        nav = _nav()
        G, Q = build_G(nav), continuous_noise(PARAMS)
        _, Qd = discretize(np.zeros((15, 15)), G, Q, 0.5)
        np.testing.assert_allclose(Qd, G @ Q @ G.T * 0.5, rtol=1e-14, atol=0)
        assert np.linalg.eigvalsh(Qd).min() > -1e-25

    def test_discretize_rejects(self):
        with pytest.raises(ValueError):
            discretize(np.zeros((15, 15)), np.zeros((15, 12)), np.zeros((12, 12)), -0.1)

    def test_H(self):
        H = build_H()
        np.testing.assert_array_equal(H @ H.T, np.eye(6))
        x = np.arange(15.0)
        np.testing.assert_array_equal(H @ x, x[3:9])

    def test_R(self):
        np.testing.assert_array_equal(np.diag(GnssAccuracy().R()), [0.1**2] * 3 + [9.0, 9.0, 25.0])


class TestPredict:
    def test_zero_state_stays_zero(self):
        rng = np.random.default_rng(0)
        Phi = np.eye(15) + 0.01 * rng.normal(size=(15, 15))
        fs = FilterState(np.zeros(15), np.eye(15))
        out = predict(fs, LinearModel(Phi, np.zeros((15, 12)), np.eye(15), None, None))
        assert np.count_nonzero(out.x) == 0

    def test_identity_transition(self):
        rng = np.random.default_rng(1)
        P = _random_spd(rng, 15)
        out = predict(FilterState(np.zeros(15), P), LinearModel(np.eye(15), None, 0.3 * np.eye(15), None, None))
        np.testing.assert_allclose(out.P, P + 0.3 * np.eye(15), rtol=1e-15)

    def test_extended_precision(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            Phi = np.eye(15) + 0.1 * rng.normal(size=(15, 15))
            P = _random_spd(rng, 15)
            Qd = _random_spd(rng, 15, 1e-3)
            x = rng.normal(size=15)
            out = predict(FilterState(x, P), LinearModel(Phi, None, Qd, None, None))
            L = np.longdouble
            Pl = Phi.astype(L) @ P.astype(L) @ Phi.T.astype(L) + Qd.astype(L)
            xl = Phi.astype(L) @ x.astype(L)
            assert np.max(np.abs(out.P - Pl)) / np.max(np.abs(Pl)) < 1e-12
            assert np.max(np.abs(out.x - xl)) / np.max(np.abs(xl)) < 1e-12
            assert np.trace(out.P) >= np.trace(Phi @ P @ Phi.T)

    def test_control_input(self):
        G = np.zeros((15, 12))
        G[BG, 6:9] = np.eye(3)
        out = predict(FilterState(np.zeros(15), np.eye(15)), LinearModel(np.eye(15), G, np.zeros((15, 15)), None, None), u=np.arange(12.0))
        np.testing.assert_array_equal(out.x[BG], [6.0, 7.0, 8.0])

    def test_rejects_non_psd(self):
        P = np.eye(15)
        P[0, 0] = -1.0
        with pytest.raises(ValueError, match="semidefinite"):
            predict(FilterState(np.zeros(15), P), LinearModel(np.eye(15), None, np.zeros((15, 15)), None, None))

    def test_check_covariance_asymmetric(self):
        P = np.eye(3)
        P[0, 1] = 0.1
        with pytest.raises(ValueError, match="symmetric"):
            check_covariance(P)


class TestUpdate:
    def test_scalar(self):
        fs, inn = update(FilterState(np.zeros(1), np.eye(1)), _model(np.eye(1), np.eye(1), 1), [2.0])
        assert fs.x[0] == 1.0 and fs.P[0, 0] == 0.5
        assert inn.nis == 2.0

    def test_large_R_limit(self):
        rng = np.random.default_rng(3)
        P = _random_spd(rng, 15)
        x = rng.normal(size=15)
        fs, _ = update(FilterState(x, P), _model(build_H(), 1e10 * np.eye(6), 15), rng.normal(size=6))
        np.testing.assert_allclose(fs.x, x, atol=1e-6)
        np.testing.assert_allclose(fs.P, P, rtol=1e-6)

    def test_weighted_least_squares(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            n, m = rng.integers(2, 8), rng.integers(1, 5)
            P = _random_spd(rng, n)
            R = _random_spd(rng, m, 0.5)
            H = rng.normal(size=(m, n))
            x0, y = rng.normal(size=n), rng.normal(size=m)
            fs, _ = update(FilterState(x0, P), _model(H, R, n), y)
            info = np.linalg.inv(P) + H.T @ np.linalg.solve(R, H)
            x_wls = np.linalg.solve(info, np.linalg.solve(P, x0) + H.T @ np.linalg.solve(R, y))
            np.testing.assert_allclose(fs.x, x_wls, rtol=1e-9, atol=1e-9 * np.abs(x_wls).max())
            np.testing.assert_allclose(fs.P, np.linalg.inv(info), rtol=1e-9, atol=1e-9 * np.abs(fs.P).max())

    def test_joseph_equivalence(self):
        rng = np.random.default_rng(5)
        P = _random_spd(rng, 15)
        model = _model(build_H(), GnssAccuracy().R(), 15)
        y = rng.normal(size=6)
        a, _ = update(FilterState(np.zeros(15), P), model, y)
        b, _ = update(FilterState(np.zeros(15), P), model, y, joseph=True)
        np.testing.assert_allclose(a.P, b.P, rtol=0, atol=1e-8 * np.abs(P).max())
        np.testing.assert_array_equal(a.x, b.x)

    def test_gain_shrinks_with_R(self):
        P = np.eye(15)
        gains = []
        for r in (0.1, 1.0, 10.0, 100.0):
            fs, _ = update(FilterState(np.zeros(15), P), _model(build_H(), r * np.eye(6), 15), np.ones(6))
            gains.append(np.linalg.norm(fs.x))
        assert all(b < a for a, b in zip(gains, gains[1:]))

    def test_covariance_shrinks(self):
        rng = np.random.default_rng(6)
        P = _random_spd(rng, 15)
        fs, inn = update(FilterState(np.zeros(15), P), _model(build_H(), np.eye(6), 15), rng.normal(size=6))
        assert np.linalg.eigvalsh(P - fs.P).min() > -1e-9
        assert inn.nis >= 0

    def test_breakdown(self):
        with pytest.raises(FilterBreakdown):
            update(FilterState(np.zeros(15), np.zeros((15, 15))), _model(build_H(), np.zeros((6, 6)), 15), np.ones(6))


class TestMeasurement:
    def test_identical(self):
        nav = _nav()
        fix = GnssFix(nav.t, nav.position, nav.velocity)
        np.testing.assert_array_equal(make_measurement(nav, fix), np.zeros(6))

    def test_latitude_offset(self):
        nav = _nav()
        p = nav.position
        fix = GnssFix(0.0, GeodeticPosition(p.latitude - 1e-5, p.longitude, p.height), nav.velocity)
        r_m, _ = earth_radii(p.latitude)
        dy = make_measurement(nav, fix)
        assert dy[3] == pytest.approx(1e-5 * (r_m + p.height), rel=1e-9)
        np.testing.assert_array_equal(dy[[0, 1, 2, 5]], 0.0)

    def test_velocity_sign(self):
        nav = _nav()
        fix = GnssFix(0.0, nav.position, nav.velocity - [1.0, 0.0, 0.0])
        assert make_measurement(nav, fix)[0] == 1.0

    def test_rejects_time_skew(self):
        nav = _nav()
        with pytest.raises(ValueError, match="differ"):
            make_measurement(nav, GnssFix(2.0, nav.position, nav.velocity))


class TestFeedback:
    def test_zero_state(self):
        nav, bias = _nav(), BiasState()
        fs = FilterState(np.zeros(15), np.eye(15))
        out = feedback(nav, bias, fs)
        assert out[0] is nav and out[1] is bias and out[2] is fs

    def test_divergence(self):
        x = np.zeros(15)
        x[0] = 0.6
        with pytest.raises(FilterDivergence):
            feedback(_nav(), BiasState(), FilterState(x, np.eye(15)))

    def test_removes_known_error(self):
        # corrupt a state by dx with the oracle's convention, feed dx back, recover the state
        truth = _nav()
        dx = np.concatenate([[1e-3, -2e-3, 5e-4], [0.1, -0.2, 0.05], [3.0, -4.0, 1.0], np.zeros(6)])
        ins = fd_oracle.apply_error(truth, dx)
        ins = NavState(ins.attitude, ins.velocity, GeodeticPosition(*map(float, (ins.position.latitude, ins.position.longitude, ins.position.height))))
        out, _, fs = feedback(ins, BiasState(), FilterState(dx, np.eye(15)))
        assert np.count_nonzero(fs.x) == 0
        d_att = np.linalg.norm(quat_to_rotvec(quat_multiply(out.attitude.q, truth.attitude.inverse().q)))
        assert d_att < 1e-8
        np.testing.assert_allclose(out.velocity, truth.velocity, atol=1e-14)
        fix = GnssFix(0.0, truth.position, truth.velocity)
        assert np.abs(make_measurement(out, fix)[3:]).max() < 1e-5

    def test_bias_correction_adds(self):
        x = np.zeros(15)
        x[9:15] = np.arange(1.0, 7.0) * 1e-3
        _, bias, _ = feedback(_nav(), BiasState(np.ones(3), np.ones(3)), FilterState(x, np.eye(15)))
        np.testing.assert_allclose(bias.as_vector(), 1.0 + np.arange(1.0, 7.0) * 1e-3)

    def test_closed_loop_shrinks_innovation(self):
        rng = np.random.default_rng(7)
        P = np.diag(np.concatenate([[1e-4] * 3, [0.1**2] * 3, [5.0**2] * 3, [1e-10] * 3, [1e-6] * 3]))
        model = _model(build_H(), GnssAccuracy().R(), 15)
        better = 0
        for _ in range(100):
            truth = _nav(lat=rng.uniform(-1, 1), v=rng.normal(0, 5, 3))
            dx = np.linalg.cholesky(P) @ rng.normal(size=15)
            dx[9:] = 0.0
            ins = fd_oracle.apply_error(truth, dx)
            ins = NavState(ins.attitude, ins.velocity, GeodeticPosition(*map(float, (ins.position.latitude, ins.position.longitude, ins.position.height))))
            fix = GnssFix(0.0, truth.position, truth.velocity)
            dy = make_measurement(ins, fix)
            fs, _ = update(FilterState(np.zeros(15), P), model, dy)
            ins2, _, fs2 = feedback(ins, BiasState(), fs)
            assert np.count_nonzero(fs2.x) == 0
            better += np.linalg.norm(make_measurement(ins2, fix)) < np.linalg.norm(dy)
        assert better >= 95


def _perfect(truth):
    return [GnssFix(s.t, s.position, s.velocity) for s in truth[::100]]


def _ideal_with_offsets(ideal):
    g_off, a_off = PARAMS.static_offsets()
    return ImuLog(ideal.t, ideal.gyro + g_off, ideal.accel + a_off)


class TestFuseRun:
    def test_noise_free_tracks_truth(self, default_truth, default_ideal):
        truth = default_truth
        init = InitialAttitude(*truth[0].euler)
        r = fuse_run(_ideal_with_offsets(default_ideal), _perfect(truth), PARAMS, init, (truth[0].position, truth[0].velocity))
        assert not r.diverged
        assert len(r.navs) == len(truth) and len(r.innovations) == 121
        assert np.abs(np.array([i.dy for i in r.innovations])).max() < 1e-3
        worst = max(np.linalg.norm(quat_to_rotvec(quat_multiply(a.attitude.q, b.attitude.inverse().q))) for a, b in zip(r.navs, truth))
        assert worst < 1e-6
        assert max(np.linalg.norm(a.velocity - b.velocity) for a, b in zip(r.navs, truth)) < 1e-4
        health = np.array(r.covariance_health)
        assert health[:, 1].min() >= -1e-10 and health[:, 2].max() == 0.0

    def test_deterministic(self, default_truth, default_ideal):
        imu = _ideal_with_offsets(default_ideal)
        rng = np.random.default_rng(0)
        fixes = [GnssFix(f.t, f.position, f.velocity + rng.normal(0, 0.1, 3)) for f in _perfect(default_truth)]
        init = InitialAttitude(0.01, 0.05, 1.2)
        pv = (default_truth[0].position, default_truth[0].velocity)
        a = fuse_run(imu, fixes, PARAMS, init, pv)
        b = fuse_run(imu, fixes, PARAMS, init, pv)
        assert a.navs == b.navs
        np.testing.assert_array_equal(a.nis(), b.nis())

    def test_divergence_returns_partial(self, default_truth, default_ideal):
        imu = _ideal_with_offsets(default_ideal)
        imu.accel[500, 0] = np.nan
        truth = default_truth
        r = fuse_run(imu, _perfect(truth), PARAMS, InitialAttitude(*truth[0].euler), (truth[0].position, truth[0].velocity))
        assert r.diverged and "finite" in r.error
        assert len(r.navs) == 501

    def test_fix_off_grid_is_skipped(self, default_truth, default_ideal):
        truth = default_truth[:1001]
        imu = _ideal_with_offsets(ImuLog(default_ideal.t[:1001], default_ideal.gyro[:1001], default_ideal.accel[:1001]))
        fixes = _perfect(truth) + [GnssFix(20.0, truth[-1].position, truth[-1].velocity)]
        r = fuse_run(imu, fixes, PARAMS, InitialAttitude(*truth[0].euler), (truth[0].position, truth[0].velocity), FuseConfig(check_covariance=False))
        assert len(r.innovations) == 11
