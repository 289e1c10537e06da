import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mmwave_nbp.errors import DegenerateGeometryError, InsufficientPathsError
from mmwave_nbp.geometry import (
    NoiseSpec,
    Point2,
    Pose,
    Scenario,
    StateVector,
    distance_from_toa,
    log_factor_aoa,
    log_factor_aod,
    log_factor_distance,
    log_likelihood,
    noiseless_observations,
    paper_scenario,
    sample_observations,
    toa_from_distance,
    true_path_parameters,
    wrap_angle,
)

angles = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False)


class TestWrapAngle:
    @pytest.mark.parametrize("x, expected", [
        (math.pi, math.pi),
        (-math.pi, math.pi),
        (1.5 * math.pi, -0.5 * math.pi),
        (0.0, 0.0),
        (2 * math.pi, 0.0),
        (-0.5 * math.pi, -0.5 * math.pi),
        (6.2, 6.2 - 2 * math.pi),
    ])
    def test_table(self, x, expected):
        assert wrap_angle(x) == pytest.approx(expected, abs=1e-12)

    def test_scalar_returns_float(self):
        assert isinstance(wrap_angle(1.0), float)

    def test_array(self):
        out = wrap_angle(np.array([math.pi, -math.pi, 3 * math.pi]))
        assert np.allclose(out, math.pi)

    @given(angles)
    def test_range(self, x):
        w = wrap_angle(x)
        assert -math.pi < w <= math.pi

    @given(angles)
    def test_same_direction(self, x):
        w = wrap_angle(x)
        assert math.cos(w) == pytest.approx(math.cos(x), abs=1e-9)
        assert math.sin(w) == pytest.approx(math.sin(x), abs=1e-9)

    @given(angles)
    def test_idempotent(self, x):
        assert wrap_angle(wrap_angle(x)) == wrap_angle(x)


class TestTruePathParameters:
    def test_path0(self):
        t = true_path_parameters(paper_scenario(), 0)
        # independent evaluation
        d = math.hypot(20, 10) + math.hypot(50, 60)
        rx = math.atan2(-60, -50) - math.pi / 4
        assert t.d == pytest.approx(d, abs=1e-12)
        assert t.theta_tx == pytest.approx(math.atan2(10, 20), abs=1e-15)
        assert t.theta_rx == pytest.approx(rx, abs=1e-15)
        # the rounded reference values are off by about one unit in their last place
        assert t.d == pytest.approx(100.463178, abs=2e-6)
        assert t.theta_tx == pytest.approx(0.4636476, abs=1e-7)
        assert t.theta_rx == pytest.approx(-3.0509329, abs=2e-7)

    def test_all_paths_against_direct_formula(self):
        sc = paper_scenario()
        for j, s in enumerate(sc.incidence_points):
            t = true_path_parameters(sc, j)
            rx = math.atan2(s.y - 70, s.x - 70) - math.pi / 4
            rx = (rx + math.pi) % (2 * math.pi) - math.pi
            assert t.d == pytest.approx(math.hypot(*s) + math.hypot(s.x - 70, s.y - 70))
            assert t.theta_tx == pytest.approx(math.atan2(s.y, s.x))
            assert math.cos(t.theta_rx - rx) == pytest.approx(1.0)

    def test_coincident_point_is_rejected(self):
        with pytest.raises(DegenerateGeometryError):
            Scenario(Point2(0, 0), Pose(Point2(70, 70), 0.0),
                     (Point2(0, 0), Point2(80, -10), Point2(40, 0)))

    def test_index_out_of_range(self):
        with pytest.raises(IndexError):
            true_path_parameters(paper_scenario(), 3)

    def test_fewer_than_three_paths(self):
        with pytest.raises(InsufficientPathsError):
            Scenario(Point2(0, 0), Pose(Point2(70, 70), 0.0), (Point2(20, 10), Point2(40, 0)))

    def test_toa_roundtrip(self):
        assert distance_from_toa(toa_from_distance(100.0)) == pytest.approx(100.0)


class TestSampleObservations:
    def test_deterministic(self):
        sc = paper_scenario()
        noise = NoiseSpec.uniform(3, 0.2, math.radians(1))
        assert sample_observations(sc, noise, 7) == sample_observations(sc, noise, 7)

    def test_tiny_noise_matches_truth(self):
        sc = paper_scenario()
        noise = NoiseSpec.uniform(3, 1e-15, 1e-15)
        obs = sample_observations(sc, noise, 3)
        truth = noiseless_observations(sc, noise)
        assert np.allclose(obs.as_array(), truth.as_array(), atol=1e-12)

    def test_noise_moments(self):
        sc = paper_scenario()
        noise = NoiseSpec.uniform(3, 0.5, 0.01)
        truth = noiseless_observations(sc, noise).as_array()
        draws = np.array([sample_observations(sc, noise, s).as_array() for s in range(2000)])
        err = draws - truth
        assert err[:, :, 0].std() == pytest.approx(0.5, rel=0.05)
        assert err[:, :, 1].std() == pytest.approx(0.01, rel=0.05)
        assert abs(err[:, :, 0].mean()) < 4 * 0.5 / math.sqrt(err[:, :, 0].size)

    def test_drop_path_too_few(self):
        sc = paper_scenario()
        obs = noiseless_observations(sc, NoiseSpec.uniform(3, 0.2, 0.01))
        with pytest.raises(InsufficientPathsError):
            obs.drop_path(0)

    def test_noise_spec_validation(self):
        with pytest.raises(ValueError):
            NoiseSpec.uniform(3, 0.0, 0.01)
        with pytest.raises(ValueError):
            NoiseSpec((0.1,), (0.1, 0.1), (0.1,))


class TestLogFactors:
    q = np.zeros(2)
    p = np.array([70.0, 70.0])
    s = np.array([20.0, 10.0])

    def test_distance_zero_residual(self):
        d = math.hypot(20, 10) + math.hypot(50, 60)
        assert log_factor_distance(d, self.p, self.q, self.s, 0.2) == pytest.approx(0.0)
        assert log_factor_distance(100.463178, self.p, self.q, self.s, 0.2) == \
            pytest.approx(0.0, abs=1e-9)

    def test_distance_one_sigma(self):
        d = math.hypot(20, 10) + math.hypot(50, 60)
        assert log_factor_distance(d + 0.2, self.p, self.q, self.s, 0.2) == pytest.approx(-0.5)

    def test_aod(self):
        b = math.atan2(10, 20)
        assert log_factor_aod(b, self.q, self.s, 0.1) == pytest.approx(0.0)
        assert log_factor_aod(b + 0.2, self.q, self.s, 0.1) == pytest.approx(-2.0)

    def test_aod_wraps_across_seam(self):
        # bearing -3.1 from q, measured +3.1: residual is 2 pi - 6.2
        s = np.array([math.cos(-3.1), math.sin(-3.1)]) * 10
        r = 2 * math.pi - 6.2
        assert r == pytest.approx(0.0832, abs=1e-4)
        assert log_factor_aod(3.1, self.q, s, 0.1) == pytest.approx(-0.5 * (r / 0.1) ** 2)

    def test_aoa(self):
        a = math.pi / 4
        assert log_factor_aoa(-3.0509329, self.p, self.s, a, 0.01) == pytest.approx(0.0, abs=1e-9)
        t = true_path_parameters(paper_scenario(), 0).theta_rx
        assert log_factor_aoa(t + 0.01, self.p, self.s, a, 0.01) == pytest.approx(-0.5)

    def test_vectorised(self):
        ps = np.array([[70.0, 70.0], [71.0, 70.0]])
        out = log_factor_distance(100.0, ps, self.q, self.s, 0.2)
        assert out.shape == (2,)

    def test_log_likelihood_at_truth(self):
        sc = paper_scenario()
        obs = noiseless_observations(sc, NoiseSpec.uniform(3, 0.2, 0.01))
        truth = StateVector(sc.mobile, sc.incidence_points)
        assert log_likelihood(obs, sc.base_station, truth) == pytest.approx(0.0, abs=1e-12)

    @given(st.floats(-50, 50), st.floats(-50, 50))
    def test_log_likelihood_translation_invariant(self, tx, ty):
        sc = paper_scenario()
        noise = NoiseSpec.uniform(3, 0.2, 0.01)
        obs = sample_observations(sc, noise, 0)
        state = StateVector(Pose(Point2(72, 68), 0.8), (Point2(21, 9), Point2(79, -8), Point2(40, 1)))
        moved = StateVector(Pose(Point2(72 + tx, 68 + ty), 0.8),
                            tuple(Point2(s.x + tx, s.y + ty) for s in state.incidence_points))
        a = log_likelihood(obs, (0, 0), state)
        b = log_likelihood(obs, (tx, ty), moved)
        assert b == pytest.approx(a, rel=1e-6, abs=1e-6)
