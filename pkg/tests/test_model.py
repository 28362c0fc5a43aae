import numpy as np
import pytest
from hypothesis import given, strategies as st

from permon import (ConfigError, MissionConfig, Policy, PolicyError,
                    joint_detection, sensing_probability, uncertainty_rate,
                    validate_policy)
from permon.model import centered_points


class TestSensingProbability:
    def test_at_sensor(self):
        assert sensing_probability(5.0, 5.0, 4.0) == 1.0

    def test_at_range_edge(self):
        assert sensing_probability(9.0, 5.0, 4.0) == 0.0

    def test_linear_decay(self):
        assert sensing_probability(6.0, 5.0, 4.0) == 0.75

    def test_nonpositive_range(self):
        with pytest.raises(ConfigError):
            sensing_probability(1.0, 0.0, 0.0)

    @given(st.floats(-50, 50), st.floats(-50, 50),
           st.floats(0.1, 20, exclude_min=True))
    def test_bounds_and_peak(self, x, s, r):
        p = float(sensing_probability(x, s, r))
        assert 0.0 <= p <= 1.0
        if x == s:
            assert p == 1.0
        elif abs(x - s) > 1e-9 * r:
            assert p < 1.0

    @given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0.1, 20))
    def test_vanishes_outside_range(self, x, s, r):
        if abs(x - s) > r:
            assert sensing_probability(x, s, r) == 0.0

    def test_slope_magnitude(self):
        # piecewise linear in s with slope +-1/r inside the range
        r = 4.0
        s = np.linspace(2.01, 5.99, 100)
        p = sensing_probability(6.0, s, r)
        slopes = np.diff(p) / np.diff(s)
        assert np.allclose(np.abs(slopes), 1.0 / r)


class TestJointDetection:
    def test_single_agent_reduces(self):
        assert joint_detection(6.0, [5.0], [4.0]) == sensing_probability(6.0, 5.0, 4.0)

    def test_two_halves(self):
        p = joint_detection(5.0, [3.0, 7.0], [4.0, 4.0])
        assert p == pytest.approx(0.75)

    def test_certain_detection_dominates(self):
        assert joint_detection(5.0, [5.0, 6.8], [4.0, 4.0]) == 1.0

    def test_length_mismatch(self):
        with pytest.raises(ConfigError):
            joint_detection(1.0, [1.0, 2.0], [1.0])

    @given(st.lists(st.floats(0, 20), min_size=2, max_size=4))
    def test_permutation_invariant(self, positions):
        ranges = [4.0] * len(positions)
        a = joint_detection(10.0, positions, ranges)
        b = joint_detection(10.0, positions[::-1], ranges[::-1])
        assert a == pytest.approx(b, rel=1e-12, abs=1e-15)

    def test_monotone_in_each_position(self):
        # moving an agent toward the point never decreases joint detection
        base = joint_detection(10.0, [6.5, 14.0], [4.0, 4.0])
        closer = joint_detection(10.0, [8.0, 14.0], [4.0, 4.0])
        assert closer >= base


class TestUncertaintyRate:
    def test_floor_branch(self):
        assert uncertainty_rate(0.0, 0.1, 3.0, 0.75) == 0.0

    def test_interior(self):
        assert uncertainty_rate(2.0, 0.1, 3.0, 0.75) == pytest.approx(-2.15)

    def test_regrowth_from_floor(self):
        assert uncertainty_rate(0.0, 0.1, 3.0, 0.0) == pytest.approx(0.1)

    def test_never_below_full_decay(self):
        for p in (0.0, 0.3, 1.0):
            assert uncertainty_rate(5.0, 0.1, 3.0, p) >= 0.1 - 3.0


class TestMissionConfig:
    def test_generated_points_are_cell_centers(self):
        pts = centered_points(20.0, 4)
        assert np.allclose(pts, [2.5, 7.5, 12.5, 17.5])
        cfg = MissionConfig.create(length=20.0, decay=3.0, horizon=10.0,
                                   agents=[(0.0, 4.0)], n_points=4, growth=0.1)
        assert np.allclose(cfg.points, pts)

    def test_explicit_points_win(self):
        cfg = MissionConfig.create(length=20.0, decay=3.0, horizon=10.0,
                                   agents=[(0.0, 4.0)], points=[1.0, 2.0],
                                   n_points=9, growth=0.1)
        assert np.allclose(cfg.points, [1.0, 2.0])

    def test_growth_broadcast_is_full_vector(self):
        cfg = MissionConfig.create(length=20.0, decay=3.0, horizon=10.0,
                                   agents=[(0.0, 4.0)], n_points=5, growth=0.1)
        assert cfg.growth.shape == (5,)

    def test_growth_must_stay_below_decay(self):
        with pytest.raises(ConfigError):
            MissionConfig.create(length=20.0, decay=3.0, horizon=10.0,
                                 agents=[(0.0, 4.0)], n_points=3, growth=3.0)
        with pytest.raises(ConfigError):
            MissionConfig.create(length=20.0, decay=3.0, horizon=10.0,
                                 agents=[(0.0, 4.0)], n_points=3, growth=0.0)

    def test_bounds_ordering(self):
        with pytest.raises(ConfigError):
            MissionConfig.create(length=20.0, decay=3.0, horizon=10.0, lo=5.0,
                                 hi=5.0, agents=[(5.0, 4.0)], n_points=3,
                                 growth=0.1)

    def test_start_inside_bounds(self):
        with pytest.raises(ConfigError):
            MissionConfig.create(length=20.0, decay=3.0, horizon=10.0, lo=4.0,
                                 hi=16.0, agents=[(0.0, 4.0)], n_points=3,
                                 growth=0.1)

    def test_coverage_infeasibility_warns_not_raises(self, caplog):
        import logging
        logging.getLogger("permon").setLevel(logging.WARNING)
        try:
            with caplog.at_level("WARNING", logger="permon.model"):
                MissionConfig.create(length=20.0, decay=3.0, horizon=10.0,
                                     lo=6.0, hi=14.0, agents=[(6.0, 4.0)],
                                     n_points=5, growth=0.1)
            assert any("coverage" in r.message for r in caplog.records)
        finally:
            logging.getLogger("permon").setLevel(logging.ERROR)

    def test_no_crossing_requires_ordered_starts(self):
        with pytest.raises(ConfigError):
            MissionConfig.create(length=20.0, decay=3.0, horizon=10.0,
                                 agents=[(5.0, 4.0), (5.0, 4.0)], n_points=3,
                                 growth=0.1, no_crossing=True)


class TestPolicy:
    def test_vector_round_trip(self):
        pol = Policy([[5.0, 2.0], [7.0]], [[0.5, 0.0], [1.0]])
        vec = pol.as_vector()
        back = Policy.from_vector(vec, pol.dims)
        assert np.array_equal(back.as_vector(), vec)

    def test_ordering_violation_detected(self, mini_config):
        with pytest.raises(PolicyError):
            # second switch must lie left of the first
            validate_policy(mini_config, Policy([[5.0, 7.0]], [[0.0, 0.0]]))

    def test_first_switch_anchored_at_start(self, mini_config):
        with pytest.raises(PolicyError):
            validate_policy(mini_config, Policy([[-1.0]], [[0.0]]))

    def test_negative_dwell_rejected(self, mini_config):
        with pytest.raises(PolicyError):
            validate_policy(mini_config, Policy([[5.0]], [[-0.5]]))

    def test_equal_switches_allowed(self, mini_config):
        validate_policy(mini_config, Policy([[5.0, 5.0]], [[0.0, 0.0]]))

    def test_feasible_passes(self, mini_config):
        validate_policy(mini_config, Policy([[8.0, 2.0, 9.0]],
                                            [[0.1, 0.2, 0.0]]))
