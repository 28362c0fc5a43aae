import math

import numpy as np
import pytest

from permon import MissionConfig, Policy, propagate, simulate
from permon.ipa import (PropagationState, apply_arrival, apply_boundary_hit,
                        apply_departure, apply_wall,
                        segment_sensitivity_increment)
from permon.oracle import finite_difference_gradient
from conftest import random_feasible_policy


class TestEventRules:
    def test_arrival_sets_unit_row(self):
        st = PropagationState((4,), 3)
        st.ds_switch[0][:] = [0.3, -1.2, 2.0, 0.0]
        st.ds_dwell[0][:] = [1.0, -1.0, 0.5, 0.0]
        apply_arrival(st, 0, 3)
        assert list(st.ds_switch[0]) == [0.0, 0.0, 1.0, 0.0]
        assert list(st.ds_dwell[0]) == [0.0, 0.0, 0.0, 0.0]

    def test_first_arrival_from_zeros(self):
        st = PropagationState((3,), 1)
        apply_arrival(st, 0, 1)
        assert list(st.ds_switch[0]) == [1.0, 0.0, 0.0]

    def test_departure_own_and_earlier_terms(self):
        st = PropagationState((4,), 1)
        apply_arrival(st, 0, 3)
        apply_departure(st, 0, 3, u_out=1)
        # own index: 1 + 1; earlier: 2 u (-1)^j
        assert list(st.ds_switch[0]) == [-2.0, 2.0, 2.0, 0.0]
        assert list(st.ds_dwell[0]) == [-1.0, -1.0, -1.0, 0.0]

    def test_departure_other_direction(self):
        st = PropagationState((4,), 1)
        apply_arrival(st, 0, 3)
        apply_departure(st, 0, 3, u_out=-1)
        assert list(st.ds_switch[0]) == [2.0, -2.0, 2.0, 0.0]
        assert list(st.ds_dwell[0]) == [1.0, 1.0, 1.0, 0.0]

    def test_zero_dwell_composite_matches_reversal(self):
        # arrival then immediate departure: own entry becomes
        # (-1)^xi * 2 * u_out for every visited index
        st = PropagationState((2,), 1)
        apply_arrival(st, 0, 1)
        apply_departure(st, 0, 1, u_out=-1)
        assert st.ds_switch[0][0] == 2.0 == (-1) ** 1 * 2 * (-1)

    def test_boundary_hit_resets_single_row(self):
        st = PropagationState((2,), 3)
        st.dr[:] = np.arange(12.0).reshape(3, 4) + 1.0
        before = st.dr.copy()
        apply_boundary_hit(st, 1, time=2.5)
        assert np.all(st.dr[1] == 0.0)
        assert np.array_equal(st.dr[0], before[0])
        assert np.array_equal(st.dr[2], before[2])
        apply_boundary_hit(st, 1, time=2.6)   # idempotent
        assert np.all(st.dr[1] == 0.0)

    def test_wall_zeroes_everything(self):
        st = PropagationState((3,), 1)
        apply_arrival(st, 0, 2)
        apply_departure(st, 0, 2, u_out=1)
        apply_wall(st, 0)
        assert not st.ds_switch[0].any()
        assert not st.ds_dwell[0].any()


class TestSegmentIncrement:
    def test_single_agent_reversal_rate(self):
        # sensitivity 2, approaching from the left: increment is -(2B/r) dt
        inc, integral = segment_sensitivity_increment(
            q_minus=[1.0], zeta=1.0, sense_range=4.0, decay=3.0,
            ds_value=2.0, duration=0.5, on_boundary=False)
        assert inc == pytest.approx(-(2 * 3.0 / 4.0) * 0.5)
        assert integral == pytest.approx(-(2 * 3.0 / 4.0) * 0.125)

    def test_zero_sensitivity(self):
        inc, integral = segment_sensitivity_increment(
            [1.0], 1.0, 4.0, 3.0, 0.0, 0.5, False)
        assert inc == 0.0 == integral

    def test_boundary_arc(self):
        inc, integral = segment_sensitivity_increment(
            [1.0], 1.0, 4.0, 3.0, 2.0, 0.5, True)
        assert inc == 0.0 == integral


class TestClosedFormPositionSensitivity:
    def test_three_switch_zero_dwell(self, mini_config):
        pol = Policy([[8.0, 2.0, 9.0]], [[0.0, 0.0, 0.0]])
        traj = simulate(mini_config, pol)
        sens = propagate(traj, mini_config.sensing(), pol)
        arrivals = traj.profiles[0].arrivals
        for t0, t1, ds_switch, _ds_dwell in sens.pos_history:
            tm = 0.5 * (t0 + t1)
            u = traj.profiles[0].slope(tm)
            for k in range(3):
                xi = k + 1
                expect = ((-1) ** xi) * 2.0 * u if tm > arrivals[k] else 0.0
                assert ds_switch[0][k] == expect


class TestResetProperty:
    def test_rows_zero_after_every_hit(self, benchmark_one_agent):
        pol = Policy([[17.3, 2.6, 16.1]], [[0.7, 1.1, 0.4]])
        traj = simulate(benchmark_one_agent, pol)
        sens = propagate(traj, benchmark_one_agent.sensing(), pol)
        assert sens.reset_log
        for _t, _i, _before, after in sens.reset_log:
            assert after == 0.0


class TestGrowthIndependence:
    def test_bit_identical_gradients_across_growth_variants(self):
        # a horizon too short for any floor hit: the event logs coincide
        base = dict(length=20.0, decay=3.0, horizon=1.2,
                    agents=[(0.0, 4.0)], points=[2.0, 5.0, 9.0], r0=4.0)
        cfg_a = MissionConfig.create(growth=0.1, **base)
        cfg_b = MissionConfig.create(growth=[0.4, 0.05, 0.2], **base)
        pol = Policy([[1.1]], [[0.3]])
        traj_a = simulate(cfg_a, pol)
        traj_b = simulate(cfg_b, pol)
        assert [(e.time, e.kind, e.agent, e.point) for e in traj_a.events] == \
               [(e.time, e.kind, e.agent, e.point) for e in traj_b.events]
        grad_a = propagate(traj_a, cfg_a.sensing(), pol).grad
        grad_b = propagate(traj_b, cfg_b.sensing(), pol).grad
        assert np.array_equal(grad_a, grad_b)
        assert grad_a.any()

    def test_propagate_rejects_full_config(self, mini_config):
        pol = Policy([[8.0]], [[0.5]])
        traj = simulate(mini_config, pol)
        with pytest.raises(TypeError):
            propagate(traj, mini_config, pol)

    def test_sensing_info_has_no_growth(self, mini_config):
        info = mini_config.sensing()
        assert not hasattr(info, "growth")


class TestGradientStructure:
    def test_unreached_switch_components_exactly_zero(self, mini_config):
        pol = Policy([[8.0, 2.0, 9.0, 1.0]], [[30.0, 10.0, 5.0, 1.0]])
        traj = simulate(mini_config, pol)
        sens = propagate(traj, mini_config.sensing(), pol)
        # only the first switch is reached within the horizon
        assert sens.grad_switch[0][0] != 0.0
        assert np.all(sens.grad_switch[0][1:] == 0.0)
        assert np.all(sens.grad_dwell[0][1:] == 0.0)

    def test_dwelling_forever_zeroes_dwell_gradients(self, mini_config):
        pol = Policy([[0.0, 0.0]], [[100.0, 1.0]])
        traj = simulate(mini_config, pol)
        sens = propagate(traj, mini_config.sensing(), pol)
        assert np.all(sens.grad_dwell[0] == 0.0)

    def test_degraded_flag_propagates(self, benchmark_one_agent):
        pol = Policy([[5.0]], [[1.0]])      # dwell on a range boundary
        traj = simulate(benchmark_one_agent, pol)
        sens = propagate(traj, benchmark_one_agent.sensing(), pol)
        assert sens.degraded


class TestWorkedExample:
    """Single agent, single point: every quantity has a hand closed form."""

    def test_gradient_values(self, single_point_config):
        cfg = single_point_config
        pol = Policy([[15.0]], [[2.0]])
        traj = simulate(cfg, pol)
        sens = propagate(traj, cfg.sensing(), pol)
        # Hand chain: after departing at t=17 moving left the agent re-enters
        # range at t=18 (right of the point, dp/ds = -1/r) so dR grows at
        # (B/r) ds until the floor hit resets it; the floor arc ends when the
        # net rate crosses zero at s = 10 - r (1 - A/B), after which dR runs
        # negative (left of the point) until leaving range at s = 6, and the
        # frozen tail integrates to the horizon.
        r18 = _r_at_18()
        x_hit = (0.1 + math.sqrt(0.01 + 4 * 0.375 * r18)) / 0.75
        x2 = 4.0 * (0.1 / 3.0)                 # in-range sliver after the exit
        tail = 4.0                             # out-of-range [26, 30]
        for ds, grad in ((2.0, sens.grad_switch[0][0]),
                         (1.0, sens.grad_dwell[0][0])):
            c = 0.75 * ds                      # (B/r) ds
            expect = (0.5 * c * x_hit ** 2     # rising excursion, reset at hit
                      - 0.5 * c * x2 ** 2      # negative sliver after exit
                      - c * x2 * tail) / cfg.horizon
            assert grad == pytest.approx(expect, rel=1e-9)

    def test_gradient_matches_finite_differences(self, single_point_config):
        cfg = single_point_config
        pol = Policy([[15.0]], [[2.0]])
        traj = simulate(cfg, pol)
        sens = propagate(traj, cfg.sensing(), pol)
        fd = finite_difference_gradient(cfg, pol, h=1e-5)
        for k, comp in enumerate(fd):
            assert not comp.excluded
            assert sens.grad[k] == pytest.approx(comp.fd, abs=5e-9)


def _r_at_18() -> float:
    """Uncertainty at t=18 in the worked example, by hand integration."""
    t_exit = 10.0 + 4.0 * (1.0 - 0.1 / 3.0)          # floor arc ends
    # [t_exit, 14]: rate = 0.1 - 3 (1 - (t - 10)/4); [14, 18]: rate = 0.1
    def anti(t):
        return 0.1 * t - 3.0 * t + (3.0 / 8.0) * (t - 10.0) ** 2
    r14 = anti(14.0) - anti(t_exit)
    return r14 + 0.1 * 4.0


class TestFiniteDifferenceAgreement:
    @pytest.mark.parametrize("seed", range(4))
    def test_random_policies_one_agent(self, mini_config, seed):
        rng = np.random.default_rng(100 + seed)
        pol = random_feasible_policy(mini_config, rng, margin=0.3, gap=0.25,
                                     dwell_hi=1.5)
        traj = simulate(mini_config, pol)
        sens = propagate(traj, mini_config.sensing(), pol)
        fd = finite_difference_gradient(mini_config, pol, h=1e-5)
        checked = 0
        for k, comp in enumerate(fd):
            if comp.excluded:
                continue
            rel = abs(sens.grad[k] - comp.fd) / max(1.0, abs(comp.fd))
            assert rel < 1e-4, (k, comp)
            checked += 1
        assert checked >= pol.n_params // 2

    def test_two_agent_policy(self):
        cfg = MissionConfig.create(length=40.0, decay=3.0, horizon=120.0,
                                   agents=[(0.0, 4.0), (20.0, 4.0)],
                                   points=list(np.linspace(0.0, 40.0, 11)),
                                   growth=0.05, r0=4.0)
        pol = Policy([[7.317, 2.613, 12.437], [27.811, 22.359, 31.917]],
                     [[0.713, 1.329, 0.441], [0.923, 0.217, 1.137]])
        traj = simulate(cfg, pol)
        sens = propagate(traj, cfg.sensing(), pol)
        fd = finite_difference_gradient(cfg, pol, h=1e-5)
        for k, comp in enumerate(fd):
            if comp.excluded:
                continue
            assert abs(sens.grad[k] - comp.fd) / max(1.0, abs(comp.fd)) < 1e-4

    def test_equal_switch_composite(self, mini_config):
        # equal adjacent switch locations encode a straight-through pause;
        # the coincident departure/arrival pair must replay in sequence order
        # for the gradient to match finite differences
        pol = Policy([[6.3, 6.3, 8.7]], [[0.5, 0.7, 0.4]])
        traj = simulate(mini_config, pol)
        sens = propagate(traj, mini_config.sensing(), pol)
        fd = finite_difference_gradient(mini_config, pol, h=1e-5)
        for k, comp in enumerate(fd):
            if comp.kind == "switch" and comp.xi in (1, 2):
                assert comp.one_sided    # the pair is pinned together
                continue
            assert not comp.excluded
            assert abs(sens.grad[k] - comp.fd) / max(1.0, abs(comp.fd)) < 1e-4

    def test_zero_dwell_composite_gradient(self, mini_config):
        # instantaneous reversal at a switch: arrival and departure coincide
        pol = Policy([[7.9, 2.3, 8.6]], [[0.0, 0.6, 0.0]])
        traj = simulate(mini_config, pol)
        sens = propagate(traj, mini_config.sensing(), pol)
        fd = finite_difference_gradient(mini_config, pol, h=1e-5)
        for k, comp in enumerate(fd):
            if comp.excluded:
                continue
            assert abs(sens.grad[k] - comp.fd) / max(1.0, abs(comp.fd)) < 1e-4

    def test_crossing_agents_gradient(self):
        # overlapping patrol ranges exercise the leave-one-out miss products
        cfg = MissionConfig.create(length=20.0, decay=3.0, horizon=60.0,
                                   agents=[(0.0, 4.0), (6.0, 4.0)],
                                   points=[2.0, 7.0, 11.0, 16.0],
                                   growth=0.1, r0=4.0)
        pol = Policy([[13.3, 3.7], [17.9, 5.1]],
                     [[0.6, 0.9], [0.4, 1.2]])
        traj = simulate(cfg, pol)
        sens = propagate(traj, cfg.sensing(), pol)
        fd = finite_difference_gradient(cfg, pol, h=1e-5)
        checked = 0
        for k, comp in enumerate(fd):
            if comp.excluded:
                continue
            assert abs(sens.grad[k] - comp.fd) / max(1.0, abs(comp.fd)) < 1e-4
            checked += 1
        assert checked >= 6

    def test_stochastic_gradient_matches_frozen_process_fd(self, mini_config):
        from permon import sample_rate_process, simulate_with_process
        process = sample_rate_process(13, mini_config.horizon, 6.0, 0.075,
                                      0.125, mini_config.n_points)
        pol = Policy([[8.1, 2.4]], [[0.6, 0.9]])
        traj = simulate_with_process(mini_config, pol, process)
        sens = propagate(traj, mini_config.sensing(), pol)
        fd = finite_difference_gradient(mini_config, pol, h=1e-5,
                                        process=process)
        for k, comp in enumerate(fd):
            if comp.excluded:
                continue
            assert abs(sens.grad[k] - comp.fd) / max(1.0, abs(comp.fd)) < 1e-4

    def test_cross_agent_position_independence(self):
        # an agent parked far away never gains sensitivity from the other
        cfg = MissionConfig.create(length=40.0, decay=3.0, horizon=60.0,
                                   agents=[(0.0, 4.0), (30.0, 4.0)],
                                   points=[5.0, 35.0], growth=0.1, r0=4.0)
        pol = Policy([[9.3], [33.7]], [[50.0], [50.0]])
        traj = simulate(cfg, pol)
        sens = propagate(traj, cfg.sensing(), pol)
        fd = finite_difference_gradient(cfg, pol, h=1e-5)
        for k, comp in enumerate(fd):
            assert sens.grad[k] == pytest.approx(comp.fd, abs=1e-8)
