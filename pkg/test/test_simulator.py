"""Tests for geometry, frequency plan, trials and batches."""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from wtdpsim.channel import ChannelParams
from wtdpsim.model import Direction, ProtocolParams, default_ground_truth
from wtdpsim.simulator import (
    AntennaRef,
    FrequencyPlan,
    RunMetrics,
    Scenario,
    SimulationError,
    SimulationMode,
    angle_off_boresight,
    interferer_set,
    link_snr,
    parameter_grid,
    run_batch,
    run_trial,
    summarise,
    trial_rng,
    with_parameters,
)

L, R = Direction.LEFT, Direction.RIGHT


def _scenario(n_bns=6, **kwargs):
    kwargs.setdefault("K", n_bns - 1)
    return Scenario(trains=(default_ground_truth(n_bns),), **kwargs)


def _two_trains(n_bns=4, l_over_delta=1.0, **kwargs):
    return Scenario(
        trains=(default_ground_truth(n_bns, 1), default_ground_truth(n_bns, 2)),
        l_over_delta=l_over_delta,
        K=n_bns - 1,
        **kwargs,
    )


def _positions(refs):
    return [(r.train, r.position, r.pointing) for r in refs]


class TestScenario:
    """Test Scenario validation."""

    def test_two_trains_need_separation(self):
        """Two trains on the same track are rejected."""
        with pytest.raises(ValidationError):
            Scenario(trains=(default_ground_truth(3, 1), default_ground_truth(3, 2)))

    def test_unique_macs_across_trains(self):
        """The same train twice is rejected."""
        gt = default_ground_truth(3)
        with pytest.raises(ValidationError):
            Scenario(trains=(gt, gt), l_over_delta=1.0)


class TestFrequencyPlan:
    """Test FrequencyPlan."""

    @pytest.mark.parametrize("F", [1, 2, 3])
    def test_neighbor_links_share_carrier(self, F):
        """BN i's right tx feeds BN i+1's left rx, and vice versa."""
        plan = FrequencyPlan(F=F)
        for i in range(1, 8):
            assert plan.tx_frequency(i, R) == plan.rx_frequency(i + 1, L)
            assert plan.tx_frequency(i + 1, L) == plan.rx_frequency(i, R)

    @pytest.mark.parametrize("F", [1, 2, 3])
    def test_tx_and_rx_use_different_sets(self, F):
        """Each antenna transmits and receives in different carrier sets."""
        plan = FrequencyPlan(F=F)
        for i in range(1, 8):
            for pointing in (L, R):
                tx = plan.tx_frequency(i, pointing)
                rx = plan.rx_frequency(i, pointing)
                assert (tx < F) != (rx < F)

    def test_reuse_every_f_hops(self):
        """The same rightward carrier recurs every F hops."""
        plan = FrequencyPlan(F=3)
        assert plan.tx_frequency(1, R) == plan.tx_frequency(4, R)
        assert plan.tx_frequency(1, R) != plan.tx_frequency(2, R)


class TestGeometry:
    """Test angles and link budgets."""

    def test_in_line_angles(self):
        """A BN to the right is on the boresight of a right-pointing antenna."""
        scenario = _scenario()
        a = AntennaRef(train=0, position=1, pointing=R)
        b = AntennaRef(train=0, position=3, pointing=L)
        assert angle_off_boresight(a, b, scenario) == pytest.approx(0.0)
        assert angle_off_boresight(b, a, scenario) == pytest.approx(0.0)
        behind = AntennaRef(train=0, position=3, pointing=R)
        assert angle_off_boresight(behind, a, scenario) == pytest.approx(math.pi)

    def test_neighbor_link_snr(self):
        """The one-hop link sees SNR0."""
        scenario = _scenario(channel=ChannelParams(snr0_db=10))
        tx = AntennaRef(train=0, position=2, pointing=R)
        rx = AntennaRef(train=0, position=3, pointing=L)
        assert link_snr(tx, rx, scenario) == pytest.approx(10.0)

    def test_across_track_uses_sidelobes(self):
        """A BN straight across the track is heard through both sidelobes."""
        scenario = _two_trains(l_over_delta=2.0)
        tx = AntennaRef(train=1, position=2, pointing=R)
        rx = AntennaRef(train=0, position=2, pointing=L)
        sidelobe = 10 ** (-0.6)
        expected = scenario.channel.snr0_lin * sidelobe**2 * 2.0**-3.5
        assert link_snr(tx, rx, scenario) == pytest.approx(expected)


class TestInterfererSet:
    """Test interferer_set."""

    def test_full_reuse_single_train(self):
        """With F = 1 BN 4's left rx hears right txs of BNs 3, 2 and 1."""
        scenario = _scenario()
        rx = AntennaRef(train=0, position=4, pointing=L)
        heard = interferer_set(rx, FrequencyPlan(F=1), scenario)
        assert _positions(heard) == [(0, 3, R), (0, 2, R), (0, 1, R)]

    def test_hop_range_limit(self):
        """K = 2 keeps only the two nearest same-frequency transmitters."""
        scenario = _scenario(K=2)
        rx = AntennaRef(train=0, position=5, pointing=L)
        heard = interferer_set(rx, FrequencyPlan(F=1), scenario)
        assert _positions(heard) == [(0, 4, R), (0, 3, R)]

    def test_reuse_two(self):
        """With F = 2 only every other BN shares the carrier."""
        scenario = _scenario(n_bns=8, K=3, channel=ChannelParams(F=2))
        rx = AntennaRef(train=0, position=7, pointing=L)
        heard = interferer_set(rx, FrequencyPlan(F=2), scenario)
        assert _positions(heard) == [(0, 6, R), (0, 4, R), (0, 2, R)]

    def test_end_bn_outward_side(self):
        """The leftmost BN's left rx hears nothing on a single train."""
        scenario = _scenario()
        rx = AntennaRef(train=0, position=1, pointing=L)
        assert interferer_set(rx, FrequencyPlan(F=1), scenario) == []

    def test_other_train_included(self):
        """A parallel train adds interferers through the sidelobes."""
        scenario = _two_trains(l_over_delta=0.5)
        rx = AntennaRef(train=0, position=3, pointing=L)
        heard = interferer_set(rx, FrequencyPlan(F=1), scenario)
        assert {r.train for r in heard} == {0, 1}
        assert heard[0] == AntennaRef(train=0, position=2, pointing=R)

    def test_far_train_is_weaker_than_neighbor(self):
        """At a wide separation the true neighbor stays the strongest sender."""
        scenario = _two_trains(l_over_delta=4.0)
        rx = AntennaRef(train=0, position=2, pointing=L)
        heard = interferer_set(rx, FrequencyPlan(F=1), scenario)
        assert heard[0] == AntennaRef(train=0, position=1, pointing=R)
        assert any(ref.train == 1 for ref in heard)


class TestTrialRng:
    """Test trial_rng."""

    def test_streams_are_reproducible(self):
        """Same key, same stream."""
        a = trial_rng(1, 0, 5).random(4)
        b = trial_rng(1, 0, 5).random(4)
        np.testing.assert_array_equal(a, b)

    def test_streams_differ_by_trial(self):
        """Different trial indices give different streams."""
        assert not np.array_equal(trial_rng(1, 0, 0).random(4), trial_rng(1, 0, 1).random(4))


class TestRunTrial:
    """Test run_trial."""

    def test_ideal_channel_always_succeeds(self):
        """Lossless true-neighbor links never fail."""
        scenario = _scenario(ideal=True, max_slots=20000)
        for trial in range(20):
            metrics = run_trial(scenario, trial_index=trial)
            assert metrics.nd_correct
            assert metrics.inaug_correct
            assert metrics.red_flag_slot is None
            assert not metrics.truncated

    def test_ideal_nd_time_is_at_least_m_h(self):
        """Discovery cannot finish before M_H slots."""
        scenario = _scenario(ideal=True, proto=ProtocolParams(m_h=4))
        metrics = run_trial(scenario)
        assert metrics.nd_complete_slot >= 4
        assert metrics.inaug_complete_slot >= metrics.nd_complete_slot

    def test_deterministic(self):
        """Same scenario and trial index, same metrics."""
        scenario = _scenario(n_bns=4, max_slots=2000)
        assert run_trial(scenario, 3) == run_trial(scenario, 3)

    def test_identifications_cover_ground_truth_sides(self):
        """Every side with a true neighbor is reported."""
        scenario = _scenario(n_bns=4, max_slots=2000)
        metrics = run_trial(scenario)
        assert len(metrics.identifications) == 6

    def test_discovery_mode(self):
        """Discovery-only trials report no inauguration outcome."""
        scenario = _scenario(n_bns=4, mode=SimulationMode.DISCOVERY, max_slots=2000)
        metrics = run_trial(scenario)
        assert metrics.nd_complete_slot is not None
        assert not metrics.inaug_correct
        assert metrics.inaug_complete_slot is None
        assert metrics.red_flag_slot is None

    def test_truncation(self):
        """A trial that cannot finish is truncated at max_slots."""
        scenario = _scenario(n_bns=4, max_slots=5, proto=ProtocolParams(m_h=10))
        metrics = run_trial(scenario)
        assert metrics.truncated
        assert metrics.inaug_complete_slot == 5
        assert metrics.nd_complete_slot is None
        assert not metrics.nd_correct

    def test_trace_records_events(self):
        """Traced trials keep protocol events in slot order."""
        scenario = _scenario(n_bns=3, ideal=True, trace=True)
        metrics = run_trial(scenario)
        slots = [record.slot for record in metrics.events]
        assert slots and slots == sorted(slots)


class TestParameterGrid:
    """Test sweep expansion."""

    def test_no_sweep(self):
        """No sweep is a single empty point."""
        assert parameter_grid(None) == [{}]

    def test_cartesian_product(self):
        """First axis varies slowest."""
        assert parameter_grid({"a": [1, 2], "b": [3, 4]}) == [
            {"a": 1, "b": 3},
            {"a": 1, "b": 4},
            {"a": 2, "b": 3},
            {"a": 2, "b": 4},
        ]

    def test_with_parameters(self):
        """Parameters land in the right sub-model."""
        scenario = with_parameters(
            _scenario(), {"snr0_db": 20.0, "m_h": 5, "p": 0.4, "theta_rad": 1.0}
        )
        assert scenario.channel.snr0_db == 20.0
        assert scenario.proto.m_h == 5
        assert scenario.proto.p_h == scenario.proto.p_t == pytest.approx(0.2)
        assert scenario.antenna.theta == 1.0

    def test_with_parameters_rebuilds_trains(self):
        """n_bns rebuilds the ground truth."""
        scenario = with_parameters(_scenario(), {"n_bns": 3})
        assert len(scenario.trains[0].bns) == 3

    def test_with_parameters_keeps_custom_cns(self):
        """Custom CN attachments are never dropped by a resize."""
        gt = default_ground_truth(3, cn_attachments=[["A"], [], ["B", "C"]])
        scenario = Scenario(trains=(gt,), K=2)

        assert with_parameters(scenario, {"m_h": 4}).trains[0] == gt
        with pytest.raises(SimulationError, match="custom CN attachments"):
            with_parameters(scenario, {"n_bns": 4})

    def test_unknown_parameter(self):
        """Unknown names are rejected."""
        with pytest.raises(SimulationError):
            with_parameters(_scenario(), {"warp": 9})


class TestSummarise:
    """Test batch statistics."""

    def test_restart_estimator(self):
        """Failed trials add their time to the next success."""
        scenario = _scenario(mode=SimulationMode.DISCOVERY)
        runs = [
            RunMetrics(nd_correct=False, nd_complete_slot=10),
            RunMetrics(nd_correct=True, nd_complete_slot=20),
            RunMetrics(nd_correct=True, nd_complete_slot=30),
            RunMetrics(nd_correct=False, nd_complete_slot=40),
        ]
        stats = summarise(runs, scenario, {})
        assert stats.nd_success == 0.5
        assert stats.nd_success_se == pytest.approx(math.sqrt(0.25 / 4))
        assert stats.mean_nd_slots == 25.0
        assert stats.nd_time_to_success_restart == 30.0
        assert stats.nd_time_to_success_ratio == 50.0
        assert math.isnan(stats.inaug_success)

    def test_censored_times_use_max_slots(self):
        """Trials without a completion slot count as max_slots."""
        scenario = _scenario(max_slots=100)
        runs = [RunMetrics(truncated=True), RunMetrics(nd_correct=True, nd_complete_slot=50)]
        stats = summarise(runs, scenario, {})
        assert stats.mean_nd_slots == 75.0
        assert stats.mean_inaug_slots == 100.0
        assert stats.truncated_rate == 0.5


class TestRunBatch:
    """Test run_batch."""

    def test_single_trial_matches_run_trial(self):
        """One trial without sweep reproduces run_trial."""
        scenario = _scenario(n_bns=4, max_slots=2000)
        result = run_batch(scenario, 1)
        assert result.runs == [[run_trial(scenario)]]
        assert result.points[0].trials == 1

    def test_rejects_zero_trials(self):
        """At least one trial is needed."""
        with pytest.raises(SimulationError):
            run_batch(_scenario(), 0)

    def test_sweep_order(self):
        """Results follow grid order."""
        scenario = _scenario(n_bns=3, ideal=True)
        result = run_batch(scenario, 2, sweep={"m_h": [1, 2]})
        assert [p.point for p in result.points] == [{"m_h": 1}, {"m_h": 2}]
        assert all(p.nd_success == 1.0 for p in result.points)

    def test_parallel_matches_serial(self):
        """Worker count does not change results."""
        scenario = _scenario(n_bns=4, max_slots=1500)
        serial = run_batch(scenario, 4, threads=1)
        parallel = run_batch(scenario, 4, threads=2)
        assert serial == parallel

    @pytest.mark.slow
    def test_ideal_channel_thousand_trials(self):
        """A thousand ideal-channel trials all succeed without red flags."""
        result = run_batch(_scenario(ideal=True), 1000)
        stats = result.points[0]
        assert stats.nd_success == 1.0
        assert stats.inaug_success == 1.0
        assert stats.red_flag_rate == 0.0

    @pytest.mark.slow
    def test_time_to_success_estimators_agree(self):
        """Restart accumulation and mean time over success rate agree."""
        scenario = _scenario(mode=SimulationMode.DISCOVERY, seed=11)
        result = run_batch(scenario, 2000, threads=4)
        stats = result.points[0]
        runs = result.runs[0]

        times = np.array(
            [r.nd_complete_slot or scenario.max_slots for r in runs], dtype=float
        )
        ok = np.array([r.nd_correct for r in runs], dtype=float)
        n = len(runs)
        ratio = stats.nd_time_to_success_ratio
        ratio_se = np.std(times - ratio * ok, ddof=1) / math.sqrt(n) / ok.mean()

        cycles, elapsed = [], 0.0
        for time, success in zip(times, ok):
            elapsed += time
            if success:
                cycles.append(elapsed)
                elapsed = 0.0
        restart_se = np.std(cycles, ddof=1) / math.sqrt(len(cycles))

        assert stats.nd_time_to_success_restart == pytest.approx(np.mean(cycles))
        assert abs(stats.nd_time_to_success_restart - ratio) <= 3.0 * math.hypot(
            ratio_se, restart_se
        )
