import dataclasses
import math

import numpy as np
import pytest

from trojansim.detector import DetectorParams, TrapComponent
from trojansim.protocol import (ActionKind, FrameConfig, FramePlan, ProtocolError,
                                SlotAction, run_frame, run_simulation, wilson_interval)


def detectors(dark=5.4224e-6, deadtime=50, traps=(), efficiency=0.1):
    d = DetectorParams(efficiency=efficiency, dark_prob=dark, gate_period_s=2e-7,
                       deadtime_gates=deadtime, trap_components=tuple(traps))
    return d, d


def burst_plan(cfg: FrameConfig, n_thp=30, t_ll=0.5, thp_photons=9e5,
               readout_error=0.0) -> FramePlan:
    actions = []
    for i in range(cfg.n_slots):
        if i < n_thp:
            actions.append(SlotAction.low_loss_with_thp(t_ll, thp_photons))
        else:
            actions.append(SlotAction.low_loss(t_ll))
    return FramePlan(actions=tuple(actions), readout_error=readout_error)


def deadtime_dp_expected_events(p_click: float, n_slots: int, deadtime: int) -> float:
    """Exact expected accepted events per frame for a constant hazard."""
    click_at = np.zeros(n_slots)
    for t in range(n_slots):
        blocked = click_at[max(0, t - deadtime):t].sum()
        click_at[t] = (1.0 - blocked) * p_click
    return float(click_at.sum())


class TestRunFrameBasics:
    def test_all_block_dark_free_is_silent(self):
        cfg = FrameConfig(n_slots=500)
        d0, d1 = detectors(dark=0.0)
        plan = FramePlan(actions=tuple(SlotAction.block() for _ in range(500)))
        outcomes = run_frame(cfg, plan, d0, d1, np.random.default_rng(0))
        assert not any(o.clicked_d0 or o.clicked_d1 for o in outcomes)

    def test_plan_length_mismatch(self):
        cfg = FrameConfig(n_slots=10)
        d0, d1 = detectors()
        with pytest.raises(ProtocolError):
            run_frame(cfg, FramePlan.all_pass(9), d0, d1, np.random.default_rng(0))

    def test_all_block_dark_clicks_are_random_bits(self):
        cfg = FrameConfig(n_slots=1000)
        d0, d1 = detectors(dark=5e-3, deadtime=0)
        plan = FramePlan(actions=tuple(SlotAction.block() for _ in range(1000)))
        errors = sifted = 0
        for i in range(300):
            for o in run_frame(cfg, plan, d0, d1, np.random.default_rng(i)):
                if o.sifted:
                    sifted += 1
                    errors += o.bit_error
        assert sifted > 500
        sigma = math.sqrt(0.25 * sifted)
        assert abs(errors - 0.5 * sifted) < 3 * sigma

    def test_block_slots_click_only_from_dark_or_afterpulse(self):
        cfg = FrameConfig(n_slots=400)
        traps = (TrapComponent(9e-8, 1e-6), TrapComponent(5e-10, 1e-5))
        d0, d1 = detectors(dark=1e-3, traps=traps)
        actions = [SlotAction.low_loss_with_thp(0.5, 9e5) if i < 50 else SlotAction.block()
                   for i in range(400)]
        plan = FramePlan(actions=tuple(actions))
        causes = set()
        for i in range(200):
            for o in run_frame(cfg, plan, d0, d1, np.random.default_rng(i)):
                if o.blocked and o.cause:
                    causes.add(o.cause)
        assert causes <= {"dark", "afterpulse"}
        assert causes, "expected some clicks in blocked slots"


class TestDetectionRateOracles:
    def test_rate_without_deadtime_matches_analytic(self):
        cfg = FrameConfig(n_slots=300, receiver_loss_db=0.0, signal_mu=0.5,
                          channel_transmittance=0.25)
        d0, d1 = detectors(dark=0.0, deadtime=0, efficiency=0.1)
        result = run_simulation(cfg, FramePlan.all_pass(300), d0, d1,
                                n_frames=10_000, seed=5)
        # the channel attenuates the coherent pulse, so T sits inside the
        # Poisson exponent
        q_exact = 1.0 - math.exp(-cfg.signal_mu * cfg.channel_transmittance * 0.1)
        events = result.counters.detection_events
        expected = q_exact * 300 * 10_000
        assert abs(events - expected) < 3 * math.sqrt(expected)

    def test_rate_matches_thinned_bernoulli_form_at_low_flux(self):
        # T (1 - exp(-mu eta)) is equivalent to the exact model in the
        # weak-signal regime the protocol operates in
        cfg = FrameConfig(n_slots=300, receiver_loss_db=0.0, signal_mu=0.5,
                          channel_transmittance=0.25)
        d0, d1 = detectors(dark=0.0, deadtime=0, efficiency=0.02)
        result = run_simulation(cfg, FramePlan.all_pass(300), d0, d1,
                                n_frames=10_000, seed=5)
        q_approx = cfg.channel_transmittance * (1.0 - math.exp(-cfg.signal_mu * 0.02))
        events = result.counters.detection_events
        expected = q_approx * 300 * 10_000
        assert abs(events - expected) < 3 * math.sqrt(expected)

    def test_rate_with_deadtime_matches_dp_oracle(self):
        cfg = FrameConfig(n_slots=300, receiver_loss_db=0.0, signal_mu=2.0,
                          channel_transmittance=0.25)
        d0, d1 = detectors(dark=0.0, deadtime=25, efficiency=0.2)
        q = 1.0 - math.exp(-cfg.signal_mu * cfg.channel_transmittance * 0.2)
        expected_per_frame = deadtime_dp_expected_events(q, 300, 25)
        n_frames = 10_000
        result = run_simulation(cfg, FramePlan.all_pass(300), d0, d1,
                                n_frames=n_frames, seed=6)
        events = result.counters.detection_events
        sigma = math.sqrt(expected_per_frame * n_frames)
        assert abs(events - expected_per_frame * n_frames) < 3 * sigma

    def test_no_attack_qber_matches_mixture_oracle(self):
        cfg = FrameConfig(n_slots=500, receiver_loss_db=0.0, signal_mu=0.5,
                          channel_transmittance=0.25, intrinsic_qber=0.01)
        dark = 2e-4
        d0, d1 = detectors(dark=dark, deadtime=0, efficiency=0.1)
        q = 1.0 - math.exp(-cfg.signal_mu * cfg.channel_transmittance * 0.1)
        # exact single-click cause probabilities per slot (port is 50/50)
        p_single_signal = q * (1 - dark) ** 2
        p_single_dark_only = 2 * dark * (1 - dark) * (1 - q)
        p_single = p_single_signal + p_single_dark_only
        q_expected = (0.01 * p_single_signal + 0.5 * p_single_dark_only) / p_single
        result = run_simulation(cfg, FramePlan.all_pass(500), d0, d1,
                                n_frames=4000, seed=7)
        lo, hi = result.qber_ci
        assert lo <= q_expected <= hi

    def test_double_clicks_are_not_sifted(self):
        cfg = FrameConfig(n_slots=200)
        d0, d1 = detectors(dark=0.05, deadtime=5)
        plan = FramePlan(actions=tuple(SlotAction.block() for _ in range(200)))
        doubles = 0
        for i in range(200):
            for o in run_frame(cfg, plan, d0, d1, np.random.default_rng(i)):
                if o.clicked_d0 and o.clicked_d1:
                    doubles += 1
                    assert not o.sifted
        assert doubles > 10


class TestDeadtime:
    def test_no_clicks_within_deadtime_window(self):
        cfg = FrameConfig(n_slots=800, signal_mu=2.0, receiver_loss_db=0.0)
        d0, d1 = detectors(dark=1e-3, deadtime=37, efficiency=0.3)
        for i in range(50):
            outcomes = run_frame(cfg, FramePlan.all_pass(800), d0, d1,
                                 np.random.default_rng(i))
            click_slots = [o.slot for o in outcomes if o.clicked_d0 or o.clicked_d1]
            gaps = np.diff(click_slots)
            assert (gaps > 37).all()

    def test_deadtime_slots_not_gated(self):
        cfg = FrameConfig(n_slots=300, signal_mu=2.0, receiver_loss_db=0.0)
        d0, d1 = detectors(dark=0.0, deadtime=20, efficiency=0.3)
        outcomes = run_frame(cfg, FramePlan.all_pass(300), d0, d1,
                             np.random.default_rng(3))
        clicks = [o.slot for o in outcomes if o.clicked_d0 or o.clicked_d1]
        assert clicks, "need at least one click"
        first = clicks[0]
        for o in outcomes[first + 1:first + 21]:
            assert not o.gated


class TestReproducibility:
    def test_identical_seed_identical_result(self):
        cfg = FrameConfig(n_slots=400)
        traps = (TrapComponent(9e-8, 1e-6),)
        d0, d1 = detectors(traps=traps)
        plan = burst_plan(cfg, n_thp=40)
        a = run_simulation(cfg, plan, d0, d1, n_frames=300, seed=99)
        b = run_simulation(cfg, plan, d0, d1, n_frames=300, seed=99)
        assert a == b

    def test_worker_count_does_not_change_result(self):
        cfg = FrameConfig(n_slots=400)
        d0, d1 = detectors(traps=(TrapComponent(9e-8, 1e-6),))
        plan = burst_plan(cfg, n_thp=40)
        serial = run_simulation(cfg, plan, d0, d1, n_frames=120, seed=4, workers=1)
        parallel = run_simulation(cfg, plan, d0, d1, n_frames=120, seed=4, workers=3)
        assert serial == parallel

    def test_single_frame_matches_run_frame(self):
        cfg = FrameConfig(n_slots=600)
        traps = (TrapComponent(9e-8, 1e-6), TrapComponent(5e-10, 1e-5))
        d0, d1 = detectors(dark=1e-4, traps=traps)
        plan = burst_plan(cfg, n_thp=60)
        result = run_simulation(cfg, plan, d0, d1, n_frames=1, seed=11)
        from trojansim.protocol import _frame_rng
        outcomes = run_frame(cfg, plan, d0, d1, _frame_rng(11, 0, 0))
        c = result.counters
        assert sum(1 for o in outcomes if o.clicked_d0 or o.clicked_d1) == c.detection_events
        assert sum(1 for o in outcomes if o.sifted) == c.sifted
        assert sum(1 for o in outcomes if o.sifted and o.bit_error) == c.sifted_errors
        assert sum(1 for o in outcomes if o.sifted and o.eve_knows_bit) == c.sifted_known

    def test_ci_width_shrinks_with_frames(self):
        cfg = FrameConfig(n_slots=400)
        d0, d1 = detectors()
        plan = FramePlan.all_pass(400)
        small = run_simulation(cfg, plan, d0, d1, n_frames=400, seed=2)
        large = run_simulation(cfg, plan, d0, d1, n_frames=1600, seed=2)
        width = lambda ci: ci[1] - ci[0]
        ratio = width(large.detection_rate_ci) / width(small.detection_rate_ci)
        assert ratio == pytest.approx(0.5, rel=0.15)


class TestMonotonicity:
    def test_qber_non_decreasing_in_probe_brightness(self):
        cfg = FrameConfig(n_slots=600)
        traps = (TrapComponent(9e-8, 1e-6), TrapComponent(5e-10, 1e-5))
        d0 = DetectorParams(efficiency=0.1, dark_prob=5.4e-6, gate_period_s=2e-7,
                            deadtime_gates=50, trap_components=traps,
                            afterpulse_scale=0.01)
        d1 = d0
        qbers = []
        for photons in (0.0, 3e5, 9e5, 2.7e6, 8.1e6):
            plan = burst_plan(cfg, n_thp=60, thp_photons=photons)
            result = run_simulation(cfg, plan, d0, d1, n_frames=2500, seed=13)
            qbers.append(result.qber)
        assert all(a <= b + 1e-12 for a, b in zip(qbers, qbers[1:])), qbers


class TestWilson:
    def test_known_interval(self):
        lo, hi = wilson_interval(5, 10)
        assert lo == pytest.approx(0.2366, abs=2e-3)
        assert hi == pytest.approx(0.7634, abs=2e-3)

    def test_empty_is_none(self):
        assert wilson_interval(0, 0) is None

    def test_contains_rate(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(1, 1000))
            k = int(rng.integers(0, n + 1))
            lo, hi = wilson_interval(k, n)
            assert 0.0 <= lo <= k / n <= hi <= 1.0


class TestConfigValidation:
    def test_frame_config_invariants(self):
        with pytest.raises(ProtocolError):
            FrameConfig(n_slots=0)
        with pytest.raises(ProtocolError):
            FrameConfig(channel_transmittance=1.5)
        with pytest.raises(ProtocolError):
            FrameConfig(intrinsic_qber=0.6)

    def test_slot_action_invariants(self):
        with pytest.raises(ProtocolError):
            SlotAction.low_loss(1.2)
        with pytest.raises(ProtocolError):
            SlotAction.low_loss_with_thp(0.5, -1.0)

    def test_mismatched_detector_settings_rejected(self):
        cfg = FrameConfig(n_slots=10)
        d0 = DetectorParams(efficiency=0.1, dark_prob=0.0, deadtime_gates=50)
        d1 = DetectorParams(efficiency=0.1, dark_prob=0.0, deadtime_gates=10)
        with pytest.raises(ProtocolError):
            run_frame(cfg, FramePlan.all_pass(10), d0, d1, np.random.default_rng(0))
