import json
import math
from pathlib import Path

import numpy as np
import pytest

from trojansim.config import load_default_config
from trojansim.detector import (CountHistogram, DetectorModelError, DetectorParams,
                                HazardAccumulator, TrapComponent, afterpulse_prob,
                                afterpulse_reduction_factors,
                                afterpulse_suppression_ratio, fit_decay,
                                read_histogram_csv, sample_gate, saturation_correct,
                                split_counts, write_histogram_csv)
from trojansim.optics import WavelengthProfile

DATA = Path(__file__).resolve().parent.parent / "src" / "trojansim" / "data"

TRAPS = (TrapComponent(amplitude=9.0e-8, lifetime_s=1.0e-6),
         TrapComponent(amplitude=5.0e-10, lifetime_s=1.0e-5))


def detector(**overrides) -> DetectorParams:
    params = dict(efficiency=0.1, dark_prob=5.4224e-6, gate_period_s=2e-7,
                  deadtime_gates=50, trap_components=TRAPS, afterpulse_scale=1.0)
    params.update(overrides)
    return DetectorParams(**params)


class TestAfterpulseProb:
    def test_zero_probe(self):
        assert afterpulse_prob(detector(), 1e-6, 0.0) == 0.0

    def test_linear_before_clamp(self):
        p1 = afterpulse_prob(detector(), 2e-6, 1e3)
        p2 = afterpulse_prob(detector(), 2e-6, 2e3)
        assert p2 == pytest.approx(2 * p1, rel=1e-12)

    def test_clamped_at_one(self):
        assert afterpulse_prob(detector(), 0.0, 1e12) == 1.0

    def test_scale_multiplies(self):
        scaled = detector(afterpulse_scale=0.01)
        assert afterpulse_prob(scaled, 1e-6, 1e4) == pytest.approx(
            0.01 * afterpulse_prob(detector(), 1e-6, 1e4), rel=1e-12)

    def test_bright_probe_five_gate_cumulative(self):
        # a single bright signal-band probe triggers >= 40% cumulative
        # spurious-click probability within five gates
        d = detector()
        p_none = 1.0
        for gate in range(1, 6):
            p_none *= 1.0 - afterpulse_prob(d, gate * d.gate_period_s, 2e6)
        assert 1.0 - p_none >= 0.40

    def test_negative_time_rejected(self):
        with pytest.raises(DetectorModelError):
            afterpulse_prob(detector(), -1e-9, 1.0)


class TestHazardAccumulator:
    def test_matches_closed_form_geometric_series(self):
        # summed hazard over G gates after one probe equals the geometric
        # series of each component's per-gate decay factor
        d = detector(afterpulse_scale=0.37)
        acc = HazardAccumulator(d)
        photons = 123.0
        acc.advance(photons)
        total = 0.0
        n_gates = 400
        for _ in range(n_gates):
            total += acc.current()
            acc.advance(0.0)
        expected = 0.0
        for comp in d.trap_components:
            decay = math.exp(-d.gate_period_s / comp.lifetime_s)
            expected += (d.afterpulse_scale * photons * comp.amplitude
                         * decay * (1 - decay**n_gates) / (1 - decay))
        assert total == pytest.approx(expected, rel=1e-9)

    def test_hazard_matches_afterpulse_prob_timing(self):
        d = detector()
        acc = HazardAccumulator(d)
        acc.advance(5e4)
        for gate in range(1, 8):
            assert acc.current() == pytest.approx(
                afterpulse_prob(d, gate * d.gate_period_s, 5e4), rel=1e-12)
            acc.advance(0.0)

    def test_superposition_of_probes(self):
        d = detector()
        acc = HazardAccumulator(d)
        acc.advance(1e4)
        acc.advance(3e4)
        expected = (afterpulse_prob(d, 2 * d.gate_period_s, 1e4)
                    + afterpulse_prob(d, d.gate_period_s, 3e4))
        assert acc.current() == pytest.approx(expected, rel=1e-12)


class TestSampleGate:
    def test_never_clicks_without_light_noise_or_traps(self):
        d = detector(dark_prob=0.0, trap_components=())
        rng = np.random.default_rng(0)
        assert not any(sample_gate(d, 0.0, 0.0, rng) for _ in range(10_000))

    def test_always_clicks_on_bright_light(self):
        d = detector()
        rng = np.random.default_rng(0)
        assert all(sample_gate(d, 1e9, 0.0, rng) for _ in range(1000))

    def test_half_rate_at_ln2(self):
        d = detector(dark_prob=0.0, trap_components=())
        mu = math.log(2) / d.efficiency
        rng = np.random.default_rng(42)
        n = 100_000
        clicks = sum(sample_gate(d, mu, 0.0, rng) for _ in range(n))
        sigma = math.sqrt(0.25 * n)
        assert abs(clicks - 0.5 * n) < 3 * sigma


class TestSaturationCorrect:
    def test_leading_zeros_leave_first_counts_unchanged(self):
        hist = CountHistogram(bin_width_s=4e-7, counts=(0, 0, 500, 100), trials=10_000)
        corrected = saturation_correct(hist)
        assert corrected.counts[0] == 0
        assert corrected.counts[2] == 500.0

    def test_two_bin_expected_case(self):
        # per-trial cause probabilities (0.3, 0.2) with first-click recording
        trials = 1_000_000
        raw = CountHistogram(bin_width_s=4e-7, counts=(300_000, 140_000))
        corrected = saturation_correct(raw, trials=trials)
        assert corrected.counts[0] == pytest.approx(300_000)
        assert corrected.counts[1] == pytest.approx(200_000)
        assert corrected.total >= raw.total

    def test_monte_carlo_censoring_oracle(self):
        # inverse of a first-click-censoring simulator to within 2%
        rng = np.random.default_rng(1234)
        probs = np.array([0.30, 0.22, 0.18, 0.14, 0.12, 0.10])
        trials = 100_000
        u = rng.random((trials, len(probs)))
        clicked = u < probs
        raw = np.zeros(len(probs))
        first = clicked.argmax(axis=1)
        any_click = clicked.any(axis=1)
        for idx, has in zip(first, any_click):
            if has:
                raw[idx] += 1
        corrected = saturation_correct(
            CountHistogram(bin_width_s=4e-7, counts=tuple(raw)), trials=trials)
        for est, p in zip(corrected.counts, probs):
            assert est / trials == pytest.approx(p, rel=0.02)

    def test_inconsistent_histogram_rejected(self):
        with pytest.raises(DetectorModelError):
            saturation_correct(CountHistogram(bin_width_s=4e-7, counts=(80, 30)),
                               trials=100)
        with pytest.raises(DetectorModelError):
            saturation_correct(CountHistogram(bin_width_s=4e-7, counts=(100, 5, 1)),
                               trials=100)

    def test_trials_required(self):
        with pytest.raises(DetectorModelError):
            saturation_correct(CountHistogram(bin_width_s=4e-7, counts=(1, 2)))


class TestSplitCounts:
    def test_flat_histogram_has_no_afterpulses(self):
        hist = CountHistogram(bin_width_s=4e-7, counts=(100,) * 50)
        split = split_counts(hist, tail_start_bin=25)
        assert split.afterpulse_counts == 0.0
        assert split.dark_counts == hist.total
        assert split.no_afterpulse_signal

    def test_synthetic_exponential_plus_floor(self):
        rng = np.random.default_rng(77)
        n_bins = 200
        t = np.arange(n_bins) * 4e-7
        ap_mass, dark_mass = 8e5, 2e5
        shape = np.exp(-t / 4e-6)
        expected = ap_mass * shape / shape.sum() + dark_mass / n_bins
        counts = rng.poisson(expected)
        split = split_counts(CountHistogram(bin_width_s=4e-7, counts=tuple(counts)),
                             tail_start_bin=100)
        assert split.afterpulse_counts == pytest.approx(ap_mass, rel=0.02)
        assert split.dark_counts == pytest.approx(dark_mass, rel=0.02)

    def test_tail_length_enforced(self):
        hist = CountHistogram(bin_width_s=4e-7, counts=(10,) * 20)
        with pytest.raises(DetectorModelError):
            split_counts(hist, tail_start_bin=15)


class TestShippedFixtures:
    @pytest.mark.parametrize("name,apc_ref,dc_ref", [
        ("afterpulse_1536nm.csv", 867_760, 162_854),
        ("afterpulse_1924nm.csv", 44_981, 962_140),
    ])
    def test_fixture_reproduces_recorded_split(self, name, apc_ref, dc_ref):
        meta = json.loads((DATA / "fixtures.json").read_text())[name]
        hist = read_histogram_csv(DATA / name)
        corrected = saturation_correct(hist, trials=meta["trials"])
        assert corrected.total > hist.total
        split = split_counts(corrected, tail_start_bin=meta["tail_start_bin"])
        assert split.afterpulse_counts == pytest.approx(apc_ref, rel=0.02)
        assert split.dark_counts == pytest.approx(dc_ref, rel=0.02)


class TestSuppressionRatio:
    def test_published_counts(self):
        gamma = afterpulse_suppression_ratio(867_760, 162_854, 2.68e4,
                                             44_981, 962_140, 8.32e7)
        assert gamma == pytest.approx(2.83e-6, rel=0.01)

    def test_identical_wavelengths(self):
        assert afterpulse_suppression_ratio(5, 7, 11, 5, 7, 11) == pytest.approx(1.0)

    def test_scaling_invariance(self):
        base = afterpulse_suppression_ratio(867_760, 162_854, 2.68e4,
                                            44_981, 962_140, 8.32e7)
        scaled = afterpulse_suppression_ratio(867_760 * 3, 162_854, 2.68e4 * 3,
                                              44_981 * 5, 962_140, 8.32e7 * 5)
        assert scaled == pytest.approx(base, rel=1e-12)

    def test_zero_rejected(self):
        with pytest.raises(DetectorModelError):
            afterpulse_suppression_ratio(0, 1, 1, 1, 1, 1)


class TestReductionFactors:
    def setup_method(self):
        cfg = load_default_config()
        self.profile_s = cfg.signal_profile
        self.profile_a = cfg.attack_profile

    def test_published_values(self):
        d0, d1 = afterpulse_reduction_factors(724.0, 5.04, 2.83e-6,
                                              self.profile_s, self.profile_a)
        assert d0 == pytest.approx(1.03e-2, rel=0.02)
        assert d1 == pytest.approx(1.05e-3, rel=0.02)

    def test_zero_suppression(self):
        d0, d1 = afterpulse_reduction_factors(724.0, 5.04, 0.0,
                                              self.profile_s, self.profile_a)
        assert d0 == 0.0 and d1 == 0.0

    def test_equal_paths_collapse(self):
        profile = WavelengthProfile(wavelength_nm=1536,
                                    path_losses_db={"X-D0": 9.0, "X-C-D1": 9.0})
        d0, d1 = afterpulse_reduction_factors(2.0, 3.0, 0.5, profile, profile)
        assert d1 == pytest.approx(d0)

    def test_detector_ratio_from_table_losses(self):
        d0, d1 = afterpulse_reduction_factors(724.0, 5.04, 2.83e-6,
                                              self.profile_s, self.profile_a)
        assert d0 / d1 == pytest.approx(10 ** (9.9 / 10), rel=1e-9)

    def test_missing_entry_named(self):
        bare = WavelengthProfile(wavelength_nm=1536, path_losses_db={"X-D0": 9.0})
        with pytest.raises(Exception, match="X-C-D1"):
            afterpulse_reduction_factors(1.0, 1.0, 1.0, bare, self.profile_a)


class TestDecayFit:
    def test_recovers_known_parameters(self):
        rng = np.random.default_rng(5)
        bw = 4e-7
        t = (np.arange(200) + 0.5) * bw
        expected = 3e5 * np.exp(-t / 1e-6) + 4e3 * np.exp(-t / 1e-5) + 900.0
        hist = CountHistogram(bin_width_s=bw, counts=tuple(rng.poisson(expected)))
        fit = fit_decay(hist, tail_start_bin=100)
        assert not fit.degenerate
        assert fit.amplitudes[0] == pytest.approx(3e5, rel=0.05)
        assert fit.lifetimes_s[0] == pytest.approx(1e-6, rel=0.05)
        assert fit.amplitudes[1] == pytest.approx(4e3, rel=0.05)
        assert fit.lifetimes_s[1] == pytest.approx(1e-5, rel=0.05)
        assert fit.floor_per_bin == pytest.approx(900.0, rel=0.05)

    def test_flat_input_degenerate(self):
        hist = CountHistogram(bin_width_s=4e-7, counts=(50,) * 120)
        fit = fit_decay(hist, tail_start_bin=60)
        assert fit.degenerate
        assert fit.amplitudes == ()


class TestHistogramContainer:
    def test_csv_round_trip(self, tmp_path):
        hist = CountHistogram(bin_width_s=4e-7, counts=(5, 0, 12, 3))
        path = tmp_path / "h.csv"
        write_histogram_csv(path, hist)
        back = read_histogram_csv(path)
        assert back.bin_width_s == pytest.approx(hist.bin_width_s)
        assert back.counts == hist.counts

    def test_malformed_row_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("bin_start_s,counts\n0,10\nnonsense\n")
        with pytest.raises(DetectorModelError, match="row"):
            read_histogram_csv(path)

    def test_expand_to_gates(self):
        hist = CountHistogram(bin_width_s=4e-7, counts=(10, 4))
        gates = hist.expand_to_gates(2e-7)
        assert gates.counts == (5.0, 5.0, 2.0, 2.0)
        with pytest.raises(DetectorModelError):
            hist.expand_to_gates(3e-7)
