"""Gated single-photon detector model and afterpulse histogram analysis.

A bright probe pulse fills carrier traps in the avalanche diode; trapped
carriers released in later gates cause spurious clicks whose rate decays as
a sum of exponentials. The model tracks that hazard per gate, scales it
linearly with probe energy, and composes it with Poissonian photon detection
and dark counts. Histogram utilities recover afterpulse/dark splits and
decay parameters from counting data of the kind used to characterize the
effect at both wavelengths.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares

from .optics import WavelengthProfile


class DetectorModelError(ValueError):
    """Raised for invalid detector-model inputs."""


@dataclass(frozen=True)
class TrapComponent:
    """One exponential component of the afterpulse decay.

    ``amplitude`` is the per-gate click hazard contributed per probe photon
    at the receiver entrance, immediately after the probe; ``lifetime_s`` is
    the trap release time constant.
    """

    amplitude: float
    lifetime_s: float

    def __post_init__(self) -> None:
        if self.amplitude < 0:
            raise DetectorModelError("trap amplitude must be >= 0")
        if self.lifetime_s <= 0:
            raise DetectorModelError("trap lifetime must be > 0")


@dataclass(frozen=True)
class DetectorParams:
    """Operating parameters of one gated detector.

    ``afterpulse_scale`` multiplies the trap hazard: 1.0 for probes in the
    signal band, or the per-detector reduction factor for long-wavelength
    probes. ``deadtime_gates`` is how many gates after any click the
    detectors stay un-gated.
    """

    efficiency: float
    dark_prob: float
    gate_period_s: float = 200e-9
    deadtime_gates: int = 50
    trap_components: tuple[TrapComponent, ...] = ()
    afterpulse_scale: float = 1.0

    def __post_init__(self) -> None:
        if not 0 < self.efficiency <= 1:
            raise DetectorModelError("efficiency must be in (0, 1]")
        if not 0 <= self.dark_prob <= 1:
            raise DetectorModelError("dark_prob must be in [0, 1]")
        if self.gate_period_s <= 0:
            raise DetectorModelError("gate_period_s must be > 0")
        if self.deadtime_gates < 0:
            raise DetectorModelError("deadtime_gates must be >= 0")
        if self.afterpulse_scale < 0:
            raise DetectorModelError("afterpulse_scale must be >= 0")

    def with_scale(self, afterpulse_scale: float) -> "DetectorParams":
        return replace(self, afterpulse_scale=afterpulse_scale)


def afterpulse_prob(params: DetectorParams, t_since_probe_s: float, probe_photons: float) -> float:
    """Per-gate afterpulse click probability at ``t_since_probe_s`` after one probe.

    Linear in probe photon number before the clamp at 1.
    """
    if t_since_probe_s < 0:
        raise DetectorModelError("t_since_probe_s must be >= 0")
    if probe_photons < 0:
        raise DetectorModelError("probe_photons must be >= 0")
    hazard = params.afterpulse_scale * probe_photons * sum(
        c.amplitude * math.exp(-t_since_probe_s / c.lifetime_s) for c in params.trap_components
    )
    return min(1.0, hazard)


class HazardAccumulator:
    """Running per-gate afterpulse hazard for one detector across a gate sequence.

    Each component's contribution is a geometric decay per gate, so the
    accumulated hazard of any probe history is tracked with one state value
    per component. Call order per gate: ``current()`` for this gate's hazard,
    then ``advance(probe_photons)`` with the photons (0 if none) of a probe
    arriving in this gate period; a probe starts contributing at the next
    gate.
    """

    def __init__(self, params: DetectorParams):
        self._scale = params.afterpulse_scale
        self._amps = [c.amplitude for c in params.trap_components]
        self._decays = [math.exp(-params.gate_period_s / c.lifetime_s) for c in params.trap_components]
        self._state = [0.0] * len(self._amps)

    def current(self) -> float:
        return min(1.0, sum(self._state))

    def advance(self, probe_photons: float = 0.0) -> None:
        for k, (amp, decay) in enumerate(zip(self._amps, self._decays)):
            self._state[k] = (self._state[k] + self._scale * probe_photons * amp) * decay


def sample_gate(params: DetectorParams, in_gate_mean_photons: float,
                afterpulse_hazard: float, rng: np.random.Generator) -> bool:
    """Sample one detector gate; True on a click.

    Click probability composes dark counts, the supplied afterpulse hazard,
    and Poissonian photon detection:
    1 - (1 - dark)(1 - hazard) exp(-mu * eta).
    """
    if in_gate_mean_photons < 0:
        raise DetectorModelError("in_gate_mean_photons must be >= 0")
    p_no_click = ((1.0 - params.dark_prob) * (1.0 - min(1.0, afterpulse_hazard))
                  * math.exp(-in_gate_mean_photons * params.efficiency))
    return rng.random() < 1.0 - p_no_click


@dataclass(frozen=True)
class CountHistogram:
    """Time histogram of detector clicks after repeated probe injections.

    ``trials`` is the number of probe injections behind the histogram; it is
    required for saturation correction (the counter records at most one click
    per injection, so late bins are suppressed).
    """

    bin_width_s: float
    counts: tuple[float, ...]
    trials: int | None = None

    def __post_init__(self) -> None:
        if self.bin_width_s <= 0:
            raise DetectorModelError("bin_width_s must be > 0")
        if any(c < 0 for c in self.counts):
            raise DetectorModelError("counts must be non-negative")

    @property
    def total(self) -> float:
        return float(sum(self.counts))

    def bin_starts(self) -> np.ndarray:
        return np.arange(len(self.counts)) * self.bin_width_s

    def expand_to_gates(self, gate_period_s: float) -> "CountHistogram":
        """Split each bin evenly into the gates it covers (counter bins span >1 gate)."""
        per_bin = self.bin_width_s / gate_period_s
        n = round(per_bin)
        if n < 1 or abs(per_bin - n) > 1e-9:
            raise DetectorModelError("bin width must be an integer multiple of the gate period")
        counts = tuple(c / n for c in self.counts for _ in range(n))
        return CountHistogram(bin_width_s=gate_period_s, counts=counts, trials=self.trials)


def read_histogram_csv(path: str | Path) -> CountHistogram:
    """Read a (bin_start_s, counts) CSV written by :func:`write_histogram_csv`."""
    starts: list[float] = []
    counts: list[float] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for i, row in enumerate(reader):
            if i == 0 and row and row[0].strip().lower() == "bin_start_s":
                continue
            if not row:
                continue
            try:
                starts.append(float(row[0]))
                counts.append(float(row[1]))
            except (IndexError, ValueError) as exc:
                raise DetectorModelError(f"{path}: malformed row {i + 1}: {row!r}") from exc
    if len(counts) < 2:
        raise DetectorModelError(f"{path}: need at least two histogram bins")
    widths = np.diff(starts)
    if not np.allclose(widths, widths[0], rtol=1e-6):
        raise DetectorModelError(f"{path}: bins are not uniformly spaced")
    return CountHistogram(bin_width_s=float(widths[0]), counts=tuple(counts))


def write_histogram_csv(path: str | Path, hist: CountHistogram) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_start_s", "counts"])
        for start, count in zip(hist.bin_starts(), hist.counts):
            writer.writerow([f"{start:.10g}", f"{count:.10g}"])


def saturation_correct(hist: CountHistogram, trials: int | None = None) -> CountHistogram:
    """Undo first-click censoring of a one-stop-per-trial counter.

    Bin i is suppressed by the probability that the trial already clicked in
    an earlier bin, so corrected_i = raw_i / (1 - sum(raw_j, j<i)/trials).
    The corrected total is always >= the raw total.
    """
    n_trials = trials if trials is not None else hist.trials
    if n_trials is None:
        raise DetectorModelError("saturation correction needs the number of trials")
    corrected: list[float] = []
    seen = 0.0
    for i, raw in enumerate(hist.counts):
        survival = 1.0 - seen / n_trials
        if survival <= 0:
            raise DetectorModelError(
                f"running count sum reaches trials at bin {i}; histogram inconsistent with trials={n_trials}"
            )
        corrected.append(raw / survival)
        seen += raw
    if seen > n_trials:
        raise DetectorModelError(
            f"histogram total {seen:g} exceeds trials={n_trials}; at most one click per trial"
        )
    return CountHistogram(bin_width_s=hist.bin_width_s, counts=tuple(corrected), trials=n_trials)


@dataclass(frozen=True)
class SplitCounts:
    """Afterpulse/dark decomposition of a count histogram."""

    afterpulse_counts: float
    dark_counts: float
    no_afterpulse_signal: bool = False


def split_counts(hist: CountHistogram, tail_start_bin: int, min_tail_bins: int = 10) -> SplitCounts:
    """Split a histogram's total into afterpulse and dark counts.

    The tail (bins from ``tail_start_bin`` on) is taken as pure dark floor:
    dark total = tail mean x number of bins; the remainder is afterpulsing.
    A tail mean at or above the overall mean means no afterpulse signal; the
    split is then (0, total) with a warning flag.
    """
    n = len(hist.counts)
    if not 0 < tail_start_bin < n:
        raise DetectorModelError(f"tail_start_bin must be inside the histogram (0, {n})")
    tail = hist.counts[tail_start_bin:]
    if len(tail) < min_tail_bins:
        raise DetectorModelError(f"tail has {len(tail)} bins; need >= {min_tail_bins}")
    tail_mean = sum(tail) / len(tail)
    total = hist.total
    if tail_mean * n >= total:
        return SplitCounts(afterpulse_counts=0.0, dark_counts=total, no_afterpulse_signal=True)
    dark = tail_mean * n
    return SplitCounts(afterpulse_counts=total - dark, dark_counts=dark)


def afterpulse_suppression_ratio(apc_signal: float, dc_signal: float, mu_signal: float,
                                 apc_attack: float, dc_attack: float, mu_attack: float) -> float:
    """Per-photon afterpulse suppression at the probe wavelength vs the signal band.

    Compares the afterpulse-to-dark count ratios of the two characterization
    histograms, normalized by the probe photon numbers used:
    (mu_signal/mu_attack) * (ApC_attack/DC_attack) / (ApC_signal/DC_signal).
    """
    for name, value in (("apc_signal", apc_signal), ("dc_signal", dc_signal),
                        ("mu_signal", mu_signal), ("apc_attack", apc_attack),
                        ("dc_attack", dc_attack), ("mu_attack", mu_attack)):
        if value <= 0:
            raise DetectorModelError(f"{name} must be > 0, got {value!r}")
    return (mu_signal / mu_attack) * (apc_attack / dc_attack) / (apc_signal / dc_signal)


def afterpulse_reduction_factors(attenuation: float, brightness_factor: float,
                                 suppression: float,
                                 profile_signal: WavelengthProfile,
                                 profile_attack: WavelengthProfile) -> tuple[float, float]:
    """Combined afterpulse reduction for the two detectors at the probe wavelength.

    The first detector's factor is the product of the extra-attenuation,
    brightness-compensation and per-photon-suppression terms; the second
    additionally corrects for how the entrance-to-detector losses differ
    between the two wavelengths' probe paths.
    """
    if attenuation < 0 or brightness_factor < 0 or suppression < 0:
        raise DetectorModelError("factors must be >= 0")
    d0 = attenuation * brightness_factor * suppression
    exponent = (profile_signal.loss("X-C-D1") - profile_signal.loss("X-D0")
                - profile_attack.loss("X-C-D1") + profile_attack.loss("X-D0")) / 10.0
    d1 = d0 * 10.0 ** exponent
    return d0, d1


@dataclass(frozen=True)
class DecayFit:
    """Two-exponential-plus-floor fit of an afterpulse histogram.

    Amplitudes are in counts per bin at t = 0, ordered fast to slow.
    """

    amplitudes: tuple[float, ...]
    lifetimes_s: tuple[float, ...]
    floor_per_bin: float
    residual_rms: float
    degenerate: bool = False


def _peel_exponential(t: np.ndarray, excess: np.ndarray) -> tuple[float, float]:
    """Log-linear regression of a positive excess onto one exponential."""
    mask = excess > 0
    if mask.sum() < 3:
        return 0.0, t[-1] if len(t) else 1.0
    slope, intercept = np.polyfit(t[mask], np.log(excess[mask]), 1)
    if slope >= 0:
        return 0.0, float(t[-1])
    return float(math.exp(intercept)), float(-1.0 / slope)


def fit_decay(hist: CountHistogram, tail_start_bin: int) -> DecayFit:
    """Least-squares fit of counts(t) = floor + sum_k B_k exp(-t/tau_k), two components.

    Bin counts are evaluated at bin centers and weighted by 1/sqrt(counts)
    (Poisson). Initial estimates come from peel-off: the slow component is
    regressed on the mid-range bins where the fast one has died, subtracted,
    and the fast one regressed on the early bins. Returns a degenerate flag
    instead of raising when there is no decaying signal to fit.
    """
    split = split_counts(hist, tail_start_bin)
    t = hist.bin_starts() + 0.5 * hist.bin_width_s
    y = np.asarray(hist.counts, dtype=float)
    floor0 = split.dark_counts / len(hist.counts)
    if split.no_afterpulse_signal or split.afterpulse_counts <= 0:
        return DecayFit(amplitudes=(), lifetimes_s=(), floor_per_bin=floor0,
                        residual_rms=float(np.std(y - floor0)), degenerate=True)

    # peel-off initialization: slow on the middle range, fast on the head
    mid = slice(tail_start_bin // 4, tail_start_bin)
    b_slow0, tau_slow0 = _peel_exponential(t[mid], y[mid] - floor0)
    head = slice(0, max(4, tail_start_bin // 8))
    slow_part = b_slow0 * np.exp(-t[head] / tau_slow0) if b_slow0 > 0 else 0.0
    b_fast0, tau_fast0 = _peel_exponential(t[head], y[head] - floor0 - slow_part)
    if b_fast0 <= 0:
        b_fast0, tau_fast0 = max(y[0] - floor0, 1.0), float(t[tail_start_bin]) / 20.0
    if b_slow0 <= 0:
        b_slow0, tau_slow0 = 0.1 * b_fast0, 10.0 * tau_fast0

    weights = 1.0 / np.sqrt(np.maximum(y, 1.0))

    def residuals(p: np.ndarray) -> np.ndarray:
        b1, t1, b2, t2, c = p
        return (c + b1 * np.exp(-t / t1) + b2 * np.exp(-t / t2) - y) * weights

    span = float(t[tail_start_bin])
    p0 = np.array([b_fast0, tau_fast0, b_slow0, tau_slow0, floor0])
    lower = [0.0, hist.bin_width_s / 100.0, 0.0, hist.bin_width_s / 100.0, 0.0]
    upper = [np.inf, span * 100.0, np.inf, span * 100.0, np.inf]
    p0 = np.clip(p0, lower, upper)
    fit = least_squares(residuals, p0, bounds=(lower, upper))
    b1, t1, b2, t2, c = fit.x
    comps = sorted(((b1, t1), (b2, t2)), key=lambda bt: bt[1])
    model = c + b1 * np.exp(-t / t1) + b2 * np.exp(-t / t2)
    rms = float(np.sqrt(np.mean((model - y) ** 2)))
    kept = [(b, tau) for b, tau in comps if b > 0]
    return DecayFit(
        amplitudes=tuple(b for b, _ in kept),
        lifetimes_s=tuple(tau for _, tau in kept),
        floor_per_bin=float(c),
        residual_rms=rms,
        degenerate=len(kept) < 2 or not fit.success,
    )
