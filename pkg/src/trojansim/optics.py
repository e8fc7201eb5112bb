"""Decibel path algebra and photon-number estimation for the receiver's optics.

All losses are expressed in dB (positive = attenuation). Paths through the
receiver are named segment lists; a profile holds the per-segment losses
measured at one wavelength, so the same path algebra serves both the signal
band and the long-wavelength probe band.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

# CODATA values, 6 significant digits.
PLANCK_J_S = 6.62607e-34
LIGHT_SPEED_M_S = 2.99792e8


class OpticsError(ValueError):
    """Raised for invalid optical-budget inputs."""


def _require_finite(value: float, name: str) -> None:
    if not math.isfinite(value):
        raise OpticsError(f"{name} must be finite, got {value!r}")


def db_to_transmittance(loss_db: float) -> float:
    """Convert a loss in dB to a linear power transmittance."""
    _require_finite(loss_db, "loss_db")
    return 10.0 ** (-loss_db / 10.0)


def transmittance_to_db(transmittance: float) -> float:
    """Inverse of :func:`db_to_transmittance`."""
    _require_finite(transmittance, "transmittance")
    if transmittance <= 0:
        raise OpticsError(f"transmittance must be > 0, got {transmittance!r}")
    return -10.0 * math.log10(transmittance)


def mean_photons_per_pulse(avg_power_w: float, rep_rate_hz: float, wavelength_m: float) -> float:
    """Mean photon number per pulse of a pulsed laser from its average power.

    Divides the energy per pulse by the single-photon energy hc/lambda.
    """
    for name, value in (("avg_power_w", avg_power_w),
                        ("rep_rate_hz", rep_rate_hz),
                        ("wavelength_m", wavelength_m)):
        _require_finite(value, name)
        if value <= 0:
            raise OpticsError(f"{name} must be > 0, got {value!r}")
    photon_energy = PLANCK_J_S * LIGHT_SPEED_M_S / wavelength_m
    return avg_power_w / (rep_rate_hz * photon_energy)


@dataclass(frozen=True)
class PhotonCountRecord:
    """Raw counting-experiment numbers used to estimate a mean photon number.

    ``clicks`` includes dark counts; ``detector_efficiency`` is the
    single-photon detection probability of the counting detector.
    """

    pulses_sent: int
    clicks: int
    dark_clicks: int
    detector_efficiency: float

    def __post_init__(self) -> None:
        if self.pulses_sent <= 0:
            raise OpticsError("pulses_sent must be > 0")
        if self.dark_clicks < 0 or self.clicks < self.dark_clicks:
            raise OpticsError("need clicks >= dark_clicks >= 0")
        if not 0 < self.detector_efficiency <= 1:
            raise OpticsError("detector_efficiency must be in (0, 1]")


def mean_photons_from_counts(record: PhotonCountRecord) -> float:
    """Estimate the mean photon number per pulse at the counting detector.

    Inverts the Poissonian click probability (n - d)/N = 1 - exp(-mu * eta)
    exactly:  mu = -ln(1 - (n - d)/N) / eta.  For small click fractions this
    approaches the linear estimate (n - d)/(N * eta); the exact inversion is
    always >= the linear one.
    """
    excess = (record.clicks - record.dark_clicks) / record.pulses_sent
    if excess >= 1.0:
        raise OpticsError("click fraction saturated: (n - d)/N >= 1 is not invertible")
    return -math.log1p(-excess) / record.detector_efficiency


@dataclass(frozen=True)
class WavelengthProfile:
    """Per-segment losses and modulator response of the receiver at one wavelength.

    ``path_losses_db`` maps segment names (e.g. ``"X-Y"``, ``"Z*"``) to losses
    in dB. The reflection entry ``"Z*"`` was characterized near the signal
    band and is reused unchanged at other wavelengths; ``notes`` records such
    provenance caveats per segment.
    """

    wavelength_nm: float
    path_losses_db: dict[str, float]
    v_half_volts: float | None = None
    modulator_passes: int = 1
    fiber_loss_db_per_km: float | None = None
    notes: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.wavelength_nm <= 0:
            raise OpticsError("wavelength_nm must be > 0")
        for name, loss in self.path_losses_db.items():
            _require_finite(loss, f"path_losses_db[{name!r}]")
            if loss < 0:
                raise OpticsError(f"loss for segment {name!r} must be >= 0 dB")
        best = self.path_losses_db.get("Z-C*-X(best)")
        worst = self.path_losses_db.get("Z-C*-X(worst)")
        if best is not None and worst is not None and worst < best:
            raise OpticsError("Z-C*-X(worst) must be >= Z-C*-X(best)")
        if self.v_half_volts is not None and self.v_half_volts <= 0:
            raise OpticsError("v_half_volts must be > 0")
        if self.modulator_passes not in (1, 2):
            raise OpticsError("modulator_passes must be 1 or 2")

    def loss(self, segment: str) -> float:
        try:
            return self.path_losses_db[segment]
        except KeyError:
            raise OpticsError(
                f"segment {segment!r} not in profile at {self.wavelength_nm:g} nm "
                f"(have: {sorted(self.path_losses_db)})"
            ) from None


def path_loss(profile: WavelengthProfile, segments: list[str]) -> float:
    """Total loss in dB along an ordered segment list; repeats count per traversal."""
    return sum(profile.loss(name) for name in segments)


def midway_polarization_loss(best_db: float, worst_db: float) -> float:
    """Loss seen by light polarized midway between the best and worst axes.

    A polarization-dependent element transmits the mean of the best and worst
    power transmittances for the midway input state, so the average is taken
    in the linear domain and converted back to dB.
    """
    _require_finite(best_db, "best_db")
    _require_finite(worst_db, "worst_db")
    if worst_db < best_db:
        raise OpticsError(f"worst_db ({worst_db}) must be >= best_db ({best_db})")
    mean_t = 0.5 * (db_to_transmittance(best_db) + db_to_transmittance(worst_db))
    return transmittance_to_db(mean_t)


def attenuation_ratio(loss_db_attack: float, loss_db_reference: float) -> float:
    """How many times more photons the lossier path requires for equal output.

    Returns 10^((loss_attack - loss_reference)/10); 1.0 for equal losses.
    """
    _require_finite(loss_db_attack, "loss_db_attack")
    _require_finite(loss_db_reference, "loss_db_reference")
    return 10.0 ** ((loss_db_attack - loss_db_reference) / 10.0)
