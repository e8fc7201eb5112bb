"""Modulator phase response and homodyne discrimination of back-reflected probes.

The receiver encodes its basis choice as a phase on light passing its
modulator. A probe at a different wavelength sees a weaker phase shift
(half-wave voltage grows with wavelength) and possibly fewer modulator
passes, so the two back-reflected coherent states an eavesdropper must tell
apart are separated by a smaller angle. This module computes that angle, the
brightness compensation it demands, and the discrimination error of an ideal
homodyne readout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


class ReadoutError(ValueError):
    """Raised for invalid phase-readout inputs."""


@dataclass(frozen=True)
class ModulatorResponse:
    """Half-wave voltages of the phase modulator at the signal and probe wavelengths.

    ``passes`` is how many times the probe traverses the modulator (the
    signal-band reflection path crosses twice, the circulator path once).
    """

    v_half_signal: float
    v_half_attack: float
    passes: int = 1

    def __post_init__(self) -> None:
        if self.v_half_signal <= 0 or self.v_half_attack <= 0:
            raise ReadoutError("half-wave voltages must be > 0")
        if self.passes not in (1, 2):
            raise ReadoutError("passes must be 1 or 2")


@dataclass(frozen=True)
class CoherentPair:
    """Two equal-amplitude coherent states separated by angle ``theta`` in phase space.

    ``mu`` is the mean photon number |alpha|^2 of each state;
    ``excess_noise`` multiplies the quadrature variance (1.0 = shot-noise
    limited) so measured readout fidelities below the ideal model can be
    represented.
    """

    mu: float
    theta: float
    excess_noise: float = 1.0

    def __post_init__(self) -> None:
        if self.mu < 0:
            raise ReadoutError("mu must be >= 0")
        if not 0 <= self.theta <= math.pi:
            raise ReadoutError("theta must be in [0, pi]")
        if self.excess_noise <= 0:
            raise ReadoutError("excess_noise must be > 0")


def separation_angle(response: ModulatorResponse) -> float:
    """Angle between the two back-reflected states, assuming a linear modulator.

    Scales the receiver's pi/2 phase step by the half-wave-voltage ratio and
    the number of modulator passes. Angles beyond pi are non-physical for
    this model and raise.
    """
    theta = response.passes * (response.v_half_signal / response.v_half_attack) * (math.pi / 2.0)
    if theta > math.pi:
        if theta > math.pi * (1 + 1e-12):
            raise ReadoutError(
                f"separation angle {theta:.6g} rad exceeds pi; "
                "voltage ratio/passes combination is outside the model"
            )
        theta = math.pi
    return theta


def overlap_brightness_factor(theta_reference: float, theta_attack: float) -> float:
    """Brightness increase needed to restore the reference state separation.

    The squared distance between the two states scales as (1 - cos theta), so
    the factor is (1 - cos theta_reference)/(1 - cos theta_attack).
    """
    if theta_attack <= 0:
        raise ReadoutError("theta_attack must be > 0 (identical states need infinite brightness)")
    return (1.0 - math.cos(theta_reference)) / (1.0 - math.cos(theta_attack))


def readout_error_prob(pair: CoherentPair) -> float:
    """Error probability of an ideal homodyne readout of the pair.

    Model: measure the quadrature along the line joining the two states and
    threshold midway. With the vacuum quadrature deviation sigma = 1/2 and
    state separation |alpha - beta| = 2 sqrt(mu) sin(theta/2), the error is

        p_err = erfc(|alpha - beta| / (2 sigma sqrt(2))) / 2
              = erfc(sqrt(2 mu) sin(theta/2) / sqrt(excess_noise)) / 2

    which decreases monotonically in both mu and theta and equals 1/2 for
    indistinguishable states.
    """
    arg = math.sqrt(2.0 * pair.mu / pair.excess_noise) * math.sin(pair.theta / 2.0)
    return 0.5 * math.erfc(arg)


def required_mu(theta: float, target_error: float, *, excess_noise: float = 1.0,
                rel_tol: float = 1e-6) -> float:
    """Smallest mean photon number whose readout error is <= ``target_error``.

    Bisection on mu; the error model is strictly decreasing in mu for
    theta > 0, so the root is unique.
    """
    if theta <= 0:
        raise ReadoutError("theta must be > 0")
    if not 0 < target_error < 0.5:
        raise ReadoutError("target_error must be in (0, 0.5)")

    def err(mu: float) -> float:
        return readout_error_prob(CoherentPair(mu=mu, theta=theta, excess_noise=excess_noise))

    lo, hi = 0.0, 1.0
    while err(hi) > target_error:
        hi *= 2.0
        if hi > 1e18:
            raise ReadoutError("required mu out of range")
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if err(mid) <= target_error:
            hi = mid
        else:
            lo = mid
    return hi
