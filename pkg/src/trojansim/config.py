"""Configuration loading, validation, and the derived-factor pipeline.

The device file is JSON: one optical profile per wavelength (segment names
matching the receiver's connector labels), the counting records behind the
photon-number estimates, per-detector parameters, protocol frame settings,
and the attack section. Loaders raise :class:`ConfigError` with the JSON
field path of the offending entry.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .attack import AttackCombination
from .detector import (DetectorParams, TrapComponent, afterpulse_reduction_factors,
                       afterpulse_suppression_ratio)
from .optics import (PhotonCountRecord, WavelengthProfile, attenuation_ratio,
                     db_to_transmittance, mean_photons_from_counts,
                     mean_photons_per_pulse, midway_polarization_loss, path_loss)
from .protocol import FrameConfig
from .readout import ModulatorResponse, separation_angle, overlap_brightness_factor

# double pass through the modulator and back out, reflecting at the connector
# after it; the probe route exploited in the signal band
ROUNDTRIP_SEGMENTS = ["X-Y", "Y-Z", "Z*", "Y-Z", "X-Y"]
# single modulator pass, reflecting at the circulator and leaving via the
# short arm; the route that stays affordable at the long wavelength
CIRCULATOR_SEGMENTS = ["X-Y", "Y-Z"]


class ConfigError(ValueError):
    """Raised when a configuration file is malformed, naming the field."""


def _get(mapping: dict, key: str, kind, path: str, optional: bool = False):
    if key not in mapping:
        if optional:
            return None
        raise ConfigError(f"{path}.{key}: missing required field")
    value = mapping[key]
    if kind is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, kind):
        raise ConfigError(f"{path}.{key}: expected {kind.__name__}, got {type(value).__name__}")
    return value


def _profile(raw: dict, path: str) -> WavelengthProfile:
    losses = _get(raw, "path_losses_db", dict, path)
    for name, loss in losses.items():
        if not isinstance(loss, (int, float)) or isinstance(loss, bool):
            raise ConfigError(f"{path}.path_losses_db.{name}: expected number")
    v_half = _get(raw, "v_half_volts", float, path, optional=True)
    passes = raw.get("modulator_passes", 1)
    if passes not in (1, 2):
        raise ConfigError(f"{path}.modulator_passes: must be 1 or 2")
    try:
        return WavelengthProfile(
            wavelength_nm=_get(raw, "wavelength_nm", float, path),
            path_losses_db={str(k): float(v) for k, v in losses.items()},
            v_half_volts=v_half,
            modulator_passes=passes,
            fiber_loss_db_per_km=_get(raw, "fiber_loss_db_per_km", float, path, optional=True),
            notes={str(k): str(v) for k, v in raw.get("notes", {}).items()},
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _detector(raw: dict, shared: dict, path: str) -> DetectorParams:
    comps = []
    for i, comp in enumerate(raw.get("trap_components", [])):
        comps.append(TrapComponent(
            amplitude=_get(comp, "amplitude_per_photon", float, f"{path}.trap_components[{i}]"),
            lifetime_s=_get(comp, "lifetime_s", float, f"{path}.trap_components[{i}]"),
        ))
    try:
        return DetectorParams(
            efficiency=_get(raw, "efficiency", float, path),
            dark_prob=_get(raw, "dark_prob", float, path),
            gate_period_s=shared["gate_period_s"],
            deadtime_gates=shared["deadtime_gates"],
            trap_components=tuple(comps),
            afterpulse_scale=float(raw.get("afterpulse_scale", 1.0)),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class AfterpulseCountRecord:
    """Afterpulse/dark split of one characterization histogram."""

    probe_photons: float
    afterpulse_counts: float
    dark_counts: float


@dataclass(frozen=True)
class SimulatorConfig:
    """Validated contents of a device configuration file."""

    signal_nm: float
    attack_nm: float | None
    profiles: dict[str, WavelengthProfile]
    frame: FrameConfig
    d0: DetectorParams
    d1: DetectorParams
    afterpulse_counts: dict[str, AfterpulseCountRecord]
    photon_counting: PhotonCountRecord | None
    source_power: dict | None
    i_est: float
    attack_wavelength_nm: float | None
    combination_raw: dict | None
    layout_policy: str
    post_burst_block_fraction: float
    optimize_raw: dict | None

    def profile(self, wavelength_nm: float) -> WavelengthProfile:
        key = _wavelength_key(wavelength_nm)
        if key not in self.profiles:
            raise ConfigError(f"profiles.{key}: no profile for {wavelength_nm:g} nm")
        return self.profiles[key]

    @property
    def signal_profile(self) -> WavelengthProfile:
        return self.profile(self.signal_nm)

    @property
    def attack_profile(self) -> WavelengthProfile:
        if self.attack_nm is None:
            raise ConfigError("wavelengths.attack_nm: not configured")
        return self.profile(self.attack_nm)


def _wavelength_key(wavelength_nm: float) -> str:
    return f"{wavelength_nm:g}"


def load_config(path: str | Path) -> SimulatorConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_config(raw)


def default_config_path() -> Path:
    return Path(str(resources.files("trojansim").joinpath("data/default_config.json")))


def load_default_config() -> SimulatorConfig:
    return load_config(default_config_path())


def parse_config(raw: dict) -> SimulatorConfig:
    if not isinstance(raw, dict):
        raise ConfigError("top level: expected a JSON object")
    wl = _get(raw, "wavelengths", dict, "")
    signal_nm = _get(wl, "signal_nm", float, "wavelengths")
    attack_nm = _get(wl, "attack_nm", float, "wavelengths", optional=True)

    profiles_raw = _get(raw, "profiles", dict, "")
    profiles = {key: _profile(p, f"profiles.{key}") for key, p in profiles_raw.items()}
    if _wavelength_key(signal_nm) not in profiles:
        raise ConfigError(f"profiles: missing profile {_wavelength_key(signal_nm)!r} for the signal wavelength")
    if attack_nm is not None and _wavelength_key(attack_nm) not in profiles:
        raise ConfigError(f"profiles: missing profile {_wavelength_key(attack_nm)!r} for the attack wavelength")

    det = _get(raw, "detectors", dict, "")
    shared = {
        "gate_period_s": _get(det, "gate_period_s", float, "detectors"),
        "deadtime_gates": _get(det, "deadtime_gates", int, "detectors"),
    }
    d0 = _detector(_get(det, "d0", dict, "detectors"), shared, "detectors.d0")
    d1 = _detector(_get(det, "d1", dict, "detectors"), shared, "detectors.d1")

    frame_raw = _get(raw, "frame", dict, "")
    try:
        frame = FrameConfig(
            n_slots=_get(frame_raw, "n_slots", int, "frame"),
            channel_transmittance=_get(frame_raw, "channel_transmittance", float, "frame"),
            signal_mu=_get(frame_raw, "signal_mu", float, "frame"),
            intrinsic_qber=_get(frame_raw, "intrinsic_qber", float, "frame"),
            q_abort=_get(frame_raw, "q_abort", float, "frame"),
            sieve_probability=_get(frame_raw, "sieve_probability", float, "frame"),
            receiver_loss_db=_get(frame_raw, "receiver_loss_db", float, "frame"),
        )
    except ValueError as exc:
        raise ConfigError(f"frame: {exc}") from exc

    ap_counts = {}
    for key, rec in raw.get("afterpulse_counts", {}).items():
        ap_counts[key] = AfterpulseCountRecord(
            probe_photons=_get(rec, "probe_photons", float, f"afterpulse_counts.{key}"),
            afterpulse_counts=_get(rec, "afterpulse_counts", float, f"afterpulse_counts.{key}"),
            dark_counts=_get(rec, "dark_counts", float, f"afterpulse_counts.{key}"),
        )

    counting = None
    if "photon_counting" in raw:
        pc = raw["photon_counting"]
        try:
            counting = PhotonCountRecord(
                pulses_sent=int(_get(pc, "pulses_sent", float, "photon_counting")),
                clicks=_get(pc, "clicks", int, "photon_counting"),
                dark_clicks=_get(pc, "dark_clicks", int, "photon_counting"),
                detector_efficiency=_get(pc, "detector_efficiency", float, "photon_counting"),
            )
        except ValueError as exc:
            raise ConfigError(f"photon_counting: {exc}") from exc

    source_power = raw.get("source_power")
    if source_power is not None:
        _get(source_power, "average_power_w", float, "source_power")
        _get(source_power, "rep_rate_hz", float, "source_power")

    attack = raw.get("attack", {})
    layout = attack.get("layout", {})
    policy = layout.get("policy", "block-after-burst")
    fraction = float(layout.get("post_burst_block_fraction", 0.8))

    return SimulatorConfig(
        signal_nm=signal_nm,
        attack_nm=attack_nm,
        profiles=profiles,
        frame=frame,
        d0=d0,
        d1=d1,
        afterpulse_counts=ap_counts,
        photon_counting=counting,
        source_power=source_power,
        i_est=float(attack.get("i_est", 0.506)),
        attack_wavelength_nm=float(attack["wavelength_nm"]) if "wavelength_nm" in attack else None,
        combination_raw=attack.get("combination"),
        layout_policy=policy,
        post_burst_block_fraction=fraction,
        optimize_raw=raw.get("optimize"),
    )


@dataclass(frozen=True)
class BudgetReport:
    """Path losses and photon-number estimates derived from the profiles."""

    signal_roundtrip_db: float
    attack_roundtrip_db: float | None
    attack_route_best_db: float | None
    attack_route_worst_db: float | None
    attack_route_midway_db: float | None
    attenuation_ratio: float | None
    mu_source: float | None
    mu_detected: float | None
    counting_route_loss_db: float | None

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def budget_report(cfg: SimulatorConfig) -> BudgetReport:
    """Compute every derived loss figure the attack budget rests on."""
    signal_rt = path_loss(cfg.signal_profile, ROUNDTRIP_SEGMENTS)
    attack_rt = best = worst = midway = ratio = None
    if cfg.attack_nm is not None:
        ap = cfg.attack_profile
        attack_rt = path_loss(ap, ROUNDTRIP_SEGMENTS)
        stem = path_loss(ap, CIRCULATOR_SEGMENTS)
        best = stem + ap.loss("Z-C*-X(best)")
        worst = stem + ap.loss("Z-C*-X(worst)")
        midway = stem + midway_polarization_loss(ap.loss("Z-C*-X(best)"), ap.loss("Z-C*-X(worst)"))
        ratio = attenuation_ratio(midway, signal_rt)

    mu_source = mu_detected = route_loss = None
    if cfg.source_power is not None and cfg.attack_nm is not None:
        mu_source = mean_photons_per_pulse(
            cfg.source_power["average_power_w"], cfg.source_power["rep_rate_hz"],
            cfg.attack_nm * 1e-9)
    if cfg.photon_counting is not None:
        mu_detected = mean_photons_from_counts(cfg.photon_counting)
        if mu_source is not None and mu_detected > 0:
            route_loss = 10.0 * math.log10(mu_source / mu_detected)

    return BudgetReport(
        signal_roundtrip_db=signal_rt,
        attack_roundtrip_db=attack_rt,
        attack_route_best_db=best,
        attack_route_worst_db=worst,
        attack_route_midway_db=midway,
        attenuation_ratio=ratio,
        mu_source=mu_source,
        mu_detected=mu_detected,
        counting_route_loss_db=route_loss,
    )


@dataclass(frozen=True)
class DerivedFactors:
    """The factor chain from the optical budget to the afterpulse reduction."""

    theta_signal: float
    theta_attack: float
    brightness_factor: float
    attenuation_ratio: float
    suppression_per_photon: float
    reduction_d0: float
    reduction_d1: float

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def derive_factors(cfg: SimulatorConfig) -> DerivedFactors:
    """Evaluate the full factor pipeline from profiles and counting records."""
    sp, ap = cfg.signal_profile, cfg.attack_profile
    if sp.v_half_volts is None or ap.v_half_volts is None:
        raise ConfigError("profiles: both wavelengths need v_half_volts for the factor pipeline")
    theta_s = separation_angle(ModulatorResponse(
        v_half_signal=sp.v_half_volts, v_half_attack=sp.v_half_volts,
        passes=sp.modulator_passes))
    theta_a = separation_angle(ModulatorResponse(
        v_half_signal=sp.v_half_volts, v_half_attack=ap.v_half_volts,
        passes=ap.modulator_passes))
    nu = overlap_brightness_factor(theta_s, theta_a)

    budget = budget_report(cfg)
    rho = budget.attenuation_ratio
    if rho is None:
        raise ConfigError("profiles: attack-wavelength profile required for the factor pipeline")

    key_s, key_a = _wavelength_key(cfg.signal_nm), _wavelength_key(cfg.attack_nm)
    if key_s not in cfg.afterpulse_counts or key_a not in cfg.afterpulse_counts:
        raise ConfigError("afterpulse_counts: need records at both wavelengths for the factor pipeline")
    rec_s, rec_a = cfg.afterpulse_counts[key_s], cfg.afterpulse_counts[key_a]
    gamma = afterpulse_suppression_ratio(
        rec_s.afterpulse_counts, rec_s.dark_counts, rec_s.probe_photons,
        rec_a.afterpulse_counts, rec_a.dark_counts, rec_a.probe_photons)

    d0, d1 = afterpulse_reduction_factors(rho, nu, gamma, sp, ap)
    return DerivedFactors(
        theta_signal=theta_s,
        theta_attack=theta_a,
        brightness_factor=nu,
        attenuation_ratio=rho,
        suppression_per_photon=gamma,
        reduction_d0=d0,
        reduction_d1=d1,
    )


@dataclass(frozen=True)
class AttackSetup:
    """Everything evaluate() needs for the configured attack."""

    combination: AttackCombination
    d0: DetectorParams
    d1: DetectorParams
    i_est: float
    layout_policy: str
    post_burst_block_fraction: float


def attack_setup(cfg: SimulatorConfig, wavelength_nm: float | None = None) -> AttackSetup:
    """Build the configured combination with wavelength-appropriate scaling.

    At the attack wavelength the detectors' afterpulse scales become the
    derived reduction factors and the readout pair is the single-pass,
    brightness-compensated one; at the signal wavelength scales stay 1 and
    the readout pair is the orthogonal double-pass one.
    """
    if cfg.combination_raw is None:
        raise ConfigError("attack.combination: missing from config")
    wl = wavelength_nm if wavelength_nm is not None else cfg.attack_wavelength_nm
    if wl is None:
        raise ConfigError("attack.wavelength_nm: missing from config")

    raw = cfg.combination_raw
    path = "attack.combination"
    n_block = _get(raw, "n_block", int, path)
    thp_photons = _get(raw, "thp_photons", float, path)
    mu_signal_band = thp_photons * db_to_transmittance(
        path_loss(cfg.signal_profile, ROUNDTRIP_SEGMENTS))

    if math.isclose(wl, cfg.signal_nm):
        scale0 = scale1 = 1.0
        factors = None
        theta = separation_angle(ModulatorResponse(
            v_half_signal=cfg.signal_profile.v_half_volts,
            v_half_attack=cfg.signal_profile.v_half_volts,
            passes=cfg.signal_profile.modulator_passes))
        readout_mu = mu_signal_band
    elif cfg.attack_nm is not None and math.isclose(wl, cfg.attack_nm):
        factors = derive_factors(cfg)
        scale0, scale1 = factors.reduction_d0, factors.reduction_d1
        theta = factors.theta_attack
        readout_mu = factors.brightness_factor * mu_signal_band
    else:
        raise ConfigError(f"attack wavelength {wl:g} nm matches neither configured wavelength")

    try:
        combination = AttackCombination(
            n_block=n_block,
            n_lowloss=cfg.frame.n_slots - n_block,
            t_ll=_get(raw, "t_ll", float, path),
            n_thp_slots=_get(raw, "n_thp_slots", int, path),
            n_bursts=_get(raw, "n_bursts", int, path),
            burst_len=_get(raw, "burst_len", int, path),
            thp_photons=thp_photons,
            readout_theta=theta,
            readout_mu=readout_mu,
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return AttackSetup(
        combination=combination,
        d0=cfg.d0.with_scale(scale0),
        d1=cfg.d1.with_scale(scale1),
        i_est=cfg.i_est,
        layout_policy=cfg.layout_policy,
        post_burst_block_fraction=cfg.post_burst_block_fraction,
    )
