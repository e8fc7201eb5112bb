"""Simulator and attack optimizer for long-wavelength Trojan-horse probing
of a gated-detector QKD receiver."""

from .attack import (AttackCombination, AttackError, BreachReport, build_frame_plan,
                     evaluate, eve_information, expand_grid, optimize)
from .config import (AttackSetup, BudgetReport, ConfigError, DerivedFactors,
                     SimulatorConfig, attack_setup, budget_report, derive_factors,
                     load_config, load_default_config)
from .detector import (CountHistogram, DecayFit, DetectorModelError, DetectorParams,
                       SplitCounts, TrapComponent, afterpulse_prob,
                       afterpulse_reduction_factors, afterpulse_suppression_ratio,
                       fit_decay, read_histogram_csv, sample_gate, saturation_correct,
                       split_counts, write_histogram_csv)
from .optics import (OpticsError, PhotonCountRecord, WavelengthProfile,
                     attenuation_ratio, db_to_transmittance, mean_photons_from_counts,
                     mean_photons_per_pulse, midway_polarization_loss, path_loss,
                     transmittance_to_db)
from .protocol import (ActionKind, FrameConfig, FramePlan, ProtocolError, SimResult,
                       SlotAction, SlotOutcome, run_frame, run_simulation,
                       wilson_interval)
from .readout import (CoherentPair, ModulatorResponse, ReadoutError,
                      overlap_brightness_factor, readout_error_prob, required_mu,
                      separation_angle)

__version__ = "0.1.0"
