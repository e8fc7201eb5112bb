#!/usr/bin/env python3
"""Regenerate the fixture afterpulse histograms shipped in trojansim/data.

The fixtures are synthetic reconstructions of the two characterization
histograms: per-trial click probabilities follow the shipped detector model
(two-exponential afterpulse decay plus dark floor), the expected raw bins
include the one-stop-per-trial censoring, and Poisson noise is added with a
fixed seed. Trial counts are chosen so the saturation-corrected totals match
the recorded afterpulse/dark splits in the default config.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

DATA = Path(__file__).resolve().parent.parent / "src" / "trojansim" / "data"
N_BINS = 200
GATES_PER_BIN = 2
GATE_S = 2.0e-7
BIN_S = GATES_PER_BIN * GATE_S
SEED = 171717


def per_trial_bin_probs(probe_photons: float, per_photon_scale: float,
                        traps: list[dict], dark_prob: float) -> np.ndarray:
    gates = np.arange(1, N_BINS * GATES_PER_BIN + 1) * GATE_S
    hazard = np.zeros_like(gates)
    for comp in traps:
        hazard += (probe_photons * per_photon_scale * comp["amplitude_per_photon"]
                   * np.exp(-gates / comp["lifetime_s"]))
    per_gate = hazard + dark_prob
    return per_gate.reshape(N_BINS, GATES_PER_BIN).sum(axis=1)


def censored_raw(p: np.ndarray, trials: float) -> np.ndarray:
    survival = np.concatenate([[1.0], np.cumprod(1.0 - p)[:-1]])
    return trials * p * survival


def main() -> None:
    cfg = json.loads((DATA / "default_config.json").read_text())
    d0 = cfg["detectors"]["d0"]
    traps = d0["trap_components"]
    dark = d0["dark_prob"]
    counts = cfg["afterpulse_counts"]

    # per-photon suppression at the long wavelength, from the recorded splits
    rec_s, rec_l = counts["1536"], counts["1924"]
    gamma = ((rec_s["probe_photons"] / rec_l["probe_photons"])
             * (rec_l["afterpulse_counts"] / rec_l["dark_counts"])
             / (rec_s["afterpulse_counts"] / rec_s["dark_counts"]))

    rng = np.random.default_rng(SEED)
    sidecar = {}
    for key, scale in (("1536", 1.0), ("1924", gamma)):
        rec = counts[key]
        p = per_trial_bin_probs(rec["probe_photons"], scale, traps, dark)
        ap_mass = p.sum() - N_BINS * GATES_PER_BIN * dark
        trials = round(rec["afterpulse_counts"] / ap_mass)
        expected_raw = censored_raw(p, trials)
        noisy = rng.poisson(expected_raw)
        name = f"afterpulse_{key}nm.csv"
        with open(DATA / name, "w") as fh:
            fh.write("bin_start_s,counts\n")
            for i, c in enumerate(noisy):
                fh.write(f"{i * BIN_S:.10g},{int(c)}\n")
        sidecar[name] = {
            "wavelength_nm": int(key),
            "trials": trials,
            "probe_photons": rec["probe_photons"],
            "tail_start_bin": 100,
        }
        print(f"{name}: trials={trials} raw_total={noisy.sum()} "
              f"expected_corrected_total={trials * p.sum():.0f}")
    (DATA / "fixtures.json").write_text(json.dumps(sidecar, indent=2) + "\n")


if __name__ == "__main__":
    main()
