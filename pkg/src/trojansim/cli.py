"""Command-line frontend: budget math, factor derivation, simulation,
combination search, and histogram analysis.

Exit codes: ``simulate`` and ``optimize`` return 0 when the evaluated attack
breaches security, 2 when it does not, and 3 when the incurred QBER is at or
above the abort threshold (for ``optimize``: 0 if any feasible combination
breaches, else 2). Configuration and data errors exit 1; argument errors
exit 2 via argparse before anything runs.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .attack import AttackError, evaluate, expand_grid, optimize
from .config import (ConfigError, SimulatorConfig, attack_setup, budget_report,
                     default_config_path, derive_factors, load_config)
from .detector import (DetectorModelError, fit_decay, read_histogram_csv,
                       saturation_correct, split_counts, write_histogram_csv)
from .optics import OpticsError
from .protocol import (FramePlan, ProtocolError, SimResult, SlotAction,
                       run_simulation)

EXIT_BREACH = 0
EXIT_ERROR = 1
EXIT_NO_BREACH = 2
EXIT_ABORT_QBER = 3


def _fmt(value) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


class OutputWriter:
    """Writes run outputs under one directory, refusing to overwrite without --force."""

    def __init__(self, out_dir: str | None, force: bool):
        self.dir = Path(out_dir) if out_dir else None
        self.force = force
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        assert self.dir is not None
        target = self.dir / name
        if target.exists() and not self.force:
            raise ConfigError(f"{target}: already exists (pass --force to overwrite)")
        return target

    def write_json(self, name: str, payload: dict) -> None:
        if self.dir is None:
            return
        with open(self.path(name), "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, name: str, header: list[str], rows: list[list]) -> None:
        if self.dir is None:
            return
        with open(self.path(name), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)

    def write_manifest(self, command: str, args: argparse.Namespace) -> None:
        if self.dir is None:
            return
        manifest = {
            "command": command,
            "argv": sys.argv[1:],
            "config": str(Path(args.config).resolve()) if getattr(args, "config", None) else None,
            "seed": getattr(args, "seed", None),
            "out": str(self.dir.resolve()),
            "version": __version__,
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }
        with open(self.path("manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _load(args: argparse.Namespace) -> SimulatorConfig:
    return load_config(args.config)


def cmd_budget(args: argparse.Namespace) -> int:
    cfg = _load(args)
    report = budget_report(cfg)
    out = OutputWriter(args.out, args.force)

    print(f"optical budget ({Path(args.config).name})")
    for key, profile in sorted(cfg.profiles.items(), key=lambda kv: float(kv[0])):
        print(f"  profile {key} nm:")
        for name, loss in profile.path_losses_db.items():
            note = profile.notes.get(name)
            suffix = f"  [{note}]" if note else ""
            print(f"    {name:<14} {_fmt(loss):>8} dB{suffix}")
    print(f"  double-pass probe route, signal band: {_fmt(report.signal_roundtrip_db)} dB")
    if report.attack_roundtrip_db is None:
        print("  single-wavelength config: no attack-band comparison available")
    else:
        print(f"  double-pass probe route, attack band: {_fmt(report.attack_roundtrip_db)} dB")
        print(f"  circulator probe route, attack band:  best {_fmt(report.attack_route_best_db)}, "
              f"worst {_fmt(report.attack_route_worst_db)}, "
              f"midway polarization {_fmt(report.attack_route_midway_db)} dB")
        print(f"  attenuation ratio (attack vs signal band): {_fmt(report.attenuation_ratio)}")
    if report.mu_source is not None:
        print(f"  probe photons per pulse at source: {_fmt(report.mu_source)}")
    if report.mu_detected is not None:
        print(f"  photons per pulse at counting detector: {_fmt(report.mu_detected)}")
    if report.counting_route_loss_db is not None:
        print(f"  counting-route loss from photon numbers: {_fmt(report.counting_route_loss_db)} dB")

    out.write_json("budget.json", report.to_dict())
    out.write_csv("budget.csv", ["quantity", "value"],
                  [[k, v] for k, v in report.to_dict().items() if v is not None])
    out.write_manifest("budget", args)
    return 0


def cmd_factors(args: argparse.Namespace) -> int:
    cfg = _load(args)
    factors = derive_factors(cfg)
    out = OutputWriter(args.out, args.force)

    provenance = {
        "theta_signal": "double modulator pass at the signal wavelength",
        "theta_attack": "half-wave voltage ratio x pi/2, single pass (interferometric measurement)",
        "brightness_factor": "(1 - cos theta_signal)/(1 - cos theta_attack)",
        "attenuation_ratio": "probe-route losses from the profiles, midway polarization",
        "suppression_per_photon": "afterpulse/dark splits of the characterization histograms",
        "reduction_d0": "attenuation_ratio x brightness_factor x suppression_per_photon",
        "reduction_d1": "reduction_d0 corrected for entrance-to-detector loss differences",
    }
    print("derived attack factors")
    for key, value in factors.to_dict().items():
        print(f"  {key:<24} {_fmt(value):>12}  [{provenance[key]}]")
    out.write_json("factors.json", factors.to_dict())
    out.write_manifest("factors", args)
    return 0


def _load_plan(path: str) -> FramePlan:
    with open(path) as fh:
        raw = json.load(fh)
    actions = []
    for i, entry in enumerate(raw.get("actions", [])):
        kind = entry.get("kind")
        if kind == "pass":
            actions.append(SlotAction.pass_())
        elif kind == "block":
            actions.append(SlotAction.block())
        elif kind == "low_loss":
            actions.append(SlotAction.low_loss(float(entry["t_ll"])))
        elif kind == "low_loss_thp":
            actions.append(SlotAction.low_loss_with_thp(float(entry["t_ll"]),
                                                        float(entry["thp_photons"])))
        else:
            raise ConfigError(f"{path}: actions[{i}].kind: unknown kind {kind!r}")
    return FramePlan(actions=tuple(actions),
                     readout_error=float(raw.get("readout_error", 0.0)))


def _sim_exit_code(qber: float | None, q_abort: float, breach: bool) -> int:
    if qber is not None and qber >= q_abort:
        return EXIT_ABORT_QBER
    return EXIT_BREACH if breach else EXIT_NO_BREACH


def _result_rows(payload: dict) -> tuple[list[str], list]:
    flat = {
        "qber": payload["result"]["qber"],
        "qber_lo": (payload["result"]["qber_ci95"] or [None, None])[0],
        "qber_hi": (payload["result"]["qber_ci95"] or [None, None])[1],
        "eve_info": payload["result"]["eve_info"],
        "eve_info_lo": (payload["result"]["eve_info_ci95"] or [None, None])[0],
        "eve_info_hi": (payload["result"]["eve_info_ci95"] or [None, None])[1],
        "detection_rate": payload["result"]["detection_rate"],
        "sifted_count": payload["result"]["sifted_count"],
        "frames": payload["result"]["frames"],
        "i_est": payload.get("i_est"),
        "breach": payload.get("breach"),
        "rate_deviation": payload.get("rate_deviation"),
    }
    return list(flat), [flat[k] for k in flat]


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _load(args)
    out = OutputWriter(args.out, args.force)
    workers = args.workers or os.cpu_count() or 1

    if args.plan:
        plan = _load_plan(args.plan)
        result = run_simulation(cfg.frame, plan, cfg.d0, cfg.d1, args.frames,
                                args.seed, workers=workers, stream=0)
        baseline = run_simulation(cfg.frame, FramePlan.all_pass(cfg.frame.n_slots),
                                  cfg.d0, cfg.d1, args.frames, args.seed,
                                  workers=workers, stream=1)
        deviation = (result.detection_rate / baseline.detection_rate - 1.0
                     if baseline.detection_rate > 0 else math.inf)
        breach = (result.qber is not None and result.qber < cfg.frame.q_abort
                  and result.eve_info is not None and result.eve_info > cfg.i_est)
        payload = {
            "plan": args.plan,
            "result": result.to_dict(),
            "i_est": cfg.i_est,
            "breach": breach,
            "rate_deviation": deviation,
            "seed": args.seed,
        }
        qber = result.qber
    else:
        setup = attack_setup(cfg, wavelength_nm=args.wavelength)
        report = evaluate(setup.combination, cfg.frame, setup.d0, setup.d1,
                          args.frames, args.seed, setup.i_est, workers=workers,
                          layout=setup.layout_policy,
                          post_burst_block_fraction=setup.post_burst_block_fraction)
        payload = report.to_dict()
        payload["seed"] = args.seed
        payload["wavelength_nm"] = args.wavelength or cfg.attack_wavelength_nm
        qber = report.result.qber
        breach = report.breach
        result = report.result

    print(f"frames={result.frames} sifted={result.sifted_count} "
          f"Q={_fmt(result.qber)} I_act={_fmt(result.eve_info)} "
          f"rate={_fmt(result.detection_rate)} deviation={_fmt(payload['rate_deviation'])} "
          f"breach={breach}")
    out.write_json("results.json", payload)
    header, row = _result_rows(payload)
    out.write_csv("results.csv", header, [row])
    out.write_manifest("simulate", args)
    return _sim_exit_code(qber, cfg.frame.q_abort, breach)


def cmd_optimize(args: argparse.Namespace) -> int:
    cfg = _load(args)
    out = OutputWriter(args.out, args.force)
    workers = args.workers or os.cpu_count() or 1
    if cfg.optimize_raw is None:
        raise ConfigError("optimize: section missing from config")
    grid = cfg.optimize_raw.get("grid")
    if not grid:
        raise ConfigError("optimize.grid: missing or empty")
    frames = args.frames or int(cfg.optimize_raw.get("frames", 500))
    tolerance = float(cfg.optimize_raw.get("rate_tolerance", 0.05))

    setup = attack_setup(cfg)
    combos = expand_grid(setup.combination, grid, cfg.frame.n_slots)
    reports = optimize(combos, cfg.frame, setup.d0, setup.d1, frames, args.seed,
                       setup.i_est, rate_tolerance=tolerance, budget=args.budget,
                       workers=workers, layout=setup.layout_policy,
                       post_burst_block_fraction=setup.post_burst_block_fraction)

    print(f"searched {len(combos)} combinations, {len(reports)} feasible")
    for rank, rep in enumerate(reports, 1):
        c = rep.combination
        print(f"  #{rank}: block={c.n_block} t_ll={_fmt(c.t_ll)} thp_slots={c.n_thp_slots} "
              f"Q={_fmt(rep.result.qber)} I_act={_fmt(rep.result.eve_info)} "
              f"dev={_fmt(rep.rate_deviation)} breach={rep.breach}")

    out.write_json("ranked.json", {"reports": [r.to_dict() for r in reports],
                                   "searched": len(combos), "seed": args.seed,
                                   "frames": frames, "rate_tolerance": tolerance})
    rows = []
    for rank, rep in enumerate(reports, 1):
        c = rep.combination
        rows.append([rank, c.n_block, c.n_lowloss, c.t_ll, c.n_thp_slots, c.n_bursts,
                     c.burst_len, c.thp_photons, rep.result.qber, rep.result.eve_info,
                     rep.rate_deviation, rep.breach])
    out.write_csv("ranked.csv",
                  ["rank", "n_block", "n_lowloss", "t_ll", "n_thp_slots", "n_bursts",
                   "burst_len", "thp_photons", "qber", "eve_info", "rate_deviation",
                   "breach"],
                  rows)
    out.write_manifest("optimize", args)
    return EXIT_BREACH if any(r.breach for r in reports) else EXIT_NO_BREACH


def cmd_histogram(args: argparse.Namespace) -> int:
    out = OutputWriter(args.out, args.force)
    hist = read_histogram_csv(args.input)
    corrected = saturation_correct(hist, trials=args.trials)
    tail_start = int(round(args.tail_start_us * 1e-6 / corrected.bin_width_s))
    split = split_counts(corrected, tail_start_bin=tail_start)
    fit = fit_decay(corrected, tail_start_bin=tail_start)

    print(f"bins={len(hist.counts)} width={_fmt(hist.bin_width_s)} s "
          f"raw_total={_fmt(hist.total)} corrected_total={_fmt(corrected.total)}")
    print(f"afterpulse_counts={_fmt(split.afterpulse_counts)} "
          f"dark_counts={_fmt(split.dark_counts)}"
          + (" [no afterpulse signal]" if split.no_afterpulse_signal else ""))
    if fit.degenerate:
        print("decay fit: degenerate (no usable two-exponential signal)")
    else:
        for amp, tau in zip(fit.amplitudes, fit.lifetimes_s):
            print(f"decay component: amplitude={_fmt(amp)} counts/bin, lifetime={_fmt(tau)} s")
        print(f"dark floor={_fmt(fit.floor_per_bin)} counts/bin, residual rms={_fmt(fit.residual_rms)}")

    if out.dir is not None:
        write_histogram_csv(out.path("corrected.csv"), corrected)
        if args.normalize_display:
            peak = max(corrected.counts) or 1.0
            normalized = type(corrected)(bin_width_s=corrected.bin_width_s,
                                         counts=tuple(c / peak for c in corrected.counts),
                                         trials=corrected.trials)
            write_histogram_csv(out.path("corrected_normalized.csv"), normalized)
    out.write_json("analysis.json", {
        "input": str(Path(args.input).resolve()),
        "trials": args.trials,
        "tail_start_bin": tail_start,
        "raw_total": hist.total,
        "corrected_total": corrected.total,
        "afterpulse_counts": split.afterpulse_counts,
        "dark_counts": split.dark_counts,
        "no_afterpulse_signal": split.no_afterpulse_signal,
        "fit": {
            "amplitudes_per_bin": list(fit.amplitudes),
            "lifetimes_s": list(fit.lifetimes_s),
            "floor_per_bin": fit.floor_per_bin,
            "residual_rms": fit.residual_rms,
            "degenerate": fit.degenerate,
        },
    })
    out.write_manifest("histogram", args)
    return 0


def _positive_int(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trojansim",
        description="Long-wavelength Trojan-horse attack simulator for a gated-detector QKD receiver.",
        epilog="simulate/optimize exit codes: 0 = security breach, 2 = no breach, "
               "3 = QBER at or above the abort threshold; config/data errors exit 1.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser, with_sim: bool = False) -> None:
        p.add_argument("--config", default=str(default_config_path()),
                       help="device configuration JSON (default: shipped profile set)")
        p.add_argument("--out", help="directory for JSON/CSV outputs and the run manifest")
        p.add_argument("--force", action="store_true",
                       help="overwrite existing output files")
        if with_sim:
            p.add_argument("--seed", type=int, default=0, help="simulation seed (recorded)")
            p.add_argument("--frames", type=_positive_int, default=None,
                           help="number of frames to simulate")
            p.add_argument("--workers", type=_positive_int, default=None,
                           help="worker processes (default: available parallelism)")

    p_budget = sub.add_parser("budget", help="path losses, attenuation ratio, photon estimates")
    add_common(p_budget)
    p_budget.set_defaults(func=cmd_budget)

    p_factors = sub.add_parser("factors", help="derive the attack factor chain")
    add_common(p_factors)
    p_factors.set_defaults(func=cmd_factors)

    p_sim = sub.add_parser("simulate", help="Monte Carlo of the configured attack")
    add_common(p_sim, with_sim=True)
    p_sim.set_defaults(frames=None)
    p_sim.add_argument("--plan", help="explicit frame-plan JSON instead of the configured combination")
    p_sim.add_argument("--wavelength", type=float, default=None,
                       help="attack wavelength in nm (default: config attack wavelength; "
                            "use the signal wavelength for an unscaled afterpulse run)")
    p_sim.set_defaults(func=cmd_simulate)

    p_opt = sub.add_parser("optimize", help="grid search over attack combinations")
    add_common(p_opt, with_sim=True)
    p_opt.add_argument("--budget", type=_positive_int, default=None,
                       help="maximum combinations to evaluate")
    p_opt.set_defaults(func=cmd_optimize)

    p_hist = sub.add_parser("histogram", help="saturation-correct and analyze a count histogram")
    p_hist.add_argument("input", help="histogram CSV with bin_start_s,counts columns")
    p_hist.add_argument("--trials", type=_positive_int, required=True,
                        help="number of probe injections behind the histogram")
    p_hist.add_argument("--tail-start-us", type=float, default=40.0,
                        help="start of the dark-floor tail in microseconds (default 40)")
    p_hist.add_argument("--normalize-display", action="store_true",
                        help="also write a peak-normalized histogram for display comparisons")
    p_hist.add_argument("--out", help="directory for outputs")
    p_hist.add_argument("--force", action="store_true")
    p_hist.set_defaults(func=cmd_histogram, config=None)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "frames", None) is None and args.command == "simulate":
        args.frames = 10000
    try:
        return args.func(args)
    except (ConfigError, OpticsError, DetectorModelError, ProtocolError, AttackError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
