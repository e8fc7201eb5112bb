"""Frame-plan construction, attack evaluation, and combination search.

An attack combination says how many slots of each frame the eavesdropper
blocks, passes through her low-loss line, and accompanies with bright probe
pulses, plus the probe brightness and the implied readout quality. Plans are
laid out in burst cycles: each burst of probe slots is followed by blocked
slots so the seeded afterpulse hazard decays while the detectors are dark or
dead, and the remaining low-loss slots keep the detection rate up.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

from .detector import DetectorParams
from .protocol import (FrameConfig, FramePlan, SimResult, SlotAction, SlotOutcome,
                       run_simulation)
from .readout import CoherentPair, readout_error_prob


class AttackError(ValueError):
    """Raised for invalid attack combinations or grids."""


@dataclass(frozen=True)
class AttackCombination:
    """One point in the attack parameter space.

    ``thp_photons`` is the probe brightness at the receiver entrance in
    signal-band-equivalent photons (the detectors' ``afterpulse_scale``
    carries the wavelength-dependent reduction). ``readout_theta`` and
    ``readout_mu`` describe the coherent pair at the eavesdropper's homodyne.
    """

    n_block: int
    n_lowloss: int
    t_ll: float
    n_thp_slots: int
    n_bursts: int
    burst_len: int
    thp_photons: float
    readout_theta: float
    readout_mu: float

    def __post_init__(self) -> None:
        if self.n_block < 0 or self.n_lowloss < 0:
            raise AttackError("slot counts must be >= 0")
        if not 0.0 <= self.t_ll <= 1.0:
            raise AttackError("t_ll must be in [0, 1]")
        if not 0 <= self.n_thp_slots <= self.n_lowloss:
            raise AttackError("need 0 <= n_thp_slots <= n_lowloss")
        if self.n_thp_slots > 0:
            if self.n_bursts < 1 or self.burst_len < 1:
                raise AttackError("n_bursts and burst_len must be >= 1 when probing")
            if self.n_bursts * self.burst_len < self.n_thp_slots:
                raise AttackError("n_bursts * burst_len must cover n_thp_slots")
        if self.thp_photons < 0:
            raise AttackError("thp_photons must be >= 0")
        if not 0.0 <= self.readout_theta <= math.pi:
            raise AttackError("readout_theta must be in [0, pi]")
        if self.readout_mu < 0:
            raise AttackError("readout_mu must be >= 0")

    def readout_error(self) -> float:
        """Homodyne misread probability for this combination's coherent pair."""
        if self.n_thp_slots == 0:
            return 0.0
        return readout_error_prob(CoherentPair(mu=self.readout_mu, theta=self.readout_theta))

    def sort_key(self) -> tuple:
        return (self.n_block, self.n_lowloss, self.t_ll, self.n_thp_slots, self.n_bursts,
                self.burst_len, self.thp_photons, self.readout_theta, self.readout_mu)


def _spread(total: int, parts: int) -> list[int]:
    """Split ``total`` into ``parts`` near-equal integers, deterministically."""
    base, rem = divmod(total, parts)
    return [base + (1 if i < rem else 0) for i in range(parts)]


def build_frame_plan(combo: AttackCombination, cfg: FrameConfig,
                     layout: str = "block-after-burst",
                     post_burst_block_fraction: float = 0.8) -> FramePlan:
    """Deterministic frame plan for one combination.

    Layouts:

    * ``"block-after-burst"`` (default): the frame is divided into one cycle
      per burst; each cycle is [probe burst][blocked slots][low-loss slots]
      [blocked slots], with ``post_burst_block_fraction`` of the cycle's
      blocked slots placed directly after the burst so the afterpulse hazard
      decays while the detectors are blocked or dead, and the rest placed
      before the next burst so deadtime from low-loss detections spills onto
      blocked slots instead of the burst.
    * ``"interleaved"``: same bursts, but the cycle's blocked and low-loss
      slots are evenly interleaved.
    """
    if combo.n_block + combo.n_lowloss != cfg.n_slots:
        raise AttackError(
            f"n_block + n_lowloss = {combo.n_block + combo.n_lowloss} != n_slots {cfg.n_slots}")
    if layout not in ("block-after-burst", "interleaved"):
        raise AttackError(f"unknown layout {layout!r}")
    if not 0.0 <= post_burst_block_fraction <= 1.0:
        raise AttackError("post_burst_block_fraction must be in [0, 1]")

    ll_action = SlotAction.low_loss(combo.t_ll)
    if combo.n_thp_slots == 0:
        actions = _interleave(combo.n_block, combo.n_lowloss, combo.t_ll)
        return FramePlan(actions=tuple(actions), readout_error=0.0)

    full, rem = divmod(combo.n_thp_slots, combo.burst_len)
    burst_sizes = [combo.burst_len] * full + ([rem] if rem else [])
    if len(burst_sizes) > combo.n_bursts:
        raise AttackError("burst sizing exceeded n_bursts")
    burst_sizes += [0] * (combo.n_bursts - len(burst_sizes))

    cycle_lens = _spread(cfg.n_slots, combo.n_bursts)
    blocks = _spread(combo.n_block, combo.n_bursts)

    thp_action = SlotAction.low_loss_with_thp(combo.t_ll, combo.thp_photons)
    actions: list[SlotAction] = []
    for burst, cycle_len, n_blk in zip(burst_sizes, cycle_lens, blocks):
        n_ll = cycle_len - burst - n_blk
        if n_ll < 0:
            raise AttackError(
                "combination does not fit the frame: a cycle has more burst+block "
                "slots than its length")
        actions.extend([thp_action] * burst)
        if layout == "interleaved":
            actions.extend(_interleave(n_blk, n_ll, combo.t_ll))
        else:
            post = round(post_burst_block_fraction * n_blk)
            actions.extend([SlotAction.block()] * post)
            actions.extend([ll_action] * n_ll)
            actions.extend([SlotAction.block()] * (n_blk - post))
    return FramePlan(actions=tuple(actions), readout_error=combo.readout_error())


def _interleave(n_block: int, n_lowloss: int, t_ll: float) -> list[SlotAction]:
    """Evenly interleave blocked slots among low-loss slots (Bresenham spacing)."""
    total = n_block + n_lowloss
    actions: list[SlotAction] = []
    acc = 0
    for _ in range(total):
        acc += n_block
        if acc >= total:
            acc -= total
            actions.append(SlotAction.block())
        else:
            actions.append(SlotAction.low_loss(t_ll))
    return actions


def eve_information(outcomes: list[SlotOutcome], readout_error: float | None = None,
                    rng: np.random.Generator | None = None) -> float | None:
    """Fraction of sifted bits the eavesdropper knows; None if nothing was sifted.

    A sifted bit is known iff its slot carried a probe pulse and a readout
    draw with success probability 1 - readout_error succeeds (basis knowledge
    is bit knowledge when the receiver's basis encodes the key). With no
    ``rng`` the knowledge flags recorded during simulation are trusted;
    passing ``rng`` and ``readout_error`` redraws them independently.
    """
    sifted = [o for o in outcomes if o.sifted]
    if not sifted:
        return None
    if rng is None:
        known = sum(o.eve_knows_bit for o in sifted)
    else:
        if readout_error is None:
            raise AttackError("readout_error is required when redrawing knowledge")
        known = sum(
            o.had_thp and (rng.random() < 1.0 - readout_error) for o in sifted
        )
    return known / len(sifted)


@dataclass(frozen=True)
class BreachReport:
    """Outcome of evaluating one combination against the security bound."""

    combination: AttackCombination
    result: SimResult
    i_est: float
    breach: bool
    rate_deviation: float
    baseline_rate: float

    def to_dict(self) -> dict:
        return {
            "combination": {k: getattr(self.combination, k)
                            for k in self.combination.__dataclass_fields__},
            "result": self.result.to_dict(),
            "i_est": self.i_est,
            "breach": self.breach,
            "rate_deviation": self.rate_deviation,
            "baseline_rate": self.baseline_rate,
        }


def _breach(result: SimResult, i_est: float, q_abort: float) -> bool:
    return (result.qber is not None and result.qber < q_abort
            and result.eve_info is not None and result.eve_info > i_est)


def evaluate(combo: AttackCombination, cfg: FrameConfig, d0: DetectorParams,
             d1: DetectorParams, n_frames: int, seed: int, i_est: float,
             workers: int = 1, layout: str = "block-after-burst",
             post_burst_block_fraction: float = 0.8,
             baseline: SimResult | None = None) -> BreachReport:
    """Simulate one combination and compare it against the security bound.

    The no-attack baseline (all-pass plan at the channel transmittance, same
    seed policy on a separate stream) provides the detection-rate deviation;
    pass a precomputed ``baseline`` to share it across evaluations.
    """
    plan = build_frame_plan(combo, cfg, layout=layout,
                            post_burst_block_fraction=post_burst_block_fraction)
    result = run_simulation(cfg, plan, d0, d1, n_frames, seed, workers=workers, stream=0)
    if baseline is None:
        baseline = run_simulation(cfg, FramePlan.all_pass(cfg.n_slots), d0, d1,
                                  n_frames, seed, workers=workers, stream=1)
    if baseline.detection_rate > 0:
        deviation = result.detection_rate / baseline.detection_rate - 1.0
    else:
        deviation = math.inf if result.detection_rate > 0 else 0.0
    return BreachReport(
        combination=combo,
        result=result,
        i_est=i_est,
        breach=_breach(result, i_est, cfg.q_abort),
        rate_deviation=deviation,
        baseline_rate=baseline.detection_rate,
    )


# canonical enumeration order for grid axes
_GRID_FIELDS = ("n_block", "t_ll", "n_thp_slots", "n_bursts", "burst_len",
                "thp_photons", "readout_theta", "readout_mu")


def expand_grid(base: AttackCombination, axes: dict[str, list], n_slots: int) -> list[AttackCombination]:
    """Cartesian product of grid axes over the base combination, canonically ordered.

    ``n_lowloss`` is always recomputed as n_slots - n_block. Combinations that
    violate the combination invariants (e.g. more probe slots than low-loss
    slots) are skipped.
    """
    unknown = set(axes) - set(_GRID_FIELDS)
    if unknown:
        raise AttackError(f"unknown grid fields: {sorted(unknown)}; valid: {_GRID_FIELDS}")
    if not axes:
        raise AttackError("grid is empty")
    names = [f for f in _GRID_FIELDS if f in axes]
    value_lists = [sorted(axes[name]) for name in names]
    combos: list[AttackCombination] = []
    for values in itertools.product(*value_lists):
        fields = dict(zip(names, values))
        n_block = int(fields.pop("n_block", base.n_block))
        try:
            combos.append(replace(base, n_block=n_block, n_lowloss=n_slots - n_block,
                                  **fields))
        except AttackError:
            continue
    return combos


def optimize(combos: list[AttackCombination], cfg: FrameConfig, d0: DetectorParams,
             d1: DetectorParams, n_frames: int, seed: int, i_est: float,
             rate_tolerance: float = 0.05, budget: int | None = None,
             workers: int = 1, layout: str = "block-after-burst",
             post_burst_block_fraction: float = 0.8) -> list[BreachReport]:
    """Search combinations for security breaches under a rate-matching constraint.

    Evaluates up to ``budget`` combinations (in canonical order), keeps those
    with |rate deviation| <= rate_tolerance and QBER below the abort
    threshold, and ranks them by eavesdropper advantage ``eve_info - i_est``
    (descending), breaking ties by lower QBER and then by the lexicographic
    combination key. Returns an empty list when nothing is feasible.
    """
    if not combos:
        raise AttackError("no combinations to search")
    ordered = sorted(combos, key=AttackCombination.sort_key)
    if budget is not None:
        ordered = ordered[:budget]
    baseline = run_simulation(cfg, FramePlan.all_pass(cfg.n_slots), d0, d1,
                              n_frames, seed, workers=workers, stream=1)
    feasible: list[BreachReport] = []
    for combo in ordered:
        report = evaluate(combo, cfg, d0, d1, n_frames, seed, i_est,
                          workers=workers, layout=layout,
                          post_burst_block_fraction=post_burst_block_fraction,
                          baseline=baseline)
        q = report.result.qber
        if q is None or q >= cfg.q_abort:
            continue
        if abs(report.rate_deviation) > rate_tolerance:
            continue
        feasible.append(report)
    feasible.sort(key=lambda r: (-(r.result.eve_info - r.i_est), r.result.qber,
                                 r.combination.sort_key()))
    return feasible
