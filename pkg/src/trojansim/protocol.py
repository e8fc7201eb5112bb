"""Slot-level Monte Carlo of SARG04-style frames through the gated receiver.

Each frame is a fixed number of gate slots. Per slot the channel (or the
eavesdropper's substituted channel) delivers an attenuated coherent signal
pulse, both detectors are gated unless in deadtime, and clicks arise from
signal photons, dark counts, or afterpulse hazards seeded by earlier bright
probe pulses. Sifting is modeled statistically: each single-click slot
enters the raw key with the protocol's sieve probability, and error/knowledge
flags are sampled per the click cause.

Frames are simulated independently with per-frame derived RNG streams, so
results are bit-for-bit reproducible for a fixed seed regardless of how the
frames are distributed over workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .detector import DetectorParams, HazardAccumulator


class ProtocolError(ValueError):
    """Raised for invalid frame-simulation inputs."""


class ActionKind(IntEnum):
    PASS = 0
    BLOCK = 1
    LOW_LOSS = 2
    LOW_LOSS_THP = 3


@dataclass(frozen=True)
class SlotAction:
    """What the eavesdropper does to one slot of the frame."""

    kind: ActionKind
    t_ll: float = 0.0
    thp_photons: float = 0.0

    def __post_init__(self) -> None:
        if self.kind in (ActionKind.LOW_LOSS, ActionKind.LOW_LOSS_THP):
            if not 0.0 <= self.t_ll <= 1.0:
                raise ProtocolError("t_ll must be in [0, 1]")
        if self.thp_photons < 0:
            raise ProtocolError("thp_photons must be >= 0")

    @classmethod
    def pass_(cls) -> "SlotAction":
        return cls(ActionKind.PASS)

    @classmethod
    def block(cls) -> "SlotAction":
        return cls(ActionKind.BLOCK)

    @classmethod
    def low_loss(cls, t_ll: float) -> "SlotAction":
        return cls(ActionKind.LOW_LOSS, t_ll=t_ll)

    @classmethod
    def low_loss_with_thp(cls, t_ll: float, thp_photons: float) -> "SlotAction":
        return cls(ActionKind.LOW_LOSS_THP, t_ll=t_ll, thp_photons=thp_photons)


@dataclass(frozen=True)
class FramePlan:
    """Per-slot action sequence plus the probe-readout error it implies."""

    actions: tuple[SlotAction, ...]
    readout_error: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.readout_error <= 1.0:
            raise ProtocolError("readout_error must be in [0, 1]")

    def __len__(self) -> int:
        return len(self.actions)

    @classmethod
    def all_pass(cls, n_slots: int) -> "FramePlan":
        return cls(actions=tuple(SlotAction.pass_() for _ in range(n_slots)))

    def action_counts(self) -> dict[str, int]:
        counts = {k.name: 0 for k in ActionKind}
        for a in self.actions:
            counts[a.kind.name] += 1
        return counts


@dataclass(frozen=True)
class FrameConfig:
    """Protocol and channel parameters for one frame.

    ``receiver_loss_db`` is the effective optical loss a signal pulse sees
    from the receiver entrance to either detector (calibration parameter, not
    a characterized path). ``sieve_probability`` is the chance a single-click
    slot survives sifting into the raw key.
    """

    n_slots: int = 1075
    channel_transmittance: float = 0.25
    signal_mu: float = 0.5
    intrinsic_qber: float = 0.01
    q_abort: float = 0.08
    sieve_probability: float = 0.25
    receiver_loss_db: float = 3.0

    def __post_init__(self) -> None:
        if self.n_slots <= 0:
            raise ProtocolError("n_slots must be > 0")
        if not 0.0 <= self.channel_transmittance <= 1.0:
            raise ProtocolError("channel_transmittance must be in [0, 1]")
        if self.signal_mu < 0:
            raise ProtocolError("signal_mu must be >= 0")
        if not 0.0 <= self.intrinsic_qber < 0.5:
            raise ProtocolError("intrinsic_qber must be in [0, 0.5)")
        if not 0.0 < self.q_abort < 0.5:
            raise ProtocolError("q_abort must be in (0, 0.5)")
        if not 0.0 < self.sieve_probability <= 1.0:
            raise ProtocolError("sieve_probability must be in (0, 1]")
        if self.receiver_loss_db < 0:
            raise ProtocolError("receiver_loss_db must be >= 0")


@dataclass(frozen=True)
class SlotOutcome:
    """What happened in one slot; ``cause`` is set for single-click slots only."""

    slot: int
    gated: bool
    had_thp: bool
    blocked: bool
    clicked_d0: bool
    clicked_d1: bool
    sifted: bool
    bit_error: bool
    eve_knows_bit: bool
    cause: str = ""


def wilson_interval(successes: int, trials: int, z: float = 1.959964) -> tuple[float, float] | None:
    """95% Wilson score interval for a binomial rate; None when trials == 0."""
    if trials == 0:
        return None
    p = successes / trials
    denom = 1.0 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass
class FrameCounters:
    """Integer tallies accumulated over frames; exact under any worker split."""

    frames: int = 0
    slots: int = 0
    gated_slots: int = 0
    detection_events: int = 0
    double_clicks: int = 0
    signal_clicks: int = 0
    dark_clicks: int = 0
    afterpulse_clicks: int = 0
    sifted: int = 0
    sifted_errors: int = 0
    sifted_known: int = 0
    sifted_in_thp_slots: int = 0

    def add(self, other: "FrameCounters") -> None:
        for name in self.__dataclass_fields__:
            setattr(self, name, getattr(self, name) + getattr(other, name))


@dataclass(frozen=True)
class SimResult:
    """Aggregated simulation metrics with 95% Wilson confidence intervals.

    ``qber`` and ``eve_info`` are None when no bits were sifted.
    """

    frames: int
    sifted_count: int
    qber: float | None
    qber_ci: tuple[float, float] | None
    eve_info: float | None
    eve_info_ci: tuple[float, float] | None
    detection_rate: float
    detection_rate_ci: tuple[float, float] | None
    counters: FrameCounters = field(repr=False)

    @classmethod
    def from_counters(cls, c: FrameCounters) -> "SimResult":
        qber = c.sifted_errors / c.sifted if c.sifted else None
        eve = c.sifted_known / c.sifted if c.sifted else None
        return cls(
            frames=c.frames,
            sifted_count=c.sifted,
            qber=qber,
            qber_ci=wilson_interval(c.sifted_errors, c.sifted),
            eve_info=eve,
            eve_info_ci=wilson_interval(c.sifted_known, c.sifted),
            detection_rate=c.detection_events / c.slots if c.slots else 0.0,
            detection_rate_ci=wilson_interval(c.detection_events, c.slots),
            counters=c,
        )

    def to_dict(self) -> dict:
        c = self.counters
        return {
            "frames": self.frames,
            "sifted_count": self.sifted_count,
            "qber": self.qber,
            "qber_ci95": list(self.qber_ci) if self.qber_ci else None,
            "eve_info": self.eve_info,
            "eve_info_ci95": list(self.eve_info_ci) if self.eve_info_ci else None,
            "detection_rate": self.detection_rate,
            "detection_rate_ci95": list(self.detection_rate_ci) if self.detection_rate_ci else None,
            "counters": {name: getattr(c, name) for name in c.__dataclass_fields__},
        }


class _PlanArrays:
    """Per-slot arrays derived from a plan and detector pair, shared by all frames."""

    def __init__(self, cfg: FrameConfig, plan: FramePlan,
                 d0: DetectorParams, d1: DetectorParams):
        if len(plan) != cfg.n_slots:
            raise ProtocolError(f"plan length {len(plan)} != n_slots {cfg.n_slots}")
        if d0.deadtime_gates != d1.deadtime_gates:
            raise ProtocolError("both detectors must share one deadtime setting")
        if d0.gate_period_s != d1.gate_period_s:
            raise ProtocolError("both detectors must share one gate period")
        n = cfg.n_slots
        kind = np.fromiter((a.kind for a in plan.actions), dtype=np.int8, count=n)
        t_ll = np.fromiter((a.t_ll for a in plan.actions), dtype=float, count=n)
        thp = np.fromiter((a.thp_photons for a in plan.actions), dtype=float, count=n)

        mu_slot = np.where(
            kind == ActionKind.PASS, cfg.signal_mu * cfg.channel_transmittance,
            np.where(kind == ActionKind.BLOCK, 0.0, cfg.signal_mu * t_ll),
        )
        receiver_t = 10.0 ** (-cfg.receiver_loss_db / 10.0)
        self.p_sig_d0 = 1.0 - np.exp(-mu_slot * receiver_t * d0.efficiency)
        self.p_sig_d1 = 1.0 - np.exp(-mu_slot * receiver_t * d1.efficiency)

        self.hazard_d0 = np.empty(n)
        self.hazard_d1 = np.empty(n)
        acc0, acc1 = HazardAccumulator(d0), HazardAccumulator(d1)
        for t in range(n):
            self.hazard_d0[t] = acc0.current()
            self.hazard_d1[t] = acc1.current()
            acc0.advance(thp[t])
            acc1.advance(thp[t])

        self.had_thp = kind == ActionKind.LOW_LOSS_THP
        self.blocked = kind == ActionKind.BLOCK
        self.deadtime = d0.deadtime_gates
        self.dark_d0 = d0.dark_prob
        self.dark_d1 = d1.dark_prob
        self.n_slots = n


# per-slot uniform draw columns
_U_PORT, _U_SIG, _U_DARK0, _U_DARK1, _U_AP0, _U_AP1, _U_SIEVE, _U_ERR, _U_READ = range(9)


def _frame_rng(seed: int, frame_index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(stream, frame_index)))


def _simulate_frame(arrays: _PlanArrays, cfg: FrameConfig, plan: FramePlan,
                    rng: np.random.Generator, collect_records: bool = False):
    """One frame. Returns (FrameCounters, records or None).

    Candidate clicks are drawn for every slot; the deadtime scan then keeps
    only candidates at least deadtime+1 slots after the previous accepted
    event. Draws are consumed per-slot unconditionally so the acceptance
    logic never changes the random stream alignment.
    """
    n = arrays.n_slots
    u = rng.random((n, 9))

    port1 = u[:, _U_PORT] >= 0.5
    p_sel = np.where(port1, arrays.p_sig_d1, arrays.p_sig_d0)
    sig = u[:, _U_SIG] < p_sel
    dark0 = u[:, _U_DARK0] < arrays.dark_d0
    dark1 = u[:, _U_DARK1] < arrays.dark_d1
    ap0 = u[:, _U_AP0] < arrays.hazard_d0
    ap1 = u[:, _U_AP1] < arrays.hazard_d1
    cand0 = (sig & ~port1) | dark0 | ap0
    cand1 = (sig & port1) | dark1 | ap1

    counters = FrameCounters(frames=1, slots=n)
    candidates = np.flatnonzero(cand0 | cand1)
    accepted: list[int] = []
    next_free = 0
    for t in candidates:
        if t >= next_free:
            accepted.append(int(t))
            next_free = int(t) + arrays.deadtime + 1

    dead = 0
    for t in accepted:
        dead += min(arrays.deadtime, n - 1 - t)
    counters.gated_slots = n - dead
    counters.detection_events = len(accepted)

    if collect_records:
        rec_clicked0 = np.zeros(n, dtype=bool)
        rec_clicked1 = np.zeros(n, dtype=bool)
        rec_sifted = np.zeros(n, dtype=bool)
        rec_error = np.zeros(n, dtype=bool)
        rec_known = np.zeros(n, dtype=bool)
        rec_cause = [""] * n
        rec_gated = np.ones(n, dtype=bool)
        for t in accepted:
            rec_gated[t + 1:t + 1 + arrays.deadtime] = False

    for t in accepted:
        is_double = cand0[t] and cand1[t]
        if collect_records:
            rec_clicked0[t] = bool(cand0[t])
            rec_clicked1[t] = bool(cand1[t])
        if is_double:
            counters.double_clicks += 1
            continue
        det = 1 if cand1[t] else 0
        if sig[t] and (port1[t] == bool(det)):
            cause = "signal"
        elif (ap1[t] if det else ap0[t]):
            cause = "afterpulse"
        else:
            cause = "dark"
        if cause == "signal":
            counters.signal_clicks += 1
        elif cause == "afterpulse":
            counters.afterpulse_clicks += 1
        else:
            counters.dark_clicks += 1

        sifted = u[t, _U_SIEVE] < cfg.sieve_probability
        if collect_records:
            rec_cause[t] = cause
        if not sifted:
            continue
        counters.sifted += 1
        err_prob = cfg.intrinsic_qber if cause == "signal" else 0.5
        bit_error = u[t, _U_ERR] < err_prob
        known = bool(arrays.had_thp[t]) and (u[t, _U_READ] < 1.0 - plan.readout_error)
        counters.sifted_errors += int(bit_error)
        counters.sifted_known += int(known)
        counters.sifted_in_thp_slots += int(arrays.had_thp[t])
        if collect_records:
            rec_sifted[t] = True
            rec_error[t] = bit_error
            rec_known[t] = known

    if not collect_records:
        return counters, None
    records = (rec_gated, rec_clicked0, rec_clicked1, rec_sifted, rec_error, rec_known,
               rec_cause)
    return counters, records


def run_frame(cfg: FrameConfig, plan: FramePlan, d0: DetectorParams, d1: DetectorParams,
              rng: np.random.Generator) -> list[SlotOutcome]:
    """Simulate one frame and return the per-slot outcomes."""
    arrays = _PlanArrays(cfg, plan, d0, d1)
    _, records = _simulate_frame(arrays, cfg, plan, rng, collect_records=True)
    gated, c0, c1, sifted, error, known, cause = records
    return [
        SlotOutcome(
            slot=t,
            gated=bool(gated[t]),
            had_thp=bool(arrays.had_thp[t]),
            blocked=bool(arrays.blocked[t]),
            clicked_d0=bool(c0[t]),
            clicked_d1=bool(c1[t]),
            sifted=bool(sifted[t]),
            bit_error=bool(error[t]),
            eve_knows_bit=bool(known[t]),
            cause=cause[t],
        )
        for t in range(arrays.n_slots)
    ]


def _run_frame_range(cfg: FrameConfig, plan: FramePlan, d0: DetectorParams,
                     d1: DetectorParams, start: int, stop: int, seed: int,
                     stream: int) -> FrameCounters:
    arrays = _PlanArrays(cfg, plan, d0, d1)
    total = FrameCounters()
    for i in range(start, stop):
        counters, _ = _simulate_frame(arrays, cfg, plan, _frame_rng(seed, i, stream))
        total.add(counters)
    return total


def run_simulation(cfg: FrameConfig, plan: FramePlan, d0: DetectorParams,
                   d1: DetectorParams, n_frames: int, seed: int,
                   workers: int = 1, stream: int = 0) -> SimResult:
    """Simulate ``n_frames`` independent frames and aggregate the tallies.

    Frame i always uses the RNG stream derived from (seed, stream, i), and
    the tallies are integers, so the result is identical for any ``workers``
    value.
    """
    if n_frames < 1:
        raise ProtocolError("n_frames must be >= 1")
    if workers < 1:
        raise ProtocolError("workers must be >= 1")

    total = FrameCounters()
    if workers == 1 or n_frames < 4:
        total = _run_frame_range(cfg, plan, d0, d1, 0, n_frames, seed, stream)
    else:
        n_chunks = min(workers * 4, n_frames)
        bounds = np.linspace(0, n_frames, n_chunks + 1, dtype=int)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_run_frame_range, cfg, plan, d0, d1,
                            int(bounds[j]), int(bounds[j + 1]), seed, stream)
                for j in range(n_chunks)
            ]
            for fut in futures:
                total.add(fut.result())
    return SimResult.from_counters(total)
