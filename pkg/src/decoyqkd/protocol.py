"""Monte Carlo of a three-intensity decoy-state BB84 session.

Two execution paths share one physical model:

* pulse level: every clock cycle is drawn explicitly (intensity, photon
  number, bit, bases, per-detector clicks) and the raw record is sifted;
* aggregated: per batch, the number of pulses per intensity and the number
  of sifted events in each (bit value, correct/error) category are drawn from
  their exact multinomial/binomial laws, and the events are placed on
  uniformly chosen cycles.

Both produce identically distributed tallies and frames. Bob's detector 0
registers bit value 0 and detector 1 bit value 1 in either basis, so unequal
detector efficiencies bias the sifted key.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import rng
from .channel import ChannelModel

__all__ = [
    "DecoyConfig",
    "SessionTallies",
    "SiftedFrame",
    "DetectionRecord",
    "SIFT_FACTOR",
    "EXTINCTION_LIMIT",
    "sifted_event_probabilities",
    "expected_counts",
    "expected_tallies",
    "simulate_pulses",
    "simulate_session",
    "sift_and_balance",
    "tallies_from_frame",
    "export_detections_csv",
]

SIFT_FACTOR = 0.5  # basis-match probability for symmetric BB84
EXTINCTION_LIMIT = 0.01  # mu_2 <= 1% of mu_0
PULSE_BATCH = 1 << 20
AGGREGATE_BATCH = 1 << 24
_MAX_CYCLES = (1 << 63) - 1


@dataclass(frozen=True)
class DecoyConfig:
    """Intensities [mu_0, mu_1, mu_2] and how often each is sent."""

    intensities: tuple[float, float, float]
    send_probabilities: tuple[float, float, float]
    clock_rate: float
    duration: float
    epsilon: float = 1e-7

    def __post_init__(self):
        mus = tuple(float(m) for m in self.intensities)
        probs = tuple(float(p) for p in self.send_probabilities)
        object.__setattr__(self, "intensities", mus)
        object.__setattr__(self, "send_probabilities", probs)
        if len(mus) != 3 or len(probs) != 3:
            raise ValueError("exactly three intensity levels are required")
        if not mus[0] > mus[1] > mus[2] >= 0.0:
            raise ValueError(f"intensities must satisfy mu0 > mu1 > mu2 >= 0, got {mus}")
        if mus[2] > EXTINCTION_LIMIT * mus[0] * (1 + 1e-12):
            raise ValueError(f"mu2 = {mus[2]} exceeds {EXTINCTION_LIMIT:.0%} of mu0 = {mus[0]}")
        if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
            raise ValueError(f"send probabilities must be non-negative and sum to 1, got {probs}")
        if self.clock_rate <= 0 or self.duration <= 0:
            raise ValueError("clock_rate and duration must be positive")
        if not 0.0 < self.epsilon < 0.5:
            raise ValueError(f"epsilon must be in (0, 0.5), got {self.epsilon}")
        if self.clock_rate * self.duration > _MAX_CYCLES:
            raise OverflowError("session clock-cycle count does not fit in 64 bits")

    @property
    def clock_cycles(self) -> int:
        return int(round(self.clock_rate * self.duration))

    def to_dict(self) -> dict:
        return {
            "intensities": list(self.intensities),
            "send_probabilities": list(self.send_probabilities),
            "clock_rate": self.clock_rate,
            "duration": self.duration,
            "epsilon": self.epsilon,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecoyConfig":
        return cls(
            intensities=tuple(d["intensities"]),
            send_probabilities=tuple(d["send_probabilities"]),
            clock_rate=float(d["clock_rate"]),
            duration=float(d["duration"]),
            epsilon=float(d.get("epsilon", 1e-7)),
        )


@dataclass(frozen=True)
class SessionTallies:
    """Per-intensity counts: the sufficient statistic for the security analysis.

    ``sifted_zeros`` counts sifted events where Alice's bit was 0, before any
    balancing flip.
    """

    pulses_sent: tuple[int, ...]
    sifted_detections: tuple[int, ...]
    sifted_errors: tuple[int, ...]
    sifted_zeros: tuple[int, ...]
    clock_cycles: int

    def __post_init__(self):
        for name in ("pulses_sent", "sifted_detections", "sifted_errors", "sifted_zeros"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        levels = len(self.pulses_sent)
        if not (len(self.sifted_detections) == len(self.sifted_errors) == len(self.sifted_zeros) == levels):
            raise ValueError("tally arrays must have one entry per level")
        for sent, det, err, zer in zip(self.pulses_sent, self.sifted_detections, self.sifted_errors, self.sifted_zeros):
            if not 0 <= err <= det <= sent:
                raise ValueError(f"need 0 <= errors <= detections <= sent, got {err}, {det}, {sent}")
            if not 0 <= zer <= det:
                raise ValueError("sifted_zeros must lie within [0, detections]")
        if sum(self.pulses_sent) != self.clock_cycles:
            raise ValueError("pulses per level must add up to the clock-cycle count")

    @property
    def levels(self) -> int:
        return len(self.pulses_sent)

    def gain(self, level: int) -> float:
        return self.sifted_detections[level] / self.pulses_sent[level]

    def qber(self, level: int) -> float:
        det = self.sifted_detections[level]
        return self.sifted_errors[level] / det if det else 0.0

    def zeros_fraction(self, level: int) -> float:
        det = self.sifted_detections[level]
        return self.sifted_zeros[level] / det if det else 0.5

    def merge(self, other: "SessionTallies") -> "SessionTallies":
        if self.levels != other.levels:
            raise ValueError("cannot merge tallies with different level counts")
        add = lambda a, b: tuple(x + y for x, y in zip(a, b))  # noqa: E731
        return SessionTallies(
            pulses_sent=add(self.pulses_sent, other.pulses_sent),
            sifted_detections=add(self.sifted_detections, other.sifted_detections),
            sifted_errors=add(self.sifted_errors, other.sifted_errors),
            sifted_zeros=add(self.sifted_zeros, other.sifted_zeros),
            clock_cycles=self.clock_cycles + other.clock_cycles,
        )

    __add__ = merge

    def scaled(self, factor: float) -> "SessionTallies":
        """Counts for a stationary channel observed ``factor`` times as long."""
        if factor <= 0:
            raise ValueError("factor must be positive")
        sc = lambda xs: tuple(int(round(x * factor)) for x in xs)  # noqa: E731
        sent = sc(self.pulses_sent)
        return SessionTallies(
            pulses_sent=sent,
            sifted_detections=sc(self.sifted_detections),
            sifted_errors=sc(self.sifted_errors),
            sifted_zeros=sc(self.sifted_zeros),
            clock_cycles=sum(sent),
        )

    def to_dict(self) -> dict:
        return {
            "pulses_sent": list(self.pulses_sent),
            "sifted_detections": list(self.sifted_detections),
            "sifted_errors": list(self.sifted_errors),
            "sifted_zeros": list(self.sifted_zeros),
            "clock_cycles": self.clock_cycles,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SessionTallies":
        return cls(**{k: d[k] for k in ("pulses_sent", "sifted_detections", "sifted_errors", "sifted_zeros", "clock_cycles")})

    @classmethod
    def empty(cls, levels: int = 3) -> "SessionTallies":
        zero = (0,) * levels
        return cls(zero, zero, zero, zero, 0)


@dataclass(frozen=True, eq=False)
class SiftedFrame:
    """Sifted, shuffled and balanced bits held by Alice and Bob.

    ``flip_mask`` marks the positions both parties inverted; it is public.
    """

    alice_bits: np.ndarray
    bob_bits: np.ndarray
    intensity_tags: np.ndarray
    zeros_fraction_before_flip: float
    flip_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.alice_bits)
        if self.flip_mask is None:
            object.__setattr__(self, "flip_mask", np.zeros(n, dtype=np.uint8))
        if not (len(self.bob_bits) == len(self.intensity_tags) == len(self.flip_mask) == n):
            raise ValueError("frame arrays must have equal lengths")

    def __len__(self) -> int:
        return len(self.alice_bits)

    @property
    def is_empty(self) -> bool:
        return len(self) == 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, SiftedFrame):
            return NotImplemented
        return (
            np.array_equal(self.alice_bits, other.alice_bits)
            and np.array_equal(self.bob_bits, other.bob_bits)
            and np.array_equal(self.intensity_tags, other.intensity_tags)
            and np.array_equal(self.flip_mask, other.flip_mask)
            and self.zeros_fraction_before_flip == other.zeros_fraction_before_flip
        )

    def level(self, j: int) -> "SiftedFrame":
        """Sub-frame of the events sent at intensity level ``j``."""
        keep = self.intensity_tags == j
        a = self.alice_bits[keep]
        pre = a ^ self.flip_mask[keep]
        z = float(np.mean(pre == 0)) if len(pre) else 0.5
        return SiftedFrame(a, self.bob_bits[keep], self.intensity_tags[keep], z, self.flip_mask[keep])

    @property
    def disagreements(self) -> int:
        return int(np.count_nonzero(self.alice_bits != self.bob_bits))


@dataclass(frozen=True, eq=False)
class DetectionRecord:
    """Raw per-cycle record of cycles in which Bob registered any click."""

    cycle: np.ndarray
    level: np.ndarray
    alice_bit: np.ndarray
    alice_basis: np.ndarray
    bob_basis: np.ndarray
    click0: np.ndarray
    click1: np.ndarray

    def __len__(self) -> int:
        return len(self.cycle)

    @classmethod
    def concatenate(cls, records: Sequence["DetectionRecord"]) -> "DetectionRecord":
        names = ("cycle", "level", "alice_bit", "alice_basis", "bob_basis", "click0", "click1")
        if not records:
            empty = {n: np.zeros(0, dtype=np.int64 if n == "cycle" else np.uint8) for n in names}
            return cls(**empty)
        return cls(**{n: np.concatenate([getattr(r, n) for r in records]) for n in names})


# --------------------------------------------------------------------------
# exact event probabilities


def _background_per_detector(channel: ChannelModel) -> float:
    # two independent detectors; P(at least one background click) = background_yield
    return -math.expm1(0.5 * math.log1p(-channel.background_yield)) if channel.background_yield < 1 else 1.0


def sifted_event_probabilities(channel: ChannelModel, mu: float) -> np.ndarray:
    """Per-pulse probabilities of sifted single-click events.

    Returns a 2x2 array ``p[a, e]``: Alice sent bit ``a`` and Bob's bit was
    correct (``e = 0``) or wrong (``e = 1``). The remaining mass is "no sifted
    event" (basis mismatch, no click or double click).
    """
    t = channel.photon_survival
    eff = channel.detector_efficiencies
    pb = _background_per_detector(channel)
    ev = channel.visibility_error
    # signal click probability at detector d when all photons are routed to it
    sig = [-math.expm1(-mu * t * eff[d]) for d in (0, 1)]
    out = np.zeros((2, 2))
    for a in (0, 1):
        for flip, w in ((0, 1.0 - ev), (1, ev)):
            d = a ^ flip
            only_target = (1.0 - (1.0 - sig[d]) * (1.0 - pb)) * (1.0 - pb)
            only_other = pb * (1.0 - sig[d]) * (1.0 - pb)
            if flip == 0:
                correct, wrong = only_target, only_other
            else:
                correct, wrong = only_other, only_target
            out[a, 0] += w * correct
            out[a, 1] += w * wrong
    return SIFT_FACTOR * 0.5 * out


def expected_counts(config: DecoyConfig, channel: ChannelModel) -> dict[str, np.ndarray]:
    """Expected tallies (as real numbers) for a session."""
    cycles = config.clock_cycles
    sent = np.array(config.send_probabilities) * cycles
    det = np.empty(3)
    err = np.empty(3)
    zer = np.empty(3)
    for j, mu in enumerate(config.intensities):
        p = sifted_event_probabilities(channel, mu)
        det[j] = sent[j] * p.sum()
        err[j] = sent[j] * p[:, 1].sum()
        zer[j] = sent[j] * p[0].sum()
    return {"pulses_sent": sent, "sifted_detections": det, "sifted_errors": err, "sifted_zeros": zer}


def expected_tallies(config: DecoyConfig, channel: ChannelModel) -> SessionTallies:
    """Expected tallies rounded to whole counts (noise-free session)."""
    e = expected_counts(config, channel)
    sent = [int(round(x)) for x in e["pulses_sent"]]
    sent[0] += config.clock_cycles - sum(sent)
    rnd = lambda key: [int(round(x)) for x in e[key]]  # noqa: E731
    return SessionTallies(sent, rnd("sifted_detections"), rnd("sifted_errors"), rnd("sifted_zeros"), sum(sent))


# --------------------------------------------------------------------------
# pulse-level path


def _batches(cycles: int, size: int) -> Iterable[tuple[int, int, int]]:
    for b, start in enumerate(range(0, cycles, size)):
        yield b, start, min(cycles, start + size)


def _simulate_pulse_batch(config: DecoyConfig, channel: ChannelModel, seed: int, batch: int, start: int, stop: int):
    g = rng.stream(seed, "pulses", batch)
    n = stop - start
    probs = np.array(config.send_probabilities)
    level = np.searchsorted(np.cumsum(probs)[:-1], g.random(n), side="right").astype(np.uint8)
    mus = np.array(config.intensities)
    photons = g.poisson(mus[level])
    a_bit = g.integers(0, 2, n, dtype=np.uint8)
    a_basis = g.integers(0, 2, n, dtype=np.uint8)
    b_basis = g.integers(0, 2, n, dtype=np.uint8)
    flip = (g.random(n) < channel.visibility_error).astype(np.uint8)
    route = g.integers(0, 2, n, dtype=np.uint8)  # used when bases differ
    pb = _background_per_detector(channel)
    bg0 = g.random(n) < pb
    bg1 = g.random(n) < pb
    t = channel.photon_survival
    eff = np.array(channel.detector_efficiencies)

    matched = a_basis == b_basis
    target = np.where(matched, a_bit ^ flip, route)
    # mismatched bases: each photon picks a detector at random
    to_target = np.where(matched, photons, g.binomial(photons, 0.5))
    to_other = photons - to_target
    hit_target = g.binomial(to_target, t * eff[target]) > 0
    hit_other = g.binomial(to_other, t * eff[1 - target]) > 0
    sig0 = np.where(target == 0, hit_target, hit_other)
    sig1 = np.where(target == 1, hit_target, hit_other)
    click0 = sig0 | bg0
    click1 = sig1 | bg1
    any_click = click0 | click1
    idx = np.flatnonzero(any_click)
    return DetectionRecord(
        cycle=(idx + start).astype(np.int64),
        level=level[idx],
        alice_bit=a_bit[idx],
        alice_basis=a_basis[idx],
        bob_basis=b_basis[idx],
        click0=click0[idx].astype(np.uint8),
        click1=click1[idx].astype(np.uint8),
    ), np.bincount(level, minlength=3)


def simulate_pulses(config: DecoyConfig, channel: ChannelModel, seed: int) -> tuple[DetectionRecord, np.ndarray]:
    """Pulse-by-pulse simulation; returns the raw click record and pulses sent per level."""
    records = []
    sent = np.zeros(3, dtype=np.int64)
    for b, start, stop in _batches(config.clock_cycles, PULSE_BATCH):
        rec, counts = _simulate_pulse_batch(config, channel, seed, b, start, stop)
        records.append(rec)
        sent += counts
    return DetectionRecord.concatenate(records), sent


# --------------------------------------------------------------------------
# aggregated path


def _aggregate_batch(config: DecoyConfig, cat_probs: list[np.ndarray], seed: int, batch: int, start: int, stop: int):
    g = rng.stream(seed, "aggregate", batch)
    n = stop - start
    sent = g.multinomial(n, config.send_probabilities)
    cats = []
    for j in range(3):
        p = cat_probs[j]
        full = np.append(p, max(0.0, 1.0 - p.sum()))
        counts = g.multinomial(sent[j], full / full.sum())[:4]
        cats.append(counts)
    total = int(sum(c.sum() for c in cats))
    cycles = np.sort(g.choice(n, size=total, replace=False)) + start if total else np.zeros(0, dtype=np.int64)
    # labels in category order, then a uniform assignment to the chosen cycles
    lv = np.concatenate([np.full(c.sum(), j, dtype=np.uint8) for j, c in enumerate(cats)])
    cat = np.concatenate([np.repeat(np.arange(4, dtype=np.uint8), c) for c in cats])
    order = g.permutation(total)
    return sent, cats, cycles.astype(np.int64), lv[order], cat[order]


def _aggregate(config: DecoyConfig, channel: ChannelModel, seed: int):
    cat_probs = [sifted_event_probabilities(channel, mu).reshape(-1) for mu in config.intensities]
    sent = np.zeros(3, dtype=np.int64)
    counts = np.zeros((3, 4), dtype=np.int64)
    parts = []
    for b, start, stop in _batches(config.clock_cycles, AGGREGATE_BATCH):
        s, cats, cyc, lv, cat = _aggregate_batch(config, cat_probs, seed, b, start, stop)
        sent += s
        for j in range(3):
            counts[j] += cats[j]
        parts.append((cyc, lv, cat))
    cyc = np.concatenate([p[0] for p in parts]) if parts else np.zeros(0, dtype=np.int64)
    lv = np.concatenate([p[1] for p in parts]) if parts else np.zeros(0, dtype=np.uint8)
    cat = np.concatenate([p[2] for p in parts]) if parts else np.zeros(0, dtype=np.uint8)
    return sent, counts, cyc, lv, cat


# --------------------------------------------------------------------------
# sifting and balancing


def _shuffle_and_balance(alice: np.ndarray, bob: np.ndarray, tags: np.ndarray, seed: int) -> SiftedFrame:
    g = rng.stream(seed, "sift")
    n = len(alice)
    perm = g.permutation(n)
    alice, bob, tags = alice[perm], bob[perm], tags[perm]
    z = float(np.mean(alice == 0)) if n else 0.5
    mask = np.zeros(n, dtype=np.uint8)
    mask[g.choice(n, size=n // 2, replace=False)] = 1
    return SiftedFrame(alice ^ mask, bob ^ mask, tags, z, mask)


def sift_and_balance(record: DetectionRecord, seed: int, levels: Sequence[int] | None = None) -> SiftedFrame:
    """Sift a raw record, shuffle it and flip a random half of the bits on both sides.

    Events with mismatched bases or clicks on both detectors are dropped. The
    fraction of zeros in Alice's sifted bits is recorded before flipping.
    """
    keep = (record.alice_basis == record.bob_basis) & ((record.click0 ^ record.click1) == 1)
    if levels is not None:
        keep &= np.isin(record.level, np.asarray(levels))
    alice = record.alice_bit[keep].astype(np.uint8)
    bob = record.click1[keep].astype(np.uint8)
    tags = record.level[keep].astype(np.uint8)
    return _shuffle_and_balance(alice, bob, tags, seed)


def tallies_from_frame(frame: SiftedFrame, pulses_sent: Sequence[int]) -> SessionTallies:
    """Per-level sifted counts, disagreements and pre-flip zeros of a frame."""
    levels = len(pulses_sent)
    tags = np.asarray(frame.intensity_tags)
    if len(tags) and (tags.min() < 0 or tags.max() >= levels):
        raise ValueError("frame carries intensity tags outside the declared levels")
    wrong = (frame.alice_bits != frame.bob_bits)
    zero = (frame.alice_bits ^ frame.flip_mask) == 0
    det = np.bincount(tags, minlength=levels)[:levels]
    err = np.bincount(tags, weights=wrong, minlength=levels)[:levels]
    zer = np.bincount(tags, weights=zero, minlength=levels)[:levels]
    return SessionTallies(
        pulses_sent=tuple(int(s) for s in pulses_sent),
        sifted_detections=tuple(int(v) for v in det),
        sifted_errors=tuple(int(round(v)) for v in err),
        sifted_zeros=tuple(int(round(v)) for v in zer),
        clock_cycles=int(sum(pulses_sent)),
    )


def simulate_session(
    config: DecoyConfig,
    channel: ChannelModel,
    seed: int,
    mode: str = "aggregate",
    with_record: bool = False,
):
    """Run a full session and return its tallies and balanced sifted frame.

    ``mode`` selects the pulse-level path (``"pulse"``) or the aggregated fast
    path (``"aggregate"``). Output is a deterministic function of the seed.
    With ``with_record`` the sifted detection record is returned as a third
    element.
    """
    if mode == "pulse":
        raw, sent = simulate_pulses(config, channel, seed)
        keep = (raw.alice_basis == raw.bob_basis) & ((raw.click0 ^ raw.click1) == 1)
        sifted = DetectionRecord(**{k: getattr(raw, k)[keep] for k in ("cycle", "level", "alice_bit", "alice_basis", "bob_basis", "click0", "click1")})
        frame = sift_and_balance(raw, seed)
    elif mode == "aggregate":
        sent, _, cyc, lv, cat = _aggregate(config, channel, seed)
        alice = (cat >> 1).astype(np.uint8)
        bob = alice ^ (cat & 1).astype(np.uint8)
        # bases are not resolved on this path; record both as matching basis 0
        basis = np.zeros(len(cyc), dtype=np.uint8)
        sifted = DetectionRecord(cyc, lv, alice, basis, basis.copy(), (1 - bob).astype(np.uint8), bob)
        frame = _shuffle_and_balance(alice, bob, lv.astype(np.uint8), seed)
    else:
        raise ValueError(f"unknown simulation mode {mode!r}")
    tallies = tallies_from_frame(frame, [int(s) for s in sent])
    if with_record:
        return tallies, frame, sifted
    return tallies, frame


def export_detections_csv(record: DetectionRecord, path) -> None:
    """One row per recorded event: cycle, level, bases and both parties' bits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cycle", "level", "alice_basis", "bob_basis", "alice_bit", "bob_bit"])
        single = (record.click0 ^ record.click1) == 1
        bob_bit = np.where(single, record.click1, -1)
        for row in zip(record.cycle, record.level, record.alice_basis, record.bob_basis, record.alice_bit, bob_bit):
            w.writerow([int(v) for v in row])
