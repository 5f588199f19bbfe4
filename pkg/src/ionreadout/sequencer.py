"""Timed pulse/readout sequences for one experimental shot, camera duty
limits, throughput and decision latency.

Durations are integer nanoseconds and rates are exact fractions.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

NS_PER_S = 1_000_000_000
MS = 1_000_000
US = 1_000

COOL_NS = 5 * MS
COOL_REPUMP_NS = 1 * MS
DETECT_NS = 400 * US
READOUT_NS = 2 * MS
MAX_READOUT_RATE = Fraction(200)


class SegmentKind(enum.Enum):
    COOL = "Cool"
    COOL_WITH_REPUMP = "CoolWithRepump"
    MICROWAVE_PULSE = "MicrowavePulse"
    CLEAN_READOUT = "CleanReadout"
    DETECT = "Detect"
    READOUT = "Readout"
    IDLE = "Idle"


class Detector(enum.Enum):
    PMT = "PMT"
    EMCCD = "EMCCD"


_READOUTS = (SegmentKind.CLEAN_READOUT, SegmentKind.READOUT)


def to_ns(seconds) -> int:
    """Seconds (float, str or Fraction) to integer nanoseconds."""
    ns = Fraction(str(seconds)) * NS_PER_S if isinstance(seconds, float) else Fraction(seconds) * NS_PER_S
    if ns.denominator != 1:
        ns = round(ns)
    return int(ns)


@dataclass(frozen=True)
class SequenceSegment:
    kind: SegmentKind
    duration_ns: int
    label: str = ""

    def __post_init__(self):
        if not isinstance(self.kind, SegmentKind):
            object.__setattr__(self, "kind", SegmentKind(self.kind))
        if int(self.duration_ns) != self.duration_ns or self.duration_ns <= 0:
            raise ValueError("segment duration must be a positive integer of nanoseconds")

    @property
    def is_readout(self) -> bool:
        return self.kind in _READOUTS


@dataclass(frozen=True)
class SequenceTimeline:
    segments: tuple
    detector: Detector = Detector.EMCCD

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if not isinstance(self.detector, Detector):
            object.__setattr__(self, "detector", Detector(self.detector))

    @property
    def total_ns(self) -> int:
        return sum(s.duration_ns for s in self.segments)

    @property
    def total(self) -> Fraction:
        """Total duration in seconds, exact."""
        return Fraction(self.total_ns, NS_PER_S)

    def starts(self) -> list[int]:
        out, t = [], 0
        for s in self.segments:
            out.append(t)
            t += s.duration_ns
        return out

    def count(self, *kinds: SegmentKind) -> int:
        return sum(1 for s in self.segments if s.kind in kinds)

    def to_dict(self) -> dict:
        return {"detector": self.detector.value,
                "segments": [{"kind": s.kind.value, "duration_ns": s.duration_ns, "label": s.label}
                             for s in self.segments]}

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_dict(cls, data: dict) -> "SequenceTimeline":
        segs = [SequenceSegment(SegmentKind(d["kind"]), int(d["duration_ns"]), d.get("label", ""))
                for d in data["segments"]]
        return cls(tuple(segs), Detector(data.get("detector", "EMCCD")))

    @classmethod
    def from_json(cls, source) -> "SequenceTimeline":
        if isinstance(source, Path) or not str(source).lstrip().startswith("{"):
            source = Path(source).read_text()
        return cls.from_dict(json.loads(source))


@dataclass(frozen=True)
class CameraDutyModel:
    max_readout_rate: Fraction = MAX_READOUT_RATE  # 1/s
    readout_time_ns: int = READOUT_NS

    def __post_init__(self):
        object.__setattr__(self, "max_readout_rate", Fraction(self.max_readout_rate))
        if self.max_readout_rate <= 0 or self.readout_time_ns <= 0:
            raise ValueError("rate and readout time must be positive")
        if self.max_readout_rate * Fraction(self.readout_time_ns, NS_PER_S) > 1:
            raise ValueError("max_readout_rate exceeds 1 / readout_time")


def build_standard_sequence(manipulations=(), detector=Detector.EMCCD,
                            readout_ns: int = READOUT_NS, detect_ns: int = DETECT_NS) -> SequenceTimeline:
    """Cooling, cooling with repumper, microwave pulses, then detection.

    ``manipulations`` are pulse durations in nanoseconds. Camera detection is
    bracketed by a discarded cleaning readout and the data readout.
    """
    detector = Detector(detector) if not isinstance(detector, Detector) else detector
    segs = [SequenceSegment(SegmentKind.COOL, COOL_NS, "cool"),
            SequenceSegment(SegmentKind.COOL_WITH_REPUMP, COOL_REPUMP_NS, "cool+repump")]
    segs += [SequenceSegment(SegmentKind.MICROWAVE_PULSE, int(d), f"M{i + 1}")
             for i, d in enumerate(manipulations)]
    if detector is Detector.EMCCD:
        segs.append(SequenceSegment(SegmentKind.CLEAN_READOUT, readout_ns, "clean"))
    segs.append(SequenceSegment(SegmentKind.DETECT, detect_ns, "detect"))
    if detector is Detector.EMCCD:
        segs.append(SequenceSegment(SegmentKind.READOUT, readout_ns, "readout"))
    return SequenceTimeline(tuple(segs), detector)


@dataclass(frozen=True)
class Throughput:
    experiments_per_second: Fraction
    readouts_per_second: Fraction
    period_ns: Fraction  # steady-state duration of one cooling block
    idle_ns: Fraction  # padding inserted to honour the duty limit
    detections_per_cooling: int

    def as_dict(self) -> dict:
        return {"experiments_per_second": float(self.experiments_per_second),
                "readouts_per_second": float(self.readouts_per_second),
                "experiments_per_second_exact": str(self.experiments_per_second),
                "readouts_per_second_exact": str(self.readouts_per_second),
                "period_ms": float(self.period_ns / MS), "idle_ms": float(self.idle_ns / MS),
                "detections_per_cooling": self.detections_per_cooling}


def _block_parts(timeline: SequenceTimeline):
    """Split a one-detection timeline into cooling prefix and the detection cycle."""
    prefix, cycle_pulses = 0, 0
    for s in timeline.segments:
        if s.kind in (SegmentKind.COOL, SegmentKind.COOL_WITH_REPUMP):
            prefix += s.duration_ns
        elif s.kind in (SegmentKind.MICROWAVE_PULSE, SegmentKind.IDLE):
            cycle_pulses += s.duration_ns
    detect = sum(s.duration_ns for s in timeline.segments if s.kind is SegmentKind.DETECT)
    readouts = [s.duration_ns for s in timeline.segments if s.kind is SegmentKind.READOUT]
    cleans = [s.duration_ns for s in timeline.segments if s.kind is SegmentKind.CLEAN_READOUT]
    return prefix, cycle_pulses, detect, (readouts[0] if readouts else 0), (cleans[0] if cleans else 0)


def throughput(timeline: SequenceTimeline, duty: CameraDutyModel | None = None,
               detections_per_cooling: int = 1) -> Throughput:
    """Steady-state experiment and readout rates.

    One cooling block is followed by ``k`` cycles of (pulses, detect,
    readout); the first detection needs a cleaning readout and every data
    readout doubles as the cleaning readout of the next cycle. The last data
    readout of a block runs while the next block cools. If the camera would
    exceed its readout rate, idle time pads the block.
    """
    k = int(detections_per_cooling)
    if k < 1:
        raise ValueError("detections_per_cooling must be >= 1")
    duty = duty or CameraDutyModel()
    prefix, pulses, detect, readout, clean = _block_parts(timeline)
    if timeline.detector is Detector.PMT:
        period = Fraction(prefix + k * (pulses + detect))
        exp_rate = Fraction(k * NS_PER_S) / period
        return Throughput(exp_rate, Fraction(0), period, Fraction(0), k)
    readouts_per_block = k + 1
    busy = prefix + clean + k * (pulses + detect) + (k - 1) * readout
    # the trailing readout overlaps the next cooling unless cooling is shorter
    busy += max(0, readout - prefix)
    period = Fraction(busy)
    min_period = Fraction(readouts_per_block * NS_PER_S) / duty.max_readout_rate
    idle = max(Fraction(0), min_period - period)
    period += idle
    exp_rate = Fraction(k * NS_PER_S) / period
    ro_rate = Fraction(readouts_per_block * NS_PER_S) / period
    return Throughput(exp_rate, ro_rate, period, idle, k)


def decision_latency(timeline: SequenceTimeline, processing_time) -> Fraction:
    """Seconds from the end of detection to an available classification."""
    proc = Fraction(str(processing_time)) if isinstance(processing_time, float) else Fraction(processing_time)
    if timeline.detector is Detector.PMT:
        return proc
    segs = list(timeline.segments)
    for i, s in enumerate(segs):
        if s.kind is SegmentKind.DETECT:
            nxt = segs[i + 1] if i + 1 < len(segs) else None
            if nxt is None or nxt.kind is not SegmentKind.READOUT:
                raise ValueError("camera detection is not followed by a readout")
            return Fraction(nxt.duration_ns, NS_PER_S) + proc
    raise ValueError("timeline has no detection")


def validate(timeline: SequenceTimeline, duty: CameraDutyModel | None = None) -> list[str]:
    """Constraint violations; an empty list means the timeline is valid."""
    duty = duty or CameraDutyModel()
    problems = []
    segs = list(timeline.segments)
    starts = timeline.starts()
    if timeline.detector is Detector.EMCCD:
        for i, s in enumerate(segs):
            if s.kind is not SegmentKind.DETECT:
                continue
            j = i - 1
            while j >= 0 and segs[j].kind is SegmentKind.MICROWAVE_PULSE:
                j -= 1
            if j < 0 or segs[j].kind is not SegmentKind.CLEAN_READOUT:
                if not (j >= 0 and segs[j].kind is SegmentKind.READOUT):
                    problems.append(f"segment {i} ({s.label or 'Detect'}) is not preceded by a CleanReadout")
            if i + 1 >= len(segs) or segs[i + 1].kind is not SegmentKind.READOUT:
                problems.append(f"segment {i} ({s.label or 'Detect'}) is not followed by a Readout")
        n_ro = timeline.count(*_READOUTS)
        if n_ro and timeline.total_ns:
            rate = Fraction(n_ro * NS_PER_S, timeline.total_ns)
            if rate > duty.max_readout_rate:
                problems.append(f"readout rate {float(rate):.1f}/s exceeds camera limit "
                                f"{float(duty.max_readout_rate):.1f}/s")
    # segments are sequential; an overlap can only come from explicit start times
    det = [(starts[i], starts[i] + s.duration_ns) for i, s in enumerate(segs) if s.kind is SegmentKind.DETECT]
    ro = [(starts[i], starts[i] + s.duration_ns) for i, s in enumerate(segs) if s.is_readout]
    for a0, a1 in det:
        for b0, b1 in ro:
            if a0 < b1 and b0 < a1:
                problems.append("detection overlaps a readout")
    return problems


def gantt(timeline: SequenceTimeline, width: int = 72) -> str:
    """Fixed-width text rendering, one row per segment."""
    total = timeline.total_ns
    lines = [f"{timeline.detector.value} sequence, total {total / MS:.3f} ms"]
    for start, s in zip(timeline.starts(), timeline.segments):
        a = int(round(start / total * width))
        b = max(a + 1, int(round((start + s.duration_ns) / total * width)))
        bar = " " * a + "#" * (b - a) + " " * (width - b)
        lines.append(f"{s.kind.value:<15}|{bar}| {s.duration_ns / MS:8.3f} ms  {s.label}")
    return "\n".join(lines)
