"""Streaming classification of camera frames with a latency budget.

A producer thread feeds frames through a bounded queue to a single
consumer that classifies every data frame. Cleaning frames are dropped
without a decision. The producer blocks when the queue is full, so frames
are never lost or reordered.
"""

from __future__ import annotations

import enum
import hashlib
import json
import os
import queue
import socket
import threading
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .detector import NO_DEPUMPING, DepumpingSpec, QubitState, _rng, read_out, sample_states
from .discriminator import TwoIonThresholds
from .optics import areas_from_json
from .sequencer import MAX_READOUT_RATE, NS_PER_S

SEED_ENV = "IONREADOUT_SEED"


class PipelineError(RuntimeError):
    pass


class OutOfOrderFrame(PipelineError):
    pass


class FrameKind(enum.Enum):
    CLEANING = "Cleaning"
    DATA = "Data"


@dataclass(frozen=True)
class FrameRecord:
    sequence_index: int
    timestamp: int  # ns
    kind: FrameKind
    area_counts: tuple

    def to_json(self) -> str:
        return json.dumps({"sequence_index": self.sequence_index, "timestamp": self.timestamp,
                           "kind": self.kind.value, "area_counts": list(self.area_counts)})

    @classmethod
    def from_json(cls, line: str) -> "FrameRecord":
        d = json.loads(line)
        return cls(int(d["sequence_index"]), int(d["timestamp"]), FrameKind(d["kind"]),
                   tuple(int(c) for c in d["area_counts"]))


@dataclass(frozen=True)
class DecisionRecord:
    sequence_index: int
    per_ion_state: tuple
    global_bright: int | None
    ingest_to_decision: int  # ns

    def to_json(self) -> str:
        return json.dumps({"sequence_index": self.sequence_index,
                           "per_ion_state": [s.value for s in self.per_ion_state],
                           "global_bright": self.global_bright,
                           "ingest_to_decision": self.ingest_to_decision})

    @classmethod
    def from_json(cls, line: str) -> "DecisionRecord":
        d = json.loads(line)
        return cls(int(d["sequence_index"]), tuple(QubitState(s) for s in d["per_ion_state"]),
                   d["global_bright"], int(d["ingest_to_decision"]))


@dataclass(frozen=True)
class PipelineConfig:
    """Stream settings.

    ``thresholds`` is either one integer per area (individual readout) or a
    ``TwoIonThresholds`` for one shared area holding two ions.
    """
    thresholds: tuple | TwoIonThresholds = (4284,)
    areas: tuple = ()
    frame_rate: Fraction = MAX_READOUT_RATE  # 1/s
    latency_budget: int = 1_000_000  # ns
    seed: int = 0
    buffer_depth: int = 256
    max_frame_rate: Fraction = MAX_READOUT_RATE

    def __post_init__(self):
        object.__setattr__(self, "frame_rate", Fraction(self.frame_rate))
        object.__setattr__(self, "max_frame_rate", Fraction(self.max_frame_rate))
        if not isinstance(self.thresholds, TwoIonThresholds):
            object.__setattr__(self, "thresholds", tuple(int(t) for t in self.thresholds))
            if not self.thresholds:
                raise ValueError("at least one threshold is required")
        object.__setattr__(self, "areas", tuple(self.areas))
        if self.areas and len(self.areas) != self.n_areas:
            raise ValueError("need one binning area per threshold")
        if not 0 < self.frame_rate <= self.max_frame_rate:
            raise ValueError(f"frame rate must be in (0, {self.max_frame_rate}]")
        if not 0 < self.latency_budget < NS_PER_S / self.frame_rate:
            raise ValueError("latency budget must be positive and shorter than the frame period")
        if self.buffer_depth < 1:
            raise ValueError("buffer_depth must be >= 1")

    @property
    def n_areas(self) -> int:
        return 1 if isinstance(self.thresholds, TwoIonThresholds) else len(self.thresholds)

    @property
    def frame_period(self) -> Fraction:
        return NS_PER_S / self.frame_rate

    def to_dict(self) -> dict:
        th = ({"t1": self.thresholds.t1, "t2": self.thresholds.t2}
              if isinstance(self.thresholds, TwoIonThresholds) else list(self.thresholds))
        return {"thresholds": th, "areas": [a.__dict__ for a in self.areas],
                "frame_rate": str(self.frame_rate), "latency_budget_ns": self.latency_budget,
                "seed": self.seed, "buffer_depth": self.buffer_depth,
                "max_frame_rate": str(self.max_frame_rate)}

    @classmethod
    def from_dict(cls, data: dict, env=None) -> "PipelineConfig":
        env = os.environ if env is None else env
        th = data.get("thresholds", [4284])
        if isinstance(th, dict):
            th = TwoIonThresholds(int(th["t1"]), int(th["t2"]))
        areas = areas_from_json(json.dumps(data["areas"])) if data.get("areas") else ()
        seed = int(env[SEED_ENV]) if env.get(SEED_ENV) not in (None, "") else int(data.get("seed", 0))
        return cls(thresholds=th, areas=areas,
                   frame_rate=Fraction(str(data.get("frame_rate", 200))),
                   latency_budget=int(data.get("latency_budget_ns", 1_000_000)),
                   seed=seed, buffer_depth=int(data.get("buffer_depth", 256)),
                   max_frame_rate=Fraction(str(data.get("max_frame_rate", 200))))


def load_config(path, env=None) -> PipelineConfig:
    """Read a JSON config; ``IONREADOUT_SEED`` in the environment wins over its seed."""
    return PipelineConfig.from_dict(json.loads(Path(path).read_text()), env)


def save_config(config: PipelineConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2) + "\n")


# --------------------------------------------------------------------------
# Classification

class Classifier:
    """Per-frame decision logic shared by the stream and the offline path."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self._global = isinstance(config.thresholds, TwoIonThresholds)
        if self._global:
            self._t1, self._t2 = config.thresholds.t1, config.thresholds.t2
        else:
            self._t = config.thresholds

    def decide(self, counts) -> tuple[tuple, int | None]:
        if self._global:
            c = counts[0]
            return (), (0 if c < self._t1 else 1 if c < self._t2 else 2)
        states = tuple(QubitState.BRIGHT if c >= t else QubitState.DARK for c, t in zip(counts, self._t))
        return states, sum(s is QubitState.BRIGHT for s in states)

    def batch(self, counts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorised equivalent: (bright matrix, number bright) for an
        ``(n_frames, n_areas)`` array."""
        counts = np.asarray(counts)
        if self._global:
            c = counts[:, 0]
            return np.zeros((len(c), 0), dtype=bool), (c >= self._t1).astype(np.int64) + (c >= self._t2)
        bright = counts >= np.asarray(self._t)[None, :]
        return bright, bright.sum(axis=1)


def classify_offline(frames: Iterable[FrameRecord], config: PipelineConfig) -> list[tuple]:
    """(sequence_index, per_ion_state, global_bright) for every data frame."""
    data = [f for f in frames if f.kind is FrameKind.DATA]
    if not data:
        return []
    counts = np.array([f.area_counts for f in data], dtype=np.int64)
    bright, n = Classifier(config).batch(counts)
    out = []
    for f, row, k in zip(data, bright, n):
        states = tuple(QubitState.BRIGHT if b else QubitState.DARK for b in row)
        out.append((f.sequence_index, states, int(k)))
    return out


# --------------------------------------------------------------------------
# Stream engine

@dataclass
class StreamSummary:
    frames: int = 0
    data_frames: int = 0
    cleaning_frames: int = 0
    decisions: int = 0
    latency_max: int = 0
    latency_mean: float = 0.0
    latency_p99: float = 0.0
    budget_violations: int = 0
    budget_met: bool = True
    bright_counts: list = field(default_factory=list)
    digest: str = ""

    def as_dict(self) -> dict:
        return dict(self.__dict__)


_END = object()


def _digest(decisions) -> str:
    h = hashlib.sha256()
    for d in decisions:
        h.update(f"{d.sequence_index}:{''.join(s.value[0] for s in d.per_ion_state)}:{d.global_bright};"
                 .encode())
    return h.hexdigest()


def run_stream(config: PipelineConfig, source: Iterable[FrameRecord],
               max_frames: int | None = None) -> tuple[list[DecisionRecord], StreamSummary]:
    """Classify a frame stream; returns decisions in order and a summary.

    Latency is measured from the moment a frame leaves the buffer to the
    moment its decision is recorded. Budget violations are counted and the
    run continues. An out-of-order frame aborts the run.
    """
    buf: queue.Queue = queue.Queue(maxsize=config.buffer_depth)
    failure: list[BaseException] = []
    stop = threading.Event()

    def produce():
        try:
            for i, frame in enumerate(source):
                if max_frames is not None and i >= max_frames:
                    break
                while not stop.is_set():
                    try:
                        buf.put(frame, timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if stop.is_set():
                    return
        except BaseException as exc:  # surfaced in the consumer
            failure.append(exc)
        finally:
            while not stop.is_set():
                try:
                    buf.put(_END, timeout=0.1)
                    break
                except queue.Full:
                    continue

    classifier = Classifier(config)
    n_areas = config.n_areas
    decisions: list[DecisionRecord] = []
    latencies: list[int] = []
    summary = StreamSummary()
    n_ions = 2 if isinstance(config.thresholds, TwoIonThresholds) else n_areas
    bright_counts = [0] * (n_ions + 1)
    last = None
    clock = time.perf_counter_ns
    producer = threading.Thread(target=produce, name="frame-source", daemon=True)
    producer.start()
    try:
        while True:
            frame = buf.get()
            t0 = clock()
            if frame is _END:
                break
            summary.frames += 1
            if last is not None and frame.sequence_index <= last:
                raise OutOfOrderFrame(f"frame {frame.sequence_index} arrived after {last}")
            last = frame.sequence_index
            if frame.kind is FrameKind.CLEANING:
                summary.cleaning_frames += 1
                continue
            if len(frame.area_counts) != n_areas:
                raise PipelineError(f"frame {frame.sequence_index} has {len(frame.area_counts)} "
                                    f"areas, expected {n_areas}")
            states, n_bright = classifier.decide(frame.area_counts)
            latency = clock() - t0
            decisions.append(DecisionRecord(frame.sequence_index, states, n_bright, latency))
            latencies.append(latency)
            bright_counts[n_bright] += 1
    finally:
        stop.set()
        producer.join()
    if failure:
        raise failure[0]
    summary.data_frames = summary.decisions = len(decisions)
    summary.bright_counts = bright_counts
    if latencies:
        lat = np.asarray(latencies)
        summary.latency_max = int(lat.max())
        summary.latency_mean = float(lat.mean())
        summary.latency_p99 = float(np.percentile(lat, 99))
        summary.budget_violations = int((lat > config.latency_budget).sum())
        summary.budget_met = summary.budget_violations == 0
    summary.digest = _digest(decisions)
    return decisions, summary


# --------------------------------------------------------------------------
# Simulated source

@dataclass(frozen=True)
class Scenario:
    """Preparation schedule for a simulated run.

    ``scheme`` is one of ``bright``, ``dark``, ``alternate`` (every ion
    bright on even shots, dark on odd) or ``superposition`` (each ion bright
    with probability 1/2, independently).
    """
    scheme: str = "alternate"
    n_ions: int = 1
    shots: int = 10_000

    def __post_init__(self):
        if self.scheme not in ("bright", "dark", "alternate", "superposition"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.n_ions < 1 or self.shots < 0:
            raise ValueError("n_ions >= 1 and shots >= 0 required")

    def prepared(self, start: int, stop: int, rng: np.random.Generator) -> np.ndarray:
        n = stop - start
        if self.scheme == "bright":
            return np.ones((n, self.n_ions), dtype=bool)
        if self.scheme == "dark":
            return np.zeros((n, self.n_ions), dtype=bool)
        if self.scheme == "alternate":
            even = (np.arange(start, stop) % 2 == 0)[:, None]
            return np.repeat(even, self.n_ions, axis=1)
        return rng.random((n, self.n_ions)) < 0.5


def simulate_source(scenario: Scenario, model, fractions=None, depump: DepumpingSpec = NO_DEPUMPING,
                    seed=None, frame_rate=MAX_READOUT_RATE, cleaning: bool = True,
                    chunk: int = 4096, prepared_out: list | None = None) -> Iterator[FrameRecord]:
    """Cleaning and data frames for a preparation schedule.

    ``fractions[i, j]`` is the share of ion ``i``'s light collected in area
    ``j`` (from ``optics.roi_fraction``); the default puts each ion in its
    own area. Each ion's detected photons are split over the areas and every
    area is read out once, as hardware binning does. If ``prepared_out`` is
    a list, the prepared states of every shot are appended to it.
    """
    rng = _rng(seed)
    n = scenario.n_ions
    fr = np.eye(n) if fractions is None else np.asarray(fractions, dtype=float)
    if fr.shape[0] != n or np.any(fr < 0) or np.any(fr.sum(axis=1) > 1 + 1e-12):
        raise ValueError("fractions must be (n_ions, n_areas) with rows summing to at most 1")
    n_areas = fr.shape[1]
    rest = np.clip(1 - fr.sum(axis=1), 0, None)
    probs = np.concatenate([fr, rest[:, None]], axis=1)
    probs /= probs.sum(axis=1, keepdims=True)
    period = Fraction(NS_PER_S) / Fraction(frame_rate)
    index = 0
    for start in range(0, scenario.shots, chunk):
        stop = min(start + chunk, scenario.shots)
        prepared = scenario.prepared(start, stop, rng)
        if prepared_out is not None:
            prepared_out.extend(prepared.tolist())
        signal = sample_states(model, prepared, depump, rng)
        per_area = np.zeros((stop - start, n_areas), dtype=np.int64)
        for i in range(n):
            split = rng.multinomial(signal[:, i], probs[i])
            per_area += split[:, :n_areas]
        counts = read_out(model, per_area, rng)
        clean = (read_out(model, np.zeros((stop - start, n_areas), dtype=np.int64), rng)
                 if cleaning else None)
        for row in range(stop - start):
            if cleaning:
                yield FrameRecord(index, int(index * period), FrameKind.CLEANING,
                                  tuple(int(c) for c in clean[row]))
                index += 1
            yield FrameRecord(index, int(index * period), FrameKind.DATA,
                              tuple(int(c) for c in counts[row]))
            index += 1


# --------------------------------------------------------------------------
# Files and sockets

def write_frames(frames: Iterable, path) -> int:
    """Write any records with ``to_json`` as newline-delimited JSON."""
    n = 0
    with open(path, "w") as fh:
        for f in frames:
            fh.write(f.to_json() + "\n")
            n += 1
    return n


def read_frames(path) -> Iterator[FrameRecord]:
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    yield FrameRecord.from_json(line)
                except (KeyError, ValueError, TypeError) as exc:
                    raise PipelineError(f"{path}:{lineno}: bad frame record ({exc})") from exc


def read_decisions(path) -> list[DecisionRecord]:
    with open(path) as fh:
        return [DecisionRecord.from_json(line) for line in fh if line.strip()]


class SocketFrameSource:
    """Accepts one TCP connection on localhost and yields the NDJSON frames
    it sends until the peer closes."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0, timeout: float = 30.0):
        self._server = socket.create_server((host, port))
        self._server.settimeout(timeout)
        self.timeout = timeout

    @property
    def address(self) -> tuple[str, int]:
        return self._server.getsockname()[:2]

    def __iter__(self) -> Iterator[FrameRecord]:
        try:
            conn, _ = self._server.accept()
        finally:
            self._server.close()
        with conn:
            conn.settimeout(self.timeout)
            with conn.makefile("r", encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        yield FrameRecord.from_json(line)


def send_frames(frames: Iterable[FrameRecord], address: tuple[str, int]) -> int:
    """Client side of ``SocketFrameSource``."""
    n = 0
    with socket.create_connection(address) as conn, conn.makefile("w", encoding="utf-8") as fh:
        for f in frames:
            fh.write(f.to_json() + "\n")
            n += 1
    return n


def area_fractions(psf, sites, areas, geometry=None) -> np.ndarray:
    """Matrix of ``roi_fraction`` for every (ion, area) pair."""
    from .optics import roi_fraction
    return np.array([[roi_fraction(psf, s, a, geometry) for a in areas] for s in sites])


__all__ = ["Classifier", "DecisionRecord", "FrameKind", "FrameRecord", "OutOfOrderFrame", "PipelineConfig",
           "PipelineError", "Scenario", "SocketFrameSource", "StreamSummary", "area_fractions",
           "classify_offline", "load_config", "read_decisions", "read_frames", "run_stream", "save_config",
           "send_frames", "simulate_source", "write_frames"]
