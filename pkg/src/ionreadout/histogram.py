"""Integer count histograms, the exchange format between simulation,
discrimination and fitting."""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np


class CountHistogram:
    """Occurrences of non-negative integer count values.

    Stored densely from 0 up to the largest observed count, which keeps
    threshold scans a single cumulative sum.
    """

    def __init__(self, occurrences):
        occ = np.asarray(occurrences, dtype=np.int64)
        if occ.ndim != 1:
            raise ValueError("occurrences must be one-dimensional")
        if np.any(occ < 0):
            raise ValueError("occurrences must be non-negative")
        nz = np.flatnonzero(occ)
        self._occ = occ[: nz[-1] + 1].copy() if nz.size else np.zeros(0, np.int64)
        self._occ.setflags(write=False)

    @classmethod
    def from_samples(cls, samples) -> "CountHistogram":
        samples = np.asarray(samples)
        if samples.size and samples.min() < 0:
            raise ValueError("count values must be non-negative")
        return cls(np.bincount(samples.astype(np.int64).ravel()))

    @classmethod
    def from_mapping(cls, mapping: dict) -> "CountHistogram":
        if not mapping:
            return cls([])
        keys = [int(k) for k in mapping]
        if min(keys) < 0:
            raise ValueError("count values must be non-negative")
        occ = np.zeros(max(keys) + 1, dtype=np.int64)
        for k, v in mapping.items():
            occ[int(k)] += int(v)
        return cls(occ)

    @property
    def occurrences(self) -> np.ndarray:
        return self._occ

    @property
    def total(self) -> int:
        return int(self._occ.sum())

    @property
    def max_count(self) -> int:
        """Largest observed count value, -1 for an empty histogram."""
        return len(self._occ) - 1

    def dense(self, length: int) -> np.ndarray:
        """Occurrences padded (or cut) to ``length`` entries."""
        out = np.zeros(length, dtype=np.int64)
        n = min(length, len(self._occ))
        out[:n] = self._occ[:n]
        return out

    def items(self):
        for k in np.flatnonzero(self._occ):
            yield int(k), int(self._occ[k])

    def to_dict(self) -> dict[int, int]:
        return dict(self.items())

    def mean(self) -> float:
        if self.total == 0:
            raise ValueError("empty histogram")
        k = np.arange(len(self._occ))
        return float((k * self._occ).sum() / self.total)

    def __len__(self):
        return sum(1 for _ in self.items())

    def __eq__(self, other):
        if not isinstance(other, CountHistogram):
            return NotImplemented
        return np.array_equal(self._occ, other._occ)

    def __add__(self, other: "CountHistogram") -> "CountHistogram":
        n = max(len(self._occ), len(other._occ))
        return CountHistogram(self.dense(n) + other.dense(n))

    def __repr__(self):
        return f"CountHistogram(total={self.total}, max_count={self.max_count})"

    # -- CSV: header ``count,occurrences``, ascending, one row per distinct count

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["count", "occurrences"])
        for k, v in self.items():
            w.writerow([k, v])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "CountHistogram":
        """Read from a path or from CSV text."""
        if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
            text = Path(source).read_text()
        else:
            text = source
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["count", "occurrences"]:
            raise ValueError("histogram CSV must start with header 'count,occurrences'")
        mapping: dict[int, int] = {}
        last = -1
        for row in reader:
            if not row:
                continue
            k, v = int(row[0]), int(row[1])
            if k <= last:
                raise ValueError("histogram CSV rows must be sorted ascending by count")
            if v < 0:
                raise ValueError("negative occurrence in histogram CSV")
            mapping[k] = v
            last = k
        return cls.from_mapping(mapping)
