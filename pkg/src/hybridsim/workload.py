"""Request arrival traces: ingestion, slashdot synthesis and window queries.

Two on-disk formats are understood:

* ``per_second_csv`` -- header-less ``timestamp_s,arrivals`` rows, strictly
  increasing timestamps, missing seconds mean zero arrivals.
* ``raw_log`` -- one integer millisecond timestamp per line; each line is a
  single request and is bucketed to its second.
"""

from __future__ import annotations

import bisect
import enum
from dataclasses import dataclass, field
from itertools import accumulate
from pathlib import Path

import numpy as np


class TraceFormat(str, enum.Enum):
    PER_SECOND_CSV = "per_second_csv"
    RAW_LOG = "raw_log"


class TraceError(ValueError):
    pass


class MalformedRow(TraceError):
    def __init__(self, line_no: int, text: str = ""):
        super().__init__(f"malformed row at line {line_no}: {text!r}")
        self.line_no = line_no


class NonMonotonicTimestamp(TraceError):
    def __init__(self, line_no: int):
        super().__init__(f"timestamp not strictly increasing at line {line_no}")
        self.line_no = line_no


class InvalidParams(ValueError):
    pass


@dataclass(frozen=True)
class TraceEntry:
    timestamp_s: int
    arrivals: int

    def __post_init__(self):
        if self.timestamp_s < 0 or self.arrivals < 0:
            raise ValueError(f"negative trace entry {self}")


@dataclass(frozen=True)
class RequestTrace:
    entries: tuple[TraceEntry, ...]
    duration_s: int
    label: str = ""
    _times: tuple[int, ...] = field(init=False, repr=False, compare=False)
    _prefix: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        times = tuple(e.timestamp_s for e in entries)
        for prev, cur in zip(times, times[1:]):
            if cur <= prev:
                raise TraceError("trace entries must have strictly increasing timestamps")
        if entries and self.duration_s < times[-1]:
            raise TraceError("duration_s shorter than the last timestamp")
        object.__setattr__(self, "_times", times)
        object.__setattr__(self, "_prefix", (0, *accumulate(e.arrivals for e in entries)))

    @property
    def total_arrivals(self) -> int:
        return self._prefix[-1]

    def mean_per_minute(self) -> float:
        if self.duration_s == 0:
            return 0.0
        return self.total_arrivals * 60.0 / self.duration_s

    def per_second(self, duration_s: int | None = None) -> np.ndarray:
        """Dense arrivals-per-second array covering ``[0, duration_s)``."""
        n = self.duration_s if duration_s is None else duration_s
        out = np.zeros(n, dtype=np.int64)
        for e in self.entries:
            if e.timestamp_s < n:
                out[e.timestamp_s] = e.arrivals
        return out


@dataclass(frozen=True)
class SlashdotParams:
    base_rate: float
    surge_count: int
    surge_amplitude: float
    surge_duration_s: int
    duration_s: int
    seed: int = 0

    def validate(self) -> None:
        if self.base_rate < 0:
            raise InvalidParams("base_rate must be non-negative")
        if self.surge_count < 0:
            raise InvalidParams("surge_count must be non-negative")
        if not self.surge_amplitude > 1.0:
            raise InvalidParams("surge_amplitude must be > 1")
        if self.duration_s <= 0 or self.surge_duration_s <= 0:
            raise InvalidParams("durations must be positive")
        if self.surge_count * self.surge_duration_s > self.duration_s:
            raise InvalidParams(
                f"{self.surge_count} surges of {self.surge_duration_s}s "
                f"do not fit in {self.duration_s}s without overlap"
            )


def _from_counts(counts: dict[int, int], label: str) -> RequestTrace:
    entries = tuple(TraceEntry(t, counts[t]) for t in sorted(counts))
    duration = entries[-1].timestamp_s + 1 if entries else 0
    return RequestTrace(entries, duration, label)


def parse_trace(path: str | Path, format: TraceFormat | str = TraceFormat.PER_SECOND_CSV,
                label: str | None = None) -> RequestTrace:
    path = Path(path)
    fmt = TraceFormat(format)
    label = path.stem if label is None else label
    text = path.read_text(encoding="utf-8")  # FileNotFoundError propagates

    if fmt is TraceFormat.RAW_LOG:
        counts: dict[int, int] = {}
        for line_no, line in enumerate(text.splitlines(), start=1):
            s = line.strip()
            if not s:
                continue
            try:
                ms = int(s)
            except ValueError:
                raise MalformedRow(line_no, line) from None
            if ms < 0:
                raise MalformedRow(line_no, line)
            sec = ms // 1000
            counts[sec] = counts.get(sec, 0) + 1
        return _from_counts(counts, label)

    entries: list[TraceEntry] = []
    last = -1
    for line_no, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s:
            continue
        parts = s.split(",")
        if len(parts) != 2:
            raise MalformedRow(line_no, line)
        try:
            ts, n = int(parts[0]), int(parts[1])
        except ValueError:
            raise MalformedRow(line_no, line) from None
        if ts < 0 or n < 0:
            raise MalformedRow(line_no, line)
        if ts <= last:
            raise NonMonotonicTimestamp(line_no)
        last = ts
        entries.append(TraceEntry(ts, n))
    duration = entries[-1].timestamp_s + 1 if entries else 0
    return RequestTrace(tuple(entries), duration, label)


def write_trace(trace: RequestTrace, path: str | Path) -> None:
    lines = [f"{e.timestamp_s},{e.arrivals}\n" for e in trace.entries]
    Path(path).write_text("".join(lines), encoding="utf-8")


def surge_windows(params: SlashdotParams) -> list[tuple[int, int]]:
    """Non-overlapping ``[start, end)`` surge windows, placed by the seeded RNG."""
    params.validate()
    rng = np.random.default_rng(params.seed)
    return _place_surges(rng, params)


def _place_surges(rng: np.random.Generator, params: SlashdotParams) -> list[tuple[int, int]]:
    k, d = params.surge_count, params.surge_duration_s
    if k == 0:
        return []
    slack = params.duration_s - k * d
    # k sorted offsets in [0, slack]; shifting the i-th by i*d keeps windows disjoint
    offsets = np.sort(rng.integers(0, slack + 1, size=k))
    return [(int(o) + i * d, int(o) + (i + 1) * d) for i, o in enumerate(offsets)]


def synthesize_slashdot(params: SlashdotParams, label: str = "slashdot") -> RequestTrace:
    params.validate()
    rng = np.random.default_rng(params.seed)
    windows = _place_surges(rng, params)
    rate = np.full(params.duration_s, float(params.base_rate))
    for start, end in windows:
        rate[start:end] *= params.surge_amplitude
    counts = rng.poisson(rate)
    entries = tuple(TraceEntry(t, int(c)) for t, c in enumerate(counts))
    return RequestTrace(entries, params.duration_s, label)


def arrivals_in(trace: RequestTrace, from_s: int, to_s: int) -> int:
    if not 0 <= from_s <= to_s:
        raise ValueError(f"bad window [{from_s}, {to_s})")
    lo = bisect.bisect_left(trace._times, from_s)
    hi = bisect.bisect_left(trace._times, to_s)
    return trace._prefix[hi] - trace._prefix[lo]
