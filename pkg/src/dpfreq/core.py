"""Event streams, padded occurrence indexes and the exact (non-private) oracle.

A stream is stored sparsely as COO arrays ``(times, items, counts)`` sorted by
``(time, item)``. Time steps and items are 1-indexed.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

BUNDLE = "bundle"
SINGLETON = "singleton"
REGIMES = (BUNDLE, SINGLETON)

CUMULATIVE = "cumulative"
FIXED = "fixed"
TIME = "time"
QUERY_KINDS = (CUMULATIVE, FIXED, TIME)


class StreamError(ValueError):
    """Raised for malformed streams, stream files, or out-of-range windows."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EventStream:
    """Time-indexed multisets of item occurrences.

    Use :meth:`from_entries` or :meth:`from_arrays` rather than the raw
    constructor; both canonicalise the sparse arrays.
    """

    horizon: int
    universe_size: int
    times: np.ndarray
    items: np.ndarray
    counts: np.ndarray
    regime: str = BUNDLE

    @classmethod
    def from_arrays(cls, horizon, universe_size, times, items, counts, regime=BUNDLE):
        times = np.asarray(times, dtype=np.int64).ravel()
        items = np.asarray(items, dtype=np.int64).ravel()
        counts = np.asarray(counts, dtype=np.int64).ravel()
        if not (times.shape == items.shape == counts.shape):
            raise StreamError("times, items and counts must have equal length")
        # merge duplicate (t, u) pairs, drop zeros
        if times.size:
            order = np.lexsort((items, times))
            times, items, counts = times[order], items[order], counts[order]
            new = np.ones(times.size, dtype=bool)
            new[1:] = (times[1:] != times[:-1]) | (items[1:] != items[:-1])
            starts = np.flatnonzero(new)
            counts = np.add.reduceat(counts, starts)
            times, items = times[starts], items[starts]
            keep = counts != 0
            times, items, counts = times[keep], items[keep], counts[keep]
        return cls(int(horizon), int(universe_size), _readonly(times),
                   _readonly(items), _readonly(counts), regime)

    @classmethod
    def from_entries(cls, horizon: int, universe_size: int,
                     entries: Mapping[int, Mapping[int, int]], regime: str = BUNDLE):
        """Build from ``{t: {u: count}}``."""
        ts, us, cs = [], [], []
        for t, row in entries.items():
            for u, c in row.items():
                ts.append(t)
                us.append(u)
                cs.append(c)
        return cls.from_arrays(horizon, universe_size, ts, us, cs, regime)

    @classmethod
    def from_events(cls, horizon: int, universe_size: int,
                    events: Iterable[tuple[int, int]], regime: str = BUNDLE):
        """Build from an iterable of single ``(t, u)`` occurrences."""
        ev = list(events)
        ts = [t for t, _ in ev]
        us = [u for _, u in ev]
        return cls.from_arrays(horizon, universe_size, ts, us, np.ones(len(ev)), regime)

    @property
    def entries(self) -> dict[int, dict[int, int]]:
        out: dict[int, dict[int, int]] = {}
        for t, u, c in zip(self.times.tolist(), self.items.tolist(), self.counts.tolist()):
            out.setdefault(t, {})[u] = c
        return out

    @property
    def num_events(self) -> int:
        return int(self.counts.sum())

    def with_regime(self, regime: str) -> "EventStream":
        return EventStream(self.horizon, self.universe_size, self.times,
                           self.items, self.counts, regime)

    def restrict(self, t1: int, t2: int) -> "EventStream":
        """Sub-stream of steps ``t1..t2`` re-indexed to start at step 1."""
        if not 1 <= t1 <= t2 <= self.horizon:
            raise StreamError(f"invalid range [{t1}, {t2}] for horizon {self.horizon}")
        lo = np.searchsorted(self.times, t1, side="left")
        hi = np.searchsorted(self.times, t2, side="right")
        return EventStream(t2 - t1 + 1, self.universe_size,
                           _readonly(self.times[lo:hi] - (t1 - 1)),
                           self.items[lo:hi], self.counts[lo:hi], self.regime)

    def shift(self, c: int) -> "EventStream":
        """Delay every event by ``c`` steps (horizon grows by ``c``)."""
        return EventStream(self.horizon + c, self.universe_size,
                           _readonly(self.times + c), self.items, self.counts, self.regime)

    def item_counts(self, t1: int = 1, t2: int | None = None) -> np.ndarray:
        """Length-``U`` vector of occurrence totals over ``[t1, t2]``."""
        t2 = self.horizon if t2 is None else t2
        lo = np.searchsorted(self.times, t1, side="left")
        hi = np.searchsorted(self.times, t2, side="right")
        return np.bincount(self.items[lo:hi] - 1, weights=self.counts[lo:hi],
                           minlength=self.universe_size).astype(np.int64)


def validate_stream(stream: EventStream) -> str | None:
    """Return ``None`` if every stream invariant holds, else a description of the
    first violation (in ``(t, u)`` order)."""
    if stream.horizon < 1:
        return f"horizon must be positive, got {stream.horizon}"
    if stream.universe_size < 1:
        return f"universe size must be positive, got {stream.universe_size}"
    if stream.regime not in REGIMES:
        return f"unknown regime {stream.regime!r}"
    T, U = stream.horizon, stream.universe_size
    for t, u, c in zip(stream.times.tolist(), stream.items.tolist(), stream.counts.tolist()):
        if not 1 <= t <= T:
            return f"time step out of range at (t={t}, u={u})"
        if not 1 <= u <= U:
            return f"item out of range at (t={t}, u={u})"
        if c < 1:
            return f"non-positive count {c} at (t={t}, u={u})"
    if stream.regime == SINGLETON and stream.times.size:
        per_step = np.bincount(stream.times, weights=stream.counts)
        bad = np.flatnonzero(per_step > 1)
        if bad.size:
            t = int(bad[0])
            u = int(stream.items[np.searchsorted(stream.times, t)])
            return f"singleton violation at t={t}: {int(per_step[t])} events (first item u={u})"
    return None


def check_stream(stream: EventStream) -> EventStream:
    msg = validate_stream(stream)
    if msg is not None:
        raise StreamError(msg)
    return stream


@dataclass(frozen=True, eq=False)
class OccurrenceIndex:
    """Per-item occurrence times padded with ``k`` sentinels at ``0`` and ``T+1``."""

    k: int
    horizon: int
    lists: tuple[np.ndarray, ...]

    def __getitem__(self, u: int) -> np.ndarray:
        return self.lists[u - 1]

    def __len__(self) -> int:
        return len(self.lists)

    def lengths(self) -> np.ndarray:
        return np.array([len(a) for a in self.lists], dtype=np.int64)


def occurrences_by_item(stream: EventStream) -> list[np.ndarray]:
    """Unpadded sorted occurrence times (with multiplicity) for every item."""
    order = np.lexsort((stream.times, stream.items))
    items = stream.items[order]
    times = np.repeat(stream.times[order], stream.counts[order])
    owner = np.repeat(items, stream.counts[order])
    bounds = np.searchsorted(owner, np.arange(1, stream.universe_size + 2))
    return [times[bounds[u]:bounds[u + 1]] for u in range(stream.universe_size)]


def build_index(stream: EventStream, k: int) -> OccurrenceIndex:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    head = np.zeros(k, dtype=np.int64)
    tail = np.full(k, stream.horizon + 1, dtype=np.int64)
    lists = tuple(_readonly(np.concatenate([head, occ, tail]))
                  for occ in occurrences_by_item(stream))
    return OccurrenceIndex(k, stream.horizon, lists)


def kth_occurrence_times(stream: EventStream, k: int) -> np.ndarray:
    """Time of each item's ``k``-th (unpadded) occurrence; ``T+1`` if it never gets there."""
    out = np.full(stream.universe_size, stream.horizon + 1, dtype=np.int64)
    if not stream.times.size:
        return out
    order = np.lexsort((stream.times, stream.items))
    items, times, counts = stream.items[order], stream.times[order], stream.counts[order]
    csum = np.cumsum(counts)
    first = np.searchsorted(items, np.arange(1, stream.universe_size + 1))
    base = np.where(first > 0, csum[first - 1], 0)
    # first row where the running per-item total reaches k
    pos = np.searchsorted(csum, base + k, side="left")
    ok = pos < items.size
    ok[ok] &= items[pos[ok]] == np.arange(1, stream.universe_size + 1)[ok]
    out[ok] = times[pos[ok]]
    return out


def _check_window(stream: EventStream, t1: int, t2: int) -> None:
    if not 1 <= t1 <= t2 <= stream.horizon:
        raise StreamError(f"window [{t1}, {t2}] outside [1, {stream.horizon}]")


def exact_freq_at_least(stream: EventStream, k: int, t1: int, t2: int) -> int:
    """Number of items with at least ``k`` occurrences in steps ``t1..t2``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    _check_window(stream, t1, t2)
    totals: dict[int, int] = {}
    for t, u, c in zip(stream.times.tolist(), stream.items.tolist(), stream.counts.tolist()):
        if t1 <= t <= t2:
            totals[u] = totals.get(u, 0) + c
    return sum(1 for c in totals.values() if c >= k)


def exact_freq_equal(stream: EventStream, k: int, t1: int, t2: int) -> int:
    """Number of items with exactly ``k`` occurrences in steps ``t1..t2``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    _check_window(stream, t1, t2)
    totals: dict[int, int] = {}
    for t, u, c in zip(stream.times.tolist(), stream.items.tolist(), stream.counts.tolist()):
        if t1 <= t <= t2:
            totals[u] = totals.get(u, 0) + c
    return sum(1 for c in totals.values() if c == k)


def query_family(kind: str, horizon: int, window: int | None = None):
    """All ``(t1, t2)`` pairs of a query family, as two int arrays."""
    T = horizon
    if kind == CUMULATIVE:
        t2 = np.arange(1, T + 1, dtype=np.int64)
        return np.ones_like(t2), t2
    if kind == FIXED:
        if window is None or not 1 <= window <= T:
            raise StreamError(f"fixed-window queries need 1 <= W <= T, got W={window}")
        t1 = np.arange(1, T - window + 2, dtype=np.int64)
        return t1, t1 + window - 1
    if kind == TIME:
        t1, t2 = np.triu_indices(T)
        return t1.astype(np.int64) + 1, t2.astype(np.int64) + 1
    raise ValueError(f"unknown query kind {kind!r}")


def check_queries(kind: str, horizon: int, t1, t2, window: int | None = None):
    t1 = np.asarray(t1, dtype=np.int64)
    t2 = np.asarray(t2, dtype=np.int64)
    if t1.shape != t2.shape:
        raise StreamError("t1 and t2 must have equal shapes")
    if np.any(t1 < 1) or np.any(t2 > horizon) or np.any(t1 > t2):
        raise StreamError(f"query window outside [1, {horizon}] or inverted")
    if kind == CUMULATIVE and np.any(t1 != 1):
        raise StreamError("cumulative queries must start at t1 = 1")
    if kind == FIXED and np.any(t2 - t1 + 1 != window):
        raise StreamError(f"fixed-window queries must have length {window}")
    return t1, t2


def exact_table(stream: EventStream, k: int, t1, t2, *, equal: bool = False) -> np.ndarray:
    """Vectorised oracle for many windows at once.

    For each item and start ``t1`` we locate the time at which the item's
    ``k``-th occurrence at or after ``t1`` happens; the item is counted in
    ``[t1, t2]`` iff that time is ``<= t2``. ``equal=True`` gives Freq=k.
    """
    t1 = np.asarray(t1, dtype=np.int64)
    t2 = np.asarray(t2, dtype=np.int64)
    if equal:
        return exact_table(stream, k, t1, t2) - exact_table(stream, k + 1, t1, t2)
    out = np.zeros(t1.shape, dtype=np.int64)
    if t1.size == 0:
        return out
    starts = np.unique(t1)
    slot = np.searchsorted(starts, t1)
    for occ in occurrences_by_item(stream):
        if occ.size < k:
            continue
        idx = np.searchsorted(occ, starts, side="left") + k - 1
        reach = np.full(starts.shape, np.iinfo(np.int64).max)
        ok = idx < occ.size
        reach[ok] = occ[idx[ok]]
        out += t2 >= reach[slot]
    return out


def block_bounds(horizon: int, block_length: int) -> np.ndarray:
    """Start step of each compressed block plus a final ``T+1`` sentinel."""
    n = math.ceil(horizon / block_length)
    return np.append(np.arange(n) * block_length + 1, horizon + 1)


def compress_time(stream: EventStream, block_length: int) -> EventStream:
    """Sum disjoint consecutive blocks of ``block_length`` steps into single steps.

    Block ``i`` covers ``[T'(i-1)+1, min(T'i, T)]``; the result is a bundle
    stream of horizon ``ceil(T/T')``.
    """
    if block_length < 1:
        raise ValueError("block length must be >= 1")
    times = (stream.times - 1) // block_length + 1
    return EventStream.from_arrays(math.ceil(stream.horizon / block_length),
                                   stream.universe_size, times, stream.items,
                                   stream.counts, BUNDLE)


def map_compressed_query(t1, t2, horizon: int, block_length: int):
    """Map original windows onto compressed block ranges ``[b1, b2]``.

    The ceiling map ``[ceil(t1/T'), ceil(t2/T')]`` can overshoot by up to
    ``2(T'-1)`` steps. Instead each end snaps to the nearest block boundary,
    which keeps the symmetric difference with ``[t1, t2]`` at most ``T'``
    steps. A result with ``b1 > b2`` means the nearest block range is empty.
    """
    t1 = np.asarray(t1, dtype=np.int64)
    t2 = np.asarray(t2, dtype=np.int64)
    bounds = block_bounds(horizon, block_length)  # bounds[b-1] = first step of block b
    # start boundary: candidates are the starts of block ceil(t1/T') and the next one
    a = (t1 - 1) // block_length + 1
    lo_start, hi_start = bounds[a - 1], bounds[a]
    b1 = np.where(t1 - lo_start <= hi_start - t1, a, a + 1)
    # end boundary: candidates are the ends of block ceil(t2/T') and the previous one
    b = (t2 - 1) // block_length + 1
    hi_end = bounds[b] - 1
    lo_end = bounds[b - 1] - 1
    b2 = np.where(hi_end - t2 <= t2 - lo_end, b, b - 1)
    return b1, b2


# --- stream files -----------------------------------------------------------

def _sidecar_for(csv_path: Path) -> Path:
    return csv_path.with_suffix(".json")


def write_stream(stream: EventStream, csv_path, sidecar_path=None) -> tuple[Path, Path]:
    csv_path = Path(csv_path)
    sidecar_path = Path(sidecar_path) if sidecar_path else _sidecar_for(csv_path)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "item", "count"])
        for row in zip(stream.times.tolist(), stream.items.tolist(), stream.counts.tolist()):
            w.writerow(row)
    meta = {"T": stream.horizon, "U": stream.universe_size, "regime": stream.regime}
    sidecar_path.write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")
    return csv_path, sidecar_path


def read_stream(csv_path, sidecar_path=None) -> EventStream:
    csv_path = Path(csv_path)
    sidecar_path = Path(sidecar_path) if sidecar_path else _sidecar_for(csv_path)
    try:
        meta = json.loads(sidecar_path.read_text(encoding="utf-8"))
        horizon, universe, regime = int(meta["T"]), int(meta["U"]), meta.get("regime", BUNDLE)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise StreamError(f"bad sidecar {sidecar_path}: {exc}") from exc
    ts, us, cs = [], [], []
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["t", "item", "count"]:
            raise StreamError(f"{csv_path}: expected header t,item,count, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                t, u, c = (int(x) for x in row)
            except ValueError as exc:
                raise StreamError(f"{csv_path}:{lineno}: {exc}") from exc
            if c < 1:
                raise StreamError(f"{csv_path}:{lineno}: count must be positive")
            ts.append(t)
            us.append(u)
            cs.append(c)
    stream = EventStream.from_arrays(horizon, universe, ts, us, cs, regime)
    return check_stream(stream)
