"""Shared helpers for the test-suite."""

import numpy as np

from dpfreq.core import BUNDLE, SINGLETON, EventStream

# lines recorded by the acceptance module, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def random_stream(rng: np.random.Generator, T: int, U: int, regime: str = BUNDLE,
                  density: float | None = None, max_count: int = 3) -> EventStream:
    """Small random stream; singleton streams get at most one event per step."""
    density = rng.uniform(0.05, 0.9) if density is None else density
    if regime == SINGLETON:
        times = np.flatnonzero(rng.random(T) < density) + 1
        items = rng.integers(1, U + 1, size=times.size)
        return EventStream.from_arrays(T, U, times, items, np.ones(times.size, int), SINGLETON)
    mask = rng.random((T, U)) < density / 2
    t, u = np.nonzero(mask)
    counts = rng.integers(1, max_count + 1, size=t.size)
    return EventStream.from_arrays(T, U, t + 1, u + 1, counts, BUNDLE)


def brute_force(stream: EventStream, k: int, t1: int, t2: int, equal: bool = False) -> int:
    """Per-item window sums from the raw entries; independent of every library helper."""
    totals = {}
    for t, u, c in zip(stream.times.tolist(), stream.items.tolist(), stream.counts.tolist()):
        if t1 <= t <= t2:
            totals[u] = totals.get(u, 0) + c
    if equal:
        return sum(1 for v in totals.values() if v == k)
    return sum(1 for v in totals.values() if v >= k)
