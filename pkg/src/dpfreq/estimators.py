"""Private Freq>=k estimators built by reduction to range counting.

Every estimator returns an :class:`EstimateTable` over its query family (or a
caller-chosen subset of it). With ``noise="none"`` each one is an exact
combinatorial algorithm, which is how the reductions are tested.

Randomness: each estimator draws one base seed from the caller's generator and
derives per-subinstance generators from it by counter, so answering a subset of
queries gives exactly the entries of the full table.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np

from . import core, privacy, rangequery
from .core import CUMULATIVE, FIXED, TIME, EventStream
from .privacy import GAUSSIAN, LAPLACE, NONE, PrivacyBudget, SeededRng

EVENT = "event"
ITEM = "item"
LEVELS = (EVENT, ITEM)
BASIC = "basic"
ADVANCED = "advanced"
COMPOSITIONS = (BASIC, ADVANCED)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EstimatorConfig:
    query: str = CUMULATIVE
    k: int = 1
    window: int | None = None
    level: str = EVENT
    regime: str = core.BUNDLE
    epsilon: float = 1.0
    delta: float = 0.0
    composition: str = BASIC
    noise: str = LAPLACE
    seed: int = 0
    exact_k: bool = False
    block_length: int | None = None

    def __post_init__(self):
        if self.query not in core.QUERY_KINDS:
            raise ConfigError(f"unknown query kind {self.query!r}")
        if self.level not in LEVELS:
            raise ConfigError(f"unknown DP level {self.level!r}")
        if self.regime not in core.REGIMES:
            raise ConfigError(f"unknown regime {self.regime!r}")
        if self.composition not in COMPOSITIONS:
            raise ConfigError(f"unknown composition {self.composition!r}")
        if self.noise not in privacy.NOISE_KINDS:
            raise ConfigError(f"unknown noise kind {self.noise!r}")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.query == FIXED and (self.window is None or self.window < 1):
            raise ConfigError("fixed-window queries need a window length >= 1")
        if self.noise == GAUSSIAN and self.delta <= 0:
            raise ConfigError("gaussian noise requires delta > 0")
        if self.level == ITEM and self.composition == ADVANCED and self.delta <= 0:
            raise ConfigError("advanced composition requires delta > 0")
        if self.block_length is not None and self.block_length < 1:
            raise ConfigError("block length must be >= 1")
        if self.regime == core.SINGLETON and self.query == FIXED:
            raise ConfigError("the singleton wrapper does not support fixed-window queries")
        PrivacyBudget(self.epsilon, self.delta)

    @property
    def budget(self) -> PrivacyBudget:
        return PrivacyBudget(self.epsilon, self.delta)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class EstimateTable:
    kind: str
    k: int
    t1: np.ndarray
    t2: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.values.size)

    @cached_property
    def _index(self) -> dict[tuple[int, int], int]:
        return {(a, b): n for n, (a, b) in enumerate(zip(self.t1.tolist(), self.t2.tolist()))}

    def __getitem__(self, window: tuple[int, int]) -> float:
        return float(self.values[self._index[tuple(window)]])

    def __contains__(self, window) -> bool:
        return tuple(window) in self._index

    def as_dict(self) -> dict[tuple[int, int], float]:
        return dict(zip(zip(self.t1.tolist(), self.t2.tolist()), self.values.tolist()))

    @property
    def budgets(self) -> list[dict]:
        return self.meta.get("budgets", [])


def _ledger(name: str, count: int, nominal, used: PrivacyBudget) -> dict:
    """One budget-ledger row; ``nominal`` is the closed-form split, ``used`` the applied one."""
    if isinstance(nominal, PrivacyBudget):
        nominal = nominal.as_dict()
    elif nominal is not None:
        nominal = {"epsilon": float(nominal[0]), "delta": float(nominal[1])}
    return {"instance": name, "count": count, "nominal": nominal, "used": used.as_dict()}


def _table(kind, k, t1, t2, values, budgets, **extra) -> EstimateTable:
    for a in (t1, t2, values):
        a.setflags(write=False)
    meta = {"budgets": budgets, **extra}
    return EstimateTable(kind, k, t1, t2, values, meta)


def _queries(kind, stream, queries, window=None):
    if queries is None:
        return core.query_family(kind, stream.horizon, window)
    return core.check_queries(kind, stream.horizon, queries[0], queries[1], window)


def _base_seed(rng: SeededRng) -> int:
    return int(rng.integers(0, 1 << 63))


def _child(base: int, *path: int) -> SeededRng:
    return privacy.make_rng(privacy.derive_seed(base, *path))


# --- point sets ------------------------------------------------------------------

def cumulative_points(stream: EventStream, k: int) -> np.ndarray:
    """One point per item at its ``k``-th occurrence; items short of ``k`` give none."""
    kth = core.kth_occurrence_times(stream, k)
    return kth[kth <= stream.horizon]


def fixed_window_points(stream: EventStream, k: int, window: int):
    """The two 1d multisets ``(x, x')`` of the fixed-window reduction."""
    index = core.build_index(stream, k)
    xs, xps = [], []
    for t in index.lists:
        m = t.size
        lo, hi, nxt = t[: m - k], t[k:], t[1 : m - k + 1]
        gap = hi - lo > window
        xs.append(lo[gap])
        xps.append(np.minimum(nxt, hi - window)[gap])
    return np.concatenate(xs), np.concatenate(xps)


def time_window_points(stream: EventStream, k: int):
    """The two 2d multisets ``(x, x')`` of the time-window reduction, shape ``(n, 2)``."""
    index = core.build_index(stream, k)
    M = stream.horizon + 1
    xs, xps = [], []
    for t in index.lists:
        m = t.size
        lo, hi, nxt = t[: m - k], t[k:], t[1 : m - k + 1]
        xs.append(np.stack([lo + 1, hi - 1], axis=1))
        # t^{l+1} may be the T+1 sentinel; clamping T+2 to M changes no query with i <= T
        xps.append(np.stack([np.minimum(nxt + 1, M), hi - 1], axis=1))
    return np.concatenate(xs), np.concatenate(xps)


# --- cumulative ----------------------------------------------------------------------

def _cumulative_tree(stream, k, budget, noise, rng):
    return rangequery.build_1d(cumulative_points(stream, k), stream.horizon + 1,
                               budget, noise, rng)


def cumulative(stream: EventStream, k: int, budget: PrivacyBudget, noise: str,
               rng: SeededRng, queries=None) -> EstimateTable:
    t1, t2 = _queries(CUMULATIVE, stream, queries)
    tree = _cumulative_tree(stream, k, budget, noise, rng)
    values = tree.query_ranges(np.zeros_like(t2), t2)
    return _table(CUMULATIVE, k, t1, t2, values,
                  [_ledger("cumulative 1d tree", 1, budget, budget)])


# --- fixed window --------------------------------------------------------------------

def _core_tree_budget(budget: PrivacyBudget, k: int) -> PrivacyBudget:
    # two trees (basic composition), each item moves at most 2k points per tree
    return privacy.group_invert(privacy.basic_split(budget, 2), 2 * k)


def _core_nominal(budget: PrivacyBudget, k: int):
    return budget.epsilon / (4 * k), budget.delta / (8 * k)


def _core_answer(stream, k, window, budget, noise, rng, starts):
    """Fixed-window answers on a horizon <= 2W stream for windows starting at ``starts``."""
    x, xp = fixed_window_points(stream, k, window)
    tb = _core_tree_budget(budget, k)
    M = stream.horizon + 1
    tx = rangequery.build_1d(x, M, tb, noise, rng)
    txp = rangequery.build_1d(xp, M, tb, noise, rng)
    lo = np.zeros_like(starts)
    # points strictly before the window start: prefix [0, i-1]
    return (stream.universe_size - tx.query_ranges(lo, starts - 1)
            + txp.query_ranges(lo, starts - 1))


def fixed_window_core(stream: EventStream, k: int, window: int, budget: PrivacyBudget,
                      noise: str, rng: SeededRng, queries=None) -> EstimateTable:
    if stream.horizon > 2 * window:
        raise ConfigError(f"fixed_window_core needs T <= 2W, got T={stream.horizon}, W={window}")
    t1, t2 = _queries(FIXED, stream, queries, window)
    values = _core_answer(stream, k, window, budget, noise, rng, t1)
    tb = _core_tree_budget(budget, k)
    return _table(FIXED, k, t1, t2, values,
                  [_ledger("fixed-window 1d tree (x, x')", 2, _core_nominal(budget, k), tb)])


def tile_count(horizon: int, window: int) -> int:
    """Tiles of length <= 2W needed so every window of length W sits inside one tile."""
    return max(1, math.ceil(horizon / window) - 1)


def tile_of(starts, window: int, n_tiles: int) -> np.ndarray:
    return np.minimum((np.asarray(starts) - 1) // window + 1, n_tiles)


def tile_range(j: int, horizon: int, window: int) -> tuple[int, int]:
    return (j - 1) * window + 1, min((j + 1) * window, horizon)


def _tiled(stream, k, window, tile_budget, noise, rng, t1):
    n = tile_count(stream.horizon, window)
    tiles = tile_of(t1, window, n)
    base = _base_seed(rng)
    values = np.empty(t1.size)
    for j in np.unique(tiles).tolist():
        lo, hi = tile_range(j, stream.horizon, window)
        sel = tiles == j
        sub = stream.restrict(lo, hi)
        values[sel] = _core_answer(sub, k, window, tile_budget, noise, _child(base, j),
                                   t1[sel] - (lo - 1))
    return values, n


def fixed_window_event(stream: EventStream, k: int, window: int, budget: PrivacyBudget,
                       noise: str, rng: SeededRng, queries=None) -> EstimateTable:
    if not 1 <= window <= stream.horizon:
        raise ConfigError(f"need 1 <= W <= T, got W={window}, T={stream.horizon}")
    t1, t2 = _queries(FIXED, stream, queries, window)
    # odd tiles and even tiles are each disjoint (parallel composition); two classes
    tile_budget = privacy.basic_split(budget, 2)
    values, n = _tiled(stream, k, window, tile_budget, noise, rng, t1)
    tb = _core_tree_budget(tile_budget, k)
    return _table(FIXED, k, t1, t2, values, [
        _ledger("fixed-window tile", n, tile_budget, tile_budget),
        _ledger("fixed-window 1d tree (x, x') per tile", 2 * n,
                _core_nominal(tile_budget, k), tb)], tiles=n)


def _split(budget: PrivacyBudget, m: int, composition: str) -> PrivacyBudget:
    if composition == BASIC:
        return privacy.basic_split(budget, m)
    if composition == ADVANCED:
        return privacy.advanced_split(budget, m)
    raise ConfigError(f"unknown composition {composition!r}")


def fixed_window_item(stream: EventStream, k: int, window: int, budget: PrivacyBudget,
                      composition: str, noise: str, rng: SeededRng,
                      queries=None) -> EstimateTable:
    if not 1 <= window <= stream.horizon:
        raise ConfigError(f"need 1 <= W <= T, got W={window}, T={stream.horizon}")
    t1, t2 = _queries(FIXED, stream, queries, window)
    n = tile_count(stream.horizon, window)
    tile_budget = _split(budget, n, composition)
    ratio = stream.horizon / window
    if composition == BASIC:
        nominal = budget.epsilon / (2 * ratio), budget.delta / (2 * ratio)
    else:
        nominal = (budget.epsilon / (2 * math.sqrt(4 * ratio * math.log(2 / budget.delta))),
                   budget.delta / (4 * ratio))
    values, _ = _tiled(stream, k, window, tile_budget, noise, rng, t1)
    tb = _core_tree_budget(tile_budget, k)
    return _table(FIXED, k, t1, t2, values, [
        _ledger(f"fixed-window tile ({composition} composition)", n, nominal, tile_budget),
        _ledger("fixed-window 1d tree (x, x') per tile", 2 * n,
                _core_nominal(tile_budget, k), tb)], tiles=n)


# --- time window ---------------------------------------------------------------------

def _grid_worthwhile(n_queries: int, horizon: int) -> bool:
    return n_queries * 8 >= horizon * horizon


def time_window_event(stream: EventStream, k: int, budget: PrivacyBudget, noise: str,
                      rng: SeededRng, queries=None) -> EstimateTable:
    t1, t2 = _queries(TIME, stream, queries)
    T, M = stream.horizon, stream.horizon + 1
    x, xp = time_window_points(stream, k)
    tb = privacy.group_invert(privacy.basic_split(budget, 2), 2 * k + 1)
    tx = rangequery.build_2d(x, M, tb, noise, rng)
    txp = rangequery.build_2d(xp, M, tb, noise, rng)
    if _grid_worthwhile(t1.size, T):
        steps = np.arange(1, T + 1)
        diff = txp.dominance_grid(steps, steps) - tx.dominance_grid(steps, steps)
        values = stream.universe_size + diff[t1 - 1, t2 - 1]
    else:
        zeros, tops = np.zeros_like(t1), np.full_like(t1, M)
        values = (stream.universe_size - tx.query_boxes(zeros, t1, t2, tops)
                  + txp.query_boxes(zeros, t1, t2, tops))
    nominal = (budget.epsilon / (2 * (2 * k + 1)),
               budget.delta / (4 * budget.epsilon * (2 * k + 1)))
    return _table(TIME, k, t1, t2, values,
                  [_ledger("time-window 2d tree (x, x')", 2, nominal, tb)])


def time_window_item(stream: EventStream, k: int, budget: PrivacyBudget, composition: str,
                     noise: str, rng: SeededRng, queries=None) -> EstimateTable:
    t1, t2 = _queries(TIME, stream, queries)
    T = stream.horizon
    run_budget = _split(budget, T, composition)
    base = _base_seed(rng)
    values = np.empty(t1.size)
    order = np.argsort(t1, kind="stable")
    starts, first = np.unique(t1[order], return_index=True)
    bounds = np.append(first, t1.size)
    kth = _kth_from(stream, k, starts)
    for r, (s, lo, hi) in enumerate(zip(starts.tolist(), bounds[:-1].tolist(),
                                         bounds[1:].tolist())):
        sel = order[lo:hi]
        # cumulative run on the suffix stream S^s..S^T, re-indexed from 1
        pts = kth[r][kth[r] <= T] - (s - 1)
        tree = rangequery.build_1d(pts, T - s + 2, run_budget, noise, _child(base, s))
        ends = t2[sel] - s + 1
        values[sel] = tree.query_ranges(np.zeros_like(ends), ends)
    return _table(TIME, k, t1, t2, values,
                  [_ledger(f"cumulative run per start ({composition} composition)", T,
                           run_budget, run_budget)], runs=T)


def _kth_from(stream: EventStream, k: int, starts: np.ndarray) -> np.ndarray:
    """``out[r, u]``: time of item ``u``'s ``k``-th occurrence at or after ``starts[r]``
    (``T+1`` if none); row ``r`` equals the cumulative points of the suffix stream."""
    out = np.full((starts.size, stream.universe_size), stream.horizon + 1, dtype=np.int64)
    for u, occ in enumerate(core.occurrences_by_item(stream)):
        if occ.size < k:
            continue
        idx = np.searchsorted(occ, starts, side="left") + k - 1
        ok = idx < occ.size
        out[ok, u] = occ[idx[ok]]
    return out


# --- wrappers ----------------------------------------------------------------------------

def default_block_length(horizon: int, budget: PrivacyBudget) -> int:
    """Block length balancing compression error against composition cost."""
    if budget.pure:
        target = math.sqrt(horizon / budget.epsilon)
    else:
        target = (horizon / budget.epsilon**2) ** (1.0 / 3.0)
    return max(1, math.ceil(target - 1e-9))


def _bundle_estimator(stream, kind, level, k, window, budget, composition, noise, rng, queries):
    if kind == CUMULATIVE:
        return cumulative(stream, k, budget, noise, rng, queries)
    if kind == FIXED:
        if level == EVENT:
            return fixed_window_event(stream, k, window, budget, noise, rng, queries)
        return fixed_window_item(stream, k, window, budget, composition, noise, rng, queries)
    if kind == TIME:
        if level == EVENT:
            return time_window_event(stream, k, budget, noise, rng, queries)
        return time_window_item(stream, k, budget, composition, noise, rng, queries)
    raise ConfigError(f"unknown query kind {kind!r}")


def singleton_wrapper(stream: EventStream, kind: str, k: int, budget: PrivacyBudget,
                      noise: str, rng: SeededRng, *, level: str = ITEM,
                      composition: str = BASIC, block_length: int | None = None,
                      queries=None) -> EstimateTable:
    """Answer a singleton stream by running a bundle estimator on compressed time."""
    if stream.regime != core.SINGLETON:
        raise ConfigError("the singleton wrapper needs a singleton-regime stream")
    core.check_stream(stream)
    if kind == FIXED:
        raise ConfigError("compressed fixed windows are not of fixed length")
    t1, t2 = _queries(kind, stream, queries)
    T = stream.horizon
    block = default_block_length(T, budget) if block_length is None else block_length
    compressed = core.compress_time(stream, block)
    b1, b2 = core.map_compressed_query(t1, t2, T, block)
    live = b1 <= b2
    values = np.zeros(t1.size)
    inner = None
    if live.any():
        pairs = sorted(set(zip(b1[live].tolist(), b2[live].tolist())))
        qa = np.array([p[0] for p in pairs], dtype=np.int64)
        qb = np.array([p[1] for p in pairs], dtype=np.int64)
        inner = _bundle_estimator(compressed, kind, level, k, None, budget, composition,
                                  noise, rng, (qa, qb))
        lookup = inner._index
        values[live] = inner.values[[lookup[p] for p in zip(b1[live].tolist(), b2[live].tolist())]]
    budgets = [] if inner is None else inner.budgets
    return _table(kind, k, t1, t2, values, budgets, block_length=block,
                  compressed_horizon=compressed.horizon)


def freq_exact(stream: EventStream, config: EstimatorConfig, rng: SeededRng,
               queries=None) -> EstimateTable:
    """Freq=k as the difference of Freq>=k and Freq>=k+1, each at half the budget."""
    half = privacy.basic_split(config.budget, 2)
    base = _base_seed(rng)
    sub = dict(epsilon=half.epsilon, delta=half.delta, exact_k=False)
    at_k = estimate(stream, _replace(config, **sub), _child(base, 0), queries)
    above = estimate(stream, _replace(config, k=config.k + 1, **sub), _child(base, 1), queries)
    budgets = ([dict(b, instance=f"Freq>=k: {b['instance']}") for b in at_k.budgets]
               + [dict(b, instance=f"Freq>=k+1: {b['instance']}") for b in above.budgets])
    budgets.insert(0, _ledger("Freq=k half (x2)", 2, half, half))
    return _table(at_k.kind, config.k, at_k.t1.copy(), at_k.t2.copy(),
                  at_k.values - above.values, budgets)


def _replace(config: EstimatorConfig, **changes) -> EstimatorConfig:
    return EstimatorConfig(**{**config.as_dict(), **changes})


def estimate(stream: EventStream, config: EstimatorConfig, rng: SeededRng | None = None,
             queries=None) -> EstimateTable:
    """Run the estimator selected by ``config``.

    ``queries`` optionally restricts the answered windows to ``(t1, t2)`` arrays
    drawn from the configured family.
    """
    core.check_stream(stream)
    rng = privacy.make_rng(config.seed) if rng is None else rng
    if config.exact_k:
        table = freq_exact(stream, config, rng, queries)
    elif config.regime == core.SINGLETON:
        table = singleton_wrapper(stream, config.query, config.k, config.budget, config.noise,
                                  rng, level=config.level, composition=config.composition,
                                  block_length=config.block_length, queries=queries)
    else:
        table = _bundle_estimator(stream, config.query, config.level, config.k, config.window,
                                  config.budget, config.composition, config.noise, rng, queries)
    table.meta.setdefault("config", config.as_dict())
    return table
