"""Stream generators, hard-instance embeddings and the error-measurement harness."""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import core, privacy
from .core import BUNDLE, SINGLETON, EventStream
from .estimators import EstimatorConfig, estimate

UNIFORM = "uniform"
ZIPF = "zipf"
BURSTY = "bursty"
HARD_RANGE = "hard-range-embedding"
HARD_MARGINAL = "hard-marginal-embedding"
GENERATOR_KINDS = (UNIFORM, ZIPF, BURSTY, HARD_RANGE, HARD_MARGINAL)

BETA = 0.1


class GeneratorError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorSpec:
    """Parameters of a synthetic stream.

    ``rate`` is the mean number of events per step (bundle) or the probability
    of an event at each step (singleton). ``points`` feeds the range embedding,
    ``vectors`` the marginal embedding.
    """

    kind: str = UNIFORM
    T: int = 100
    U: int = 10
    k: int = 1
    regime: str = BUNDLE
    rate: float = 1.0
    zipf_exponent: float = 1.0
    burst_length: int = 4
    window: int | None = None
    points: tuple[int, ...] | None = None
    vectors: tuple[tuple[int, ...], ...] | None = None
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise GeneratorError(f"unknown generator fields: {sorted(unknown)}")
        d = dict(d)
        if d.get("points") is not None:
            d["points"] = tuple(int(p) for p in d["points"])
        if d.get("vectors") is not None:
            d["vectors"] = tuple(tuple(int(b) for b in v) for v in d["vectors"])
        return cls(**d)

    def as_dict(self) -> dict:
        return asdict(self)


def _item_weights(spec: GeneratorSpec) -> np.ndarray:
    if spec.kind == ZIPF:
        w = np.arange(1, spec.U + 1, dtype=np.float64) ** -spec.zipf_exponent
    else:
        w = np.ones(spec.U)
    return w / w.sum()


def generate(spec: GeneratorSpec) -> EventStream:
    if spec.kind == HARD_RANGE:
        return generate_hard_range(spec.points or (), spec.k, T=spec.T)
    if spec.kind == HARD_MARGINAL:
        if spec.window is None:
            raise GeneratorError("hard-marginal-embedding needs a window")
        return generate_hard_marginal(spec.vectors or (), spec.window, spec.k, T=spec.T)
    if spec.kind not in GENERATOR_KINDS:
        raise GeneratorError(f"unknown generator kind {spec.kind!r}")
    if spec.T < 1 or spec.U < 1:
        raise GeneratorError("T and U must be positive")
    if spec.rate < 0:
        raise GeneratorError("rate must be non-negative")
    if spec.regime == SINGLETON and spec.rate > 1:
        raise GeneratorError(
            f"singleton streams carry at most one event per step; rate {spec.rate} > 1")
    rng = privacy.make_rng(spec.seed)
    weights = _item_weights(spec)
    T = spec.T
    if spec.kind == BURSTY:
        times, items = _bursts(spec, rng, weights)
    elif spec.regime == SINGLETON:
        times = np.flatnonzero(rng.random(T) < spec.rate) + 1
        items = rng.choice(spec.U, size=times.size, p=weights) + 1
    else:
        per_step = rng.poisson(spec.rate, size=T)
        times = np.repeat(np.arange(1, T + 1), per_step)
        items = rng.choice(spec.U, size=times.size, p=weights) + 1
    stream = EventStream.from_arrays(T, spec.U, times, items, np.ones(times.size), spec.regime)
    return core.check_stream(stream)


def _bursts(spec: GeneratorSpec, rng, weights):
    """Bursts start at rate ``rate / burst_length``; a burst repeats one item each step."""
    L = max(1, spec.burst_length)
    starts = np.flatnonzero(rng.random(spec.T) < min(1.0, spec.rate / L)) + 1
    if spec.regime == SINGLETON:
        # non-overlapping bursts keep one event per step
        kept, free = [], 1
        for s in starts.tolist():
            if s >= free:
                kept.append(s)
                free = s + L
        starts = np.array(kept, dtype=np.int64)
    owners = rng.choice(spec.U, size=starts.size, p=weights) + 1
    times = (starts[:, None] + np.arange(L)[None, :]).ravel()
    items = np.repeat(owners, L)
    keep = times <= spec.T
    return times[keep], items[keep]


def generate_hard_range(points: Sequence[int], k: int, T: int | None = None) -> EventStream:
    """Embed a 1d point set so that cumulative Freq>=k at ``t`` counts points ``<= t``.

    Item ``j`` starts with ``k - 1`` copies at step 1 and gains one more at
    step ``points[j]``.
    """
    pts = np.asarray(points, dtype=np.int64)
    if k < 1:
        raise GeneratorError("k must be >= 1")
    if pts.size and pts.min() < 1:
        raise GeneratorError("points must lie in [1, M]")
    T = int(pts.max()) if T is None and pts.size else (T or 1)
    if pts.size and pts.max() > T:
        raise GeneratorError(f"point {int(pts.max())} beyond horizon {T}")
    n = pts.size
    U = max(n, 1)
    times = np.concatenate([np.ones(U, dtype=np.int64), pts])
    items = np.concatenate([np.arange(1, U + 1), np.arange(1, n + 1)])
    counts = np.concatenate([np.full(U, k - 1), np.ones(n, dtype=np.int64)])
    return core.check_stream(EventStream.from_arrays(T, U, times, items, counts, BUNDLE))


def generate_hard_marginal(vectors, window: int, k: int, T: int | None = None) -> EventStream:
    """Embed bit vectors so fixed-window Freq>=k on block ``l`` is the ``l``-th marginal.

    Item ``j`` gets ``k * x^j_l`` copies at step ``W(l-1)+1``.
    """
    try:
        X = np.asarray(vectors, dtype=np.int64)
    except ValueError as exc:
        raise GeneratorError("vectors must all have the same dimension") from exc
    if X.ndim == 1 and X.size == 0:
        raise GeneratorError("need at least one vector")
    if X.ndim != 2:
        raise GeneratorError("vectors must all have the same dimension")
    if not np.isin(X, (0, 1)).all():
        raise GeneratorError("vectors must be 0/1")
    n, d = X.shape
    T = window * d if T is None else T
    if T < window * d:
        raise GeneratorError(f"horizon {T} shorter than W*d = {window * d}")
    j, ell = np.nonzero(X)
    times = window * ell + 1
    stream = EventStream.from_arrays(T, n, times, j + 1, np.full(j.size, k), BUNDLE)
    return core.check_stream(stream)


# --- harness -----------------------------------------------------------------------------

@dataclass
class ErrorReport:
    """Per-query errors over all trials plus summary statistics.

    Rows are stored column-wise; ``trial[r]`` identifies the run of row ``r``.
    """

    kind: str
    k: int
    trial: np.ndarray
    t1: np.ndarray
    t2: np.ndarray
    estimate: np.ndarray
    exact: np.ndarray
    trials: int
    wall_time: float
    config: dict = field(default_factory=dict)
    budgets: list = field(default_factory=list)

    @property
    def abs_error(self) -> np.ndarray:
        return np.abs(self.estimate - self.exact)

    def summary(self, beta: float = BETA) -> dict:
        return summarize(self.trial, self.abs_error, self.trials, beta) | {
            "trials": self.trials, "wall_time": self.wall_time}

    def write_rows(self, path) -> None:
        write_rows(path, self.kind, self.k, self.t1, self.t2, self.estimate, self.exact)


def summarize(trial: np.ndarray, abs_error: np.ndarray, trials: int, beta: float = BETA) -> dict:
    """Summary statistics recomputed from per-query rows.

    ``alpha`` is the largest per-query ``(1 - beta)``-quantile of ``|error|``
    across trials: the smallest alpha for which every query met the empirical
    ``(alpha, beta)`` utility bound. ``alpha_pooled`` pools all rows instead.
    """
    if abs_error.size == 0:
        return {"n_queries": 0, "max_error": 0.0, "mean_error": 0.0,
                "mean_max_error": 0.0, "alpha": 0.0, "alpha_pooled": 0.0, "beta": beta}
    per_trial = abs_error.reshape(trials, -1)
    return {
        "n_queries": per_trial.shape[1],
        "max_error": float(abs_error.max()),
        "mean_error": float(abs_error.mean()),
        "mean_max_error": float(per_trial.max(axis=1).mean()),
        "alpha": float(np.quantile(per_trial, 1 - beta, axis=0).max()),
        "alpha_pooled": float(np.quantile(abs_error, 1 - beta)),
        "beta": beta,
    }


def sample_queries(config: EstimatorConfig, horizon: int, max_queries: int | None, seed: int):
    """The configured query family, or a seeded uniform subset of ``max_queries`` of it."""
    t1, t2 = core.query_family(config.query, horizon, config.window)
    if max_queries is None or t1.size <= max_queries:
        return t1, t2
    pick = np.sort(privacy.make_rng(seed).choice(t1.size, size=max_queries, replace=False))
    return t1[pick], t2[pick]


def run_experiment(stream: EventStream, config: EstimatorConfig, trials: int = 1,
                   max_queries: int | None = None) -> ErrorReport:
    """Run ``trials`` independent estimator invocations and compare with the oracle.

    Trial ``i`` uses seed ``derive_seed(config.seed, i)``. When ``max_queries``
    is set, a fixed random subset of that many windows is evaluated in every
    trial.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if config.regime == SINGLETON and stream.regime != SINGLETON:
        raise ValueError("singleton configuration on a bundle stream")
    core.check_stream(stream)
    t1, t2 = sample_queries(config, stream.horizon, max_queries,
                            privacy.derive_seed(config.seed, 1 << 32))
    exact = core.exact_table(stream, config.k, t1, t2, equal=config.exact_k).astype(np.float64)
    start = time.perf_counter()
    estimates, budgets = [], []
    for i in range(trials):
        rng = privacy.make_rng(privacy.derive_seed(config.seed, i))
        table = estimate(stream, config, rng, queries=(t1, t2))
        estimates.append(table.values)
        budgets = table.budgets
    wall = time.perf_counter() - start
    n = t1.size
    return ErrorReport(
        kind=config.query, k=config.k,
        trial=np.repeat(np.arange(trials), n),
        t1=np.tile(t1, trials), t2=np.tile(t2, trials),
        estimate=np.concatenate(estimates), exact=np.tile(exact, trials),
        trials=trials, wall_time=wall, config=config.as_dict(), budgets=budgets)


def coarse_log_ratio(a: np.ndarray, b: np.ndarray, bins: int = 8) -> float:
    """Largest ``|log(p / p')|`` over equal-mass bins of the pooled samples.

    A coarse empirical check of the DP inequality for two output samples drawn
    on neighbouring inputs; bins without mass on either side are reported as
    ``inf``.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    edges = np.quantile(np.concatenate([a, b]), np.linspace(0, 1, bins + 1)[1:-1])
    pa = np.bincount(np.searchsorted(edges, a), minlength=bins) / a.size
    pb = np.bincount(np.searchsorted(edges, b), minlength=bins) / b.size
    used = (pa > 0) | (pb > 0)  # tied edges can leave a bin empty on both sides
    with np.errstate(divide="ignore"):
        return float(np.max(np.abs(np.log(pa[used]) - np.log(pb[used]))))


ROW_HEADER = ["query_kind", "t1", "t2", "k", "estimate", "exact", "abs_error"]
SWEEP_AXES = ("T", "W", "k", "epsilon")


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def write_rows(path, kind, k, t1, t2, estimates, exact=None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROW_HEADER)
        for n in range(len(t1)):
            e = float(estimates[n])
            x = None if exact is None else float(exact[n])
            w.writerow([kind, int(t1[n]), int(t2[n]), k, _fmt(e), _fmt(x),
                        "" if x is None else _fmt(abs(e - x))])


def sweep(axis: str, values: Sequence, base_config: EstimatorConfig,
          generator: GeneratorSpec, trials: int = 1, max_queries: int | None = None) -> list[dict]:
    """One summary row per swept value; the stream is regenerated when ``T`` or ``k`` moves."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}")
    if list(values) != sorted(values):
        raise ValueError("sweep values must be sorted ascending")
    rows = []
    for v in values:
        cfg, gen = base_config, generator
        if axis == "T":
            gen = replace(generator, T=int(v))
        elif axis == "W":
            cfg = replace(base_config, window=int(v))
        elif axis == "k":
            cfg = replace(base_config, k=int(v))
            gen = replace(generator, k=int(v))
        else:
            cfg = replace(base_config, epsilon=float(v))
        report = run_experiment(generate(gen), cfg, trials, max_queries)
        rows.append({"axis": axis, "value": v, **report.summary()})
    return rows


SUMMARY_HEADER = ["axis", "value", "trials", "n_queries", "max_error", "mean_error",
                  "mean_max_error", "alpha", "alpha_pooled", "beta"]


def write_summary(path, rows: list[dict]) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for r in rows:
            w.writerow([r["axis"], r["value"], r["trials"], r["n_queries"]]
                       + [repr(float(r[c])) for c in SUMMARY_HEADER[4:]])
