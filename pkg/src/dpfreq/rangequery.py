"""Private orthogonal range counts over ``{0, ..., M}`` and ``{0, ..., M}^2``.

The 1d structure is a complete binary tree over the domain padded to
``P = 2**L`` leaves, ``L = ceil(log2(M + 1))``; every node holds its true count
plus one noise draw. The 2d structure is the product hierarchy: a node is a pair
of 1d nodes, one per coordinate. Nodes use heap numbering (root 1, leaf ``c`` at
``P + c``); a 2d node ``(h1, h2)`` has id ``h1 * 2P + h2``.

Node noise is keyed (see :func:`dpfreq.privacy.keyed_noise`), so trees are
immutable and only the nodes a query touches are ever evaluated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse

from . import privacy
from .privacy import GAUSSIAN, LAPLACE, NONE, PrivacyBudget, SeededRng

_GRID_LIMIT = 1 << 25
_CHUNK = 1 << 22


class RangeQueryError(ValueError):
    pass


def depth_for(M: int) -> int:
    return max(0, math.ceil(math.log2(M + 1)))


@dataclass(frozen=True, eq=False)
class NoisyRangeTree:
    dim: int
    M: int
    depth: int
    noise: str
    scale: float
    budget: PrivacyBudget
    key: int
    xs: np.ndarray  # first coordinates (1d: the points)
    ys: np.ndarray | None = None

    @property
    def size(self) -> int:
        """Number of padded leaves per coordinate."""
        return 1 << self.depth

    @property
    def levels(self) -> int:
        return self.depth + 1

    @property
    def n_points(self) -> int:
        return int(self.xs.size)

    def node_variance(self) -> float:
        if self.noise == LAPLACE:
            return 2.0 * self.scale**2
        if self.noise == GAUSSIAN:
            return self.scale**2
        return 0.0

    def node_noise(self, ids) -> np.ndarray:
        return privacy.keyed_noise(self.noise, self.scale, self.key, ids)

    # -- exact counts ------------------------------------------------------

    @cached_property
    def _prefix(self) -> np.ndarray:
        counts = np.bincount(self.xs, minlength=self.M + 1)
        return np.concatenate([[0], np.cumsum(counts)])

    @cached_property
    def _grid(self) -> np.ndarray:
        """``G[i, j]`` = #points with x <= i and y >= j (``j`` up to ``M + 1``)."""
        n = self.M + 1
        H = np.zeros((n, n + 1), dtype=np.int32)
        np.add.at(H, (self.xs, self.ys), 1)
        np.cumsum(H, axis=0, out=H)
        return np.flip(np.cumsum(np.flip(H, axis=1), axis=1), axis=1)

    def _true_1d(self, lo, hi) -> np.ndarray:
        p = self._prefix
        return (p[hi + 1] - p[lo]).astype(np.float64)

    def _true_2d(self, lo1, hi1, lo2, hi2) -> np.ndarray:
        if lo1.size == 0:
            return np.zeros(0)
        grid_cost = (self.M + 2) ** 2
        if grid_cost <= _GRID_LIMIT and lo1.size * self.xs.size > 4 * grid_cost:
            G = self._grid
            below = np.where(lo1 > 0, 1, 0)
            l1 = np.maximum(lo1 - 1, 0)
            full = G[hi1, lo2] - G[hi1, hi2 + 1]
            left = (G[l1, lo2] - G[l1, hi2 + 1]) * below
            return (full - left).astype(np.float64)
        out = np.empty(lo1.size)
        step = max(1, _CHUNK // max(1, self.xs.size))
        for s in range(0, lo1.size, step):
            e = s + step
            inside = ((self.xs >= lo1[s:e, None]) & (self.xs <= hi1[s:e, None])
                      & (self.ys >= lo2[s:e, None]) & (self.ys <= hi2[s:e, None]))
            out[s:e] = inside.sum(axis=1)
        return out

    def true_node_count(self, node) -> int:
        """Exact count of a 1d heap node or a 2d ``(h1, h2)`` node pair."""
        if self.dim == 1:
            lo, hi = _node_interval(int(node), self.size)
            hi = min(hi, self.M)
            return 0 if lo > self.M else int(self._true_1d(np.array([lo]), np.array([hi]))[0])
        h1, h2 = node
        lo1, hi1 = _node_interval(int(h1), self.size)
        lo2, hi2 = _node_interval(int(h2), self.size)
        return int(np.sum((self.xs >= lo1) & (self.xs <= hi1)
                          & (self.ys >= lo2) & (self.ys <= hi2)))

    def node_count(self, node) -> float:
        """Noisy count released for one node."""
        nid = node if self.dim == 1 else node[0] * 2 * self.size + node[1]
        return self.true_node_count(node) + float(self.node_noise(np.array([nid]))[0])

    # -- queries -----------------------------------------------------------------

    def query_ranges(self, lo, hi) -> np.ndarray:
        """Vectorised 1d range estimates ``r~[lo_q, hi_q]``."""
        lo, hi = self._check_1d(lo, hi)
        est = self._true_1d(lo, hi)
        if self.noise != NONE:
            ids = cover(lo, hi, self.depth)
            noise = self.node_noise(ids)
            noise[ids == 0] = 0.0
            est = est + noise.sum(axis=1)
        return est

    def query_boxes(self, lo1, hi1, lo2, hi2) -> np.ndarray:
        """Vectorised 2d box estimates for ``[lo1, hi1] x [lo2, hi2]``."""
        lo1, hi1 = self._check_1d(lo1, hi1)
        lo2, hi2 = self._check_1d(lo2, hi2)
        est = self._true_2d(lo1, hi1, lo2, hi2)
        if self.noise == NONE:
            return est
        P2 = np.uint64(2 * self.size)
        K = 2 * self.levels
        step = max(1, _CHUNK // (K * K))
        for s in range(0, lo1.size, step):
            e = min(s + step, lo1.size)
            c1 = cover(lo1[s:e], hi1[s:e], self.depth).astype(np.uint64)
            c2 = cover(lo2[s:e], hi2[s:e], self.depth).astype(np.uint64)
            live = (c1 != 0)[:, :, None] & (c2 != 0)[:, None, :]
            row, a, b = np.nonzero(live)
            noise = self.node_noise(c1[row, a] * P2 + c2[row, b])
            est[s:e] += np.bincount(row, weights=noise, minlength=e - s)
        return est

    def dominance_grid(self, upper1, lower2) -> np.ndarray:
        """Estimates for every box ``[0, i] x [j, M]``, ``i`` in ``upper1``, ``j`` in ``lower2``.

        Same values as :meth:`query_boxes` on those boxes, computed by sharing
        the noise of nodes common to many boxes.
        """
        if self.dim != 2:
            raise RangeQueryError("dominance_grid needs a 2d tree")
        upper1 = np.asarray(upper1, dtype=np.int64)
        lower2 = np.asarray(lower2, dtype=np.int64)
        self._check_1d(np.zeros_like(upper1), upper1)
        self._check_1d(lower2, np.full_like(lower2, self.M))
        if (self.M + 2) ** 2 <= _GRID_LIMIT:
            est = self._grid[np.ix_(upper1, lower2)].astype(np.float64)
        else:
            i, j = np.meshgrid(upper1, lower2, indexing="ij")
            est = self._true_2d(np.zeros(i.size, np.int64), i.ravel(),
                                j.ravel(), np.full(i.size, self.M)).reshape(i.shape)
        if self.noise == NONE:
            return est
        ra, a_ids = _incidence(cover(np.zeros_like(upper1), upper1, self.depth))
        rb, b_ids = _incidence(cover(lower2, np.full_like(lower2, self.M), self.depth))
        P2 = np.uint64(2 * self.size)
        noise = self.node_noise(a_ids.astype(np.uint64)[:, None] * P2
                                + b_ids.astype(np.uint64)[None, :])
        left = ra @ noise  # (len(upper1), |B|)
        return est + (rb @ left.T).T

    def _check_1d(self, lo, hi):
        lo = np.atleast_1d(np.asarray(lo, dtype=np.int64))
        hi = np.atleast_1d(np.asarray(hi, dtype=np.int64))
        if lo.shape != hi.shape:
            raise RangeQueryError("bounds must have equal shapes")
        if np.any(lo < 0) or np.any(hi > self.M) or np.any(lo > hi):
            raise RangeQueryError(f"range outside [0, {self.M}] or inverted")
        return lo, hi


def _node_interval(heap_id: int, size: int) -> tuple[int, int]:
    level = size.bit_length() - heap_id.bit_length()
    a = heap_id - (size >> level)
    return a << level, ((a + 1) << level) - 1


def cover(lo, hi, depth: int) -> np.ndarray:
    """Disjoint dyadic cover of each ``[lo_q, hi_q]`` as heap ids.

    Returns an array of shape ``(Q, 2 * (depth + 1))``; unused slots are 0.
    """
    P = 1 << depth
    lo = np.asarray(lo, dtype=np.int64).ravel()
    hi = np.asarray(hi, dtype=np.int64).ravel()
    out = np.zeros((lo.size, 2 * (depth + 1)), dtype=np.int64)
    if lo.size <= 16:
        # plain-integer loop; numpy overhead dominates for a handful of ranges
        for q, (a, b) in enumerate(zip(lo.tolist(), hi.tolist())):
            l, r = a + P, b + P + 1
            for lev in range(depth + 1):
                if l < r and l & 1:
                    out[q, 2 * lev] = l
                    l += 1
                if l < r and r & 1:
                    r -= 1
                    out[q, 2 * lev + 1] = r
                l >>= 1
                r >>= 1
        return out
    l = lo + P
    r = hi + P + 1
    for lev in range(depth + 1):
        live = l < r
        take = live & (l & 1 == 1)
        out[:, 2 * lev] = np.where(take, l, 0)
        l = l + take
        live = l < r
        take = live & (r & 1 == 1)
        r = r - take
        out[:, 2 * lev + 1] = np.where(take, r, 0)
        l >>= 1
        r >>= 1
    return out


def _incidence(ids: np.ndarray):
    """Sparse row-by-node incidence matrix and the sorted distinct node ids."""
    rows = np.repeat(np.arange(ids.shape[0]), ids.shape[1])
    flat = ids.ravel()
    keep = flat != 0
    uniq, col = np.unique(flat[keep], return_inverse=True)
    mat = sparse.csr_matrix((np.ones(col.size), (rows[keep], col)),
                            shape=(ids.shape[0], uniq.size))
    return mat, uniq


def _noise_params(dim: int, depth: int, budget: PrivacyBudget, noise: str) -> float:
    touched = (depth + 1) ** dim  # nodes one point lands in
    if noise == LAPLACE:
        return touched / budget.epsilon
    if noise == GAUSSIAN:
        return privacy.gaussian_sigma_for(budget, math.sqrt(touched))
    if noise == NONE:
        return 0.0
    raise ValueError(f"unknown noise kind {noise!r}")


def build_1d(points, M: int, budget: PrivacyBudget, noise: str, rng: SeededRng) -> NoisyRangeTree:
    xs = np.asarray(points, dtype=np.int64).ravel()
    if M < 0:
        raise RangeQueryError("M must be non-negative")
    if xs.size and (xs.min() < 0 or xs.max() > M):
        raise RangeQueryError(f"point coordinate outside [0, {M}]")
    depth = depth_for(M)
    scale = _noise_params(1, depth, budget, noise)
    key = int(rng.integers(0, 1 << 64, dtype=np.uint64))
    xs.setflags(write=False)
    return NoisyRangeTree(1, M, depth, noise, scale, budget, key, xs)


def query_1d(tree: NoisyRangeTree, y1: int, y2: int) -> float:
    return float(tree.query_ranges([y1], [y2])[0])


def build_2d(points, M: int, budget: PrivacyBudget, noise: str, rng: SeededRng) -> NoisyRangeTree:
    pts = np.asarray(points, dtype=np.int64).reshape(-1, 2)
    if M < 0:
        raise RangeQueryError("M must be non-negative")
    if pts.size and (pts.min() < 0 or pts.max() > M):
        raise RangeQueryError(f"point coordinate outside [0, {M}]")
    depth = depth_for(M)
    scale = _noise_params(2, depth, budget, noise)
    key = int(rng.integers(0, 1 << 64, dtype=np.uint64))
    xs, ys = pts[:, 0].copy(), pts[:, 1].copy()
    xs.setflags(write=False)
    ys.setflags(write=False)
    return NoisyRangeTree(2, M, depth, noise, scale, budget, key, xs, ys)


def query_2d(tree: NoisyRangeTree, y1, y2) -> float:
    """Estimate of the number of points ``p`` with ``y1 <= p <= y2`` componentwise."""
    (a1, b1), (a2, b2) = y1, y2
    return float(tree.query_boxes([a1], [a2], [b1], [b2])[0])
