"""Noise samplers and the (epsilon, delta) accountant.

Two kinds of randomness are used:

* ``SeededRng`` (a numpy ``Generator`` on PCG64) for ordinary sample streams
  and for drawing per-tree noise keys;
* keyed node noise, where the draw for node ``i`` of a tree is a pure function
  of ``(key, i)``. This lets a tree answer any subset of queries lazily while
  every node still carries exactly one independent draw.

Both routes turn 64-bit uniforms into Laplace draws by inverse CDF and into
Gaussian draws by Box-Muller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LAPLACE = "laplace"
GAUSSIAN = "gaussian"
NONE = "none"
NOISE_KINDS = (LAPLACE, GAUSSIAN, NONE)

SeededRng = np.random.Generator


class BudgetError(ValueError):
    pass


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float = 0.0

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise BudgetError(f"epsilon must be positive and finite, got {self.epsilon}")
        if not 0 <= self.delta < 1:
            raise BudgetError(f"delta must lie in [0, 1), got {self.delta}")

    @property
    def pure(self) -> bool:
        return self.delta == 0

    def halve(self) -> "PrivacyBudget":
        return basic_split(self, 2)

    def as_dict(self) -> dict:
        return {"epsilon": self.epsilon, "delta": self.delta}


def make_rng(seed: int) -> SeededRng:
    """Deterministic generator from a 64-bit seed."""
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def derive_seed(master: int, *path: int) -> int:
    """Child seed obtained from a master seed and an integer counter path."""
    ss = np.random.SeedSequence([int(master) & 0xFFFFFFFFFFFFFFFF, *[int(p) for p in path]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _laplace_from_uniform(u: np.ndarray, scale: float) -> np.ndarray:
    c = u - 0.5
    return -scale * np.sign(c) * np.log1p(-2.0 * np.abs(c))


def _gaussian_from_uniform(u1: np.ndarray, u2: np.ndarray, sigma: float) -> np.ndarray:
    return sigma * np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def _open_uniform(rng: SeededRng, size) -> np.ndarray:
    # 53-bit grid shifted by half a step: never exactly 0 or 1
    bits = rng.integers(0, 1 << 53, size=size, dtype=np.int64)
    return (bits + 0.5) * 2.0**-53


def sample_laplace(scale: float, rng: SeededRng, size=None):
    """Laplace(0, scale) draws via inverse CDF."""
    if not scale > 0:
        raise ValueError(f"Laplace scale must be positive, got {scale}")
    out = _laplace_from_uniform(_open_uniform(rng, size), scale)
    return float(out) if size is None else out


def sample_gaussian(sigma: float, rng: SeededRng, size=None):
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    u1 = _open_uniform(rng, size)
    u2 = _open_uniform(rng, size)
    out = _gaussian_from_uniform(u1, u2, sigma)
    return float(out) if size is None else out


# --- keyed node noise --------------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _splitmix(x: np.ndarray) -> np.ndarray:
    x = x ^ (x >> np.uint64(30))
    x = x * _MIX1
    x = x ^ (x >> np.uint64(27))
    x = x * _MIX2
    return x ^ (x >> np.uint64(31))


def keyed_uniform(key: int, ids: np.ndarray) -> np.ndarray:
    """Open-interval uniforms that depend only on ``(key, id)``."""
    ids = np.asarray(ids, dtype=np.uint64)
    with np.errstate(over="ignore"):
        k = _splitmix(np.array([key], dtype=np.uint64))[0]
        z = _splitmix(k + (ids + np.uint64(1)) * _GOLDEN)
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def keyed_noise(kind: str, scale: float, key: int, ids) -> np.ndarray:
    """Noise attached to node ``ids`` of the tree with ``key``.

    ``scale`` is the Laplace scale or the Gaussian standard deviation.
    """
    ids = np.asarray(ids, dtype=np.uint64)
    if kind == NONE or scale == 0:
        return np.zeros(ids.shape)
    if kind == LAPLACE:
        return _laplace_from_uniform(keyed_uniform(key, ids), scale)
    if kind == GAUSSIAN:
        two = ids * np.uint64(2)
        return _gaussian_from_uniform(keyed_uniform(key, two),
                                      keyed_uniform(key, two + np.uint64(1)), scale)
    raise ValueError(f"unknown noise kind {kind!r}")


# --- accountant ----------------------------------------------------------------

def basic_split(target: PrivacyBudget, m: int) -> PrivacyBudget:
    """Per-mechanism budget so that ``m`` mechanisms compose to ``target``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return PrivacyBudget(target.epsilon / m, target.delta / m)


def advanced_split(target: PrivacyBudget, m: int) -> PrivacyBudget:
    """Per-mechanism budget under advanced composition of ``m`` mechanisms."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if target.delta == 0:
        raise BudgetError("advanced composition requires delta > 0")
    if target.epsilon > 1:
        raise BudgetError("advanced composition requires epsilon <= 1")
    eps = target.epsilon / (2.0 * math.sqrt(2.0 * m * math.log(2.0 / target.delta)))
    return PrivacyBudget(eps, target.delta / (2.0 * m))


def group_forward(budget: PrivacyBudget, m: int) -> PrivacyBudget:
    """Guarantee of an (eps, delta)-DP mechanism against ``m``-fold neighbours."""
    if m < 1:
        raise ValueError("m must be >= 1")
    e = budget.epsilon
    if m == 1:
        return budget
    factor = math.expm1(m * e) / math.expm1(e)
    return PrivacyBudget(m * e, budget.delta * factor)


def group_invert(target: PrivacyBudget, m: int) -> PrivacyBudget:
    """Budget for single-step neighbours that meets ``target`` for ``m``-step ones."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if m == 1:
        return target
    eps = target.epsilon / m
    delta = target.delta * math.expm1(eps) / math.expm1(m * eps)
    return PrivacyBudget(eps, delta)


def gaussian_sigma_for(budget: PrivacyBudget, l2_sensitivity: float) -> float:
    """Classical Gaussian-mechanism calibration (valid for epsilon <= 1)."""
    if budget.delta == 0:
        raise BudgetError("Gaussian noise requires delta > 0")
    if budget.epsilon > 1:
        raise BudgetError("the classical Gaussian calibration needs epsilon <= 1")
    if not l2_sensitivity > 0:
        raise ValueError("sensitivity must be positive")
    return l2_sensitivity * math.sqrt(2.0 * math.log(1.25 / budget.delta)) / budget.epsilon
