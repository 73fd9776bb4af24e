"""Exact finite discrete distributions and lower-tail CVaR.

Two independent CVaR routes are provided: the tail integral with fractional
splitting of the boundary atom (``cvar_tail``) and the supremum form
(``cvar_sup``). They agree on every discrete distribution and are
cross-checked in the test-suite.
"""

from __future__ import annotations

import json
from typing import Iterable, Sequence

import numpy as np

MERGE_TOL = 1e-9
PROB_TOL = 1e-12


class DomainError(ValueError):
    """Raised for arguments outside an operation's domain."""


def check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not (0.0 < alpha <= 1.0):
        raise DomainError(f"risk level alpha must lie in (0, 1], got {alpha!r}")
    return alpha


class DiscreteDistribution:
    """Immutable distribution over finitely many real atoms.

    Atoms are kept sorted ascending; values closer than ``MERGE_TOL`` to the
    first value of their run are merged (probability-weighted value) and
    zero-probability atoms are dropped.
    """

    __slots__ = ("_values", "_probs")

    def __init__(self, atoms: Iterable[tuple[float, float]] | None = None, *,
                 values: Sequence[float] | None = None,
                 probs: Sequence[float] | None = None):
        if atoms is not None:
            pairs = list(atoms)
            v = np.array([a[0] for a in pairs], dtype=float)
            p = np.array([a[1] for a in pairs], dtype=float)
        else:
            v = np.asarray(values, dtype=float).ravel()
            p = np.asarray(probs, dtype=float).ravel()
        if v.shape != p.shape or v.size == 0:
            raise DomainError("a distribution needs at least one (value, probability) atom")
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(p))):
            raise DomainError("atom values and probabilities must be finite")
        if np.any(p < 0):
            raise DomainError("negative probability")
        total = p.sum()
        if abs(total - 1.0) > PROB_TOL:
            raise DomainError(f"probabilities sum to {total!r}, not 1")
        self._values, self._probs = _merge(v, p)
        self._values.flags.writeable = False
        self._probs.flags.writeable = False

    @classmethod
    def point(cls, value: float) -> "DiscreteDistribution":
        return cls(values=[value], probs=[1.0])

    @classmethod
    def _trusted(cls, values: np.ndarray, probs: np.ndarray) -> "DiscreteDistribution":
        # Skips normalisation checks; callers guarantee a valid pmf.
        obj = cls.__new__(cls)
        obj._values, obj._probs = _merge(values, probs)
        obj._values.flags.writeable = False
        obj._probs.flags.writeable = False
        return obj

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def probs(self) -> np.ndarray:
        return self._probs

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return list(zip(self._values.tolist(), self._probs.tolist()))

    def __len__(self) -> int:
        return self._values.size

    def __repr__(self) -> str:
        body = ", ".join(f"({v:.6g}, {p:.6g})" for v, p in self.atoms[:8])
        more = ", ..." if len(self) > 8 else ""
        return f"DiscreteDistribution([{body}{more}])"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DiscreteDistribution):
            return NotImplemented
        return (np.array_equal(self._values, other._values)
                and np.array_equal(self._probs, other._probs))

    def __hash__(self) -> int:
        return hash((self._values.tobytes(), self._probs.tobytes()))

    def allclose(self, other: "DiscreteDistribution", atol: float = 1e-12) -> bool:
        return (len(self) == len(other)
                and np.allclose(self._values, other._values, rtol=0, atol=atol)
                and np.allclose(self._probs, other._probs, rtol=0, atol=atol))

    def mean(self) -> float:
        return float(np.dot(self._values, self._probs))

    def min(self) -> float:
        return float(self._values[0])

    def cvar(self, alpha: float) -> float:
        return cvar_tail(self, alpha)

    def to_json(self) -> str:
        return json.dumps([[v, p] for v, p in self.atoms])

    @classmethod
    def from_json(cls, text: str) -> "DiscreteDistribution":
        return cls([tuple(pair) for pair in json.loads(text)])


def _merge(values: np.ndarray, probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    keep = probs > 0
    values, probs = values[keep], probs[keep]
    order = np.argsort(values, kind="stable")
    values, probs = values[order], probs[order]
    if values.size < 2 or np.all(np.diff(values) > MERGE_TOL):
        return values.copy(), probs.copy()
    out_v: list[float] = []
    out_p: list[float] = []
    start = 0
    n = values.size
    while start < n:
        stop = start + 1
        while stop < n and values[stop] - values[start] <= MERGE_TOL:
            stop += 1
        p = probs[start:stop].sum()
        out_v.append(float(np.dot(values[start:stop], probs[start:stop]) / p))
        out_p.append(float(p))
        start = stop
    return np.array(out_v), np.array(out_p)


def tail_mean(values: np.ndarray, probs: np.ndarray, alpha: float) -> float:
    """Lower alpha-tail mean of unsorted atoms, boundary atom split fractionally."""
    order = np.argsort(values, kind="stable")
    v = values[order]
    p = probs[order]
    if alpha <= p[0]:
        return float(v[0])
    cum = np.cumsum(p)
    before = cum - p
    taken = np.clip(alpha - before, 0.0, p)
    return float(np.dot(taken, v) / alpha)


def cvar_tail(dist: DiscreteDistribution, alpha: float) -> float:
    """Mean of the worst ``alpha`` probability mass of ``dist``."""
    alpha = check_alpha(alpha)
    if alpha == 1.0:
        return dist.mean()
    return tail_mean(dist.values, dist.probs, alpha)


def cvar_sup(dist: DiscreteDistribution, alpha: float) -> float:
    """``sup_nu nu - E[(nu - Z)^+] / alpha``, evaluated at every atom."""
    alpha = check_alpha(alpha)
    v, p = dist.values, dist.probs
    shortfall = np.maximum(v[:, None] - v[None, :], 0.0) @ p
    return float(np.max(v - shortfall / alpha))


def shift_scale(dist: DiscreteDistribution, shift: float, scale: float) -> DiscreteDistribution:
    """Distribution of ``shift + scale * Z``."""
    if not scale > 0:
        raise DomainError(f"scale must be positive, got {scale!r}")
    return DiscreteDistribution._trusted(shift + scale * dist.values, dist.probs)


def mixture(components: Sequence[tuple[float, DiscreteDistribution]]) -> DiscreteDistribution:
    if not components:
        raise DomainError("mixture of zero components")
    weights = np.array([w for w, _ in components], dtype=float)
    if np.any(weights <= 0):
        raise DomainError("mixture weights must be positive")
    if abs(weights.sum() - 1.0) > PROB_TOL:
        raise DomainError(f"mixture weights sum to {weights.sum()!r}, not 1")
    values = np.concatenate([d.values for _, d in components])
    probs = np.concatenate([w * d.probs for w, d in components])
    return DiscreteDistribution._trusted(values, probs)


def convolve_iid(dist: DiscreteDistribution, n: int) -> DiscreteDistribution:
    """Exact law of the sum of ``n`` independent copies of ``dist``."""
    if int(n) != n or n < 1:
        raise DomainError(f"n must be a positive integer, got {n!r}")
    out = dist
    for _ in range(int(n) - 1):
        values = (out.values[:, None] + dist.values[None, :]).ravel()
        probs = (out.probs[:, None] * dist.probs[None, :]).ravel()
        out = DiscreteDistribution._trusted(values, probs)
    return out
