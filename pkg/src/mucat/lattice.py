"""Configurations, finitely supported test functions, and the H functional.

A configuration assigns a point of [0,inf)^2 to every site of the finite
window; a test function assigns a boundary point (one coordinate zero) to
finitely many sites.  The pairing sums the lozenge product site by site
and H = exp(pairing) is bounded by 1 in modulus on nonnegative states.

Configurations are dense arrays over the window rather than sparse maps:
the flow populates every site after any positive time, and dense storage
is the fast path for the Monte Carlo loop.
"""

from __future__ import annotations

import cmath
from dataclasses import dataclass

import numpy as np

from .migration import WeightVector
from .quadrant import lozenge

__all__ = [
    "Configuration",
    "TestFunction",
    "pairing",
    "h_value",
    "is_boundary_state",
    "interior_mass",
]


@dataclass(frozen=True)
class Configuration:
    """Per-site two-type mass field over an ordered finite site set."""

    sites: tuple[int, ...]
    values: np.ndarray  # shape (n_sites, 2), entrywise >= 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (len(self.sites), 2):
            raise ValueError("values must have shape (n_sites, 2)")
        if not np.all(np.isfinite(values)):
            raise ValueError("configuration values must be finite")
        if np.any(values < 0.0):
            raise ValueError("configuration values must be >= 0")
        object.__setattr__(self, "values", values)
        values.setflags(write=False)

    @classmethod
    def from_pairs(cls, sites, pairs) -> "Configuration":
        return cls(tuple(int(s) for s in sites), np.array(pairs, dtype=float))

    @classmethod
    def zero(cls, sites) -> "Configuration":
        sites = tuple(int(s) for s in sites)
        return cls(sites, np.zeros((len(sites), 2)))

    def type_field(self, i: int) -> np.ndarray:
        if i not in (1, 2):
            raise ValueError("type index must be 1 or 2")
        return self.values[:, i - 1]

    def at(self, site: int) -> tuple[float, float]:
        pos = self.sites.index(site)
        return (float(self.values[pos, 0]), float(self.values[pos, 1]))


@dataclass(frozen=True)
class TestFunction:
    """Finitely supported field of boundary points, the argument y of H."""

    support: tuple[int, ...]
    values: np.ndarray  # shape (len(support), 2), each row in E

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (len(self.support), 2):
            raise ValueError("values must have shape (len(support), 2)")
        if len(set(self.support)) != len(self.support):
            raise ValueError("duplicate sites in support")
        if not np.all(np.isfinite(values)) or np.any(values < 0.0):
            raise ValueError("test function values must be finite and >= 0")
        if np.any(np.minimum(values[:, 0], values[:, 1]) != 0.0):
            raise ValueError("every test function value must lie in E")
        object.__setattr__(self, "values", values)
        values.setflags(write=False)

    @classmethod
    def from_pairs(cls, items) -> "TestFunction":
        """Build from an iterable of (site, (y1, y2))."""
        items = list(items)
        support = tuple(int(s) for s, _ in items)
        values = np.array([pair for _, pair in items], dtype=float)
        if values.size == 0:
            values = values.reshape(0, 2)
        return cls(support, values)

    @classmethod
    def empty(cls) -> "TestFunction":
        return cls((), np.zeros((0, 2)))

    def positions(self, sites: tuple[int, ...]) -> np.ndarray:
        """Positions of the support inside an ordered site set."""
        index = {s: i for i, s in enumerate(sites)}
        try:
            return np.array([index[s] for s in self.support], dtype=int)
        except KeyError as missing:
            raise ValueError(f"support site {missing} not in site set") from None


def pairing(x: Configuration, y: TestFunction) -> complex:
    """Sum of x(k) lozenge y(k) over the support of y."""
    total = 0j
    for row, pos in enumerate(y.positions(x.sites)):
        total += lozenge(x.values[pos], y.values[row])
    return total


def h_value(x: Configuration, y: TestFunction) -> complex:
    """exp of the pairing; equals the product of per-site F factors."""
    return cmath.exp(pairing(x, y))


def is_boundary_state(x: Configuration) -> bool:
    """True iff every site has at least one exactly-zero coordinate."""
    return bool(np.all(np.minimum(x.values[:, 0], x.values[:, 1]) == 0.0))


def interior_mass(x: Configuration, beta: WeightVector) -> float:
    """Weighted violation of boundary membership, sum_k min(x1,x2) beta(k)."""
    if beta.sites != x.sites:
        raise ValueError("weight vector and configuration use different sites")
    return float(np.minimum(x.values[:, 0], x.values[:, 1]) @ beta.beta)
