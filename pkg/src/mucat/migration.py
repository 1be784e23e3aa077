"""Migration generator, weighted norms, and the flow semigroup e^{tA}.

The migration matrix A lives on a finite ordered site set S (integer
labels).  Off-diagonal entries must be nonnegative; the diagonal is
unconstrained.  Two derived constants are kept with the matrix:

    norm_a = max_k sum_l (|A(k,l)| + |A(l,k)|)
    lam    = max_k (-A(k,k))

The semigroup S_t = e^{tA} is evaluated through the shifted series

    e^{tA} = e^{-ct} sum_n t^n (A + cI)^n / n!,   c = max_k |A(k,k)|,

whose terms are entrywise nonnegative, so truncation error is controlled
by the scalar companion series (a Poisson tail when A has zero row sums)
and nonnegativity of the result is automatic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "MigrationMatrix",
    "WeightVector",
    "build_matrix",
    "build_beta",
    "apply_flow",
    "flow_field",
    "flow_operator",
    "srw_kernel",
    "norm_beta",
]

TOPOLOGY_GENERAL = "general"
TOPOLOGY_ABSORBING = "z_window_absorbing"
TOPOLOGY_TORUS = "z_torus"

_MAX_SERIES_TERMS = 200_000


@dataclass(frozen=True)
class MigrationMatrix:
    """Finite migration matrix with its derived constants.

    ``dense`` is row-indexed by position in ``sites``; ``lam`` is the
    supremum of the negated diagonal (written out because ``lambda`` is
    reserved in Python).
    """

    sites: tuple[int, ...]
    dense: np.ndarray
    norm_a: float
    lam: float
    topology_tag: str = TOPOLOGY_GENERAL

    def __post_init__(self):
        self.dense.setflags(write=False)

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def entries(self) -> dict[tuple[int, int], float]:
        """Sparse view: (site k, site l) -> A(k,l) for nonzero entries."""
        out = {}
        for i, k in enumerate(self.sites):
            for j, l in enumerate(self.sites):
                v = self.dense[i, j]
                if v != 0.0:
                    out[(k, l)] = float(v)
        return out

    def index_of(self, site: int) -> int:
        try:
            return self.sites.index(site)
        except ValueError:
            raise KeyError(f"site {site} not in matrix site set") from None


@dataclass(frozen=True)
class WeightVector:
    """Strictly positive summable weight beta with its flow constant.

    ``m_const`` is the smallest M (clamped below at 1) with
    sum_l beta(l) (|A(k,l)| + |A(l,k)|) <= M beta(k) for every k.
    """

    sites: tuple[int, ...]
    beta: np.ndarray
    m_const: float
    total: float

    def __post_init__(self):
        self.beta.setflags(write=False)


def _derived_constants(dense: np.ndarray) -> tuple[float, float]:
    abs_a = np.abs(dense)
    norm_a = float(np.max(abs_a.sum(axis=1) + abs_a.sum(axis=0)))
    lam = float(np.max(-np.diag(dense)))
    return norm_a, lam


def _ssrw_window(radius: int, topology: str) -> tuple[tuple[int, ...], np.ndarray]:
    if radius < 0:
        raise ValueError("window radius must be >= 0")
    sites = tuple(range(-radius, radius + 1))
    n = len(sites)
    if topology == "torus" and n < 3:
        raise ValueError("torus topology needs at least 3 sites (radius >= 1)")
    a = np.zeros((n, n))
    for i in range(n):
        a[i, i] = -1.0
        for step in (-1, 1):
            j = i + step
            if 0 <= j < n:
                a[i, j] += 0.5
            elif topology == "torus":
                a[i, j % n] += 0.5
            # absorbing: the neighbour outside the window is dropped,
            # leaving a sub-stochastic row that leaks mass at the edge
    return sites, a


def build_matrix(spec: dict) -> MigrationMatrix:
    """Build a migration matrix from a structured description.

    Two kinds are accepted:
      {"kind": "explicit", "sites": [...], "entries": [[k, l, value], ...]}
      {"kind": "ssrw_z", "radius": L, "topology": "torus" | "absorbing"}

    The ssrw_z generator is A f(k) = f(k+1)/2 + f(k-1)/2 - f(k) restricted
    to the window [-L, L] with the chosen boundary rule.
    """
    kind = spec.get("kind")
    if kind == "explicit":
        sites = tuple(int(s) for s in spec["sites"])
        if not sites:
            raise ValueError("site set must be nonempty")
        if len(set(sites)) != len(sites):
            raise ValueError("duplicate site labels")
        index = {s: i for i, s in enumerate(sites)}
        dense = np.zeros((len(sites), len(sites)))
        for k, l, v in spec.get("entries", []):
            k, l, v = int(k), int(l), float(v)
            if not math.isfinite(v):
                raise ValueError(f"entry A({k},{l}) is not finite")
            if k not in index or l not in index:
                raise ValueError(f"entry references unknown site ({k},{l})")
            if k != l and v < 0.0:
                raise ValueError(
                    f"off-diagonal entry A({k},{l}) = {v} is negative"
                )
            dense[index[k], index[l]] = v
        topology = TOPOLOGY_GENERAL
    elif kind == "ssrw_z":
        topology_name = spec.get("topology", "absorbing")
        if topology_name not in ("torus", "absorbing"):
            raise ValueError(f"unknown topology {topology_name!r}")
        sites, dense = _ssrw_window(int(spec["radius"]), topology_name)
        topology = TOPOLOGY_TORUS if topology_name == "torus" else TOPOLOGY_ABSORBING
    else:
        raise ValueError(f"unknown matrix kind {kind!r}")

    norm_a, lam = _derived_constants(dense)
    return MigrationMatrix(
        sites=sites, dense=dense, norm_a=norm_a, lam=lam, topology_tag=topology
    )


def build_beta(matrix: MigrationMatrix, decay: float = 1.0) -> WeightVector:
    """Geometric weight beta(k) = decay^{|k|} with its smallest flow constant.

    decay must lie in (0, 1]; decay = 1 gives beta identically one.  The
    constant is found by direct maximization over sites and clamped below
    at 1 so that the submartingale and Doob bounds downstream stay valid.
    """
    if not (0.0 < decay <= 1.0):
        raise ValueError("decay must be in (0, 1]")
    beta = np.array([decay ** abs(k) for k in matrix.sites], dtype=float)
    abs_a = np.abs(matrix.dense)
    # row k of (|A(k,l)| + |A(l,k)|) weighted by beta(l), relative to beta(k)
    weighted = (abs_a + abs_a.T) @ beta
    m_const = float(np.max(weighted / beta))
    m_const = max(m_const, 1.0)
    return WeightVector(
        sites=matrix.sites, beta=beta, m_const=m_const, total=float(beta.sum())
    )


def flow_field(values: np.ndarray, t: float, matrix: MigrationMatrix,
               tol: float = 1e-12) -> np.ndarray:
    """Apply e^{tA} to a site-indexed field of shape (n,) or (n, m).

    Uses the shifted nonnegative series; iteration stops once the scalar
    companion tail drops below ``tol``.  Nonnegative input gives
    nonnegative output because every term of the series is nonnegative.
    """
    if t < 0.0:
        raise ValueError("flow time must be >= 0")
    x = np.array(values, dtype=float)
    if x.shape[0] != matrix.n_sites:
        raise ValueError("field length does not match the site set")
    if t == 0.0:
        return x
    a = matrix.dense
    c = float(np.max(np.abs(np.diag(a)))) if matrix.n_sites else 0.0
    shifted = a + c * np.eye(matrix.n_sites)
    r = float(np.max(shifted.sum(axis=1)))
    scale = math.exp(-c * t)
    term = scale * x
    out = term.copy()
    companion = scale
    partial = companion
    cap = math.exp((r - c) * t)
    n = 0
    while cap - partial > tol:
        n += 1
        if n > _MAX_SERIES_TERMS:
            raise RuntimeError("flow series did not converge; reduce t or tol")
        term = (t / n) * (shifted @ term)
        out += term
        companion *= r * t / n
        partial += companion
    return out


def flow_operator(matrix: MigrationMatrix, t: float, tol: float = 1e-12) -> np.ndarray:
    """Dense matrix e^{tA}, for repeated application in simulation loops."""
    return flow_field(np.eye(matrix.n_sites), t, matrix, tol)


def apply_flow(x, t: float, matrix: MigrationMatrix, tol: float = 1e-12):
    """S_t applied to a Configuration (or bare field), coordinate-wise.

    Returns the same kind of object it was given: a dataclass carrying a
    ``values`` array comes back rebuilt with the flowed values.
    """
    values = getattr(x, "values", None)
    if values is None:
        return flow_field(x, t, matrix, tol)
    flowed = flow_field(values, t, matrix, tol)
    return replace(x, values=flowed)


def srw_kernel(t: float, l: int) -> float:
    """Transition probability a_t(0, l) of rate-1 symmetric simple random walk.

    Equals e^{-t} I_{|l|}(t) with I the modified Bessel function of the
    first kind, summed from its power series to relative tolerance 1e-14.
    The leading term is formed in log space so large |l| cannot overflow.
    """
    if t < 0.0:
        raise ValueError("time must be >= 0")
    k = abs(int(l))
    if t == 0.0:
        return 1.0 if k == 0 else 0.0
    half = 0.5 * t
    term = math.exp(k * math.log(half) - math.lgamma(k + 1) - t)
    total = term
    ratio_sq = half * half
    m = 0
    while True:
        m += 1
        term *= ratio_sq / (m * (m + k))
        total += term
        if term <= 1e-14 * total and ratio_sq < m * (m + k):
            break
        if m > _MAX_SERIES_TERMS:
            raise RuntimeError("Bessel series did not converge")
    return total


def norm_beta(u: np.ndarray, beta: WeightVector) -> float:
    """Weighted l1 norm sum_k |u(k)| beta(k) over the finite site set."""
    u = np.asarray(u, dtype=float)
    if u.shape[0] != beta.beta.shape[0]:
        raise ValueError("field length does not match the weight vector")
    return float(np.abs(u) @ beta.beta)
