"""Interlaced flow-and-resample dynamics on the epsilon grid.

Within each grid interval the state follows the deterministic migration
flow; at every grid time each site is independently resampled from the
quadrant exit law of the flowed value, so grid-time states live on the
boundary set E at every site.  Between grid times nothing is interpolated:
a state at time t is the flow of the last grid state by t - n*epsilon.

Along every path the martingale functional

    M_t(y) = H(X_t, y) - H(X_0, y) - int_0^t <<A X_s, y>> H(X_s, y) ds

is accumulated per test function, the time integral being evaluated by
composite Simpson quadrature inside each flow interval (the integrand is
analytic there, so the quadrature bias is far below Monte Carlo noise).

Two execution paths are provided: ``simulate`` records one replica's full
path, while ``simulate_batch`` runs replicas in vectorized chunks, each
chunk owning an independent random stream derived from (seed, label,
chunk index), so results are bit-identical for any worker count.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .lattice import Configuration, TestFunction, is_boundary_state
from .migration import MigrationMatrix, flow_field, flow_operator
from .quadrant import resample_uv
from .seeds import stream_rng

__all__ = [
    "TrotterParams",
    "PathRecord",
    "step",
    "simulate",
    "simulate_batch",
    "interface_positions",
    "grid_layout",
    "DEFAULT_CHUNK",
]

DEFAULT_CHUNK = 4096

_TIME_SLOP = 1e-9


@dataclass(frozen=True)
class TrotterParams:
    """Grid step, horizon, and numerical knobs of one simulation."""

    epsilon: float
    horizon: float
    flow_tol: float = 1e-12
    quad_substeps: int = 8
    record_times: tuple[float, ...] = ()

    def __post_init__(self):
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be > 0")
        if self.horizon < 0.0:
            raise ValueError("horizon must be >= 0")
        if self.quad_substeps < 2 or self.quad_substeps % 2:
            raise ValueError("quad_substeps must be an even integer >= 2")
        rec = tuple(float(t) for t in self.record_times)
        if list(rec) != sorted(rec):
            raise ValueError("record_times must be sorted")
        slop = _TIME_SLOP * max(1.0, self.horizon)
        if rec and (rec[0] < -slop or rec[-1] > self.horizon + slop):
            raise ValueError("record_times must lie within [0, horizon]")
        object.__setattr__(self, "record_times", rec)


@dataclass
class PathRecord:
    """One replica's path sampled at the requested record times."""

    times: list[float]
    states: list[Configuration]
    martingale_values: list[list[complex]]  # one series per test function
    interface: list[tuple[int, int]] | None = None


def grid_layout(params: TrotterParams) -> tuple[int, float]:
    """Number of complete grid intervals before the horizon, and remainder."""
    n = int(math.floor(params.horizon / params.epsilon + _TIME_SLOP))
    rem = params.horizon - n * params.epsilon
    if rem < 1e-12 * max(1.0, params.horizon):
        rem = 0.0
    return n, rem


def step(x: Configuration, matrix: MigrationMatrix, params: TrotterParams,
         rng: np.random.Generator) -> Configuration:
    """One grid step: flow by epsilon, then resample every site from Q."""
    flowed = flow_field(x.values, params.epsilon, matrix, params.flow_tol)
    u, v = resample_uv(flowed[:, 0], flowed[:, 1], rng.random(len(x.sites)))
    return Configuration(x.sites, np.column_stack([u, v]))


def interface_positions(x: Configuration) -> tuple[int, int]:
    """Candidate interface positions (b1, b2) of a configuration on a window.

    b1 = sup{k : x1(k-1) > 0} and b2 = inf{k : x2(k) > 0}, with strict
    positivity as exact-zero comparison (resampled coordinates are exactly
    zero on one axis).  When type 1 is absent b1 is the sentinel
    min(sites) - 1; when type 2 is absent b2 is max(sites) + 1.
    """
    sites = x.sites
    s_min, s_max = sites[0], sites[-1]
    pos1 = np.flatnonzero(x.values[:, 0] > 0.0)
    pos2 = np.flatnonzero(x.values[:, 1] > 0.0)
    b1 = sites[pos1[-1]] + 1 if pos1.size else s_min - 1
    b2 = sites[pos2[0]] if pos2.size else s_max + 1
    return int(b1), int(b2)


# ---------------------------------------------------------------------------
# single-path simulation with full recording


def _y_tables(sites: tuple[int, ...], y_list) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    tables = []
    for y in y_list:
        pos = y.positions(sites)
        ysum = y.values[:, 0] + y.values[:, 1]
        ydiff = y.values[:, 0] - y.values[:, 1]
        tables.append((pos, ysum, ydiff))
    return tables


def _pair_single(values: np.ndarray, table) -> complex:
    pos, ysum, ydiff = table
    xs = values[pos]
    s = xs[:, 0] + xs[:, 1]
    d = xs[:, 0] - xs[:, 1]
    return complex(-(s @ ysum), d @ ydiff)


def _simpson_single(state: np.ndarray, length: float, q: int,
                    matrix: MigrationMatrix, tol: float, a: np.ndarray,
                    tables) -> tuple[np.ndarray, list[complex]]:
    """Simpson integral of <<A X_s, y>> H(X_s, y) over a flow segment.

    Returns the state at the end of the segment (the node composition, so
    the path and its integral stay mutually consistent) and one integral
    value per test function.
    """
    if length == 0.0 or not tables:
        end = state if length == 0.0 else flow_field(state, length, matrix, tol)
        return end, [0j] * len(tables)
    h = length / q
    weights = np.full(q + 1, 2.0)
    weights[1::2] = 4.0
    weights[0] = weights[-1] = 1.0
    weights *= h / 3.0
    node = state
    totals = [0j] * len(tables)
    for j in range(q + 1):
        if j > 0:
            node = flow_field(node, h, matrix, tol)
        drift = a @ node
        for i, table in enumerate(tables):
            totals[i] += weights[j] * _pair_single(drift, table) * np.exp(_pair_single(node, table))
    return node, totals


def simulate(x0: Configuration, matrix: MigrationMatrix, params: TrotterParams,
             y_list, rng: np.random.Generator) -> PathRecord:
    """Run one replica, recording states and martingale values.

    The initial state should lie in E at every site; interior initial
    states are accepted with a warning (they are resampled at the first
    grid time in any case).
    """
    if x0.sites != matrix.sites:
        raise ValueError("configuration and matrix use different site sets")
    if not is_boundary_state(x0):
        warnings.warn("initial state has interior sites; the boundary-state "
                      "identities only apply from the first grid time on")
    y_list = list(y_list)
    tables = _y_tables(matrix.sites, y_list)
    a = matrix.dense
    n_jumps, rem = grid_layout(params)
    track_iface = matrix.topology_tag != "general"

    h0 = [np.exp(_pair_single(x0.values, tb)) for tb in tables]
    integral = [0j] * len(y_list)
    current = x0.values
    slop = _TIME_SLOP * max(1.0, params.horizon, params.epsilon)

    record = PathRecord(times=[], states=[], martingale_values=[[] for _ in y_list],
                        interface=[] if track_iface else None)
    pending = list(params.record_times)
    next_rec = 0

    for n in range(n_jumps + 1):
        grid_time = n * params.epsilon
        length = params.epsilon if n < n_jumps else rem
        while next_rec < len(pending):
            t = pending[next_rec]
            in_interval = t < grid_time + length - slop
            at_end = n == n_jumps and t <= grid_time + length + slop
            if not (in_interval or at_end):
                break
            offset = min(max(t - grid_time, 0.0), length)
            state_t, part = _simpson_single(current, offset, params.quad_substeps,
                                            matrix, params.flow_tol, a, tables)
            cfg = Configuration(matrix.sites, state_t)
            record.times.append(t)
            record.states.append(cfg)
            for i, tb in enumerate(tables):
                m = np.exp(_pair_single(state_t, tb)) - h0[i] - (integral[i] + part[i])
                record.martingale_values[i].append(complex(m))
            if track_iface:
                record.interface.append(interface_positions(cfg))
            next_rec += 1
        if n == n_jumps:
            break
        end_state, seg = _simpson_single(current, params.epsilon, params.quad_substeps,
                                         matrix, params.flow_tol, a, tables)
        for i in range(len(tables)):
            integral[i] += seg[i]
        u, v = resample_uv(end_state[:, 0], end_state[:, 1],
                           rng.random(matrix.n_sites))
        current = np.column_stack([u, v])
    return record


# ---------------------------------------------------------------------------
# chunked vectorized Monte Carlo engine


def _pair_batch(states: np.ndarray, pos: np.ndarray, ysum: np.ndarray,
                ydiff: np.ndarray) -> np.ndarray:
    xs = states[:, pos, :]
    s = xs[:, :, 0] + xs[:, :, 1]
    d = xs[:, :, 0] - xs[:, :, 1]
    return -(s @ ysum) + 1j * (d @ ydiff)


def _resample_batch(states: np.ndarray, unif: np.ndarray) -> np.ndarray:
    u, v = resample_uv(states[:, :, 0], states[:, :, 1], unif)
    return np.stack([u, v], axis=2)


def _run_chunk(task) -> dict[str, np.ndarray]:
    ctx, chunk_idx, n_rep = task
    rng = stream_rng(ctx["seed"], ctx["label"], chunk_idx)
    n_sites = ctx["x0"].shape[0]
    states = np.broadcast_to(ctx["x0"], (n_rep, n_sites, 2)).copy()
    tables = ctx["y_tables"]
    want_mart = ctx["want_martingale"]
    q = ctx["quad_substeps"]
    a = ctx["a"]

    integral = np.zeros((n_rep, len(tables)), dtype=complex) if want_mart else None
    sup = None
    if ctx["beta"] is not None:
        sup = np.full(n_rep, float(states[0].sum(axis=1) @ ctx["beta"]))

    def advance(p_sub_or_full, length, simpson_w):
        # flow one segment; with quadrature, also accumulate the drift integral
        nonlocal states
        if not want_mart:
            if length > 0.0:
                states = p_sub_or_full @ states
            return
        if length == 0.0:
            return
        for j in range(q + 1):
            if j > 0:
                states = p_sub_or_full @ states
            drift = a @ states
            for i, (pos, ysum, ydiff) in enumerate(tables):
                integrand = _pair_batch(drift, pos, ysum, ydiff) \
                    * np.exp(_pair_batch(states, pos, ysum, ydiff))
                integral[:, i] += simpson_w[j] * integrand

    for _ in range(ctx["n_jumps"]):
        advance(ctx["p_step"], ctx["epsilon"], ctx["w_step"])
        states = _resample_batch(states, rng.random((n_rep, n_sites)))
        if sup is not None:
            np.maximum(sup, states.sum(axis=2) @ ctx["beta"], out=sup)
    if ctx["rem"] > 0.0:
        advance(ctx["p_rem"], ctx["rem"], ctx["w_rem"])

    out: dict[str, np.ndarray] = {}
    if ctx["want_final"]:
        out["final"] = states
    if ctx["site"] is not None:
        st = states[:, ctx["site"], :]
        out["site_values"] = st.copy()
        out["site_signed"] = st[:, 0] - st[:, 1]
    if ctx["weights"] is not None:
        agg = (states * ctx["weights"][None, :, None]).sum(axis=1)
        u, v = resample_uv(agg[:, 0], agg[:, 1], rng.random(n_rep))
        out["agg_signed"] = u - v
    if sup is not None:
        out["sup_beta"] = sup
    if ctx["want_h_final"] or want_mart:
        h_final = np.empty((n_rep, len(tables)), dtype=complex)
        for i, (pos, ysum, ydiff) in enumerate(tables):
            h_final[:, i] = np.exp(_pair_batch(states, pos, ysum, ydiff))
        if ctx["want_h_final"]:
            out["h_final"] = h_final
        if want_mart:
            out["martingale"] = h_final - ctx["h0"][None, :] \
                - ctx["drift_scale"] * integral
    if ctx["want_interface"]:
        x1pos = states[:, :, 0] > 0.0
        x2pos = states[:, :, 1] > 0.0
        s_min, s_max = ctx["site_range"]
        any1 = x1pos.any(axis=1)
        any2 = x2pos.any(axis=1)
        out["b1"] = np.where(any1, s_max - np.argmax(x1pos[:, ::-1], axis=1) + 1,
                             s_min - 1)
        out["b2"] = np.where(any2, s_min + np.argmax(x2pos, axis=1), s_max + 1)
        out["x2_positive"] = x2pos
    return out


def _simpson_weights(length: float, q: int) -> np.ndarray:
    w = np.full(q + 1, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return w * (length / q / 3.0)


def simulate_batch(x0: Configuration, matrix: MigrationMatrix,
                   params: TrotterParams, *, n_replicas: int, seed: int,
                   label: str, y_list=(), collect_final: bool = False,
                   site: int | None = None, agg_weights=None,
                   beta=None, collect_h_final: bool = False,
                   collect_martingale: bool = False,
                   collect_interface: bool = False, drift_scale: float = 1.0,
                   workers: int = 1, chunk_size: int = DEFAULT_CHUNK) -> dict[str, np.ndarray]:
    """Run many replicas of the grid chain, returning per-replica statistics.

    Replicas are processed in fixed-size chunks; chunk j draws from the
    stream (seed, label, j), and chunk outputs are concatenated in index
    order, so the result is independent of the worker count.  Available
    outputs: final states, signed boundary value and raw coordinates at
    one site, an aggregated exit draw for weight vectors, the running sup
    of the beta norm over grid times, H at the horizon, the martingale
    functional at the horizon, and interface positions.
    """
    if x0.sites != matrix.sites:
        raise ValueError("configuration and matrix use different site sets")
    if n_replicas < 1:
        raise ValueError("n_replicas must be >= 1")
    y_list = list(y_list)
    if (collect_martingale or collect_h_final) and not y_list:
        raise ValueError("these outputs need at least one test function")
    n_jumps, rem = grid_layout(params)
    q = params.quad_substeps

    if collect_martingale:
        p_step = flow_operator(matrix, params.epsilon / q, params.flow_tol)
        p_rem = flow_operator(matrix, rem / q, params.flow_tol) if rem > 0.0 else None
    else:
        p_step = flow_operator(matrix, params.epsilon, params.flow_tol)
        p_rem = flow_operator(matrix, rem, params.flow_tol) if rem > 0.0 else None

    tables = _y_tables(matrix.sites, y_list)
    h0 = np.array([np.exp(_pair_single(x0.values, tb)) for tb in tables],
                  dtype=complex)
    ctx = {
        "x0": x0.values,
        "a": matrix.dense,
        "p_step": p_step,
        "p_rem": p_rem,
        "epsilon": params.epsilon,
        "rem": rem,
        "n_jumps": n_jumps,
        "quad_substeps": q,
        "w_step": _simpson_weights(params.epsilon, q),
        "w_rem": _simpson_weights(rem, q) if rem > 0.0 else None,
        "y_tables": tables,
        "h0": h0,
        "drift_scale": float(drift_scale),
        "seed": int(seed),
        "label": str(label),
        "want_final": bool(collect_final),
        "want_h_final": bool(collect_h_final),
        "want_martingale": bool(collect_martingale),
        "want_interface": bool(collect_interface),
        "site": matrix.index_of(site) if site is not None else None,
        "weights": np.asarray(agg_weights, dtype=float) if agg_weights is not None else None,
        "beta": np.asarray(beta.beta if hasattr(beta, "beta") else beta, dtype=float)
                if beta is not None else None,
        "site_range": (matrix.sites[0], matrix.sites[-1]),
    }

    tasks = []
    start = 0
    idx = 0
    while start < n_replicas:
        stop = min(start + chunk_size, n_replicas)
        tasks.append((ctx, idx, stop - start))
        start = stop
        idx += 1

    if workers <= 1 or len(tasks) == 1:
        results = [_run_chunk(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, tasks))

    merged: dict[str, np.ndarray] = {}
    for key in results[0]:
        merged[key] = np.concatenate([r[key] for r in results], axis=0)
    merged["provenance"] = f"seed={seed}/{label}/chunks=0..{len(tasks) - 1}x{chunk_size}"
    return merged
