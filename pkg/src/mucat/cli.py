"""Batch command-line front end.

Subcommands: ``sample-quadrant`` draws exact exit samples as CSV;
``simulate`` runs replicated paths from a JSON experiment document and
writes per-replica CSV plus an aggregate JSON summary; ``verify`` runs a
chosen subset of the statistical test suites and exits nonzero unless
every report passes; ``interface-study`` tabulates the interface law on
the integer window.  All randomness derives from the single master seed
in the document (or --seed), with per-test and per-replica streams hashed
from (seed, label, index), so reruns are byte-identical for any worker
count.  Floats in CSV are written with 17 significant digits so tables
round-trip losslessly.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .lattice import Configuration, TestFunction
from .migration import MigrationMatrix, WeightVector, build_beta, build_matrix
from .quadrant import sample_signed
from .seeds import stream_rng
from .trotter import TrotterParams, grid_layout, simulate
from . import verify as V

__all__ = ["main", "ExperimentDoc", "cmd_sample_quadrant", "cmd_simulate",
           "cmd_verify", "cmd_interface_study"]

ALL_SUITES = ("quadrant", "martingale", "marginal", "correlation",
              "interface", "refinement", "doob")
CONTROL_SUITES = ("controls",)


def _fmt(x: float) -> str:
    return "%.17g" % float(x)


@dataclass
class ExperimentDoc:
    """Validated experiment document: matrix, state, grid, and test knobs."""

    matrix: MigrationMatrix
    beta: WeightVector
    x0: Configuration
    epsilons: list[float]
    horizon: float
    record_times: tuple[float, ...]
    y_list: list[TestFunction]
    replicas: int
    seed: int
    out_dir: str | None
    quad_substeps: int
    flow_tol: float
    write_paths: bool
    verify_cfg: dict
    raw: dict

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentDoc":
        if not isinstance(data, dict):
            raise ValueError("experiment document must be a JSON object")
        for key in ("matrix", "horizon", "replicas", "seed"):
            if key not in data:
                raise ValueError(f"experiment document misses required key {key!r}")
        matrix = build_matrix(data["matrix"])
        beta = build_beta(matrix, float(data.get("beta_decay", 1.0)))
        site_set = set(matrix.sites)

        values = np.zeros((matrix.n_sites, 2))
        for item in data.get("initial", []):
            site = int(item["site"])
            if site not in site_set:
                raise ValueError(f"initial state references unknown site {site}")
            pos = matrix.index_of(site)
            values[pos, 0] = float(item.get("type1", 0.0))
            values[pos, 1] = float(item.get("type2", 0.0))
        x0 = Configuration(matrix.sites, values)

        epsilons = [float(e) for e in data.get("epsilons", [0.1])]
        if not epsilons or any(e <= 0.0 for e in epsilons):
            raise ValueError("epsilons must be a nonempty list of positive reals")
        horizon = float(data["horizon"])
        if horizon < 0.0:
            raise ValueError("horizon must be >= 0")
        record_times = tuple(float(t) for t in data.get("record_times", [horizon]))

        y_list = []
        for spec in data.get("test_functions", []):
            items = []
            for item in spec:
                site = int(item["site"])
                if site not in site_set:
                    raise ValueError(f"test function references unknown site {site}")
                items.append((site, (float(item.get("type1", 0.0)),
                                     float(item.get("type2", 0.0)))))
            y_list.append(TestFunction.from_pairs(items))

        replicas = int(data["replicas"])
        if replicas < 1:
            raise ValueError("replicas must be >= 1")
        verify_cfg = data.get("verify", {})
        if not isinstance(verify_cfg, dict):
            raise ValueError("verify section must be an object")

        return cls(
            matrix=matrix, beta=beta, x0=x0, epsilons=epsilons,
            horizon=horizon, record_times=record_times, y_list=y_list,
            replicas=replicas, seed=int(data["seed"]),
            out_dir=data.get("out_dir"),
            quad_substeps=int(data.get("quad_substeps", 8)),
            flow_tol=float(data.get("flow_tol", 1e-12)),
            write_paths=bool(data.get("write_paths", True)),
            verify_cfg=verify_cfg, raw=data,
        )

    @classmethod
    def load(cls, path) -> "ExperimentDoc":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def params(self, epsilon: float) -> TrotterParams:
        return TrotterParams(epsilon=epsilon, horizon=self.horizon,
                             flow_tol=self.flow_tol,
                             quad_substeps=self.quad_substeps,
                             record_times=self.record_times)


# ---------------------------------------------------------------------------
# sample-quadrant


def cmd_sample_quadrant(u: float, v: float, n: int, seed: int, out) -> int:
    """Write n exact exit samples from (u, v) as CSV rows axis,value."""
    rng = stream_rng(seed, "sample-quadrant")
    signed = sample_signed((u, v), n, rng)
    lines = ["axis,value"]
    for s in signed:
        axis = "horizontal" if s >= 0.0 else "vertical"
        lines.append(f"{axis},{_fmt(abs(s))}")
    text = "\n".join(lines) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")
    return 0


# ---------------------------------------------------------------------------
# simulate


def _replica_task(task):
    x0, matrix, params, y_list, seed, label, replica = task
    rng = stream_rng(seed, label, replica)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rec = simulate(x0, matrix, params, y_list, rng)
    states = np.array([c.values for c in rec.states])
    mart = np.array(rec.martingale_values, dtype=complex)
    return replica, rec.times, states, mart


def cmd_simulate(doc: ExperimentDoc, out_dir, workers: int = 1) -> int:
    """Run the document's replicas, writing path CSVs and a JSON summary."""
    out = Path(out_dir or doc.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    summary = {"seed": doc.seed, "replicas": doc.replicas,
               "horizon": doc.horizon, "epsilons": doc.epsilons,
               "record_times": list(doc.record_times), "results": []}
    for j, eps in enumerate(doc.epsilons):
        params = doc.params(eps)
        n_jumps, _ = grid_layout(params)
        if n_jumps == 0 and doc.horizon > 0.0:
            warnings.warn(f"epsilon {eps} exceeds the horizon: "
                          "single flow segment, no resampling")
        label = f"simulate-eps{j}"
        tasks = [(doc.x0, doc.matrix, params, doc.y_list, doc.seed, label, r)
                 for r in range(doc.replicas)]
        if workers <= 1:
            results = [_replica_task(t) for t in tasks]
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_replica_task, tasks))

        n_times = len(doc.record_times)
        state_est = [[V.PathEstimate() for _ in range(2 * doc.matrix.n_sites)]
                     for _ in range(n_times)]
        mart_est = [[V.PathEstimate() for _ in doc.y_list] for _ in range(n_times)]
        rows = []
        for replica, times, states, mart in results:
            for ti in range(n_times):
                row = [str(replica), _fmt(times[ti])]
                flat = states[ti].reshape(-1)
                row.extend(_fmt(x) for x in flat)
                for yi in range(len(doc.y_list)):
                    row.append(_fmt(mart[yi, ti].real))
                    row.append(_fmt(mart[yi, ti].imag))
                rows.append(",".join(row))
                for ci, x in enumerate(flat):
                    state_est[ti][ci] = state_est[ti][ci].merge(
                        V.PathEstimate.from_samples([float(x)]))
                for yi in range(len(doc.y_list)):
                    mart_est[ti][yi] = mart_est[ti][yi].merge(
                        V.PathEstimate.from_samples([complex(mart[yi, ti])]))

        if doc.write_paths:
            header = ["replica", "time"]
            for site in doc.matrix.sites:
                header.extend([f"x1_{site}", f"x2_{site}"])
            for yi in range(len(doc.y_list)):
                header.extend([f"mart{yi}_re", f"mart{yi}_im"])
            path = out / f"paths_eps{j}.csv"
            path.write_text("\n".join([",".join(header)] + rows) + "\n",
                            encoding="utf-8")

        eps_summary = {"epsilon": eps, "record_times": list(doc.record_times),
                       "state_mean": [], "state_se": [],
                       "martingale_mean": [], "martingale_se": []}
        for ti in range(n_times):
            means = [e.mean.real for e in state_est[ti]]
            ses = [e.se_re if e.n > 1 else 0.0 for e in state_est[ti]]
            eps_summary["state_mean"].append(means)
            eps_summary["state_se"].append(ses)
            eps_summary["martingale_mean"].append(
                [[e.mean.real, e.mean.imag] for e in mart_est[ti]])
            eps_summary["martingale_se"].append(
                [[e.se_re if e.n > 1 else 0.0, e.se_im if e.n > 1 else 0.0]
                 for e in mart_est[ti]])
        summary["results"].append(eps_summary)

    (out / "summary.json").write_text(
        json.dumps(V.jsonable(summary), indent=2) + "\n", encoding="utf-8")
    return 0


# ---------------------------------------------------------------------------
# verify


def _verify_reports(doc: ExperimentDoc, suites, workers: int) -> list[dict]:
    cfg = doc.verify_cfg
    eps = doc.epsilons[0]
    params = doc.params(eps)
    n_rep = int(cfg.get("replicas", doc.replicas))
    site = int(cfg.get("site", doc.matrix.sites[0]))
    t = float(cfg.get("time", doc.horizon))
    reports: list[dict] = []

    def add(name: str, params_dict: dict, result) -> None:
        if isinstance(result, V.GofReport):
            reports.append({"test": name, "params": V.jsonable(params_dict),
                            "estimate": None,
                            "se_or_statistic": result.statistic,
                            "threshold": result.threshold,
                            "pass": bool(result.passed)})
        else:
            doc_json = result.to_json()
            doc_json["test"] = name
            reports.append(doc_json)

    for suite in suites:
        if suite == "quadrant":
            points = [tuple(p) for p in cfg.get("quadrant_points",
                                                [[1.0, 2.0], [1.0, 1.0]])]
            n = int(cfg.get("quadrant_n", 100_000))
            for i, x in enumerate(points):
                add("quadrant_gof", {"x": list(x), "n": n},
                    V.sampler_gof_test(x, n, doc.seed, label=f"quadrant-gof-{i}"))
                rep = V.moment_mc_test(x, 1, 1.5, n, doc.seed,
                                       label=f"quadrant-moment-{i}")
                reports.append(rep.to_json())
        elif suite == "martingale":
            if not doc.y_list:
                raise ValueError("martingale suite needs a test function")
            rep = V.martingale_mean_test(doc.x0, doc.matrix, params,
                                         doc.y_list[0], n_rep, doc.seed,
                                         workers=workers)
            reports.append(rep.to_json())
        elif suite == "marginal":
            add("marginal_law", {"site": site, "t": t, "epsilon": eps, "n": n_rep},
                V.marginal_law_test(doc.x0, doc.matrix, params, site, t,
                                    n_rep, doc.seed, workers=workers))
            weights = cfg.get("aggregate_weights")
            if weights is not None:
                add("aggregated_law",
                    {"weights": list(weights), "t": t, "epsilon": eps, "n": n_rep},
                    V.aggregated_law_test(doc.x0, doc.matrix, params, weights,
                                          t, n_rep, doc.seed, workers=workers))
        elif suite == "correlation":
            rep = V.correlation_test(doc.x0, doc.matrix, params, site, t,
                                     n_rep, doc.seed, workers=workers)
            reports.append(rep.to_json())
        elif suite == "interface":
            icfg = cfg.get("interface")
            if icfg is None:
                raise ValueError("interface suite needs a verify.interface section")
            rep = V.interface_law_test(
                float(icfg["u"]), float(icfg["v"]),
                int(icfg["window_radius"]), float(icfg["time"]),
                float(icfg.get("epsilon", eps)),
                int(icfg.get("replicas", n_rep)), doc.seed, workers=workers)
            reports.append(rep.to_json())
        elif suite == "refinement":
            if not doc.y_list:
                raise ValueError("refinement suite needs a test function")
            rep = V.refinement_study(doc.x0, doc.matrix, doc.horizon,
                                     doc.y_list[0], doc.epsilons, n_rep,
                                     doc.seed, quad_substeps=doc.quad_substeps,
                                     flow_tol=doc.flow_tol, workers=workers)
            reports.append(rep.to_json())
        elif suite == "doob":
            big_k = float(cfg.get("big_k", 10.0))
            rep = V.submartingale_doob_test(doc.x0, doc.matrix, params,
                                            doc.beta, big_k, n_rep, doc.seed,
                                            workers=workers)
            reports.append(rep.to_json())
        elif suite == "controls":
            rep = V.martingale_mean_test(doc.x0, doc.matrix, params,
                                         doc.y_list[0], n_rep, doc.seed,
                                         drift_scale=2.0, workers=workers)
            reports.append(rep.to_json())
            flowed = V.flow_field(doc.x0.values, t, doc.matrix, doc.flow_tol)
            wrong = tuple(2.0 * flowed[doc.matrix.index_of(site)] + 0.5)
            add("marginal_law_control",
                {"site": site, "t": t, "reference": list(wrong)},
                V.marginal_law_test(doc.x0, doc.matrix, params, site, t,
                                    n_rep, doc.seed, reference_override=wrong,
                                    workers=workers, label="marginal-control"))
            rep = V.correlation_test(doc.x0, doc.matrix, params, site, t,
                                     n_rep, doc.seed, flip_sign=True,
                                     workers=workers, label="correlation-control")
            reports.append(rep.to_json())
        else:
            raise ValueError(f"unknown suite {suite!r}")
    return reports


def cmd_verify(doc: ExperimentDoc, suites, out, workers: int = 1) -> int:
    """Run the chosen suites; exit status 0 iff every report passes."""
    reports = _verify_reports(doc, suites, workers)
    all_pass = all(r["pass"] for r in reports)
    consolidated = {"seed": doc.seed, "suites": list(suites),
                    "reports": reports, "all_pass": all_pass}
    text = json.dumps(consolidated, indent=2) + "\n"
    if out is not None:
        Path(out).write_text(text, encoding="utf-8")
    for r in reports:
        status = "PASS" if r["pass"] else "FAIL"
        print(f"[{status}] {r['test']}")
    if out is None:
        sys.stdout.write(text)
    return 0 if all_pass else 1


# ---------------------------------------------------------------------------
# interface-study


def cmd_interface_study(doc: ExperimentDoc, out_dir, workers: int = 1) -> int:
    """Tabulate the interface law from the document's interface section."""
    icfg = doc.verify_cfg.get("interface") or doc.raw.get("interface")
    if icfg is None:
        raise ValueError("interface study needs an interface section")
    rep = V.interface_law_test(
        float(icfg["u"]), float(icfg["v"]), int(icfg["window_radius"]),
        float(icfg["time"]), float(icfg.get("epsilon", doc.epsilons[0])),
        int(icfg.get("replicas", doc.replicas)), doc.seed,
        ks_sites=tuple(icfg.get("sites", range(-3, 4))), workers=workers)
    out = Path(out_dir or doc.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    lines = ["k,empirical,formula,tolerance,pass"]
    for row in rep.detail["table"]:
        lines.append(f"{row['k']},{_fmt(row['empirical'])},"
                     f"{_fmt(row['formula'])},{_fmt(row['tolerance'])},"
                     f"{int(row['pass'])}")
    (out / "interface.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / "interface.json").write_text(
        json.dumps(rep.to_json(), indent=2) + "\n", encoding="utf-8")
    return 0 if rep.passed else 1


# ---------------------------------------------------------------------------
# argument parsing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mucat",
        description="simulate and statistically verify the infinite-rate "
                    "mutually catalytic branching dynamics")
    sub = parser.add_subparsers(dest="command", required=True)

    sq = sub.add_parser("sample-quadrant", help="exact exit-law samples as CSV")
    sq.add_argument("--u", type=float, required=True)
    sq.add_argument("--v", type=float, required=True)
    sq.add_argument("--n", type=int, required=True)
    sq.add_argument("--seed", type=int, default=0)
    sq.add_argument("--out", default=None)

    for name, help_text in (("simulate", "run replicated paths from a document"),
                            ("verify", "run statistical verification suites"),
                            ("interface-study", "tabulate the interface law")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment document (JSON)")
        p.add_argument("--seed", type=int, default=None, help="override the document seed")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--out", default=None)
        if name == "verify":
            p.add_argument("--suite", default="all",
                           help="comma list from: " + ",".join(ALL_SUITES + CONTROL_SUITES))
    return parser


def _load_doc(args) -> ExperimentDoc:
    doc = ExperimentDoc.load(args.config)
    if args.seed is not None:
        data = dict(doc.raw)
        data["seed"] = args.seed
        doc = ExperimentDoc.from_dict(data)
    return doc


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "sample-quadrant":
        return cmd_sample_quadrant(args.u, args.v, args.n, args.seed, args.out)
    doc = _load_doc(args)
    if args.command == "simulate":
        return cmd_simulate(doc, args.out, workers=args.workers)
    if args.command == "verify":
        suites = ALL_SUITES if args.suite == "all" else tuple(
            s.strip() for s in args.suite.split(",") if s.strip())
        return cmd_verify(doc, suites, args.out, workers=args.workers)
    if args.command == "interface-study":
        return cmd_interface_study(doc, args.out, workers=args.workers)
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
