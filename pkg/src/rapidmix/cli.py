"""Command-line entry point: ``rapidmix <experiment> [--config FILE] [--set key=value ...]``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .channels import ConditionalExpectation
from .config import EXPERIMENTS, ExperimentConfig, parse_config, parse_value
from .correlations import CSV_COLUMNS, decay_scan
from .davies import DENSE_GAP_MAX_DIM, DaviesGenerator, slowest_mode, spectral_gap
from .dynamics import default_initial_states, evolve, mixing_time, mlsi_upper_estimate
from .errors import ConfigError, RapidmixError, ResourceError
from .report import build_report
from .suites import run_suites
from .tensorization import c_of_l_estimate, tensorization_sweep
from .linalg import random_density

log = logging.getLogger("rapidmix")

TOLERANCES = {
    "verify_default": 1e-8,
    "tensorization_slack": -1e-8,
    "mixing_time_resolution": 1e-3,
    "decay_fit_floor": 1e-12,
}


class Outcome:
    """Tables produced by one experiment plus whether its own checks passed."""

    def __init__(self):
        self.tables: dict[str, tuple[list[str], list[dict]]] = {}
        self.ok = True
        self.notes: list[str] = []

    def add(self, name: str, header, rows) -> None:
        self.tables[name] = (list(header), rows)


def workers(cfg: ExperimentConfig) -> int:
    cap = os.environ.get("RAPIDMIX_THREADS")
    n = cfg["workers"]
    if cap is not None:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ConfigError("RAPIDMIX_THREADS must be an integer") from None
    return n


def pmap(cfg: ExperimentConfig, fn: Callable, items: list) -> list:
    """Ordered map over a thread pool; result order follows ``items``."""
    n = workers(cfg)
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".12g")
    if isinstance(v, (list, tuple)):
        return " ".join(str(x) for x in v)
    return str(v)


def write_csv(path: Path, header: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r[h]) for h in header])


def _check_dim(cfg: ExperimentConfig, dim: int, super_op: bool = False) -> None:
    res = cfg["resources"]
    if dim > res["max_hilbert_dim"]:
        raise ResourceError(f"Hilbert dimension {dim} exceeds resources.max_hilbert_dim")
    if super_op and dim > res["max_super_dim"]:
        raise ResourceError(f"dimension {dim} exceeds resources.max_super_dim for superoperator work")


def _sized(cfg: ExperimentConfig, n: int):
    if cfg["graph"]["kind"] != "chain":
        return cfg.ensemble()
    return cfg.ensemble(n=n)


# ---------------------------------------------------------------- experiments


def exp_verify(cfg: ExperimentConfig) -> Outcome:
    E = cfg.ensemble()
    _check_dim(cfg, E.d ** E.graph.n)
    checks = run_suites(E, cfg["seed"])
    out = Outcome()
    out.add("verify", ["suite", "check", "value", "tol", "passed"], [c.row() for c in checks])
    out.ok = all(c.passed for c in checks)
    return out


def exp_scan(cfg: ExperimentConfig) -> Outcome:
    E = cfg.ensemble()
    _check_dim(cfg, E.d ** E.graph.n)
    sc = cfg["scan"]
    results = pmap(cfg, lambda m: decay_scan(E, m, sc["ls"]), list(sc["measures"]))
    out = Outcome()
    rows = [r for res in results for r in res.rows]
    fits = [{"measure": res.measure, "rate": res.fit.rate, "prefactor": res.fit.prefactor,
             "r_squared": res.fit.r_squared, "window_lo": res.fit.window[0], "window_hi": res.fit.window[1],
             "exact_zero": res.fit.exact_zero} for res in results]
    out.add("clustering_scan", CSV_COLUMNS, rows)
    out.add("clustering_fits", ["measure", "rate", "prefactor", "r_squared", "window_lo", "window_hi",
                                "exact_zero"], fits)
    return out


def _gap_row(cfg: ExperimentConfig, n: int) -> dict:
    E = _sized(cfg, n)
    dim = E.d ** E.graph.n
    _check_dim(cfg, dim)
    dv = cfg["davies"]
    L = DaviesGenerator(E, couplings=dv["couplings"], chi=dv["chi"]).superop("heisenberg", "dissipative")
    g = spectral_gap(L, E.sigma(E.graph.vertices))
    return {"n": E.graph.n, "dim": dim, "gap": g.gap, "kernel_dim": g.kernel_dim, "method": g.method}


def exp_gap(cfg: ExperimentConfig) -> Outcome:
    rows = pmap(cfg, lambda n: _gap_row(cfg, n), list(cfg["gap"]["sizes"]))
    out = Outcome()
    out.add("davies_gap", ["n", "dim", "gap", "kernel_dim", "method"], rows)
    out.ok = all(r["gap"] > 0 and r["kernel_dim"] == 1 for r in rows)
    return out


def _mlsi_row(cfg: ExperimentConfig, n: int) -> dict:
    E = _sized(cfg, n)
    g = E.graph
    dim = E.d ** g.n
    _check_dim(cfg, dim, super_op=True)
    dv, ml = cfg["davies"], cfg["mlsi"]
    gen = DaviesGenerator(E, couplings=dv["couplings"], chi=dv["chi"])
    sig = E.sigma(g.vertices)
    Ls, Lh = gen.superop("schrodinger", "dissipative"), gen.superop("heisenberg", "dissipative")
    Eg = ConditionalExpectation(g.vertices, g.vertices, np.eye(dim)[None].astype(complex), sig, E.d)
    gap = spectral_gap(Lh, sig).gap
    slow = slowest_mode(Lh, sig) if dim <= DENSE_GAP_MAX_DIM else None
    est = mlsi_upper_estimate(Ls, Eg, budget=ml["budget"], rng=np.random.default_rng(cfg["seed"]),
                              L_heis=Lh, sigma=sig, n_random=ml["n_random"], slow_mode=slow)
    return {"n": g.n, "dim": dim, "gap": gap, "mlsi_estimate": est.ratio, "ratio_to_gap": est.ratio / gap,
            "samples": est.samples}


def exp_mlsi(cfg: ExperimentConfig) -> Outcome:
    rows = pmap(cfg, lambda n: _mlsi_row(cfg, n), list(cfg["mlsi"]["sizes"]))
    out = Outcome()
    out.add("mlsi", ["n", "dim", "gap", "mlsi_estimate", "ratio_to_gap", "samples"], rows)
    out.ok = all(r["mlsi_estimate"] > 0 for r in rows)
    return out


def exp_mix(cfg: ExperimentConfig) -> Outcome:
    E = cfg.ensemble()
    g = E.graph
    dim = E.d ** g.n
    _check_dim(cfg, dim, super_op=True)
    dv, mx = cfg["davies"], cfg["mix"]
    gen = DaviesGenerator(E, couplings=dv["couplings"], chi=dv["chi"])
    sig = E.sigma(g.vertices)
    gap = spectral_gap(gen.superop("heisenberg", "dissipative"), sig).gap
    L = gen.superop("schrodinger")
    rng = np.random.default_rng(cfg["seed"])
    states = default_initial_states(dim, rng, mx["n_random"])
    rows = []
    for eps in mx["eps"]:
        r = mixing_time(L, sig, eps, gap, initial_states=states, rng=rng)
        rows.append({"eps": eps, "t_mix": r.t_mix, "gap": gap, "gap_bound": r.gap_bound,
                     "n_states": len(states), "bound_ok": r.t_mix <= r.gap_bound})
    times = np.linspace(0.0, mx["t_max"], mx["steps"])
    tr = evolve(L, states[0], times, sigma=sig)
    traj = [{"t": t, "trace_distance": a, "rel_entropy": b} for t, a, b in zip(times, tr.trace_distance,
                                                                                 tr.rel_entropy)]
    out = Outcome()
    out.add("mixing", ["eps", "t_mix", "gap", "gap_bound", "n_states", "bound_ok"], rows)
    out.add("mixing_trajectory", ["t", "trace_distance", "rel_entropy"], traj)
    out.ok = all(r["bound_ok"] for r in rows)
    return out


def exp_tensorize(cfg: ExperimentConfig) -> Outcome:
    E = cfg.ensemble()
    g = E.graph
    dim = E.d ** g.n
    _check_dim(cfg, dim)
    tz = cfg["tensorize"]
    rng = np.random.default_rng(cfg["seed"])
    states = [random_density(dim, rng) for _ in range(tz["n_states"])]
    reps = tensorization_sweep(E, states, restarts=tz["restarts"], rng=rng)
    rows = [dict(r.to_row(), state=i % len(states)) for i, r in enumerate(reps)]
    ens = []
    for n in tz["c_sizes"]:
        _check_dim(cfg, E.d ** n)
        ens.append(cfg.ensemble(n=n))
    cs = c_of_l_estimate(ens, l0=tz["l0"], seed=cfg["seed"])
    crow = [{"L": c.L, "n_sites": c.n_sites, "c_hat": c.c_hat, "evaluated": c.evaluated, "skipped": c.skipped}
            for c in cs]
    out = Outcome()
    out.add("tensorization", ["C", "D", "l", "state", "lhs", "rhs_C", "rhs_D", "eta", "slack", "passed"], rows)
    out.add("c_of_l", ["L", "n_sites", "c_hat", "evaluated", "skipped"], crow)
    out.ok = all(r.passed for r in reps if r.eta < 0.5)
    return out


RUNNERS: dict[str, Callable[[ExperimentConfig], Outcome]] = {
    "verify": exp_verify,
    "scan-clustering": exp_scan,
    "davies-gap": exp_gap,
    "mlsi": exp_mlsi,
    "mix": exp_mix,
    "tensorize": exp_tensorize,
}


# ---------------------------------------------------------------- orchestration


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _manifest_files(out_dir: Path) -> dict[str, str]:
    files = sorted(p for p in out_dir.rglob("*") if p.is_file() and p.name != "manifest.json")
    return {str(p.relative_to(out_dir)): _sha(p) for p in files}


def run(cfg: ExperimentConfig) -> tuple[dict, int]:
    """Run the configured experiment, write outputs and the manifest; returns (manifest, exit code)."""
    out_dir = cfg.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    kind = cfg.kind
    start = time.time()
    status, message, code = "passed", "", 0
    if kind != "report":
        try:
            outcome = RUNNERS[kind](cfg)
            for name, (header, rows) in outcome.tables.items():
                write_csv(out_dir / f"{name}.csv", header, rows)
            if not outcome.ok:
                status, code = "failed", 1
            if time.time() - start > cfg["resources"]["max_wall_clock"]:
                raise ResourceError("experiment exceeded resources.max_wall_clock")
        except ResourceError as exc:
            status, message, code = "failed", f"resource: {exc}", 3
        except RapidmixError as exc:
            status, message, code = "failed", f"{type(exc).__name__}: {exc}", 1
    try:
        build_report(out_dir)
    except (OSError, ValueError, KeyError) as exc:
        log.warning("report generation failed: %s", exc)
        if code == 0:
            status, message, code = "failed", f"report: {exc}", 1
    manifest = {
        "artifact": "rapidmix",
        "version": __version__,
        "config_hash": cfg.hash(),
        "config": cfg.data,
        "overrides": {k: v for k, v in cfg.overrides},
        "wall_clock_seconds": round(time.time() - start, 3),
        "experiments": {kind: {"status": status, "message": message}},
        "tolerances": TOLERANCES,
        "files": _manifest_files(out_dir),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest, code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rapidmix", description="Davies and Schmidt dynamics experiments.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a dotted config key (value parsed as JSON when possible)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {"experiment": args.experiment}
    try:
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            k, v = item.split("=", 1)
            overrides[k.strip()] = parse_value(v)
        if args.out is not None:
            overrides["output_dir"] = args.out
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.beta is not None:
            overrides["model.beta"] = args.beta
        cfg = parse_config(args.config, overrides)
        cfg.ensemble()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    manifest, code = run(cfg)
    st = manifest["experiments"][cfg.kind]
    print(f"{cfg.kind}: {st['status']}" + (f" ({st['message']})" if st["message"] else ""))
    print(f"outputs in {cfg.output_dir}")
    return code


if __name__ == "__main__":
    sys.exit(main())
