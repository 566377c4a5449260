"""Command line entry point: ``covlaw <subcommand> --config run.json``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .equivalents import make_domain, wigner_edges, wigner_m
from .experiments import (local_law_grid, run_edge_stats, run_local_law, run_rigidity,
                          run_wigner_edge, run_wigner_scan, two_atom_spectrum, wigner_grid)
from .model import ModelError, PopulationModel, SolverError, classical_locations, density_grid, solve_profile
from .output import (default_out_dir, density_plot, histogram_plot, scan_plot, sha256_file, write_csv,
                     write_json)
from .resolvent import ErrorScan, averaged_scan, factorize_sample
from .sampler import DistributionError, EntryDistribution, k_coefficients, sample_X

log = logging.getLogger("covlaw")

SCHEMA_VERSION = 1

_atoms = {"type": "array", "minItems": 1, "items": {
    "type": "object", "additionalProperties": False, "required": ["s", "weight"],
    "properties": {"s": {"type": "number", "minimum": 0}, "weight": {"type": "number", "exclusiveMinimum": 0}}}}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "model": {"type": "object", "additionalProperties": False, "required": ["phi", "atoms"],
                  "properties": {"phi": {"type": "number", "exclusiveMinimum": 0}, "atoms": _atoms,
                                 "tau": {"type": "number", "exclusiveMinimum": 0},
                                 "dims": {"type": "object", "additionalProperties": False, "required": ["M", "N"],
                                          "properties": {"M": {"type": "integer", "minimum": 1},
                                                         "Mhat": {"type": "integer", "minimum": 1},
                                                         "N": {"type": "integer", "minimum": 1}}}}},
        "wigner": {"type": "object", "additionalProperties": False, "required": ["N"],
                   "properties": {"N": {"type": "integer", "minimum": 2},
                                  "a": {"type": "array", "items": {"type": "number"}},
                                  "two_atom": {"type": "array", "items": {"type": "number"}, "minItems": 2,
                                               "maxItems": 2},
                                  "rotate_seed": {"type": ["integer", "null"]}}},
        "distribution": {"type": "object", "additionalProperties": False, "required": ["kind"],
                         "properties": {"kind": {"enum": ["gaussian", "rademacher", "shifted-bernoulli",
                                                          "two-point", "user-moments"]},
                                        "symmetry": {"enum": ["real", "complex"]},
                                        "params": {"type": "object"}}},
        "compare_distribution": {"$ref": "#/properties/distribution"},
        "grid": {"type": "object", "additionalProperties": False,
                 "properties": {"n_points": {"type": "integer", "minimum": 1},
                                "tau": {"type": "number", "exclusiveMinimum": 0},
                                "tau_prime": {"type": "number", "exclusiveMinimum": 0},
                                "eta_exponent": {"type": "number", "maximum": 0},
                                "n_e": {"type": "integer", "minimum": 1},
                                "kinds": {"type": "array", "items": {"enum": ["bulk", "edge", "outside"]}},
                                "n_density": {"type": "integer", "minimum": 10}}},
        "trials": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "n_vectors": {"type": "integer", "minimum": 2},
        "edge": {"type": "object", "additionalProperties": False,
                 "properties": {"k": {"type": "integer", "minimum": 1}, "depth": {"type": "integer", "minimum": 1},
                                "beta": {"enum": [1, 2]}}},
        "kcoeffs": {"type": "object", "additionalProperties": False,
                    "required": ["moments0", "moments1", "n_max"],
                    "properties": {"moments0": {"type": "array", "items": {"type": "number"}},
                                   "moments1": {"type": "array", "items": {"type": "number"}},
                                   "theta": {"type": "number", "minimum": 0, "maximum": 1},
                                   "n_max": {"type": "integer", "minimum": 1}}},
        "thresholds": {"type": "object", "additionalProperties": False,
                       "properties": {"aniso_ratio": {"type": "number"}, "avg_ratio": {"type": "number"},
                                      "negative_inflation": {"type": "number"},
                                      "rigidity_p99": {"type": "number"}, "gap_eps": {"type": "number"},
                                      "ks": {"type": "number"}, "ks_pair": {"type": "number"}}},
    },
}

DEFAULT_THRESHOLDS = {"aniso_ratio": 10.0, "avg_ratio": 20.0, "negative_inflation": 10.0,
                      "rigidity_p99": 15.0, "gap_eps": 0.2, "ks": 0.15, "ks_pair": 0.1}


class ConfigError(ValueError):
    pass


class ThresholdFailure(Exception):
    pass


def load_config(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from None
    if "config" in cfg and "command" in cfg:
        cfg = cfg["config"]  # a manifest from an earlier run
    validate_config(cfg, path)
    return cfg


def validate_config(cfg, path="<config>"):
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"{path}: at {where}: {e.message}")


def _model(cfg):
    if "model" not in cfg:
        raise ConfigError("this command needs a 'model' section")
    return PopulationModel.from_dict(cfg["model"])


def _dist(cfg, key="distribution"):
    return EntryDistribution.from_dict(cfg.get(key, {"kind": "gaussian"}))


def _wigner_a(cfg):
    w = cfg.get("wigner")
    if w is None:
        raise ConfigError("this command needs a 'wigner' section")
    N = w["N"]
    if "a" in w:
        a = np.asarray(w["a"], dtype=float)
        if a.size != N:
            raise ConfigError(f"wigner: 'a' has {a.size} entries for N={N}")
    else:
        a = two_atom_spectrum(N, tuple(w.get("two_atom", (0.0, 0.0))))
    return a, N, w.get("rotate_seed")


# ---------------------------------------------------------------------------
# subcommands; each returns (summary dict, list of written files, checks)
# ---------------------------------------------------------------------------

def cmd_density(cfg, args, out):
    prof = solve_profile(_model(cfg))
    n = cfg.get("grid", {}).get("n_density", 400)
    E, rho = density_grid(prof, n=n)
    files = [write_csv(out / "density.csv", ["E", "rho"], zip(E, rho))]
    gamma = classical_locations(prof) if prof.model.dims is not None else None
    files.append(write_json(out / "profile.json", prof.to_dict(gamma)))
    files.append(density_plot(E, rho, out / "density.svg", prof.edges))
    return {"p": prof.p, "edges": prof.edges, "components": prof.components}, files, []


def cmd_edges(cfg, args, out):
    prof = solve_profile(_model(cfg))
    for a in prof.edges:
        print(f"{a:.12g}")
    data = {"edges": prof.edges, "critical_points": [None if not np.isfinite(x) else x for x in prof.critical_points],
            "p": prof.p, "degenerate": prof.degenerate}
    return data, [write_json(out / "edges.json", data)], []


def cmd_gamma(cfg, args, out):
    prof = solve_profile(_model(cfg))
    gamma = classical_locations(prof)
    files = [write_csv(out / "gamma.csv", ["i", "gamma"], ((i + 1, g) for i, g in enumerate(gamma)))]
    return {"count": int(gamma.size)}, files, []


def cmd_verify_local_law(cfg, args, out):
    model = _model(cfg)
    prof = solve_profile(model)
    g = cfg.get("grid", {})
    N = model.dims[2]
    kinds = tuple(k for k in g.get("kinds", ["bulk", "edge"]) if k != "outside")
    grid = local_law_grid(prof, N, g.get("n_points", 50), g.get("tau", 0.05), g.get("tau_prime", 0.1),
                          g.get("eta_exponent", -0.8), g.get("n_e", 3), kinds)
    th = {**DEFAULT_THRESHOLDS, **cfg.get("thresholds", {})}
    res = run_local_law(model, _dist(cfg), args.trials, args.seed, grid, cfg.get("n_vectors", 16),
                        m_shift=args.corrupt_m, negative_shift=0.0, threads=args.threads)
    scan = ErrorScan.concat(res.scans)
    scan.seed = args.seed
    files = [out / "scan.csv"]
    scan.to_csv(files[0])
    files.append(scan_plot(scan, out / "scan.svg"))
    if "outside" in g.get("kinds", []):
        dom = make_domain("outside", g.get("tau", 0.05), g.get("tau_prime", 0.1), N, prof)
        zo = dom.grid(4, eta_max=1.0)
        fact = factorize_sample(sample_X(_dist(cfg), model.dims[0], N, args.seed, 0).payload,
                                _sigma_from(model))
        avg = averaged_scan(fact, prof, zo, seed=args.seed)
        files.append(write_csv(out / "outside.csv", ["z_re", "z_im", "avg_err", "improved_ratio"],
                               zip(zo.real, zo.imag, avg.avg_err, avg.improved_ratio)))
    checks = [("aniso_ratio", float(res.max_aniso_ratio.max()), th["aniso_ratio"]),
              ("avg_ratio", float(res.max_avg_ratio.max()), th["avg_ratio"])]
    return {"max_aniso_ratio": res.max_aniso_ratio, "max_avg_ratio": res.max_avg_ratio,
            "grid_points": int(grid.size)}, files, checks


def _sigma_from(model):
    from .equivalents import _sigma_spectrum
    return _sigma_spectrum(model)


def cmd_rigidity(cfg, args, out):
    prof = solve_profile(_model(cfg))
    th = {**DEFAULT_THRESHOLDS, **cfg.get("thresholds", {})}
    res = run_rigidity(prof, _dist(cfg), args.trials, args.seed, eps=th["gap_eps"], threads=args.threads,
                       keep_profiles=True)
    rows = []
    for t, rp in enumerate(res.profiles):
        rows.extend((t,) + tuple(r) for r in rp.rows())
    files = [write_csv(out / "rigidity.csv", ["trial", "k", "i", "lambda", "gamma", "error", "scale", "ratio"], rows)]
    return {"p99": res.p99}, files, [("rigidity_p99", float(res.p99.max()), th["rigidity_p99"])]


def cmd_gap_check(cfg, args, out):
    prof = solve_profile(_model(cfg))
    th = {**DEFAULT_THRESHOLDS, **cfg.get("thresholds", {})}
    res = run_rigidity(prof, _dist(cfg), args.trials, args.seed, eps=th["gap_eps"], threads=args.threads)
    counts = [int(o.size) for o in res.gap_outliers]
    rows = [(t, float(x)) for t, o in enumerate(res.gap_outliers) for x in o]
    files = [write_csv(out / "gap_outliers.csv", ["trial", "eigenvalue"], rows)]
    return {"outliers_per_trial": counts}, files, [("gap_outliers", float(sum(counts)), 0.0)]


def cmd_edge_stats(cfg, args, out):
    prof = solve_profile(_model(cfg))
    e = cfg.get("edge", {})
    dists = [_dist(cfg)] + ([_dist(cfg, "compare_distribution")] if "compare_distribution" in cfg else [])
    th = {**DEFAULT_THRESHOLDS, **cfg.get("thresholds", {})}
    res = run_edge_stats(prof, dists, args.trials, args.seed, e.get("k", 1), e.get("depth", 2), e.get("beta", 1))
    q = res["samples"][0].q
    files = [write_csv(out / "edge_samples.csv", ["trial"] + [f"q{j + 1}" for j in range(q.shape[1])],
                       ((t,) + tuple(row) for t, row in enumerate(q)))]
    files.append(histogram_plot(q[:, 0], res["reference"][:, 0], out / "edge_hist.svg"))
    checks = [("ks_reference", res["ks_reference"][0], th["ks"])]
    if res["ks_pair"] is not None:
        checks.append(("ks_pair", res["ks_pair"], th["ks_pair"]))
    return {"ks_reference": res["ks_reference"], "ks_pair": res["ks_pair"]}, files, checks


def cmd_wigner(cfg, args, out):
    a, N, rot = _wigner_a(cfg)
    lo, hi = wigner_edges(a)
    th = {**DEFAULT_THRESHOLDS, **cfg.get("thresholds", {})}
    m0 = wigner_m(0j, a)[0].m
    grid = wigner_grid(a, N=N)
    scans = run_wigner_scan(a, N, _dist(cfg), args.trials, args.seed, grid, rotate_seed=rot,
                            n_vectors=cfg.get("n_vectors", 16), threads=args.threads)
    scan = ErrorScan.concat(scans)
    files = [out / "wigner_scan.csv"]
    scan.to_csv(files[0])
    edge = run_wigner_edge(a, N, _dist(cfg), args.trials, args.seed, rotate_seed=rot)
    files.append(write_csv(out / "wigner_edge.csv", ["trial", "q", "q_gauss_diag"],
                           ((t, x, y) for t, (x, y) in enumerate(zip(edge["sample"], edge["gaussian_diagonal"])))))
    checks = [("aniso_ratio", float(scan.aniso_ratio.max()), th["aniso_ratio"]),
              ("ks", edge["ks"], th["ks"])]
    return {"edges": [lo, hi], "m_at_zero": m0, "ks": edge["ks"]}, files, checks


def cmd_kcoeffs(cfg, args, out):
    k = cfg.get("kcoeffs")
    if k is None:
        raise ConfigError("this command needs a 'kcoeffs' section")
    K = k_coefficients(k["moments0"], k["moments1"], k.get("theta", 0.5), k["n_max"])
    print(json.dumps([float(x) for x in K]))
    return {"K": K}, [write_json(out / "kcoeffs.json", {"K": K})], []


COMMANDS = {
    "density": cmd_density,
    "edges": cmd_edges,
    "gamma": cmd_gamma,
    "verify-local-law": cmd_verify_local_law,
    "rigidity": cmd_rigidity,
    "gap-check": cmd_gap_check,
    "edge-stats": cmd_edge_stats,
    "wigner": cmd_wigner,
    "kcoeffs": cmd_kcoeffs,
}


def build_parser():
    p = argparse.ArgumentParser(prog="covlaw", description="Spectral theory and Monte Carlo checks "
                                "for sample covariance and deformed Wigner matrices.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="JSON run configuration (or a manifest to replay)")
        s.add_argument("--seed", type=int, help="master seed (overrides the config)")
        s.add_argument("--trials", type=int, help="number of Monte Carlo trials (overrides the config)")
        s.add_argument("--out", help="output directory (default: $COVLAW_OUT or ./covlaw-out)")
        s.add_argument("--assert", dest="check", action="store_true",
                       help="exit with status 2 when a configured threshold is exceeded")
        s.add_argument("--threads", type=int, default=1, help="worker threads over trials")
        s.add_argument("--corrupt-m", type=float, default=0.0, help=argparse.SUPPRESS)
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def run(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    start = time.perf_counter()
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.trials is not None:
            cfg["trials"] = args.trials
        args.seed = cfg.get("seed", 0)
        args.trials = cfg.get("trials", 1)
        out = Path(args.out or default_out_dir())
        out.mkdir(parents=True, exist_ok=True)
        summary, files, checks = COMMANDS[args.command](cfg, args, out)
    except (ConfigError, ModelError, DistributionError, SolverError, OSError, ValueError) as e:
        print(f"covlaw {args.command}: error: {e}", file=sys.stderr)
        return 1
    failed = [(name, value, limit) for name, value, limit in checks if not value <= limit]
    manifest = {
        "command": args.command,
        "version": __version__,
        "config": cfg,
        "seed": args.seed,
        "trials": args.trials,
        "threads": args.threads,
        "corrupt_m": args.corrupt_m,
        "model_hash": hashlib.sha256(json.dumps(cfg.get("model", cfg.get("wigner")), sort_keys=True)
                                     .encode()).hexdigest() if ("model" in cfg or "wigner" in cfg) else None,
        "checks": [{"name": n, "value": v, "limit": l, "pass": v <= l} for n, v, l in checks],
        "summary": summary,
        "outputs": {Path(f).name: sha256_file(f) for f in files},
        "wall_time_s": time.perf_counter() - start,
    }
    write_json(out / f"manifest-{args.command}.json", manifest)
    for name, value, limit in checks:
        print(f"{name}: {value:.6g} (limit {limit:g}) {'PASS' if value <= limit else 'FAIL'}")
    if args.check and failed:
        return 2
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
