"""Command-line front end: ``psgm run | verify | compare | preset-dump``.

Exit status: 0 on success, 2 for an invalid configuration or arguments,
3 when a run aborts (its partial trace is still written) and 4 when a
verifier fails.
"""

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, analysis, config, numerics
from .basis import Monomial
from .engine import BatchStatistics, batch_least_squares, geometric_checkpoints, run
from .errors import ConfigError, PSGMError
from .sampling import GammaCRF, Uniform

EXIT_OK, EXIT_CONFIG, EXIT_ABORTED, EXIT_VERIFY = 0, 2, 3, 4
TRACE_COLUMNS = ("k", "mu_k", "residual_norm", "relative_error", "error_db")
SUITES = ("lemma1", "lemma3", "theorem1", "variance", "all")
LEMMA3_MIN_DRAWS = 100_000
THEOREM1_MIN_REPLICAS = 1000
VARIANCE_MIN_REPLICAS = 100

# Verifier scenario for the mean-square checks: the camera-response preset
# with the square-summable schedule, exact oracle and 10^4 steps.
CRF_SMALL = {
    "scenario": "crf",
    "steps": 10_000,
    "oracle": "quadrature",
    "replicas": 500,
    "schedule": {"kind": "inverse_decay"},
}


def _num(x):
    """Format a float with 17 significant digits ('nan' for missing values)."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, ".17g")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def _header(fh, chash, seed):
    fh.write(f"# config_hash={chash} seed={seed} version={__version__}\n")


def write_trace(path, trace, chash, seed):
    with open(path, "w", newline="") as fh:
        _header(fh, chash, seed)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in trace.records:
            w.writerow([r.k, _num(r.mu), _num(r.residual_norm), _num(r.relative_error),
                        _num(r.error_db)])


def write_coefficients(path, u, chash, seed):
    with open(path, "w", newline="") as fh:
        _header(fh, chash, seed)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("index", "value"))
        for i, v in enumerate(u):
            w.writerow([i, _num(v)])


def write_json(path, payload, chash, seed):
    body = {"config_hash": chash, "seed": seed, "version": __version__, **payload}
    with open(path, "w") as fh:
        json.dump(_jsonable(body), fh, indent=2, allow_nan=False)
        fh.write("\n")


def resolve(args, base=None):
    """Resolved configuration from ``--config``/``--preset`` plus overrides."""
    if args.config:
        cfg = config.load(args.config)
    else:
        cfg = config.validate(base if base is not None else {"scenario": args.preset})
    if getattr(args, "full_scale", False):
        cfg = config.apply_full_scale(cfg)
    seed = args.seed if args.seed is not None else os.environ.get("PSGM_SEED")
    if seed is not None:
        try:
            cfg["seed"] = int(seed)
        except ValueError:
            raise ConfigError(f"seed must be an integer, got {seed!r}", "seed") from None
    if getattr(args, "steps", None) is not None:
        cfg["steps"] = args.steps
    return config.validate(cfg)


def output_dir(args):
    out = Path(args.out or os.environ.get("PSGM_OUT") or "psgm-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _threads(args):
    return args.threads if args.threads else (os.cpu_count() or 1)


# --- commands -------------------------------------------------------------------


def cmd_run(args):
    cfg = resolve(args)
    out = output_dir(args)
    chash = config.config_hash(cfg)
    scenario = config.build(cfg)
    try:
        trace = run(scenario.run_config())
    except PSGMError as exc:
        trace = getattr(exc, "trace", None)
        if trace is not None:
            write_trace(out / "trace.csv", trace, chash, cfg["seed"])
            write_coefficients(out / "final_coefficients.csv", trace.final.u, chash,
                               cfg["seed"])
        print(f"run aborted: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ABORTED
    for msg in trace.warnings:
        print(f"warning: {msg}", file=sys.stderr)
    write_trace(out / "trace.csv", trace, chash, cfg["seed"])
    write_coefficients(out / "final_coefficients.csv", trace.final.u, chash, cfg["seed"])
    return EXIT_OK


def lut_roughness(u, blocks):
    """Sum of squared first differences within each tap block."""
    return float(sum(np.sum(np.diff(b) ** 2) for b in np.split(np.asarray(u), blocks)))


def compare(scenario):
    """PSGM against the batch least-squares solution over all samples it consumed.

    Returns one row per method with its status, error in dB on the evaluation
    set and LUT roughness.
    """
    rc = scenario.run_config(accumulate=True)
    trace = run(rc)
    blocks = scenario.spec.block_count
    evaluation = scenario.evaluation

    def metric(u):
        return evaluation.error_db(u) if evaluation is not None else math.nan

    rows = [{"method": "psgm", "status": "ok", "error_db": metric(trace.final.u),
             "roughness": lut_roughness(trace.final.u, blocks), "samples": trace.totals[2]}]
    gram, moment, count = trace.totals
    try:
        if count == 0:
            raise numerics.NotPositiveDefinite("no samples were consumed")
        stats = BatchStatistics(gram / count, moment / count, np.zeros(0))
        u_ls = batch_least_squares(stats)
        rows.append({"method": "batch_ls", "status": "ok", "error_db": metric(u_ls),
                     "roughness": lut_roughness(u_ls, blocks), "samples": count})
    except numerics.NotPositiveDefinite as exc:
        rows.append({"method": "batch_ls", "status": f"NotPositiveDefinite: {exc}",
                     "error_db": math.nan, "roughness": math.nan, "samples": count})
    return rows, trace


def cmd_compare(args):
    cfg = resolve(args)
    if cfg["scenario"] == "crf":
        raise ConfigError("compare needs the equalizer or a custom scenario", "scenario")
    out = output_dir(args)
    chash = config.config_hash(cfg)
    scenario = config.build(cfg)
    try:
        rows, trace = compare(scenario)
    except PSGMError as exc:
        trace = getattr(exc, "trace", None)
        if trace is not None:
            write_trace(out / "trace.csv", trace, chash, cfg["seed"])
        print(f"run aborted: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ABORTED
    for msg in trace.warnings:
        print(f"warning: {msg}", file=sys.stderr)
    write_trace(out / "trace.csv", trace, chash, cfg["seed"])
    with open(out / "comparison.csv", "w", newline="") as fh:
        _header(fh, chash, cfg["seed"])
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("method", "status", "error_db", "roughness", "samples"))
        for r in rows:
            w.writerow([r["method"], r["status"], _num(r["error_db"]), _num(r["roughness"]),
                        r["samples"]])
    return EXIT_OK


def run_suites(suite, cfg, replicas, threads, seed):
    """Run the requested verifier suites; returns ``{name: LemmaReport}``."""
    reports = {"counterexample": analysis.counterexample_report()}
    if suite in ("lemma1", "all"):
        reports["lemma1"] = analysis.verify_lemma1_random(seed=seed)
    if suite in ("lemma3", "all"):
        reports["lemma3"] = analysis.verify_lemma3(draws=replicas.get("lemma3",
                                                                      LEMMA3_MIN_DRAWS),
                                                   seed=seed)
    if suite in ("theorem1", "all"):
        fast = analysis.fast_path_check(Uniform(), GammaCRF(), Monomial(4),
                                        replicas.get("theorem1", 10_000), seed=seed,
                                        threads=threads)
        det = analysis.deterministic_fast_path((0.1, 0.3, 0.5, 0.7, 0.9, 0.95), GammaCRF(),
                                               Monomial(4))
        fast.notes.append({"deterministic_one_step_error": det})
        if det > 1e-10:
            fast.max_violation = max(fast.max_violation, det)
        reports["theorem1"] = fast
    if suite in ("variance", "all"):
        scenario = config.build(cfg)
        n_rep = replicas.get("variance", cfg["replicas"])
        rc = scenario.run_config()
        checkpoints = geometric_checkpoints(cfg["steps"])
        stats = analysis.replica_statistics(rc, n_rep, checkpoints, scenario.oracle, threads,
                                            seed=seed)
        cov = analysis.estimate_covariances(scenario.process, scenario.target, scenario.basis,
                                            cfg["batch_size"], 2000, scenario.oracle, seed)
        consts = analysis.variance_constants(scenario.spec, scenario.oracle, cov)
        reports["variance"] = analysis.variance_bound_check(rc, cov, n_rep, checkpoints,
                                                            stats=stats, constants=consts)
        reports["theorem1_decrease"] = analysis.verify_theorem1_mean(
            rc, n_rep, checkpoints, stats=stats, mode="decrease")
    return reports


def cmd_verify(args):
    if args.suite not in SUITES:
        raise ConfigError(f"suite must be one of {SUITES}", "suite")
    base = config.validate(CRF_SMALL) if not args.config else None
    cfg = resolve(args, base=base)
    replicas = {}
    if args.replicas is not None:
        if args.suite in ("lemma3", "all") and args.replicas < LEMMA3_MIN_DRAWS:
            raise ConfigError(f"lemma3 needs at least {LEMMA3_MIN_DRAWS} draws", "replicas")
        if args.suite in ("theorem1", "all") and args.replicas < THEOREM1_MIN_REPLICAS:
            raise ConfigError(f"theorem1 needs at least {THEOREM1_MIN_REPLICAS} replicas",
                              "replicas")
        if args.suite == "variance" and args.replicas < VARIANCE_MIN_REPLICAS:
            raise ConfigError(f"variance needs at least {VARIANCE_MIN_REPLICAS} replicas",
                              "replicas")
        replicas = {s: args.replicas for s in ("lemma3", "theorem1", "variance")}
    out = output_dir(args)
    chash = config.config_hash(cfg)
    reports = run_suites(args.suite, cfg, replicas, _threads(args), cfg["seed"])
    passed = all(r.passed for r in reports.values())
    write_json(out / "report.json", {
        "suite": args.suite,
        "passed": passed,
        "reports": {k: r.to_dict() for k, r in reports.items()},
    }, chash, cfg["seed"])
    for name, r in reports.items():
        print(f"{name}: {'pass' if r.passed else 'FAIL'} "
              f"(max violation {r.max_violation:.3e}, tolerance {r.tolerance:.1e})")
    return EXIT_OK if passed else EXIT_VERIFY


def cmd_preset_dump(args):
    text = config.dump_toml(config.preset(args.name))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{args.name}.toml").write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="psgm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, preset_default):
        p.add_argument("--config", help="TOML configuration file")
        p.add_argument("--preset", default=preset_default, choices=sorted(config.PRESETS),
                       help="preset used when no --config is given")
        p.add_argument("--seed", type=int, help="override the seed (env PSGM_SEED)")
        p.add_argument("--threads", type=int, default=0,
                       help="worker threads (default: all cores)")
        p.add_argument("--out", help="output directory (env PSGM_OUT)")
        p.add_argument("--steps", type=int, help="override the number of steps")
        p.add_argument("--full-scale", action="store_true",
                       help="use the full-scale sizes stored with the preset")

    p = sub.add_parser("run", help="run one experiment and write its trace")
    common(p, "crf")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="constrained PSGM against batch least squares")
    common(p, "equalizer")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("verify", help="run convergence verifiers and write report.json")
    p.add_argument("suite", nargs="?", default="all")
    common(p, "crf")
    p.add_argument("--replicas", type=int, help="replica (or draw) count override")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("preset-dump", help="print a preset as TOML")
    p.add_argument("name", choices=sorted(config.PRESETS))
    p.add_argument("--out", help="write NAME.toml into this directory instead")
    p.set_defaults(func=cmd_preset_dump)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if getattr(args, "threads", 0) < 0:
        print("error: --threads must be non-negative", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        key = f" [{exc.key}]" if exc.key else ""
        print(f"invalid configuration{key}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PSGMError as exc:
        print(f"aborted: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ABORTED


if __name__ == "__main__":
    sys.exit(main())
