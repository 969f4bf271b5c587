"""Command-line entry point: fit, simulate, bench and gradcheck.

Exit codes: 0 success, 1 a check failed, 2 usage or parse error,
3 the data failed validation.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import BenchConfig, run_benchmark
from .checks import run_gradcheck
from .errors import NonFiniteError, ValidationError
from .fit import FitOptions, fit
from .io import ParseError, read_count_table, read_json, write_counts, write_json, write_matrix
from .model import CountMatrix, Hyperparams
from .simulate import ScenarioConfig, generate

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_DATA = 0, 1, 2, 3

FIT_DEFAULTS = dict(input=None, delimiter=None, k=None, alpha1=1.0, alpha2=1.0, pi0=0.5,
                    sigma_beta=None, seed=0, max_iter=200, tol=1e-6)
# keys a fit manifest carries besides the options; ignored when it is read back
MANIFEST_OUTPUT_KEYS = {"command", "version", "n", "p", "iterations", "converged", "final_elbo"}
SIMULATE_DEFAULTS = dict(scenario=None, n=None, p=None, k=None, seed=0)
BENCH_DEFAULTS = dict(scenarios=["S2"], k=[2, 5], np=[[50, 100]], replications=100, base_seed=0,
                      max_iter=200, tol=1e-6, sigma_beta=None, aggregate="mean", align=False,
                      threads=None)
GRADCHECK_DEFAULTS = dict(points=100, seed=0, n=10, p=15, k=3, step=1e-5)


class UsageError(Exception):
    pass


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _resolve(args, defaults: dict, ignore=frozenset()) -> dict:
    """Merge defaults < config file < explicit flags."""
    opts = dict(defaults)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        cfg = read_json(path)
        unknown = set(cfg) - set(defaults) - set(ignore)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        opts.update({key: v for key, v in cfg.items() if key in defaults})
    for key in defaults:
        v = getattr(args, key, None)
        if v is not None:
            opts[key] = v
    return opts


def _require(opts, *keys):
    missing = [key for key in keys if opts.get(key) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


def _output_dir(args) -> Path:
    if not args.output_dir:
        raise UsageError("--output-dir is required")
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------


def cmd_fit(args) -> int:
    opts = _resolve(args, FIT_DEFAULTS, MANIFEST_OUTPUT_KEYS)
    _require(opts, "input", "k")
    src = Path(opts["input"])
    if not src.is_file():
        raise UsageError(f"input file not found: {src}")
    samples, taxa, x = read_count_table(src, opts["delimiter"])
    bad_rows = [samples[i] for i in np.flatnonzero(x.sum(axis=1) == 0)]
    bad_cols = [taxa[j] for j in np.flatnonzero(x.sum(axis=0) == 0)]
    if bad_rows or bad_cols:
        if bad_rows:
            _err("samples with zero total count: " + ", ".join(bad_rows))
        if bad_cols:
            _err("taxa with zero total count: " + ", ".join(bad_cols))
        return EXIT_DATA
    counts = CountMatrix(x)
    k = int(opts["k"])
    sb = opts["sigma_beta"]
    hyper = Hyperparams(
        k=k, sigma_beta=None if sb is None else np.broadcast_to(np.asarray(sb, float), (k,)),
        alpha1=float(opts["alpha1"]), alpha2=float(opts["alpha2"]), pi0=float(opts["pi0"]),
    )
    hyper.check_against(counts)
    options = FitOptions(max_outer_iter=int(opts["max_iter"]), tol=float(opts["tol"]),
                         seed=int(opts["seed"]))
    out = _output_dir(args)
    try:
        res = fit(counts, hyper, options)
    except NonFiniteError as exc:
        _err(str(exc))
        return EXIT_CHECK

    factors = [f"f{l + 1}" for l in range(k)]
    write_matrix(out / "rho_hat.csv", res.rho_hat, samples, taxa, corner="sample")
    write_matrix(out / "B_hat.csv", res.theta_hat.B, taxa, factors, corner="taxon")
    write_matrix(out / "F_hat.csv", res.F_hat, samples, factors, corner="sample")
    write_matrix(out / "eta_hat.csv", res.eta_hat[:, None], taxa, ["eta"], corner="taxon")
    write_matrix(out / "beta0_hat.csv", res.theta_hat.beta0[:, None], taxa, ["beta0"], corner="taxon")
    write_matrix(out / "elbo_trace.csv", res.elbo_trace[:, None],
                 range(1, len(res.elbo_trace) + 1), ["elbo"], corner="iteration")
    manifest = dict(opts, command="fit", version=__version__, n=counts.n, p=counts.p,
                    iterations=res.iterations, converged=res.converged,
                    final_elbo=float(res.elbo_trace[-1]))
    write_json(out / "manifest.json", manifest)
    status = "converged" if res.converged else "stopped at the iteration limit"
    print(f"fit {status} after {res.iterations} iterations, ELBO {res.elbo_trace[-1]:.6f}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    opts = _resolve(args, SIMULATE_DEFAULTS)
    _require(opts, "scenario", "n", "p", "k")
    cfg = ScenarioConfig(str(opts["scenario"]), int(opts["n"]), int(opts["p"]), int(opts["k"]),
                         seed=int(opts["seed"]))
    out = _output_dir(args)
    data = generate(cfg)
    samples = [f"s{i + 1}" for i in range(cfg.n)]
    taxa = [f"t{j + 1}" for j in range(cfg.p)]
    write_counts(out / "counts.csv", data.counts.x, samples, taxa)
    truth = dict(
        scenario=cfg.scenario.value, n=cfg.n, p=cfg.p, k=cfg.k, seed=cfg.seed,
        beta0=data.truth_theta.beta0.tolist(), B=data.truth_theta.B.tolist(),
        eta=data.truth_theta.eta.tolist(), F=data.truth_latent.F.tolist(),
        Z=data.truth_latent.Z.astype(int).tolist(), depths=data.counts.depths.astype(int).tolist(),
    )
    write_json(out / "truth.json", truth)
    print(f"wrote {cfg.n} x {cfg.p} counts to {out / 'counts.csv'}")
    return EXIT_OK


def cmd_bench(args) -> int:
    opts = _resolve(args, BENCH_DEFAULTS)
    scen = opts["scenarios"]
    config = BenchConfig(
        scenarios=(scen,) if isinstance(scen, str) else tuple(scen),
        ks=tuple(np.atleast_1d(opts["k"]).tolist()),
        np_pairs=tuple(tuple(pair) for pair in opts["np"]),
        replications=int(opts["replications"]),
        fit_options=FitOptions(max_outer_iter=int(opts["max_iter"]), tol=float(opts["tol"])),
        base_seed=int(opts["base_seed"]),
        sigma_beta=opts["sigma_beta"],
        aggregate=opts["aggregate"],
        align=bool(opts["align"]),
    )
    out = _output_dir(args)
    report = run_benchmark(config, workers=opts["threads"])
    (out / "rmse_report.csv").write_text(report.to_csv())
    (out / "rmse_report.txt").write_text(report.to_table())
    print(report.to_table(), end="")
    print("wall time: " + ", ".join(f"{r.scenario}/k={r.k}/({r.n},{r.p}) {r.wall_time:.1f}s"
                                    for r in report))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    opts = _resolve(args, GRADCHECK_DEFAULTS)
    if int(opts["points"]) < 1:
        raise UsageError("--points must be at least 1")
    res = run_gradcheck(points=int(opts["points"]), seed=int(opts["seed"]), n=int(opts["n"]),
                        p=int(opts["p"]), k=int(opts["k"]), step=float(opts["step"]),
                        corrupt=args.inject_sign_flip)
    for name, err in res.max_error.items():
        print(f"{name:8s} max relative error {err:.3e}")
    if not res.passed:
        name, seed, err = res.failures[0]
        _err(f"gradient check failed for block {name} at point seed {seed} "
             f"(relative error {err:.3e}); {len(res.failures)} failure(s) in total")
        return EXIT_CHECK
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zippca", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, hyper=True):
        p.add_argument("--config", help="JSON file of options; flags take precedence")
        p.add_argument("--output-dir")
        p.add_argument("--seed", type=int)
        if hyper:
            p.add_argument("--k", type=int)
            p.add_argument("--alpha1", type=float)
            p.add_argument("--alpha2", type=float)
            p.add_argument("--pi0", type=float)
            p.add_argument("--sigma-beta", type=float)
            p.add_argument("--max-iter", type=int)
            p.add_argument("--tol", type=float)

    p = sub.add_parser("fit", help="fit the model to a count table")
    common(p)
    p.add_argument("--input")
    p.add_argument("--delimiter", choices=["comma", "tab"])
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="simulate a dataset with its ground truth")
    common(p, hyper=False)
    p.add_argument("--scenario", choices=["S1", "S2"])
    p.add_argument("--n", type=int)
    p.add_argument("--p", type=int)
    p.add_argument("--k", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="run the RMSE replication benchmark")
    p.add_argument("--config", help="JSON benchmark configuration")
    p.add_argument("--output-dir")
    p.add_argument("--replications", type=int)
    p.add_argument("--base-seed", type=int)
    p.add_argument("--threads", type=int, help="worker processes (default: all cores)")
    p.add_argument("--aggregate", choices=["mean", "pooled"])
    p.add_argument("--align", action="store_const", const=True,
                   help="rotate estimates onto the truth before scoring (diagnostic)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference check of every block gradient")
    p.add_argument("--config")
    p.add_argument("--points", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--p", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--step", type=float)
    p.add_argument("--inject-sign-flip", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ParseError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    except ValidationError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except OSError as exc:
        _err(str(exc))
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
