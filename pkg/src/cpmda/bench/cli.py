"""Command line front end.

Subcommands:
  generate   write per-repetition dataset CSVs for a config
  run        run the experiment and write a results CSV plus a seed manifest
  report     aggregate a results CSV into a summary CSV
  oracle     run built-in self-checks (psd, delta, glm)

Exit codes: 0 success, 2 configuration errors, 3 numeric failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from cpmda.core import ConfigurationError, NumericError, write_dataset_csv
from cpmda.bench.config import load_config
from cpmda.bench.run import (
    read_results_csv,
    rep_stream,
    run_experiment,
    summarize,
    write_manifest,
    write_results_csv,
    write_summary_csv,
)


def _cmd_generate(args) -> int:
    from cpmda.bench.run import build_pool

    config = load_config(args.config)
    os.makedirs(args.out, exist_ok=True)
    reps = config.reps if args.reps is None else args.reps
    for rep in range(reps):
        rng_data = rep_stream(config.seed, rep, "data")
        rng_mask = rep_stream(config.seed, rep, "mask")
        ds = build_pool(config, rng_data, rng_mask)
        path = os.path.join(args.out, f"dataset_rep{rep:03d}.csv")
        write_dataset_csv(ds, path)
        print(path)
    return 0


def _cmd_run(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    reps = config.reps if args.reps is None else args.reps
    rows = run_experiment(config, reps=reps, workers=args.workers)
    write_results_csv(rows, args.out)
    manifest_path = os.path.splitext(args.out)[0] + "_manifest.json"
    write_manifest(config, reps, manifest_path)
    failures = sum(1 for r in rows if r.key_kind == "failure")
    print(f"wrote {args.out} ({len(rows)} rows, {failures} failed reps)")
    print(f"wrote {manifest_path}")
    return 0


def _cmd_report(args) -> int:
    rows = read_results_csv(args.results)
    write_summary_csv(summarize(rows), args.out)
    print(f"wrote {args.out}")
    return 0


def _check_psd() -> None:
    from cpmda.core import Mask
    from cpmda.oracle import variance_isotone_check

    rng = np.random.default_rng(20240915)
    worst = float("inf")
    for _ in range(200):
        d = int(rng.integers(2, 7))
        A = rng.standard_normal((d, d))
        Sigma = A @ A.T + 1e-3 * np.eye(d)
        bits2 = rng.random(d) < 0.5
        bits1 = bits2 & (rng.random(d) < 0.5)
        m1 = Mask.from_bits(bits1.astype(int))
        m2 = Mask.from_bits(bits2.astype(int))
        worst = min(worst, variance_isotone_check(Sigma, m1, m2))
    print(f"psd check: min eigenvalue over 200 nested pairs = {worst:.3e}")
    if worst < -1e-8:
        raise NumericError("conditional variance gap not PSD")


def _check_delta() -> None:
    from cpmda.oracle import hardness_delta

    rho_grid = np.linspace(0.05, 0.65, 9)
    for variant in ("general", "y-ind-m"):
        last = None
        for rho in rho_grid:
            vals = [hardness_delta(float(rho), n, variant).delta for n in range(30)]
            if any(b < a - 1e-12 for a, b in zip(vals, vals[1:])):
                raise NumericError(f"delta not monotone in n ({variant})")
            if vals[-1] > np.sqrt(2.0) + 1e-12:
                raise NumericError(f"delta exceeds sqrt(2) ({variant})")
            last = vals[-1]
        print(f"delta check [{variant}]: monotone, capped; delta(0.65, 29) = {last:.6f}")


def _check_glm() -> None:
    from cpmda.core import Mask
    from cpmda.oracle import GaussianLinearModel, glm_predictive, oracle_interval

    d = 4
    rng = np.random.default_rng(7)
    A = rng.standard_normal((d, d))
    glm = GaussianLinearModel(
        beta=rng.standard_normal(d),
        sigma2_eps=1.0,
        mu=rng.standard_normal(d),
        Sigma=A @ A.T + 0.5 * np.eye(d),
    )
    m = Mask.from_bits([0, 1, 0, 1])
    x_obs = rng.standard_normal(2)
    pred = glm_predictive(glm, x_obs, m)
    ((lo, hi),) = oracle_interval(glm, x_obs, m, alpha=0.1).intervals
    n = 400_000
    X = rng.multivariate_normal(glm.mu, glm.Sigma, size=n)
    keep = np.ones(n, dtype=bool)
    for j, col in enumerate(m.obs):
        keep &= np.abs(X[:, col] - x_obs[j]) < 0.1
    Xc = X[keep]
    y = Xc @ glm.beta + rng.standard_normal(Xc.shape[0])
    err = abs(float(np.mean(y)) - pred.mean)
    se = 3.0 * float(np.std(y)) / max(np.sqrt(len(y)), 1.0)
    print(
        f"glm check: predictive mean {pred.mean:.4f}, MC {np.mean(y):.4f} "
        f"(n={len(y)}), 90% interval [{lo:.3f}, {hi:.3f}]"
    )
    if err > se + 0.05:
        raise NumericError("predictive mean disagrees with Monte Carlo slice")


def _cmd_oracle(args) -> int:
    {"psd": _check_psd, "delta": _check_delta, "glm": _check_glm}[args.check]()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mda",
        description="Conformal prediction with missing covariates: benchmark harness.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="write per-repetition dataset CSVs")
    p_gen.add_argument("--config", required=True)
    p_gen.add_argument("--out", required=True, help="output directory")
    p_gen.add_argument("--reps", type=int, default=None)
    p_gen.set_defaults(func=_cmd_generate)

    p_run = sub.add_parser("run", help="run the experiment")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", required=True, help="results CSV path")
    p_run.add_argument("--reps", type=int, default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--workers", type=int, default=1)
    p_run.set_defaults(func=_cmd_run)

    p_rep = sub.add_parser("report", help="summarize a results CSV")
    p_rep.add_argument("--in", dest="results", required=True)
    p_rep.add_argument("--out", required=True)
    p_rep.set_defaults(func=_cmd_report)

    p_orc = sub.add_parser("oracle", help="run a built-in self-check")
    p_orc.add_argument("--check", required=True, choices=("psd", "delta", "glm"))
    p_orc.set_defaults(func=_cmd_oracle)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except (NumericError, np.linalg.LinAlgError) as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
