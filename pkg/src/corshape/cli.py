"""Command line entry point: ``run``, ``oracle`` and ``cholesky`` verbs.

Exit codes: 0 on success, 2 on configuration errors, 3 on numerical
failures (non-convergence, non-PSD kernels, failed verification checks).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, parse_config, parse_oracle_config
from .correlation import MaxRankReachedError, NotPositiveSemidefiniteError
from .fem import SolverConvergenceError
from .io import export_factors_csv, write_history, write_oracle_report
from .optimizer import OptimizationStageError, run_optimization
from .oracle import (
    RandomLoadModel,
    discrete_commutation_check,
    gradient_dense,
    mc_estimate,
    objective_dense,
    random_correlation_factors,
    random_design_system,
)
from .scenarios import build_scenario, factorize_scenario_loads

NUMERICAL_ERRORS = (
    SolverConvergenceError,
    NotPositiveSemidefiniteError,
    MaxRankReachedError,
    OptimizationStageError,
    np.linalg.LinAlgError,
)


def _cmd_run(text: str) -> int:
    _, cfg = parse_config(text)
    history = run_optimization(cfg)
    last = history.records[-1]
    print(
        f"finished after {last.iteration} iterations: "
        f"objective={last.objective:.6e} volume={last.volume:.6f} rank={last.rank}"
    )
    if cfg.output_dir:
        print(f"history and snapshots in {cfg.output_dir}")
    return 0


def _cmd_cholesky(text: str) -> int:
    _, cfg = parse_config(text)
    setup = build_scenario(cfg.scenario)
    loads, facs = factorize_scenario_loads(
        setup, cfg.cholesky_epsilon, cfg.cholesky_max_rank, cfg.truncate_rank
    )
    out_dir = Path(cfg.output_dir) if cfg.output_dir else Path(".")
    out_dir.mkdir(parents=True, exist_ok=True)
    for n, fac in enumerate(facs):
        rel = fac.trace_error / fac.trace if fac.trace > 0 else 0.0
        print(
            f"kernel {n}: rank={fac.rank} trace={fac.trace:.6e} "
            f"relative trace error={rel:.3e}"
        )
        export_factors_csv(fac, out_dir / f"factors_{n}.csv")
    print(f"{len(loads)} load fields recovered; factors in {out_dir}")
    return 0


def _cmd_oracle(text: str) -> int:
    ocfg = parse_oracle_config(text)
    _, cfg = parse_config(text)
    rng = np.random.default_rng(ocfg.seed)
    rows: list[dict] = []

    worst_factored = 0.0
    for _ in range(ocfg.instances):
        n = int(rng.integers(4, ocfg.dimension + 1))
        sys_ = random_design_system(rng, n)
        rank = int(rng.integers(1, ocfg.cor_rank + 1))
        factors, cor_f = random_correlation_factors(rng, n, rank)
        h = float(rng.uniform(-0.5, 0.5))
        dense = objective_dense(sys_, h, cor_f)
        a = sys_.matrix(h)
        states = np.linalg.solve(a, factors)
        per_factor = float(np.einsum("ik,ij,jk->", states, sys_.cost, states))
        worst_factored = max(
            worst_factored, abs(dense - per_factor) / max(abs(dense), 1e-300)
        )
    rows.append(
        {
            "quantity": "objective_factored_vs_dense_max_rel",
            "formula_value": worst_factored,
            "oracle_value": 0.0,
            "tolerance": 1e-10,
            "pass": worst_factored <= 1e-10,
        }
    )

    worst_grad = 0.0
    for _ in range(ocfg.instances):
        n = int(rng.integers(4, ocfg.dimension + 1))
        sys_ = random_design_system(rng, n)
        _, cor_f = random_correlation_factors(rng, n, int(rng.integers(1, ocfg.cor_rank + 1)))
        h = float(rng.uniform(-0.5, 0.5))
        grad = gradient_dense(sys_, h, cor_f)
        step = ocfg.fd_step
        fd = (objective_dense(sys_, h + step, cor_f) - objective_dense(sys_, h - step, cor_f)) / (
            2.0 * step
        )
        worst_grad = max(worst_grad, abs(grad - fd) / max(abs(grad), abs(fd), 1e-300))
    rows.append(
        {
            "quantity": "gradient_vs_finite_difference_max_rel",
            "formula_value": worst_grad,
            "oracle_value": 0.0,
            "tolerance": 1e-6,
            "pass": worst_grad <= 1e-6,
        }
    )

    mc_ok = True
    worst_sigma = 0.0
    for k in range(ocfg.mc_instances):
        n = int(rng.integers(4, ocfg.dimension + 1))
        sys_ = random_design_system(rng, n)
        rank = int(rng.integers(1, ocfg.cor_rank + 1))
        factors, _ = random_correlation_factors(rng, n, rank)
        model = RandomLoadModel(np.zeros(n), factors)
        h = float(rng.uniform(-0.5, 0.5))
        dense = objective_dense(sys_, h, model.correlation())
        mean, stderr = mc_estimate(sys_, h, model, ocfg.mc_samples, seed=ocfg.seed + k)
        sigmas = abs(dense - mean) / stderr if stderr > 0 else 0.0
        worst_sigma = max(worst_sigma, sigmas)
        mc_ok = mc_ok and sigmas <= 3.0
    rows.append(
        {
            "quantity": "monte_carlo_max_sigmas",
            "formula_value": worst_sigma,
            "oracle_value": 0.0,
            "tolerance": 3.0,
            "pass": mc_ok,
        }
    )

    worst_comm = 0.0
    for _ in range(50):
        u = rng.standard_normal((20, 15))
        v = rng.standard_normal((20, 15))
        worst_comm = max(worst_comm, discrete_commutation_check(u, v))
    rows.append(
        {
            "quantity": "commutation_max_deviation",
            "formula_value": worst_comm,
            "oracle_value": 0.0,
            "tolerance": 1e-12,
            "pass": worst_comm <= 1e-12,
        }
    )

    out_dir = Path(cfg.output_dir) if cfg.output_dir else Path(".")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_oracle_report(rows, out_dir / "oracle_report.csv")
    all_ok = True
    for row in rows:
        status = "pass" if row["pass"] else "FAIL"
        print(f"{status}: {row['quantity']} = {row['formula_value']:.3e} "
              f"(tolerance {row['tolerance']:.1e})")
        all_ok = all_ok and row["pass"]
    return 0 if all_ok else 3


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="corshape",
        description="Shape optimization of mean quadratic objectives "
        "under correlated random loads.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, help_ in (
        ("run", "run the optimization loop of a configuration"),
        ("oracle", "run the dense verification batteries"),
        ("cholesky", "factorize the scenario kernel and report"),
    ):
        p = sub.add_parser(verb, help=help_)
        p.add_argument("config", help="path to the configuration file")
    args = parser.parse_args(argv)

    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2

    try:
        if args.verb == "run":
            return _cmd_run(text)
        if args.verb == "oracle":
            return _cmd_oracle(text)
        return _cmd_cholesky(text)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except NUMERICAL_ERRORS as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
