"""Command-line interface.

Subcommands: train, eval, cv, pareto, simulate, oracle. Every run takes a
single --seed; anything that needs more randomness derives sub-seeds from it,
so a re-run with the same arguments reproduces every output byte for byte.
Each run writes a manifest.json listing the outputs with their sha256 digests.

Exit codes: 1 for configuration problems, 2 for data problems, 3 for
numerical failures. IMPROVKIT_LOG in {error, info, debug} controls logging.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace

from . import dynamics, oracles
from .data import Dataset, SyntheticConfig, generate_synthetic, load_csv, split
from .effort import EffortBudget, PgdConfig
from .errors import ConfigError, DataError, ImprovkitError, NumericalError
from .metrics import full_report
from .models import deserialize_model, serialize_model
from .penalties import PenaltyConfig
from .train import (TrainConfig, cross_validate, derive_seed, pareto_frontier,
                    run_sweep_cell, sweep_csv, train)

log = logging.getLogger("improvkit")

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); config errors are exit 1
        raise ConfigError(message)


def _int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


def _float_list(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _read_config_file(path: str) -> dict:
    values: dict[str, str] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                key, value = (part.strip() for part in line.split("=", 1))
                values[key.replace("-", "_")] = value
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    return values


_CONFIG_KEYS = {
    "data": str, "schema": str, "n_samples": int, "test_fraction": float,
    "model": str, "hidden": _int_list, "penalty": str, "lam": float,
    "bandwidth": float, "delta": float, "norm": str, "cost_diag": _float_list,
    "epochs": int, "batch_size": int, "lr": float, "optimizer": str,
    "pgd_steps": int, "pgd_restarts": int,
}


def _apply_config_file(args: argparse.Namespace) -> None:
    """Fill argparse defaults from --config; explicit flags win."""
    if not getattr(args, "config", None):
        return
    raw = _read_config_file(args.config)
    for key, value in raw.items():
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{args.config}: unknown key {key!r}")
        if getattr(args, key, None) is None:
            try:
                setattr(args, key, _CONFIG_KEYS[key](value))
            except ValueError:
                raise ConfigError(f"{args.config}: bad value for {key}: {value!r}") from None


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


class _Run:
    """Collects inputs/outputs and writes the manifest at the end."""

    def __init__(self, command: str, args: argparse.Namespace):
        self.command = command
        self.args = args
        self.out_dir = args.out
        os.makedirs(self.out_dir, exist_ok=True)
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}

    def note_input(self, path: str | None) -> None:
        if path and os.path.exists(path):
            self.inputs[path] = _sha256(path)

    def write(self, name: str, text: str) -> str:
        path = os.path.join(self.out_dir, name)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
        self.outputs[name] = _sha256(path)
        log.info("wrote %s", path)
        return path

    def finish(self) -> None:
        manifest = {
            "command": self.command,
            "arguments": {k: v for k, v in sorted(vars(self.args).items())
                          if k not in ("func",) and v is not None},
            "seed": self.args.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
        }
        path = os.path.join(self.out_dir, "manifest.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")
        log.info("wrote %s", path)


def _load_dataset(args, run: _Run, purpose: str = "data") -> Dataset:
    if args.data == "synth":
        n = args.n_samples if args.n_samples is not None else 20_000
        return generate_synthetic(SyntheticConfig(n_samples=n),
                                  derive_seed(args.seed, purpose))
    if not args.schema:
        raise ConfigError("loading a CSV needs --schema")
    run.note_input(args.data)
    run.note_input(args.schema)
    return load_csv(args.data, args.schema)


def _budget_from_args(args, fallback: EffortBudget | None = None) -> EffortBudget:
    delta = args.delta
    norm = args.norm
    cost = args.cost_diag
    if fallback is not None:
        delta = fallback.delta if delta is None else delta
        norm = fallback.norm_kind if norm is None else norm
        cost = fallback.cost_diag if cost is None else cost
    if delta is None:
        delta = 0.5
    if norm is None:
        norm = "linf"
    budget = EffortBudget(norm, float(delta), tuple(cost) if cost else None)
    budget.validate()
    return budget


def _train_config(args, budget: EffortBudget) -> TrainConfig:
    pgd = None
    if args.pgd_steps is not None or args.pgd_restarts is not None:
        pgd = PgdConfig(steps=args.pgd_steps or 20, restarts=args.pgd_restarts or 1,
                        seed=derive_seed(args.seed, "pgd"))
    return TrainConfig(
        budget=budget,
        model=args.model or "glm",
        hidden=tuple(args.hidden) if args.hidden else (4,),
        penalty=PenaltyConfig(args.penalty or "none",
                              args.bandwidth if args.bandwidth is not None else 0.1),
        lam=args.lam if args.lam is not None else 0.0,
        pgd=pgd,
        epochs=args.epochs,
        batch_size=args.batch_size if args.batch_size is not None else 0,
        learning_rate=args.lr if args.lr is not None else 1e-2,
        optimizer=args.optimizer or "adam",
        seed=derive_seed(args.seed, "train"),
    )


def _history_csv(history) -> str:
    lines = ["epoch,objective,loss_term,penalty_value"]
    for row in history:
        lines.append(f"{row['epoch']},{row['objective']:.10g},"
                     f"{row['loss_term']:.10g},{row['penalty_value']:.10g}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Subcommands.
# ---------------------------------------------------------------------------


def _cmd_train(args) -> None:
    _apply_config_file(args)
    run = _Run("train", args)
    run.note_input(getattr(args, "config", None))
    dataset = _load_dataset(args, run)
    budget = _budget_from_args(args)
    frac = args.test_fraction if args.test_fraction is not None else 0.2
    tr, te = split(dataset, frac, derive_seed(args.seed, "split"))
    config = _train_config(args, budget)
    result = train(tr, config)
    report = full_report(result.model, te, budget, config.pgd)
    run.write("model.txt", serialize_model(result.model, budget))
    run.write("history.csv", _history_csv(result.history))
    run.write("report.txt", report.to_text())
    run.write("report.csv", report.to_csv())
    run.finish()
    print(report.to_text(), end="")


def _cmd_eval(args) -> None:
    run = _Run("eval", args)
    run.note_input(args.model_file)
    try:
        with open(args.model_file, encoding="utf-8") as fh:
            model, saved_budget = deserialize_model(fh.read())
    except OSError as exc:
        raise DataError(f"cannot read model file: {exc}") from None
    dataset = _load_dataset(args, run)
    budget = _budget_from_args(args, fallback=saved_budget)
    pgd = PgdConfig(seed=derive_seed(args.seed, "pgd")) if model.kind != "glm" else None
    report = full_report(model, dataset, budget, pgd)
    run.write("report.txt", report.to_text())
    run.write("report.csv", report.to_csv())
    run.finish()
    print(report.to_text(), end="")


def _cmd_cv(args) -> None:
    _apply_config_file(args)
    run = _Run("cv", args)
    run.note_input(getattr(args, "config", None))
    dataset = _load_dataset(args, run)
    budget = _budget_from_args(args)
    frac = args.test_fraction if args.test_fraction is not None else 0.2
    tr, te = split(dataset, frac, derive_seed(args.seed, "split"))
    config = _train_config(args, budget)
    cv = cross_validate(tr, config, k=args.folds)
    final = train(tr, replace(config, lam=cv.best_lambda))
    report = full_report(final.model, te, budget, config.pgd)
    lines = ["lambda,val_error,val_ei,folds_used,chosen"]
    for entry in cv.table:
        lines.append(f"{entry.lam},{entry.error:.10g},{entry.ei:.10g},"
                     f"{entry.folds_used},{int(entry.lam == cv.best_lambda)}")
    run.write("cv.csv", "\n".join(lines) + "\n")
    run.write("model.txt", serialize_model(final.model, budget))
    run.write("report.txt", report.to_text())
    run.write("report.csv", report.to_csv())
    run.finish()
    print(f"best lambda = {cv.best_lambda}")
    print(report.to_text(), end="")


def _sweep_cell_worker(payload):
    dataset, config, lam, seed, frac = payload
    return run_sweep_cell(dataset, config, lam, seed, frac)


def _cmd_pareto(args) -> None:
    _apply_config_file(args)
    run = _Run("pareto", args)
    run.note_input(getattr(args, "config", None))
    dataset = _load_dataset(args, run)
    budget = _budget_from_args(args)
    config = _train_config(args, budget)
    frac = args.test_fraction if args.test_fraction is not None else 0.2
    lambdas = args.lambdas if args.lambdas is not None else [0.0, 0.2, 0.4, 0.6, 0.8, 0.9]
    seeds = args.seeds if args.seeds is not None else [0]
    cells = [(dataset, config, lam, derive_seed(args.seed, "cell", seed), frac)
             for seed in seeds for lam in lambdas]
    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_cell_worker, cells))
    else:
        results = [_sweep_cell_worker(cell) for cell in cells]
    rows = [row for cell_rows in results for row in cell_rows]
    frontier = pareto_frontier(rows)
    run.write("sweep.csv", sweep_csv(rows))
    run.write("frontier.csv", sweep_csv(frontier))
    run.finish()
    print(f"{len(rows)} rows, {len(frontier)} frontier points")


def _simulate_worker(payload):
    config = payload
    return dynamics.run_simulation(config)


def _cmd_simulate(args) -> None:
    run = _Run("simulate", args)
    init = dynamics.GroupState((args.mu0, args.mu1), (args.sigma0, args.sigma1))
    policies = [p.strip() for p in args.policy.split(",") if p.strip()]
    configs = [dynamics.DynamicsConfig(init=init, alpha=args.alpha, cap=args.cap,
                                       beta=args.beta, rounds=args.rounds,
                                       policy=policy, effort=args.effort)
               for policy in policies]
    for cfg in configs:
        cfg.validate()
    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            trajectories = list(pool.map(_simulate_worker, configs))
    else:
        trajectories = [_simulate_worker(cfg) for cfg in configs]
    for traj in trajectories:
        run.write(f"trajectory_{traj.policy}.csv", dynamics.trajectory_csv(traj))
        print(f"{traj.policy}: tv {traj.tv[0]:.6f} -> {traj.tv[-1]:.6f}")
    run.finish()


def _cmd_oracle(args) -> None:
    run = _Run("oracle", args)
    did_something = False
    if args.example:
        report = oracles.worked_example_oracle(args.example, args.m)
        run.write(f"example_{args.example}.txt", report.to_text())
        print(report.to_text(), end="")
        did_something = True
    if args.tradeoff:
        delta = args.delta if args.delta is not None else 0.5
        curve = oracles.optimal_tradeoff(SyntheticConfig(), delta,
                                         n_caps=args.n_caps, caps=args.caps)
        lines = ["cap,error,disparity,theta,b0,b1"]
        for p in curve.points:
            lines.append(f"{p.cap:.10g},{p.error:.10g},{p.disparity:.10g},"
                         f"{p.theta:.10g},{p.b0:.10g},{p.b1:.10g}")
        run.write("tradeoff.csv", "\n".join(lines) + "\n")
        print(f"tradeoff curve with {len(curve.points)} points")
        did_something = True
    if not did_something:
        raise ConfigError("oracle needs --example and/or --tradeoff")
    run.finish()


# ---------------------------------------------------------------------------
# Parser wiring.
# ---------------------------------------------------------------------------


def _add_common(p: _Parser) -> None:
    p.add_argument("--seed", type=int, default=0, help="master seed for the run")
    p.add_argument("--out", default="runs/latest", help="output directory")


def _add_data_flags(p: _Parser) -> None:
    p.add_argument("--data", default="synth",
                   help="'synth' or a CSV path (needs --schema)")
    p.add_argument("--schema", help="schema file describing the CSV")
    p.add_argument("--n-samples", dest="n_samples", type=int,
                   help="rows to draw when --data synth")
    p.add_argument("--test-fraction", dest="test_fraction", type=float)


def _add_budget_flags(p: _Parser) -> None:
    p.add_argument("--delta", type=float, help="effort budget radius")
    p.add_argument("--norm", choices=("linf", "l2_weighted"))
    p.add_argument("--cost-diag", dest="cost_diag", type=_float_list,
                   help="comma-separated diagonal costs for l2_weighted")


def _add_train_flags(p: _Parser) -> None:
    p.add_argument("--config", help="key = value file; explicit flags override it")
    p.add_argument("--model", choices=("glm", "mlp"))
    p.add_argument("--hidden", type=_int_list, help="mlp hidden widths, e.g. 4,4")
    p.add_argument("--penalty", choices=("none", "cov", "kde", "loss", "be_loss"))
    p.add_argument("--lam", type=float, help="penalty weight in [0, 1)")
    p.add_argument("--bandwidth", type=float, help="kde penalty bandwidth")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--optimizer", choices=("adam", "sgd"))
    p.add_argument("--pgd-steps", dest="pgd_steps", type=int)
    p.add_argument("--pgd-restarts", dest="pgd_restarts", type=int)


def build_parser() -> _Parser:
    parser = _Parser(prog="improvkit",
                     description="equal-improvability fairness toolkit")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("train", help="fit a penalized scorer", parents=[])
    _add_common(p)
    _add_data_flags(p)
    _add_budget_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="report disparities for a saved model")
    _add_common(p)
    p.add_argument("--model-file", dest="model_file", required=True)
    _add_data_flags(p)
    _add_budget_flags(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("cv", help="two-step cross-validated lambda selection")
    _add_common(p)
    _add_data_flags(p)
    _add_budget_flags(p)
    _add_train_flags(p)
    p.add_argument("--folds", type=int, default=5)
    p.set_defaults(func=_cmd_cv)

    p = sub.add_parser("pareto", help="sweep lambda x seed and report the frontier")
    _add_common(p)
    _add_data_flags(p)
    _add_budget_flags(p)
    _add_train_flags(p)
    p.add_argument("--lambdas", type=_float_list)
    p.add_argument("--seeds", type=_int_list)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_pareto)

    p = sub.add_parser("simulate", help="run the feedback dynamics")
    _add_common(p)
    p.add_argument("--policy", default="ei", help="comma-separated policy tags")
    p.add_argument("--mu0", type=float, default=0.0)
    p.add_argument("--sigma0", type=float, default=1.0)
    p.add_argument("--mu1", type=float, default=1.0)
    p.add_argument("--sigma1", type=float, default=0.5)
    p.add_argument("--alpha", type=float, default=0.2)
    p.add_argument("--cap", type=float, default=0.1, help="error-rate cap")
    p.add_argument("--beta", type=float, default=0.25)
    p.add_argument("--rounds", type=int, default=10)
    p.add_argument("--effort", choices=("inverse_square", "log_capped"),
                   default="inverse_square")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("oracle", help="exact reference computations")
    _add_common(p)
    p.add_argument("--example", choices=("d1", "d2"))
    p.add_argument("--m", default="1", help="scale of the worked example (rational)")
    p.add_argument("--tradeoff", action="store_true")
    p.add_argument("--delta", type=float)
    p.add_argument("--n-caps", dest="n_caps", type=int, default=20)
    p.add_argument("--caps", type=_float_list)
    p.set_defaults(func=_cmd_oracle)

    return parser


def main(argv=None) -> int:
    level = os.environ.get("IMPROVKIT_LOG", "error").lower()
    if level not in _LOG_LEVELS:
        print(f"improvkit: unknown IMPROVKIT_LOG level {level!r}", file=sys.stderr)
        return 1
    logging.basicConfig(level=_LOG_LEVELS[level],
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
    except ConfigError as exc:
        print(f"improvkit: configuration error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"improvkit: data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"improvkit: numerical error: {exc}", file=sys.stderr)
        return 3
    except ImprovkitError as exc:  # pragma: no cover - safety net
        print(f"improvkit: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
