#!/usr/bin/env python3
import argparse
import json
import logging
import sys
from typing import Any

from .config import MODEL_KINDS, PRESETS, RunConfig, default_config_path, load_config
from .errors import EXIT_FAILURE, exit_code_for
from .model import TrainingProgress
from .pipeline import run_allocate, run_compare, run_decide, run_evaluate, run_gen, run_train


def progress_callback(progress: TrainingProgress) -> None:
    record = progress.record
    line = f"Progress: {progress.progress:.1f}% - {progress.phase} epoch {progress.epoch}/{progress.total_epochs}"
    if record is not None:
        line += f" (alpha={record.alpha:.4g}, train loss={record.train_loss:.6f}"
        if record.validation_loss is not None:
            line += f", validation loss={record.validation_loss:.6f}"
        line += ")"
    print(line)


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    """Collect CLI flags into config sections; flags win over the config file."""
    overrides: dict[str, dict[str, Any]] = {}

    def put(section: str, key: str, value: Any) -> None:
        if value is not None:
            overrides.setdefault(section, {})[key] = value

    put("paths", "output_dir", getattr(args, "output_dir", None))
    put("model", "kind", getattr(args, "kind", None))
    put("population", "bias_strength", getattr(args, "bias_strength", None))
    put("seeds", "train", getattr(args, "seed", None))
    put("train", "learning_rate", getattr(args, "learning_rate", None))
    put("train", "alpha_upper", getattr(args, "alpha_upper", None))
    put("train", "alpha_lower", getattr(args, "alpha_lower", None))
    epochs = getattr(args, "epochs", None)
    for key in ("bias_epochs", "uplift_epochs", "mlp_epochs"):
        put("train", key, epochs)
    if getattr(args, "ips", False):
        put("bias_correction", "enabled", True)
    put("budget", "total", getattr(args, "total_budget", None))
    put("budget", "per_capita", getattr(args, "per_capita", None))
    put("metrics", "eq_tol", getattr(args, "eq_tol", None))
    put("metrics", "mlss_radius", getattr(args, "mlss_radius", None))
    return overrides


def _load(args: argparse.Namespace) -> RunConfig:
    path = args.config or default_config_path()
    return load_config(path, preset=args.preset, overrides=_overrides(args))


def _print_json(payload: Any) -> None:
    print(json.dumps(payload, ensure_ascii=False, indent=2))


def _cmd_gen(args: argparse.Namespace, config: RunConfig) -> None:
    result = run_gen(config, force=args.force)
    if args.json:
        _print_json(
            {
                "population": str(result.population_path),
                "splits": [str(path) for path in result.split_paths],
                "samples": result.sample_count,
            }
        )
        return
    print(f"Population: {result.population_path}")
    for path in result.split_paths:
        print(f"Dataset: {path}")
    print(f"Samples: {result.sample_count}")


def _cmd_train(args: argparse.Namespace, config: RunConfig) -> None:
    callback = None if args.quiet or args.json else progress_callback
    result = run_train(config, kind=args.kind, force=args.force, progress_callback=callback)
    if args.json:
        _print_json(
            {
                "kind": result.kind,
                "model": str(result.model_path),
                "training_log": str(result.log_path),
                "epochs": [record.to_record() for record in result.records],
            }
        )
        return
    print(f"\nTraining complete! Model file: {result.model_path}")
    print(f"Training log: {result.log_path}")


def _cmd_allocate(args: argparse.Namespace, config: RunConfig) -> None:
    result = run_allocate(config, kind=args.kind, force=args.force)
    dual = result.dual
    summary = {
        "kind": result.kind,
        "plan": str(result.plan_path),
        "dual": str(result.dual_path),
        "mode": dual.mode,
        "lambdas": [float(v) for v in dual.lambdas],
        "spend": [float(v) for v in dual.spend],
        "budgets": [float(v) for v in dual.budgets],
        "objective": dual.objective,
        "converged": dual.converged,
        "boundary_users": int(result.plan.boundary_users.size),
    }
    if args.json:
        _print_json(summary)
        return
    print(f"Plan: {result.plan_path}")
    print(f"Dual solution: {result.dual_path}")
    print(f"Mode: {dual.mode}, lambda: {summary['lambdas']}, converged: {dual.converged}")
    print(f"Spend: {summary['spend']} against {summary['budgets']}")
    print(f"Expected response total: {dual.objective:.4f}, boundary users: {summary['boundary_users']}")


def _cmd_evaluate(args: argparse.Namespace, config: RunConfig) -> None:
    kinds = list(MODEL_KINDS) if args.compare else [args.kind or config.model.kind]
    result = run_evaluate(config, kinds=kinds, force=args.force, as_json=args.json)
    if args.json:
        _print_json({"reports": [report.to_dict() for report in result.reports], "labels": result.labels})
        return
    print(result.render())
    print(f"\nReport: {result.report_path}")


def _cmd_compare(args: argparse.Namespace, config: RunConfig) -> None:
    callback = None if args.quiet or args.json else progress_callback
    result = run_compare(config, force=args.force, as_json=args.json, progress_callback=callback)
    if args.json:
        _print_json({"reports": [report.to_dict() for report in result.reports], "labels": result.labels})
        return
    print(result.render())
    print(f"\nReport: {result.report_path}")


def _cmd_decide(args: argparse.Namespace, config: RunConfig) -> None:
    decision = run_decide(config, args.features, kind=args.kind)
    if args.json:
        _print_json({"features": list(decision.features), "level": decision.level, "incentive": decision.incentive})
        return
    print(decision.level)


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config",
        type=str,
        help="TOML run configuration (default: $PROMOALLOC_CONFIG when set)",
    )
    common.add_argument("--preset", type=str, choices=sorted(PRESETS), help="Named experiment preset")
    common.add_argument("--output-dir", type=str, help="Directory that relative artifact paths resolve under")
    common.add_argument("--force", action="store_true", help="Overwrite existing output files")
    common.add_argument("--json", action="store_true", help="Print machine-readable records instead of text")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true", help="Log stage details")
    verbosity.add_argument("--quiet", action="store_true", help="Quiet mode, do not show progress information")

    kind = argparse.ArgumentParser(add_help=False)
    kind.add_argument("--kind", type=str, choices=list(MODEL_KINDS), help="Response model kind (default from config)")

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--seed", type=int, help="Training seed")
    training.add_argument("--epochs", type=int, help="Epochs for every training phase")
    training.add_argument("--learning-rate", type=float, help="Optimizer learning rate")
    training.add_argument("--alpha-upper", type=float, help="Initial smoothness weight")
    training.add_argument("--alpha-lower", type=float, help="Final smoothness weight")
    training.add_argument("--ips", action="store_true", help="Weight training samples by inverse propensity")

    budget = argparse.ArgumentParser(add_help=False)
    budget_form = budget.add_mutually_exclusive_group()
    budget_form.add_argument("--total-budget", type=float, help="Total budget over the test users")
    budget_form.add_argument("--per-capita", type=float, help="Expected spend limit per user")

    metrics = argparse.ArgumentParser(add_help=False)
    metrics.add_argument("--eq-tol", type=float, help="Tolerance for equal predicted responses (default: 1e-9)")
    metrics.add_argument("--mlss-radius", type=float, help="MLSS window radius (default: two grid steps)")

    parser = argparse.ArgumentParser(
        prog="promoalloc",
        description="Train monotone promotion response models and allocate incentives under a budget",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Reproduce the first synthetic experiment
  %(prog)s gen --preset synthetic1 --output-dir runs/s1
  %(prog)s train --preset synthetic1 --output-dir runs/s1 --kind dipn
  %(prog)s allocate --preset synthetic1 --output-dir runs/s1 --per-capita 11
  %(prog)s evaluate --preset synthetic1 --output-dir runs/s1

  # DIPN against MLP in one go
  %(prog)s compare --preset synthetic2 --output-dir runs/s2

  # Incentive level for a single user from stored multipliers
  %(prog)s decide --output-dir runs/s1 1 0 1
        """,
    )
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen", parents=[common], help="Generate a synthetic population and dataset splits")
    gen.add_argument("--bias-strength", type=float, help="Tilt incentive assignment by baseline response")
    gen.set_defaults(handler=_cmd_gen)

    commands.add_parser(
        "train", parents=[common, kind, training], help="Train a response model"
    ).set_defaults(handler=_cmd_train)
    commands.add_parser(
        "allocate", parents=[common, kind, budget], help="Solve the budgeted allocation for the test users"
    ).set_defaults(handler=_cmd_allocate)

    evaluate = commands.add_parser("evaluate", parents=[common, kind, budget, metrics], help="Write the metric report")
    evaluate.add_argument("--compare", action="store_true", help="Report DIPN and MLP side by side")
    evaluate.set_defaults(handler=_cmd_evaluate)

    commands.add_parser(
        "compare",
        parents=[common, training, budget, metrics],
        help="Train, allocate and evaluate DIPN and MLP side by side",
    ).set_defaults(handler=_cmd_compare)

    decide = commands.add_parser("decide", parents=[common, kind, budget], help="Incentive level for one user")
    decide.add_argument("features", type=int, nargs=3, metavar="FEATURE", help="Three categorical feature values")
    decide.set_defaults(handler=_cmd_decide)
    return parser


def main(argv: list[str] | None = None) -> None:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = _load(args)
        args.handler(args, config)
    except KeyboardInterrupt:
        print("\nInterrupted by user", file=sys.stderr)
        sys.exit(EXIT_FAILURE)
    except Exception as e:  # pylint: disable=broad-exception-caught
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(exit_code_for(e))


if __name__ == "__main__":
    main()
