"""Command-line entry point: `aqa <subcommand> [flags]`."""

import argparse
import logging
import sys
from typing import Any, Optional, Sequence

from core.config import load_run_config, settings
from core.errors import AqaError
from core.log import configure_logging
from services import pipeline_service

logger = logging.getLogger("aqa")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="seed for every phase (overrides the config file)")
    common.add_argument("--run-dir", help="run directory for all artifacts")
    common.add_argument("--manifest", help="dataset manifest CSV (default: <run-dir>/data/manifest.csv)")
    common.add_argument("--expert-mode", choices=["best", "worst", "constant"])
    common.add_argument("--activity", choices=["diving", "vault", "custom"])
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="aqa", description="Siamese action quality assessment pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-synthetic", parents=[common], help="write a synthetic dataset with planted ground truth")
    sub.add_parser("train-dml", parents=[common], help="train the Siamese similarity network")
    p = sub.add_parser("train-score", parents=[common], help="train the score head on a frozen Siamese")
    p.add_argument("--dml-checkpoint", help="DML checkpoint to start from (default: <run-dir>/checkpoints/dml.aqac)")
    sub.add_parser("evaluate", parents=[common], help="predict test scores and write report.json")
    p = sub.add_parser("feedback", parents=[common], help="per-clip similarity to the expert")
    p.add_argument("--video", action="append", default=[], help="video id (repeatable)")
    p.add_argument("--all-test", action="store_true", help="every test-split video")
    p.add_argument("--threshold", type=float, help="faulty-clip threshold (default 0.5)")
    sub.add_parser("report", parents=[common], help="regenerate CSV/SVG outputs from stored predictions")
    sub.add_parser("ablation", parents=[common], help="component study: no-DML, balancing levels, expert modes")
    p = sub.add_parser("splits", parents=[common], help="retrain and evaluate on repeated random train/test splits")
    p.add_argument("--splits", type=int, dest="n_splits", help="number of splits (default: the activity's, 10 for diving)")
    p = sub.add_parser("serve", parents=[common], help="serve a finished run over HTTP")
    p.add_argument("--host", default="0.0.0.0")
    p.add_argument("--port", type=int, default=8000)
    return parser


def overrides_from(args: argparse.Namespace) -> dict[str, Any]:
    overrides: dict[str, Any] = {}
    if args.seed is not None:
        overrides.update(seed=args.seed, dml={"seed": args.seed}, score={"seed": args.seed},
                         synthetic={"seed": args.seed})
    if args.run_dir:
        overrides["run_dir"] = args.run_dir
    if args.manifest:
        overrides["manifest"] = args.manifest
    if args.expert_mode:
        overrides["expert_mode"] = args.expert_mode
    if args.activity:
        overrides["activity"] = {"name": args.activity}
    if getattr(args, "threshold", None) is not None:
        overrides["feedback"] = {"threshold": args.threshold}
    return overrides


def dispatch(args: argparse.Namespace) -> None:
    config = load_run_config(args.config, overrides_from(args))
    command = args.command
    if command == "gen-synthetic":
        dataset = pipeline_service.gen_synthetic(config)
        print(f"manifest: {dataset.manifest_path}")
    elif command == "train-dml":
        _, history = pipeline_service.train_dml(config)
        print(f"dml best epoch {history.best_epoch}, stopped early: {history.stopped_early}")
    elif command == "train-score":
        _, registry, history = pipeline_service.train_score(config, args.dml_checkpoint)
        print(f"score head final loss {history.losses[-1]:.6f}, experts {registry.experts}")
    elif command == "evaluate":
        report = pipeline_service.evaluate(config)
        print(f"rho {report.rho:.4f}  mse {report.mse:.4f}  n {report.n}")
    elif command == "feedback":
        results = pipeline_service.feedback(config, args.video, args.all_test)
        for vid, clips in results.items():
            print(vid, "faulty:", sorted(c.clip_index for c in clips if c.faulty))
    elif command == "report":
        report = pipeline_service.report(config)
        print(f"rho {report.rho:.4f}  mse {report.mse:.4f}  n {report.n}")
    elif command == "ablation":
        for row in pipeline_service.run_ablation(config):
            print(f"{row['variant']:<22} rho {row['rho']:.4f}  mse {row['mse']:.3f}")
    elif command == "splits":
        summary = pipeline_service.repeated_splits(config, args.n_splits)
        for row in summary["rows"]:
            print(f"split {row['split']:>2}  rho {row['rho']:.4f}  mse {row['mse']:.3f}")
        print(f"mean      rho {summary['mean_rho']:.4f}  mse {summary['mean_mse']:.3f}")
    elif command == "serve":
        import main as app_main

        settings.RUN_DIR = config.run_dir
        app_main.main(host=args.host, port=args.port)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging("DEBUG" if args.verbose else settings.LOG_LEVEL)
    try:
        dispatch(args)
    except AqaError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return e.exit_code
    except Exception:
        logger.exception("unexpected failure in %s", args.command)
        return 1
    return 0


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
