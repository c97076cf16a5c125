"""
Phase orchestration behind the CLI subcommands. Phases talk to each other
only through files in the run directory.
"""

import json
import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from core.config import RunConfig
from core.errors import ConfigError, DivergenceError, MissingDependencyError
from models.checkpoint import CheckpointMeta
from models.expert import ExpertRegistry
from models.params import ScoreHead, SiameseParams
from models.report import EvalReport, TrainingHistory
from models.synthetic import SyntheticDataset
from models.video import VideoRecord
from services import (
    checkpoint_service,
    dataset_service,
    dml_service,
    evaluation_service,
    feedback_service,
    report_service,
    score_service,
    synthetic_service,
)

logger = logging.getLogger(__name__)

TRAIN_SPLITS = ("train_dml", "train_score")


class RunLayout:
    """Paths inside one run directory."""

    def __init__(self, run_dir):
        self.root = Path(run_dir)

    config_echo = property(lambda self: self.root / "config.echo.json")
    data_dir = property(lambda self: self.root / "data")
    dml_checkpoint = property(lambda self: self.root / "checkpoints" / "dml.aqac")
    score_checkpoint = property(lambda self: self.root / "checkpoints" / "score.aqac")
    dml_history = property(lambda self: self.root / "dml_history.csv")
    score_history = property(lambda self: self.root / "score_history.csv")
    registry = property(lambda self: self.root / "registry.json")
    predictions = property(lambda self: self.root / "predictions.csv")
    feedback_dir = property(lambda self: self.root / "feedback")
    report = property(lambda self: self.root / "report.json")
    eval_csv = property(lambda self: self.root / "eval.csv")
    ablation = property(lambda self: self.root / "ablation.json")


def manifest_path(config: RunConfig) -> Path:
    if config.manifest:
        return Path(config.manifest)
    default = RunLayout(config.run_dir).data_dir / "manifest.csv"
    if not default.exists():
        raise MissingDependencyError(f"no --manifest given and {default} does not exist; run gen-synthetic first")
    return default


def load_split_videos(config: RunConfig, splits: Sequence[str]) -> list[VideoRecord]:
    """Videos of the given splits, checked against the model's feature dimension."""
    videos = dataset_service.load_videos(manifest_path(config), config.activity, splits)
    for v in videos:
        if v.features.dim != config.model.feature_dim:
            raise ConfigError(f"video {v.id} has feature dimension {v.features.dim}, "
                              f"model.feature_dim is {config.model.feature_dim}")
    return videos


def _update_report(layout: RunLayout, section: str, payload: dict) -> dict:
    report = json.loads(layout.report.read_text()) if layout.report.exists() else {}
    report[section] = payload
    report_service.write_json(report, layout.report)
    return report


# gen-synthetic
def gen_synthetic(config: RunConfig) -> SyntheticDataset:
    layout = RunLayout(config.run_dir)
    config.echo(layout.config_echo)
    return synthetic_service.generate_dataset(config.synthetic, layout.data_dir)


# train-dml
def build_dml_pairs(config: RunConfig, videos: Sequence[VideoRecord]):
    lookup = {v.id: v for v in videos}
    pairs = dataset_service.make_pairs(videos, config.activity.threshold)
    balanced = dataset_service.balance_for_level(pairs, lookup, config.dml.balance, config.dml.seed,
                                                 config.dml.augment_kinds)
    return balanced, lookup


def _save_dml(config: RunConfig, layout: RunLayout, params: SiameseParams, history: TrainingHistory) -> None:
    meta = CheckpointMeta(phase="dml", epoch=history.best_epoch or 0, seed=config.dml.seed,
                          config_hash=config.model_hash(), activation=params.activation, use_bias=params.use_bias)
    checkpoint_service.save_checkpoint(params, layout.dml_checkpoint, meta)
    report_service.write_history(history, layout.dml_history)


def train_dml(config: RunConfig) -> tuple[SiameseParams, TrainingHistory]:
    layout = RunLayout(config.run_dir)
    config.echo(layout.config_echo)
    videos = load_split_videos(config, TRAIN_SPLITS)
    pairs, lookup = build_dml_pairs(config, videos)
    try:
        params, history = dml_service.train_dml(pairs, lookup, config.dml, config.model, config.activity.n_clips)
    except DivergenceError as e:
        if e.last_good is not None:
            _save_dml(config, layout, e.last_good, e.history or TrainingHistory(phase="dml"))
            logger.error("%s; kept last good parameters in %s", e.message, layout.dml_checkpoint)
        raise
    _save_dml(config, layout, params, history)
    return params, history


# train-score
def train_score(config: RunConfig, dml_checkpoint: Optional[str] = None) -> tuple[ScoreHead, ExpertRegistry, TrainingHistory]:
    layout = RunLayout(config.run_dir)
    source = Path(dml_checkpoint) if dml_checkpoint else layout.dml_checkpoint
    if not source.exists():
        raise MissingDependencyError(f"train-score needs a DML checkpoint, {source} not found; run train-dml first")
    ckpt = checkpoint_service.load_checkpoint(source)
    checkpoint_service.check_config_hash(ckpt, config.model_hash(), str(source))
    config.echo(layout.config_echo)

    videos = load_split_videos(config, ("train_score",))
    registry = dataset_service.select_experts(videos, config.expert_mode, config.expert_constant_type)
    head = score_service.init_head(checkpoint_service.to_siamese(ckpt), config.activity)
    head, history = score_service.train_score_head(head, registry, videos, config.score)

    meta = CheckpointMeta(phase="score", epoch=history.best_epoch or 0, seed=config.score.seed,
                          config_hash=config.model_hash(), activation=head.siamese.activation,
                          use_bias=head.siamese.use_bias, score_min=head.score_min, score_max=head.score_max)
    checkpoint_service.save_checkpoint(head.siamese, layout.score_checkpoint, meta)
    report_service.write_json(registry.model_dump(mode="json"), layout.registry)
    report_service.write_history(history, layout.score_history)
    return head, registry, history


def load_scoring(config: RunConfig) -> tuple[ScoreHead, ExpertRegistry, dict[str, VideoRecord]]:
    """Trained head, expert registry and the loaded expert videos of a finished run."""
    layout = RunLayout(config.run_dir)
    if not layout.score_checkpoint.exists() or not layout.registry.exists():
        raise MissingDependencyError(f"{layout.root} has no trained score head; run train-dml and train-score first")
    ckpt = checkpoint_service.load_checkpoint(layout.score_checkpoint)
    checkpoint_service.check_config_hash(ckpt, config.model_hash(), str(layout.score_checkpoint))
    registry = ExpertRegistry.model_validate_json(layout.registry.read_text())
    experts = {v.id: v for v in load_split_videos(config, TRAIN_SPLITS) if v.id in registry.all_ids()}
    return checkpoint_service.to_head(ckpt), registry, experts


def evaluate_head(head: ScoreHead, registry: ExpertRegistry, videos: Sequence[VideoRecord],
                  experts: dict[str, VideoRecord]):
    rows = score_service.predict(head, registry, videos, experts)
    return rows, evaluation_service.evaluate_predictions(rows)


def mse_band(config: RunConfig) -> float:
    return 0.05 * config.activity.score_max ** 2 * 0.01


# evaluate
def evaluate(config: RunConfig) -> EvalReport:
    layout = RunLayout(config.run_dir)
    head, registry, experts = load_scoring(config)
    test = load_split_videos(config, ("test",))
    rows, report = evaluate_head(head, registry, test, experts)
    report_service.write_predictions(rows, layout.predictions)
    report_service.write_eval_csv(report, layout.eval_csv)
    payload = report.model_dump()
    payload["mse_band"] = mse_band(config)
    payload["mse_within_band"] = report.mse <= payload["mse_band"]
    _update_report(layout, "evaluation", payload)
    logger.info("test rho %.4f mse %.4f over %d videos", report.rho, report.mse, report.n)
    return report


# feedback
def feedback(config: RunConfig, video_ids: Optional[Sequence[str]] = None, all_test: bool = False) -> dict:
    layout = RunLayout(config.run_dir)
    head, registry, experts = load_scoring(config)
    pool = {v.id: v for v in load_split_videos(config, ("train_dml", "train_score", "test"))}
    if all_test:
        targets = sorted(vid for vid, v in pool.items() if v.split == "test")
    else:
        targets = list(video_ids or [])
    unknown = [vid for vid in targets if vid not in pool]
    if unknown:
        raise ConfigError(f"unknown video ids: {unknown}")
    if not targets:
        raise ConfigError("feedback needs --video ids or --all-test")

    detected: set[tuple[str, int]] = set()
    results = {}
    for vid in targets:
        video = pool[vid]
        expert = experts[registry.for_type(video.action_type)[0]]
        fb = feedback_service.feedback_report(head.siamese, video, expert, layout.feedback_dir,
                                              config.feedback.threshold)
        results[vid] = fb
        detected |= {(vid, j) for j in feedback_service.detected_faults(fb)}

    summary: dict = {"videos": len(targets), "threshold": config.feedback.threshold,
                     "flagged_clips": len(detected)}
    faults_file = manifest_path(config).parent / "faults.csv"
    if faults_file.exists():
        planted = synthetic_service.load_faults(faults_file)
        truth = {(vid, j) for vid in targets for j in planted.get(vid, set())}
        precision, recall = evaluation_service.precision_recall(detected, truth)
        summary.update(precision=precision, recall=recall, planted_clips=len(truth))
        logger.info("feedback precision %.3f recall %.3f over %d planted faults", precision, recall, len(truth))
    _update_report(layout, "feedback", summary)
    return results


# report
def report(config: RunConfig) -> EvalReport:
    '''Rebuild eval.csv, report.json's evaluation section and feedback SVGs from stored outputs.'''
    layout = RunLayout(config.run_dir)
    if not layout.predictions.exists():
        raise MissingDependencyError(f"{layout.predictions} not found; run evaluate first")
    rows = report_service.read_predictions(layout.predictions)
    result = evaluation_service.evaluate_predictions(rows)
    report_service.write_eval_csv(result, layout.eval_csv)
    payload = result.model_dump()
    payload["mse_band"] = mse_band(config)
    payload["mse_within_band"] = result.mse <= payload["mse_band"]
    _update_report(layout, "evaluation", payload)
    if layout.feedback_dir.exists():
        for csv_path in sorted(layout.feedback_dir.glob("*.csv")):
            fb = report_service.read_feedback_csv(csv_path)
            report_service.plot_similarity_curve(fb, csv_path.with_suffix(".svg"), title=csv_path.stem,
                                                 threshold=config.feedback.threshold)
    return result


# ablation
def run_ablation(config: RunConfig) -> list[dict]:
    '''
    Replays the component study on the configured data: scoring without DML,
    DML with each balancing level, and each expert mode on the fully
    balanced DML.
    '''
    layout = RunLayout(config.run_dir)
    config.echo(layout.config_echo)
    train_all = load_split_videos(config, TRAIN_SPLITS)
    score_train = [v for v in train_all if v.split == "train_score"]
    test = load_split_videos(config, ("test",))
    lookup = {v.id: v for v in train_all}

    def score_with(siamese: SiameseParams, mode: str) -> EvalReport:
        registry = dataset_service.select_experts(score_train, mode, config.expert_constant_type)
        head = score_service.init_head(siamese, config.activity)
        head, _ = score_service.train_score_head(head, registry, score_train, config.score)
        experts = {vid: lookup[vid] for vid in registry.all_ids()}
        return evaluate_head(head, registry, test, experts)[1]

    rows = []
    untrained = dml_service.init_siamese(config.model, seed=config.dml.seed)
    result = score_with(untrained, "best")
    rows.append({"variant": "no_dml", "dml_pairs": 0, "rho": result.rho, "mse": result.mse})

    raw_pairs = dataset_service.make_pairs(train_all, config.activity.threshold)
    trained: dict[str, SiameseParams] = {}
    for level in ("none", "partial", "full"):
        pairs = dataset_service.balance_for_level(raw_pairs, lookup, level, config.dml.seed, config.dml.augment_kinds)
        params, _ = dml_service.train_dml(pairs, lookup, config.dml, config.model, config.activity.n_clips)
        trained[level] = params
        result = score_with(params, "best")
        rows.append({"variant": f"dml_balance_{level}", "dml_pairs": len(pairs), "rho": result.rho, "mse": result.mse})

    for mode in ("best", "worst", "constant"):
        result = score_with(trained["full"], mode)
        rows.append({"variant": f"expert_{mode}", "dml_pairs": None, "rho": result.rho, "mse": result.mse})

    report_service.write_json({"rows": rows}, layout.ablation)
    for row in rows:
        logger.info("ablation %-22s rho %.4f mse %.3f", row["variant"], row["rho"], row["mse"])
    return rows


# splits
def redraw_split(videos: Sequence[VideoRecord], test_fraction: float,
                 rng: np.random.Generator) -> tuple[list[VideoRecord], list[VideoRecord]]:
    '''
    Re-partition the train_score and test videos of each action type. The
    type's top scorers always stay on the training side so best-per-type
    experts exist; train_dml videos never move.
    '''
    train = [v for v in videos if v.split == "train_dml"]
    test: list[VideoRecord] = []
    by_type: dict[int, list[VideoRecord]] = {}
    for v in sorted(videos, key=lambda r: r.id):
        if v.split != "train_dml":
            by_type.setdefault(v.action_type, []).append(v)
    for _, group in sorted(by_type.items()):
        top = max(v.overall_score for v in group)
        movable = [v for v in group if v.overall_score != top]
        n_test = int(round(test_fraction * len(group)))
        picked = {movable[i].id for i in rng.permutation(len(movable))[:n_test]}
        for v in group:
            split = "test" if v.id in picked else "train_score"
            (test if split == "test" else train).append(v.model_copy(update={"split": split}))
    return train, test


def repeated_splits(config: RunConfig, k: Optional[int] = None) -> dict:
    '''
    Retrain both phases on k freshly drawn train/test partitions and report
    rho and MSE per split and on average. The test share matches the
    manifest's.
    '''
    k = config.activity.splits if k is None else k
    if k < 1:
        raise ConfigError(f"need at least one split, got {k}")
    layout = RunLayout(config.run_dir)
    config.echo(layout.config_echo)
    pool = load_split_videos(config, ("train_dml", "train_score", "test"))
    n_test = sum(1 for v in pool if v.split == "test")
    n_scored = sum(1 for v in pool if v.split != "train_dml")
    if n_test == 0 or n_scored == 0:
        raise ConfigError("repeated splits need test videos in the manifest to fix the test share")
    fraction = n_test / n_scored

    rows = []
    for i in range(1, k + 1):
        seed = config.seed + i
        train, test = redraw_split(pool, fraction, np.random.default_rng([config.seed, i]))
        lookup = {v.id: v for v in train}
        pairs = dataset_service.make_pairs(train, config.activity.threshold)
        pairs = dataset_service.balance_for_level(pairs, lookup, config.dml.balance, seed, config.dml.augment_kinds)
        dml_config = config.dml.model_copy(update={"seed": seed})
        params, _ = dml_service.train_dml(pairs, lookup, dml_config, config.model, config.activity.n_clips)

        score_train = [v for v in train if v.split == "train_score"]
        registry = dataset_service.select_experts(score_train, config.expert_mode, config.expert_constant_type)
        head = score_service.init_head(params, config.activity)
        head, _ = score_service.train_score_head(head, registry, score_train,
                                                 config.score.model_copy(update={"seed": seed}))
        experts = {vid: lookup[vid] for vid in registry.all_ids()}
        result = evaluate_head(head, registry, test, experts)[1]
        rows.append({"split": i, "seed": seed, "n_train": len(train), "n_test": len(test),
                     "rho": result.rho, "mse": result.mse})
        logger.info("split %d/%d rho %.4f mse %.4f", i, k, result.rho, result.mse)

    payload = {
        "splits": k,
        "rows": rows,
        "mean_rho": float(np.mean([r["rho"] for r in rows])),
        "mean_mse": float(np.mean([r["mse"] for r in rows])),
        "mse_band": mse_band(config),
    }
    _update_report(layout, "splits", payload)
    logger.info("mean over %d splits: rho %.4f mse %.4f", k, payload["mean_rho"], payload["mean_mse"])
    return payload
