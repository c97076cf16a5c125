"""Read-only scoring and feedback against a finished run directory."""

import json
import logging
from functools import lru_cache
from pathlib import Path

from core.config import RunConfig
from core.errors import ConfigError, MissingDependencyError
from models.expert import ExpertRegistry
from models.feedback import ClipFeedback
from models.params import ScoreHead
from models.report import PredictionRow
from models.video import ClipFeatureSequence, VideoRecord
from services import dataset_service, feedback_service, score_service
from services.pipeline_service import RunLayout, load_scoring

logger = logging.getLogger(__name__)


class ServedRun:
    """A trained run loaded once and shared by request handlers. Parameters are never mutated."""

    def __init__(self, config: RunConfig, head: ScoreHead, registry: ExpertRegistry, experts: dict[str, VideoRecord]):
        self.config = config
        self.head = head
        self.registry = registry
        self.experts = experts

    @property
    def layout(self) -> RunLayout:
        return RunLayout(self.config.run_dir)

    def summary(self) -> dict:
        report = json.loads(self.layout.report.read_text()) if self.layout.report.exists() else {}
        return {"config": self.config.model_dump(mode="json"), "registry": self.registry.model_dump(mode="json"),
                "report": report}

    def to_record(self, seq: ClipFeatureSequence) -> VideoRecord:
        activity = self.config.activity
        if seq.dim != self.config.model.feature_dim:
            raise ConfigError(f"uploaded features have dimension {seq.dim}, model expects {self.config.model.feature_dim}")
        fitted = dataset_service.fit_length(seq, activity.n_clips, activity.allow_truncation)
        return VideoRecord(id=seq.video_id, action_type=seq.action_type, overall_score=0.0, split="test", features=fitted,
                           padded_clips=max(activity.n_clips - seq.length, 0))

    def score(self, seq: ClipFeatureSequence) -> PredictionRow:
        video = self.to_record(seq)
        row = score_service.predict(self.head, self.registry, [video], self.experts)[0]
        return row.model_copy(update={"true_score": None})

    def feedback(self, seq: ClipFeatureSequence) -> list[ClipFeedback]:
        video = self.to_record(seq)
        expert = self.experts[self.registry.for_type(video.action_type)[0]]
        return feedback_service.clip_feedback(self.head.siamese, video, expert, self.config.feedback.threshold)


def load_run(run_dir) -> ServedRun:
    layout = RunLayout(run_dir)
    if not layout.config_echo.exists():
        raise MissingDependencyError(f"{layout.root} is not a run directory (no config.echo.json)")
    config = RunConfig.model_validate_json(layout.config_echo.read_text())
    config = config.model_copy(update={"run_dir": str(layout.root)})
    head, registry, experts = load_scoring(config)
    logger.info("serving run %s with experts %s", layout.root, registry.experts)
    return ServedRun(config, head, registry, experts)


@lru_cache(maxsize=4)
def get_run(run_dir: str) -> ServedRun:
    return load_run(Path(run_dir))


def decode_upload(data: bytes, filename: str | None) -> ClipFeatureSequence:
    return dataset_service.parse_features(data, source=filename or "<upload>")

