from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

SplitTag = Literal["train_dml", "train_score", "test"]
AugmentKind = Literal["clip_drop", "clip_duplicate", "feature_jitter"]


class ClipFeatureSequence(BaseModel):
    """Ordered clip feature vectors of one video, shape (n_clips, dim), float64 in memory."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    clips: np.ndarray
    video_id: str = ""
    action_type: int = 0
    clip_frames: int = 16

    @field_validator("clips", mode="before")
    @classmethod
    def _as_matrix(cls, v):
        arr = np.array(v, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"clips must be a non-empty (n, D) matrix, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("clip features must be finite")
        arr.flags.writeable = False
        return arr

    @property
    def length(self) -> int:
        return int(self.clips.shape[0])

    @property
    def dim(self) -> int:
        return int(self.clips.shape[1])

    def with_clips(self, clips: np.ndarray) -> "ClipFeatureSequence":
        return ClipFeatureSequence(clips=clips, video_id=self.video_id, action_type=self.action_type,
                                   clip_frames=self.clip_frames)


class VideoRecord(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    id: str
    action_type: int
    overall_score: float
    split: SplitTag = "train_score"
    judge_scores: Optional[list[float]] = None
    difficulty: Optional[float] = None
    features: Optional[ClipFeatureSequence] = None
    padded_clips: int = 0


class AugmentSpec(BaseModel):
    """Recipe for a deterministic feature-space variant of a video."""
    model_config = ConfigDict(frozen=True)

    kind: AugmentKind
    seed: int


class LabeledPair(BaseModel):
    model_config = ConfigDict(frozen=True)

    id_p: str
    id_q: str
    label: int = Field(ge=0, le=1)
    aug_p: Optional[AugmentSpec] = None
    aug_q: Optional[AugmentSpec] = None

    @model_validator(mode="after")
    def _distinct(self) -> "LabeledPair":
        if self.id_p == self.id_q:
            raise ValueError("a pair needs two distinct videos")
        return self

    @property
    def is_synthetic(self) -> bool:
        return self.aug_p is not None or self.aug_q is not None


class ManifestRow(BaseModel):
    id: str
    path: str
    action_type: int
    overall_score: float
    split: SplitTag
    judge_scores: Optional[list[float]] = None
    difficulty: Optional[float] = None


class DatasetManifest(BaseModel):
    rows: list[ManifestRow]

    @model_validator(mode="after")
    def _unique_ids(self) -> "DatasetManifest":
        seen: set[str] = set()
        for row in self.rows:
            if row.id in seen:
                raise ValueError(f"duplicate video id {row.id!r}")
            seen.add(row.id)
        return self
