from typing import Optional

from pydantic import BaseModel, Field


class TypeMetrics(BaseModel):
    action_type: int
    n: int
    rho: Optional[float] = None
    mse: float


class EvalReport(BaseModel):
    rho: float = Field(ge=-1, le=1)
    mse: float = Field(ge=0)
    n: int = Field(ge=2)
    per_type: list[TypeMetrics] = []


class EpochRecord(BaseModel):
    epoch: int
    loss: float
    holdout_accuracy: Optional[float] = None


class TrainingHistory(BaseModel):
    phase: str
    epochs: list[EpochRecord] = []
    stopped_early: bool = False
    best_epoch: Optional[int] = None

    @property
    def losses(self) -> list[float]:
        return [e.loss for e in self.epochs]


class PredictionRow(BaseModel):
    video_id: str
    action_type: int
    true_score: Optional[float] = None
    predicted_score: float
    expert_ids: list[str]
