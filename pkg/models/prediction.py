from sqlmodel import SQLModel, Field
from typing import Optional
from datetime import datetime, timezone

class Prediction(SQLModel, table=True):
    id: Optional[int] = Field(default=None, primary_key=True)
    video_id: str = Field(index=True)
    action_type: int
    predicted_score: float
    expert_ids: str  # ';'-joined reference video ids
    run_dir: str
    created_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))
