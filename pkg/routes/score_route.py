from fastapi import APIRouter, Depends, File, UploadFile, status
from sqlmodel import Session
from typing import Any, List
from pydantic import BaseModel

from core.config import settings
from core.database import get_session
from models import ClipFeedback
from services import inference_service, prediction_service

router = APIRouter(tags=["Scoring"])

# Response models
class RunResponse(BaseModel):
    run_dir: str
    config: dict[str, Any]
    registry: dict[str, Any]
    report: dict[str, Any]

class ScoreResponse(BaseModel):
    id: int
    video_id: str
    action_type: int
    predicted_score: float
    expert_ids: List[str]

class FeedbackResponse(BaseModel):
    video_id: str
    threshold: float
    clips: List[ClipFeedback]


def get_served_run() -> inference_service.ServedRun:
    return inference_service.get_run(settings.RUN_DIR)


@router.get("/runs/current", response_model=RunResponse)
def current_run(run: inference_service.ServedRun = Depends(get_served_run)):
    """Config echo, expert registry and report of the served run."""
    return RunResponse(run_dir=run.config.run_dir, **run.summary())

@router.post("/score", response_model=ScoreResponse, status_code=status.HTTP_201_CREATED)
def score_video(
    file: UploadFile = File(...),
    run: inference_service.ServedRun = Depends(get_served_run),
    session: Session = Depends(get_session)
):
    """Score an uploaded AQAF feature file against the experts of its action type."""
    seq = inference_service.decode_upload(file.file.read(), file.filename)
    row = run.score(seq)
    stored = prediction_service.create_prediction(session, row, run.config.run_dir)
    return ScoreResponse(
        id=stored.id or 0,
        video_id=row.video_id,
        action_type=row.action_type,
        predicted_score=row.predicted_score,
        expert_ids=row.expert_ids
    )

@router.post("/feedback", response_model=FeedbackResponse)
def feedback_video(
    file: UploadFile = File(...),
    run: inference_service.ServedRun = Depends(get_served_run)
):
    """Per-clip similarity to the expert for an uploaded AQAF feature file."""
    seq = inference_service.decode_upload(file.file.read(), file.filename)
    return FeedbackResponse(
        video_id=seq.video_id,
        threshold=run.config.feedback.threshold,
        clips=run.feedback(seq)
    )
