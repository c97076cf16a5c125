from fastapi import APIRouter, Depends, HTTPException, status
from sqlmodel import Session
from typing import List, Optional
from pydantic import BaseModel

from core.database import get_session
from services import prediction_service

router = APIRouter(prefix="/predictions", tags=["Predictions"])

# Response models
class ActionResponse(BaseModel):
    ok: bool
    message: Optional[str] = None

class PredictionResponse(BaseModel):
    id: int
    video_id: str
    action_type: int
    predicted_score: float
    expert_ids: List[str]
    run_dir: str
    created_at: str

@router.get("/", response_model=List[PredictionResponse])
def list_predictions(
    video_id: Optional[str] = None,
    skip: int = 0,
    limit: int = 100,
    session: Session = Depends(get_session)
):
    """Get stored predictions, newest first, with pagination."""
    predictions = prediction_service.list_predictions(session, video_id=video_id, skip=skip, limit=limit)
    return [
        PredictionResponse(
            id=p.id,
            video_id=p.video_id,
            action_type=p.action_type,
            predicted_score=p.predicted_score,
            expert_ids=p.expert_ids.split(";") if p.expert_ids else [],
            run_dir=p.run_dir,
            created_at=p.created_at.isoformat()
        )
        for p in predictions
        if p.id is not None
    ]

@router.delete("/{prediction_id}", response_model=ActionResponse)
def delete_prediction(
    prediction_id: int,
    session: Session = Depends(get_session)
):
    """Delete a stored prediction."""
    ok = prediction_service.delete_prediction(session, prediction_id)
    if not ok:
        raise HTTPException(
            status_code=status.HTTP_404_NOT_FOUND,
            detail="Prediction not found"
        )
    return ActionResponse(ok=True, message="Prediction deleted successfully")
