from sqlmodel import Session, select
from typing import List, Optional
from models import Prediction
from models.report import PredictionRow

# Store a prediction made by the API
def create_prediction(session: Session, row: PredictionRow, run_dir: str) -> Prediction:
    prediction = Prediction(
        video_id=row.video_id,
        action_type=row.action_type,
        predicted_score=row.predicted_score,
        expert_ids=";".join(row.expert_ids),
        run_dir=run_dir,
    )
    session.add(prediction)
    session.commit()
    session.refresh(prediction)
    return prediction

# Get prediction by ID
def get_prediction_by_id(session: Session, prediction_id: int) -> Prediction | None:
    statement = select(Prediction).where(Prediction.id == prediction_id)
    return session.exec(statement).first()

# List predictions with pagination, newest first, optionally for one video
def list_predictions(session: Session, video_id: Optional[str] = None, skip: int = 0, limit: int = 100) -> List[Prediction]:
    statement = select(Prediction)
    if video_id:
        statement = statement.where(Prediction.video_id == video_id)
    statement = statement.order_by(Prediction.id.desc()).offset(skip).limit(limit)  # type: ignore[union-attr]
    return list(session.exec(statement).all())

# Delete a prediction
def delete_prediction(session: Session, prediction_id: int) -> bool:
    existing = get_prediction_by_id(session, prediction_id)
    if not existing:
        return False
    session.delete(existing)
    session.commit()
    return True
