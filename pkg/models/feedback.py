from pydantic import BaseModel, Field


class ClipFeedback(BaseModel):
    clip_index: int = Field(ge=1)
    similarity: float = Field(gt=0, lt=1)
    faulty: bool
    padded: bool = False
