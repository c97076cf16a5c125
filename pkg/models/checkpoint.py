from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict

from models.params import ParameterBlock


class CheckpointMeta(BaseModel):
    model_config = ConfigDict(extra="allow")

    phase: Literal["dml", "score"]
    epoch: int
    seed: int
    config_hash: str
    activation: Literal["relu", "identity"] = "relu"
    use_bias: bool = True
    score_min: Optional[float] = None
    score_max: Optional[float] = None


class Checkpoint(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    blocks: dict[str, ParameterBlock]
    meta: CheckpointMeta
