from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field


class OptimizerState(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    algorithm: Literal["adam", "sgd"] = "adam"
    learning_rate: float = Field(default=1e-4, gt=0)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = {}
    v: dict[str, np.ndarray] = {}
