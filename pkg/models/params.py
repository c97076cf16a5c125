from typing import Iterator, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from core.errors import ShapeError

ENCODER_BLOCKS = ("lstm.W_x", "lstm.W_h", "lstm.b")
DENSE_BLOCKS = ("d1.W", "d1.b", "d2.W", "d2.b")
OUTPUT_BLOCKS = ("out.W", "out.b")
HEAD_BLOCKS = ("head.W", "head.b")


class ParameterBlock(BaseModel):
    """A named float64 array. `values` keeps its shape; the flat view is `values.ravel()`."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    name: str
    values: np.ndarray
    frozen: bool = False

    @field_validator("values", mode="before")
    @classmethod
    def _as_float64(cls, v):
        arr = np.array(v, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("parameter values must be finite")
        return arr

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.values.shape)

    @property
    def size(self) -> int:
        return int(self.values.size)

    def copy(self) -> "ParameterBlock":
        return ParameterBlock(name=self.name, values=self.values.copy(), frozen=self.frozen)


class ParameterSet(BaseModel):
    """Ordered collection of uniquely named blocks."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    blocks: dict[str, ParameterBlock] = {}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.blocks[name].values

    def __contains__(self, name: str) -> bool:
        return name in self.blocks

    def __iter__(self) -> Iterator[ParameterBlock]:
        return iter(self.blocks.values())

    def add(self, block: ParameterBlock) -> None:
        if block.name in self.blocks:
            raise ShapeError(f"duplicate parameter block {block.name!r}")
        self.blocks[block.name] = block

    def trainable(self) -> list[ParameterBlock]:
        return [b for b in self.blocks.values() if not b.frozen]

    def freeze(self, names) -> None:
        for name in names:
            self.blocks[name].frozen = True


class SiameseParams(ParameterSet):
    '''
    Shared LSTM encoder plus the dense stack D1 -> D2 -> sigmoid output.
    There is exactly one encoder copy; both twins read the same blocks.
    '''
    activation: Literal["relu", "identity"] = "relu"
    use_bias: bool = True

    @property
    def embedding_dim(self) -> int:
        return self.blocks["lstm.W_h"].shape[1]

    @property
    def feature_dim(self) -> int:
        return self.blocks["lstm.W_x"].shape[1]

    @property
    def d2_width(self) -> int:
        return self.blocks["d2.W"].shape[0]

    def copy(self) -> "SiameseParams":
        return SiameseParams(
            blocks={name: b.copy() for name, b in self.blocks.items()},
            activation=self.activation,
            use_bias=self.use_bias,
        )


class ScoreHead(BaseModel):
    """Regression layer w'' trained on top of a frozen Siamese network."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    siamese: SiameseParams
    score_min: float = 0.0
    score_max: float = 100.0

    @property
    def w_head(self) -> np.ndarray:
        return self.siamese["head.W"]

    @property
    def b_head(self) -> np.ndarray:
        return self.siamese["head.b"]

    def normalize(self, score):
        return (np.asarray(score, dtype=np.float64) - self.score_min) / (self.score_max - self.score_min)

    def denormalize(self, value):
        return np.asarray(value, dtype=np.float64) * (self.score_max - self.score_min) + self.score_min


class ExpertBiasTerms(BaseModel):
    """Z split into the expert's contribution a_e and the test video's zx_q (bias-free identity mode)."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    a_e: np.ndarray
    zx_q: np.ndarray

    @property
    def z(self) -> np.ndarray:
        return self.a_e + self.zx_q
