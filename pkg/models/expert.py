from typing import Literal

from pydantic import BaseModel, model_validator

from core.errors import RegistryError

RegistryMode = Literal["best_per_type", "worst_per_type", "constant"]


class ExpertRegistry(BaseModel):
    """Reference videos per action type. In constant mode one type's references serve every type."""
    mode: RegistryMode
    experts: dict[int, list[str]]
    constant_type: int | None = None

    @model_validator(mode="after")
    def _non_empty(self) -> "ExpertRegistry":
        for action_type, ids in self.experts.items():
            if not ids:
                raise ValueError(f"action type {action_type} has no reference video")
        if self.mode == "constant" and len(self.experts) != 1:
            raise ValueError("constant mode holds exactly one reference type")
        return self

    def for_type(self, action_type: int) -> list[str]:
        if self.mode == "constant":
            return next(iter(self.experts.values()))
        if action_type not in self.experts:
            raise RegistryError(f"no expert registered for action type {action_type}")
        return self.experts[action_type]

    def all_ids(self) -> set[str]:
        return {vid for ids in self.experts.values() for vid in ids}
