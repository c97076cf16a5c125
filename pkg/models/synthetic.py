from pathlib import Path

from pydantic import BaseModel

from core.config import SyntheticConfig
from models.video import DatasetManifest


class SyntheticDataset(BaseModel):
    """What the generator planted: scores, per-clip deviation norms and fault positions."""
    root: Path
    config: SyntheticConfig
    manifest: DatasetManifest
    scores: dict[str, float]
    deviation_norms: dict[str, list[float]]
    faults: dict[str, list[int]]
    experts: dict[int, str]

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.csv"

    @property
    def fault_count(self) -> int:
        return sum(len(v) for v in self.faults.values())
