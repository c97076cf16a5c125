'''
Synthetic clip-feature datasets with planted ground truth.

Each action type t has a prototype trajectory P_t (n clips x D). All
deviations lie along one shared unit error axis u, and the prototypes are
projected orthogonal to it. A video is

    X_j = P_t[j] + d_j,    d_j = (|e_j| + f_j * fault_magnitude) * u

with e_j ~ N(0, deviation_sigma) and f_j = 1 with probability p_fault. The
planted score is

    S = clamp(S_max - c * sum_j ||d_j||, 0, S_max)

where c is `penalty_scale`. One zero-deviation expert per type scores
exactly S_max.
'''

import logging
from pathlib import Path

import numpy as np
import pandas as pd

from core.config import SyntheticConfig
from models.synthetic import SyntheticDataset
from models.video import ClipFeatureSequence, DatasetManifest, ManifestRow
from services import dataset_service, report_service

logger = logging.getLogger(__name__)


def planted_score(norms, config: SyntheticConfig) -> float:
    penalty = config.penalty_scale * float(np.sum(np.asarray(norms, dtype=np.float64)))
    return float(min(max(config.score_max - penalty, 0.0), config.score_max))


def error_axis(rng: np.random.Generator, dim: int) -> np.ndarray:
    axis = rng.normal(size=dim)
    return axis / np.linalg.norm(axis)


def draw_prototypes(rng: np.random.Generator, config: SyntheticConfig, axis: np.ndarray) -> np.ndarray:
    prototypes = rng.normal(0.0, config.prototype_scale, size=(config.num_types, config.n_clips, config.feature_dim))
    return prototypes - (prototypes @ axis)[..., None] * axis


def clip_magnitudes(rng: np.random.Generator, config: SyntheticConfig) -> tuple[np.ndarray, list[int]]:
    """Deviation norm per clip and the 1-based indices of faulted clips."""
    n = config.n_clips
    magnitudes = np.abs(rng.normal(0.0, config.deviation_sigma, size=n))
    faulted = rng.uniform(size=n) < config.fault_probability
    magnitudes[faulted] += config.fault_magnitude
    return magnitudes, [int(j) + 1 for j in np.flatnonzero(faulted)]


def generate_dataset(config: SyntheticConfig, out_dir) -> SyntheticDataset:
    '''
    Write features/<id>.aqaf, manifest.csv, faults.csv, deviations.csv and
    gen_config.json under out_dir. Every video draws from its own child seed,
    so output does not depend on generation order.
    '''
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(config.seed).spawn(1 + config.num_types * config.videos_per_type)
    shared_rng = np.random.default_rng(seeds[0])
    axis = error_axis(shared_rng, config.feature_dim)
    prototypes = draw_prototypes(shared_rng, config, axis)

    rows: list[ManifestRow] = []
    scores: dict[str, float] = {}
    norms: dict[str, list[float]] = {}
    faults: dict[str, list[int]] = {}
    experts: dict[int, str] = {}
    k = 1
    for t in range(1, config.num_types + 1):
        type_rows = []
        for v in range(config.videos_per_type):
            rng = np.random.default_rng(seeds[k])
            k += 1
            if v == 0:
                vid = f"t{t}_expert"
                magnitudes, video_faults = np.zeros(config.n_clips), []
                experts[t] = vid
            else:
                vid = f"t{t}_v{v:04d}"
                magnitudes, video_faults = clip_magnitudes(rng, config)
            norms[vid] = magnitudes.tolist()
            scores[vid] = planted_score(magnitudes, config)
            if video_faults:
                faults[vid] = video_faults
            clips = prototypes[t - 1] + magnitudes[:, None] * axis
            seq = ClipFeatureSequence(clips=clips, video_id=vid, action_type=t)
            rel = f"features/{vid}.aqaf"
            dataset_service.write_features(seq, root / rel)
            # the split draw comes last so it never shifts the feature draws
            is_test = v > 0 and rng.uniform() < config.test_fraction
            type_rows.append(ManifestRow(id=vid, path=rel, action_type=t, overall_score=scores[vid],
                                         split="test" if is_test else "train_score"))
        rows.extend(type_rows)

    manifest = DatasetManifest(rows=rows)
    dataset_service.write_manifest(manifest, root / "manifest.csv")
    fault_rows = [{"video_id": vid, "clip_index": j} for vid in sorted(faults) for j in faults[vid]]
    pd.DataFrame(fault_rows, columns=["video_id", "clip_index"]).to_csv(root / "faults.csv", index=False, lineterminator="\n")
    norm_rows = [{"video_id": vid, "clip_index": j, "norm": repr(x)}
                 for vid in sorted(norms) for j, x in enumerate(norms[vid], start=1)]
    pd.DataFrame(norm_rows, columns=["video_id", "clip_index", "norm"]).to_csv(root / "deviations.csv", index=False, lineterminator="\n")
    dataset = SyntheticDataset(root=root, config=config, manifest=manifest, scores=scores,
                               deviation_norms=norms, faults=faults, experts=experts)
    report_service.write_json({"config": config.model_dump(), "fault_count": dataset.fault_count,
                               "videos": len(rows)}, root / "gen_config.json")
    logger.info("generated %d synthetic videos (%d faulty clips) under %s", len(rows), dataset.fault_count, root)
    return dataset


def load_faults(path) -> dict[str, set[int]]:
    frame = pd.read_csv(path, dtype={"video_id": str, "clip_index": int})
    faults: dict[str, set[int]] = {}
    for rec in frame.to_dict(orient="records"):
        faults.setdefault(rec["video_id"], set()).add(int(rec["clip_index"]))
    return faults


def load_deviation_norms(path) -> dict[str, list[float]]:
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    norms: dict[str, list[float]] = {}
    for rec in frame.to_dict(orient="records"):
        norms.setdefault(rec["video_id"], []).append(float(rec["norm"]))
    return norms


def oracle_pair_label(dataset: SyntheticDataset, id_a: str, id_b: str, th: float) -> int:
    """Label from the planted deviations, independent of the manifest's scores."""
    s_a = planted_score(dataset.deviation_norms[id_a], dataset.config)
    s_b = planted_score(dataset.deviation_norms[id_b], dataset.config)
    return int(abs(s_a - s_b) < th)
