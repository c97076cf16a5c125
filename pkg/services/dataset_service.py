"""Feature files, manifests, pair construction, augmentation, padding and expert selection."""

import logging
import struct
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd

from core.config import ActivityProfile, BalanceLevel
from core.errors import AlignmentError, BalancingError, ConfigError, EmptyInputError, ParseError, RegistryError
from models.expert import ExpertRegistry
from models.video import (
    AugmentKind,
    AugmentSpec,
    ClipFeatureSequence,
    DatasetManifest,
    LabeledPair,
    ManifestRow,
    VideoRecord,
)

logger = logging.getLogger(__name__)

FEATURE_MAGIC = b"AQAF"
FEATURE_VERSION = 1
MANIFEST_COLUMNS = ["id", "path", "action_type", "overall_score", "split", "judge_scores", "difficulty"]
DEFAULT_JITTER_SIGMA = 0.05
# clip_drop and clip_duplicate shift clip alignment; balancing jitters unless configured
BALANCE_KINDS: tuple[AugmentKind, ...] = ("feature_jitter",)


# Feature files

def encode_features(seq: ClipFeatureSequence) -> bytes:
    vid = seq.video_id.encode("utf-8")
    header = FEATURE_MAGIC + struct.pack("<IH", FEATURE_VERSION, len(vid)) + vid
    header += struct.pack("<III", seq.action_type, seq.length, seq.dim)
    return header + seq.clips.astype("<f4").tobytes()


def write_features(seq: ClipFeatureSequence, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_features(seq))


def parse_features(data: bytes, source: Optional[str] = None) -> ClipFeatureSequence:
    """Decode an AQAF payload. Values are widened from float32 to float64."""
    def need(offset: int, size: int, what: str) -> None:
        if offset + size > len(data):
            raise ParseError(f"truncated feature file while reading {what}", path=source, offset=offset)

    need(0, 4, "magic")
    if data[:4] != FEATURE_MAGIC:
        raise ParseError(f"bad magic {data[:4]!r}", path=source, offset=0)
    need(4, 6, "version")
    version, id_len = struct.unpack_from("<IH", data, 4)
    if version != FEATURE_VERSION:
        raise ParseError(f"unsupported feature file version {version}", path=source, offset=4)
    offset = 10
    need(offset, id_len, "video id")
    try:
        video_id = data[offset:offset + id_len].decode("utf-8")
    except UnicodeDecodeError as e:
        raise ParseError("video id is not valid UTF-8", path=source, offset=offset) from e
    offset += id_len
    need(offset, 12, "shape header")
    action_type, n, dim = struct.unpack_from("<III", data, offset)
    offset += 12
    if n == 0 or dim == 0:
        raise ParseError(f"empty feature matrix ({n} clips x {dim})", path=source, offset=offset - 8)
    payload = n * dim * 4
    need(offset, payload, f"{n}x{dim} float32 payload")
    if len(data) != offset + payload:
        raise ParseError(f"{len(data) - offset - payload} trailing bytes after payload", path=source,
                         offset=offset + payload)
    values = np.frombuffer(data, dtype="<f4", count=n * dim, offset=offset).astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise ParseError("non-finite feature value", path=source, offset=offset + 4 * int(bad[0]))
    return ClipFeatureSequence(clips=values.reshape(n, dim), video_id=video_id, action_type=action_type)


def load_features(path) -> ClipFeatureSequence:
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError as e:
        raise ParseError("feature file not found", path=str(path)) from e
    return parse_features(data, source=str(path))


# Manifests

def _optional_float(text: str, row: int, column: str, source: str) -> Optional[float]:
    if text == "":
        return None
    try:
        return float(text)
    except ValueError as e:
        raise ParseError(f"column {column!r} is not a number: {text!r}", path=source, row=row) from e


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    path = Path(path)
    source = str(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except FileNotFoundError as e:
        raise ParseError("manifest not found", path=source) from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ParseError(f"malformed manifest: {e}", path=source) from e
    if list(frame.columns) != MANIFEST_COLUMNS:
        raise ParseError(f"manifest header must be {','.join(MANIFEST_COLUMNS)}", path=source, row=1)

    rows: list[ManifestRow] = []
    seen: set[str] = set()
    for i, rec in enumerate(frame.to_dict(orient="records"), start=2):
        if rec["id"] in seen:
            raise ParseError(f"duplicate id {rec['id']!r}", path=source, row=i)
        seen.add(rec["id"])
        try:
            judges = [float(s) for s in rec["judge_scores"].split(";")] if rec["judge_scores"] else None
            row = ManifestRow(
                id=rec["id"],
                path=rec["path"],
                action_type=int(rec["action_type"]),
                overall_score=float(rec["overall_score"]),
                split=rec["split"],
                judge_scores=judges,
                difficulty=_optional_float(rec["difficulty"], i, "difficulty", source),
            )
        except ValueError as e:
            raise ParseError(f"invalid manifest row: {e}", path=source, row=i) from e
        if check_files:
            load_features(resolve_path(path, row.path))
        rows.append(row)
    return DatasetManifest(rows=rows)


def write_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        [
            {
                "id": r.id,
                "path": r.path,
                "action_type": str(r.action_type),
                "overall_score": repr(r.overall_score),
                "split": r.split,
                "judge_scores": ";".join(repr(s) for s in r.judge_scores) if r.judge_scores else "",
                "difficulty": "" if r.difficulty is None else repr(r.difficulty),
            }
            for r in manifest.rows
        ],
        columns=MANIFEST_COLUMNS,
    )
    frame.to_csv(path, index=False, lineterminator="\n")


def resolve_path(manifest_path, feature_path: str) -> Path:
    p = Path(feature_path)
    return p if p.is_absolute() else Path(manifest_path).parent / p


# Load validated, length-aligned records for the given splits
def load_videos(manifest_path, activity: ActivityProfile, splits: Sequence[str] = ("train_dml", "train_score", "test")) -> list[VideoRecord]:
    manifest = load_manifest(manifest_path, check_files=False)
    videos = []
    for i, row in enumerate(manifest.rows, start=2):
        if row.split not in splits:
            continue
        if not activity.score_min <= row.overall_score <= activity.score_max:
            raise ParseError(
                f"score {row.overall_score} outside [{activity.score_min}, {activity.score_max}] for {activity.name}",
                path=str(manifest_path), row=i,
            )
        raw = load_features(resolve_path(manifest_path, row.path))
        seq = fit_length(raw, activity.n_clips, activity.allow_truncation)
        videos.append(VideoRecord(
            id=row.id, action_type=row.action_type, overall_score=row.overall_score, split=row.split,
            judge_scores=row.judge_scores, difficulty=row.difficulty, features=seq, padded_clips=max(activity.n_clips - raw.length, 0),
        ))
    logger.info("loaded %d videos from %s", len(videos), manifest_path)
    return videos


# Pairs

def make_pairs(videos: Sequence[VideoRecord], th: float) -> list[LabeledPair]:
    """All unordered pairs in canonical id order; label 1 iff |S_p - S_q| < th."""
    if th <= 0:
        raise ConfigError(f"score threshold must be positive, got {th}")
    if len(videos) < 2:
        return []
    ordered = sorted(videos, key=lambda v: v.id)
    scores = np.array([v.overall_score for v in ordered])
    rows, cols = np.triu_indices(len(ordered), k=1)
    labels = (np.abs(scores[rows] - scores[cols]) < th).astype(int)
    return [
        LabeledPair(id_p=ordered[r].id, id_q=ordered[c].id, label=int(lab))
        for r, c, lab in zip(rows, cols, labels)
    ]


def augment_sequence(seq: ClipFeatureSequence, kind: str, seed: int, sigma: float = DEFAULT_JITTER_SIGMA) -> ClipFeatureSequence:
    rng = np.random.default_rng(seed)
    clips = seq.clips
    if kind == "clip_drop":
        if seq.length < 2:
            raise EmptyInputError("clip_drop needs at least two clips")
        drop = int(rng.integers(seq.length))
        return seq.with_clips(np.delete(clips, drop, axis=0))
    if kind == "clip_duplicate":
        dup = int(rng.integers(seq.length))
        return seq.with_clips(np.insert(clips, dup, clips[dup], axis=0))
    if kind == "feature_jitter":
        if sigma == 0:
            return seq.with_clips(clips.copy())
        return seq.with_clips(clips + rng.normal(0.0, sigma, size=clips.shape))
    raise ConfigError(f"unknown augmentation kind {kind!r}")


def random_augment(kinds: Sequence[str], length: int, rng: np.random.Generator) -> AugmentSpec:
    usable = [kd for kd in kinds if not (kd == "clip_drop" and length < 2)]
    if not usable:
        raise ConfigError(f"no augmentation kind in {list(kinds)} applies to a {length}-clip sequence")
    return AugmentSpec(kind=usable[int(rng.integers(len(usable)))], seed=int(rng.integers(2**62)))


def balance_pairs(
    pairs: Sequence[LabeledPair],
    videos: dict[str, VideoRecord],
    target_positive_count: int,
    seed: int,
    kinds: Iterable[str] = BALANCE_KINDS,
) -> list[LabeledPair]:
    '''
    Add label-1 pairs built from augmented variants of the positive pairs'
    members until positives reach min(target, negatives). Originals are kept
    untouched and in order; synthetic pairs follow.
    '''
    positives = [p for p in pairs if p.label == 1]
    n_neg = len(pairs) - len(positives)
    if not positives:
        raise BalancingError("cannot balance: no positive pairs")
    goal = min(target_positive_count, n_neg)
    if len(positives) >= goal:
        return list(pairs)

    kinds = tuple(kinds)
    rng = np.random.default_rng(seed)
    synthetic: list[LabeledPair] = []
    missing = goal - len(positives)
    for k in range(missing):
        base = positives[k % len(positives)]
        aug_p = random_augment(kinds, videos[base.id_p].features.length, rng)
        aug_q = random_augment(kinds, videos[base.id_q].features.length, rng)
        synthetic.append(LabeledPair(id_p=base.id_p, id_q=base.id_q, label=1, aug_p=aug_p, aug_q=aug_q))
    logger.info("balanced pairs: %d positives + %d synthetic vs %d negatives", len(positives), missing, n_neg)
    return list(pairs) + synthetic


def balance_for_level(pairs: Sequence[LabeledPair], videos: dict[str, VideoRecord], level: BalanceLevel,
                      seed: int, kinds: Iterable[str] = BALANCE_KINDS) -> list[LabeledPair]:
    if level == "none":
        return list(pairs)
    n_neg = sum(1 for p in pairs if p.label == 0)
    target = n_neg if level == "full" else n_neg // 2
    return balance_pairs(pairs, videos, target, seed, kinds)


def mirror_augmentation(pairs: Sequence[LabeledPair], kinds: Sequence[str], length: int,
                        rng: np.random.Generator) -> list[LabeledPair]:
    '''
    Give the same share of negative pairs augmented members as the positives
    carry through balancing, so being augmented says nothing about the label.
    Returns new pair objects; the input list is not modified.
    '''
    positives = [p for p in pairs if p.label == 1]
    negatives = [i for i, p in enumerate(pairs) if p.label == 0 and not p.is_synthetic]
    if not positives or not negatives:
        return list(pairs)
    share = sum(p.is_synthetic for p in positives) / len(positives)
    count = int(round(share * len(negatives)))
    out = list(pairs)
    if count == 0:
        return out
    for i in np.sort(rng.choice(negatives, size=count, replace=False)):
        out[i] = out[i].model_copy(update={"aug_p": random_augment(kinds, length, rng),
                                           "aug_q": random_augment(kinds, length, rng)})
    return out


# Alignment

def pad_to_length(seq: ClipFeatureSequence, n_target: int) -> ClipFeatureSequence:
    """Prepend zero clips so the sequence ends where a full-length one ends."""
    if seq.length > n_target:
        raise AlignmentError(f"{seq.video_id or 'sequence'} has {seq.length} clips, longer than {n_target}")
    if seq.length == n_target:
        return seq
    pad = np.zeros((n_target - seq.length, seq.dim))
    return seq.with_clips(np.vstack([pad, seq.clips]))


def fit_length(seq: ClipFeatureSequence, n_target: int, allow_truncation: bool = False) -> ClipFeatureSequence:
    if seq.length > n_target and allow_truncation:
        # drop leading clips so the endings stay aligned
        return seq.with_clips(seq.clips[seq.length - n_target:])
    return pad_to_length(seq, n_target)


def restore_length(seq: ClipFeatureSequence, n_target: int) -> ClipFeatureSequence:
    """Bring an augmented variant back to n_target clips by repeating or dropping leading clips."""
    if seq.length >= n_target:
        return seq.with_clips(seq.clips[seq.length - n_target:])
    lead = np.repeat(seq.clips[:1], n_target - seq.length, axis=0)
    return seq.with_clips(np.vstack([lead, seq.clips]))


def resolve_member(video: VideoRecord, aug: Optional[AugmentSpec], n_target: int) -> np.ndarray:
    """Clip matrix for one pair member, regenerating its augmented variant if any."""
    seq = video.features
    if aug is not None:
        seq = restore_length(augment_sequence(seq, aug.kind, aug.seed), n_target)
    return seq.clips


# Experts

def select_experts(videos: Sequence[VideoRecord], mode: str, constant_type: Optional[int] = None) -> ExpertRegistry:
    '''
    best -> every video attaining its type's maximum score, worst -> the
    minimum, constant -> the best performers of one designated type (the
    lowest type id unless given) serve all types.
    '''
    mode = {"best": "best_per_type", "worst": "worst_per_type"}.get(mode, mode)
    if not videos:
        raise RegistryError("cannot select experts from an empty video list")
    by_type: dict[int, list[VideoRecord]] = {}
    for v in videos:
        by_type.setdefault(v.action_type, []).append(v)

    def extremes(group: list[VideoRecord], pick) -> list[str]:
        target = pick(v.overall_score for v in group)
        return sorted(v.id for v in group if v.overall_score == target)

    chosen: Optional[int] = None
    if mode == "best_per_type":
        experts = {t: extremes(g, max) for t, g in sorted(by_type.items())}
    elif mode == "worst_per_type":
        experts = {t: extremes(g, min) for t, g in sorted(by_type.items())}
    elif mode == "constant":
        chosen = min(by_type) if constant_type is None else constant_type
        if chosen not in by_type:
            raise RegistryError(f"constant expert type {chosen} has no training videos")
        experts = {chosen: extremes(by_type[chosen], max)}
    else:
        raise ConfigError(f"unknown expert mode {mode!r}")
    registry = ExpertRegistry(mode=mode, experts=experts, constant_type=chosen)
    logger.info("selected %s experts: %s", mode, registry.experts)
    return registry
