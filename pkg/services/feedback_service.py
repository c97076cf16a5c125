"""Clip-level similarity to the expert via prefix-trimmed sequences."""

import logging
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from core.errors import AlignmentError, ClipIndexError
from models.feedback import ClipFeedback
from models.params import SiameseParams
from models.video import ClipFeatureSequence, VideoRecord
from services import report_service
from services.dml_service import dml_forward

logger = logging.getLogger(__name__)


def trim_for_clip(seq: ClipFeatureSequence, j: int) -> ClipFeatureSequence:
    """Zero clips 1..j-1, keep clip j, drop clips after j (1-based)."""
    if not 1 <= j <= seq.length:
        raise ClipIndexError(f"clip index {j} outside 1..{seq.length}")
    trimmed = np.zeros((j, seq.dim))
    trimmed[j - 1] = seq.clips[j - 1]
    return seq.with_clips(trimmed)


def clip_similarity(siamese: SiameseParams, test_seq: ClipFeatureSequence, expert_seq: ClipFeatureSequence, j: int) -> float:
    if test_seq.length != expert_seq.length:
        raise AlignmentError(f"test has {test_seq.length} clips, expert has {expert_seq.length}; pad both first")
    # expert first, matching the score-phase pairing order
    return float(dml_forward(siamese, trim_for_clip(expert_seq, j), trim_for_clip(test_seq, j)))


def similarity_curve(siamese: SiameseParams, test_seq: ClipFeatureSequence, expert_seq: ClipFeatureSequence) -> list[float]:
    return [clip_similarity(siamese, test_seq, expert_seq, j) for j in range(1, test_seq.length + 1)]


def faulty_clips(similarities: Sequence[float], threshold: float = 0.5) -> set[int]:
    return {j for j, s in enumerate(similarities, start=1) if s < threshold}


def clip_feedback(siamese: SiameseParams, video: VideoRecord, expert: VideoRecord, threshold: float = 0.5) -> list[ClipFeedback]:
    sims = similarity_curve(siamese, video.features, expert.features)
    flagged = faulty_clips(sims, threshold)
    return [
        ClipFeedback(clip_index=j, similarity=s, faulty=j in flagged, padded=j <= video.padded_clips)
        for j, s in enumerate(sims, start=1)
    ]


def feedback_report(siamese: SiameseParams, video: VideoRecord, expert: VideoRecord, out_dir,
                    threshold: float = 0.5) -> list[ClipFeedback]:
    """Writes <out_dir>/<video id>.csv and .svg; returns the per-clip feedback."""
    out_dir = Path(out_dir)
    feedback = clip_feedback(siamese, video, expert, threshold)
    report_service.write_feedback_csv(feedback, out_dir / f"{video.id}.csv")
    report_service.plot_similarity_curve(feedback, out_dir / f"{video.id}.svg",
                                         title=video.id, threshold=threshold)
    logger.info("feedback for %s: faulty clips %s", video.id, sorted(f.clip_index for f in feedback if f.faulty))
    return feedback


def detected_faults(feedback: Iterable[ClipFeedback]) -> set[int]:
    return {f.clip_index for f in feedback if f.faulty and not f.padded}
