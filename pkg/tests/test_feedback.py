import numpy as np
import pytest

from core.errors import AlignmentError, ClipIndexError
from models.feedback import ClipFeedback
from models.video import ClipFeatureSequence
from services import feedback_service, report_service
from services.dml_service import dml_forward
from tests.conftest import make_video


def _seq(n=5, seed=0):
    return ClipFeatureSequence(clips=np.random.default_rng(seed).normal(size=(n, 4)))


def test_trim_keeps_only_clip_j():
    seq = _seq()
    trimmed = feedback_service.trim_for_clip(seq, 3)
    assert trimmed.length == 3
    np.testing.assert_array_equal(trimmed.clips[:2], 0.0)
    np.testing.assert_array_equal(trimmed.clips[2], seq.clips[2])


def test_trim_first_clip():
    seq = _seq()
    np.testing.assert_array_equal(feedback_service.trim_for_clip(seq, 1).clips, seq.clips[:1])


@pytest.mark.parametrize("j", [0, 6])
def test_trim_index_out_of_range(j):
    with pytest.raises(ClipIndexError):
        feedback_service.trim_for_clip(_seq(), j)


def test_last_clip_matches_trimmed_forward(tiny_params):
    # the n-th trimmed input zeroes everything but the last clip
    expert, test = _seq(seed=1), _seq(seed=2)
    expected = dml_forward(tiny_params, feedback_service.trim_for_clip(expert, 5), feedback_service.trim_for_clip(test, 5))
    assert feedback_service.clip_similarity(tiny_params, test, expert, 5) == pytest.approx(float(expected))


def test_similarity_curve_length_and_range(tiny_params):
    curve = feedback_service.similarity_curve(tiny_params, _seq(seed=3), _seq(seed=4))
    assert len(curve) == 5
    assert all(0.0 < s < 1.0 for s in curve)


def test_lengths_must_match(tiny_params):
    with pytest.raises(AlignmentError):
        feedback_service.clip_similarity(tiny_params, _seq(n=4), _seq(n=5), 1)


def test_faulty_threshold_is_strict():
    assert feedback_service.faulty_clips([0.2, 0.5, 0.8, 0.49]) == {1, 4}


def test_padded_clips_are_marked_and_not_counted(tiny_params):
    video = make_video("q", 50.0, n=5)
    video = video.model_copy(update={"padded_clips": 2})
    feedback = feedback_service.clip_feedback(tiny_params, video, make_video("e", 90.0, n=5, seed=9), threshold=0.999)
    assert [f.padded for f in feedback] == [True, True, False, False, False]
    assert feedback_service.detected_faults(feedback) == {3, 4, 5}


def test_feedback_report_writes_csv_and_svg(tiny_params, tmp_path):
    video, expert = make_video("q", 50.0, seed=1), make_video("e", 90.0, seed=2)
    feedback = feedback_service.feedback_report(tiny_params, video, expert, tmp_path)
    assert (tmp_path / "q.csv").exists() and (tmp_path / "q.svg").exists()
    assert report_service.read_feedback_csv(tmp_path / "q.csv") == feedback


def test_similarity_plot_is_reproducible(tmp_path):
    feedback = [ClipFeedback(clip_index=j, similarity=0.1 * j, faulty=j < 5) for j in range(1, 9)]
    a = report_service.plot_similarity_curve(feedback, tmp_path / "a.svg", title="x")
    b = report_service.plot_similarity_curve(feedback, tmp_path / "b.svg", title="x")
    assert a.read_bytes() == b.read_bytes()
