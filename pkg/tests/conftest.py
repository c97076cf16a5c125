import os

import hypothesis
import numpy as np
import pytest

from core.config import ActivityProfile, ModelConfig, SyntheticConfig, load_run_config
from models.video import ClipFeatureSequence, VideoRecord
from services.dml_service import init_siamese

hypothesis.settings.register_profile("fast", max_examples=20, deadline=None)
hypothesis.settings.register_profile("ci", max_examples=200, deadline=None)
hypothesis.settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "fast"))


@pytest.fixture
def tiny_model():
    return ModelConfig(feature_dim=4, embedding_dim=3, d1_width=5, d2_width=4)


@pytest.fixture
def tiny_params(tiny_model):
    return init_siamese(tiny_model, seed=7)


@pytest.fixture
def tiny_activity():
    return ActivityProfile(name="custom", score_max=100.0, n_clips=3, threshold=5.0)


def make_video(vid, score, action_type=1, n=3, dim=4, seed=0, split="train_score"):
    rng = np.random.default_rng(seed)
    seq = ClipFeatureSequence(clips=rng.normal(size=(n, dim)), video_id=vid, action_type=action_type)
    return VideoRecord(id=vid, action_type=action_type, overall_score=score, split=split, features=seq)


@pytest.fixture
def videos():
    scores = [90.0, 88.0, 70.0, 67.0, 50.0, 52.0]
    return [make_video(f"v{i}", s, action_type=1 + i % 2, seed=i) for i, s in enumerate(scores)]


def tiny_synthetic(**overrides):
    values = dict(num_types=2, videos_per_type=10, n_clips=3, feature_dim=4, test_fraction=0.4,
                  fault_probability=0.2, seed=3)
    values.update(overrides)
    return SyntheticConfig(**values)


@pytest.fixture
def tiny_run_config(tmp_path):
    """A desk-seconds configuration over a tiny synthetic dataset."""
    return load_run_config(overrides={
        "activity": {"name": "custom", "score_max": 100.0, "n_clips": 3, "threshold": 3.0},
        "model": {"feature_dim": 4, "embedding_dim": 3, "d1_width": 5, "d2_width": 4, "activation": "identity"},
        "dml": {"epochs": 2, "batch_size": 16, "patience": 2, "holdout_fraction": 0.2,
                "optimizer": {"learning_rate": 0.01}},
        "score": {"epochs": 5, "batch_size": 8},
        "synthetic": tiny_synthetic().model_dump(),
        "run_dir": str(tmp_path / "run"),
    })
