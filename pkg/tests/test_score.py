import numpy as np
import pytest

from core.config import ActivityProfile, ModelConfig, OptimizerConfig, ScoreTrainConfig
from core.errors import ModeError, PairingError
from models.video import ClipFeatureSequence
from services import dataset_service, dml_service, score_service
from tests.conftest import make_video


def test_head_starts_at_zero_and_only_head_trains(tiny_params):
    head = score_service.init_head(tiny_params, ActivityProfile())
    assert head.w_head.shape == (1, 4)
    np.testing.assert_array_equal(head.w_head, 0.0)
    assert {b.name for b in head.siamese.trainable()} == {"head.W", "head.b"}
    assert not tiny_params.blocks["d1.W"].frozen


def test_zero_head_predicts_score_min(tiny_params):
    head = score_service.init_head(tiny_params, ActivityProfile())
    rng = np.random.default_rng(0)
    assert score_service.score_forward(head, rng.normal(size=(3, 4)), rng.normal(size=(3, 4))) == pytest.approx(0.0)


def test_type_mismatch_rejected(tiny_params):
    head = score_service.init_head(tiny_params, ActivityProfile())
    expert = ClipFeatureSequence(clips=np.ones((3, 4)), action_type=1)
    test = ClipFeatureSequence(clips=np.ones((3, 4)), action_type=2)
    with pytest.raises(PairingError):
        score_service.score_forward(head, expert, test)


def test_expert_bias_decomposition_is_exact():
    config = ModelConfig(feature_dim=6, embedding_dim=5, d1_width=7, d2_width=4, activation="identity", use_bias=False)
    params = dml_service.init_siamese(config, seed=1)
    rng = np.random.default_rng(1)
    for _ in range(100):
        e, q = rng.normal(size=(4, 6)), rng.normal(size=(4, 6))
        terms = score_service.expert_bias_decompose(params, e, q)
        z = dml_service.siamese_features(params, e, q)
        assert np.max(np.abs(terms.z - z)) < 1e-9


def test_expert_bias_term_is_fixed_per_expert():
    config = ModelConfig(feature_dim=6, embedding_dim=5, d1_width=7, d2_width=4, activation="identity", use_bias=False)
    params = dml_service.init_siamese(config, seed=2)
    rng = np.random.default_rng(2)
    e = rng.normal(size=(4, 6))
    a1 = score_service.expert_bias_decompose(params, e, rng.normal(size=(4, 6))).a_e
    a2 = score_service.expert_bias_decompose(params, e, rng.normal(size=(4, 6))).a_e
    np.testing.assert_array_equal(a1, a2)


def test_decomposition_requires_linear_bias_free(tiny_params):
    with pytest.raises(ModeError):
        score_service.expert_bias_decompose(tiny_params, np.zeros((3, 4)), np.zeros((3, 4)))
    params = dml_service.init_siamese(ModelConfig(feature_dim=4, embedding_dim=3, d1_width=5, d2_width=4,
                                                  activation="identity"))
    with pytest.raises(ModeError, match="bias"):
        score_service.expert_bias_decompose(params, np.zeros((3, 4)), np.zeros((3, 4)))


def _score_videos():
    return [make_video(f"v{i}", 30.0 + 10 * i, action_type=1 + i % 2, seed=i) for i in range(8)]


def test_training_reduces_loss_and_keeps_frozen_bytes(tiny_params):
    videos = _score_videos()
    registry = dataset_service.select_experts(videos, "best")
    before = {n: tiny_params[n].tobytes() for n in tiny_params.blocks}
    head = score_service.init_head(tiny_params, ActivityProfile())
    config = ScoreTrainConfig(epochs=100, batch_size=4, optimizer=OptimizerConfig(learning_rate=0.05))
    head, history = score_service.train_score_head(head, registry, videos, config)
    assert history.epochs[0].epoch == 0
    assert history.losses[-1] < history.losses[0]
    for name, raw in before.items():
        assert head.siamese[name].tobytes() == raw


def test_training_pairs_cover_every_expert():
    videos = [make_video("a", 90.0), make_video("b", 90.0), make_video("c", 50.0)]
    registry = dataset_service.select_experts(videos, "best")
    pairs = score_service.training_pairs(registry, videos)
    assert ("a", "c") in pairs and ("b", "c") in pairs and len(pairs) == 6


def test_predict_averages_experts(tiny_params):
    videos = [make_video("a", 90.0, seed=1), make_video("b", 90.0, seed=2), make_video("c", 50.0, seed=3)]
    registry = dataset_service.select_experts(videos, "best")
    head = score_service.init_head(tiny_params, ActivityProfile())
    head.siamese.blocks["head.W"].values[...] = 0.3
    lookup = {v.id: v for v in videos}
    row = score_service.predict(head, registry, [lookup["c"]], lookup)[0]
    singles = [float(score_service.score_forward(head, lookup[e].features, lookup["c"].features)) for e in ("a", "b")]
    assert row.expert_ids == ["a", "b"]
    assert row.predicted_score == pytest.approx(np.mean(singles), abs=1e-10)
    assert row.true_score == 50.0


def test_constant_mode_scores_every_type(tiny_params):
    videos = _score_videos()
    registry = dataset_service.select_experts(videos, "constant")
    head = score_service.init_head(tiny_params, ActivityProfile())
    lookup = {v.id: v for v in videos}
    rows = score_service.predict(head, registry, videos, lookup)
    assert {tuple(r.expert_ids) for r in rows} == {tuple(registry.for_type(1))}
