import numpy as np
import pytest

from core.config import ActivityProfile, ModelConfig
from core.errors import CheckpointError, ConfigMismatchError, MissingDependencyError
from models.checkpoint import CheckpointMeta
from services import checkpoint_service, dml_service, score_service


def _meta(**kw):
    values = dict(phase="dml", epoch=3, seed=0, config_hash="abc")
    values.update(kw)
    return CheckpointMeta(**values)


def test_roundtrip_is_bit_exact(tiny_params, tmp_path):
    path = checkpoint_service.save_checkpoint(tiny_params, tmp_path / "a.aqac", _meta())
    ckpt = checkpoint_service.load_checkpoint(path)
    assert list(ckpt.blocks) == list(tiny_params.blocks)
    for name, block in ckpt.blocks.items():
        assert block.values.tobytes() == tiny_params[name].tobytes()
        assert block.shape == tiny_params.blocks[name].shape
    assert ckpt.meta == _meta()


def test_save_load_save_is_byte_identical(tiny_params, tmp_path):
    first = checkpoint_service.save_checkpoint(tiny_params, tmp_path / "a.aqac", _meta())
    params = checkpoint_service.to_siamese(checkpoint_service.load_checkpoint(first))
    second = checkpoint_service.save_checkpoint(params, tmp_path / "b.aqac", _meta())
    assert first.read_bytes() == second.read_bytes()


def test_same_seed_same_bytes(tiny_model):
    a = checkpoint_service.encode_checkpoint(dml_service.init_siamese(tiny_model, seed=5), _meta())
    b = checkpoint_service.encode_checkpoint(dml_service.init_siamese(tiny_model, seed=5), _meta())
    assert a == b


def test_corrupted_payload_fails_crc(tiny_params):
    data = bytearray(checkpoint_service.encode_checkpoint(tiny_params, _meta()))
    data[40] ^= 0x01
    with pytest.raises(CheckpointError, match="CRC32"):
        checkpoint_service.decode_checkpoint(bytes(data))


def test_version_and_magic_checked(tiny_params):
    data = checkpoint_service.encode_checkpoint(tiny_params, _meta())
    with pytest.raises(CheckpointError, match="magic"):
        checkpoint_service.decode_checkpoint(b"NOPE" + data[4:])
    with pytest.raises(CheckpointError, match="version"):
        checkpoint_service.decode_checkpoint(data[:4] + (2).to_bytes(4, "little") + data[8:])
    with pytest.raises(CheckpointError):
        checkpoint_service.decode_checkpoint(data[:8])


def test_missing_file(tmp_path):
    with pytest.raises(MissingDependencyError):
        checkpoint_service.load_checkpoint(tmp_path / "none.aqac")


def test_config_hash_mismatch(tiny_params):
    ckpt = checkpoint_service.decode_checkpoint(checkpoint_service.encode_checkpoint(tiny_params, _meta()))
    with pytest.raises(ConfigMismatchError):
        checkpoint_service.check_config_hash(ckpt, "other")
    checkpoint_service.check_config_hash(ckpt, "abc")


def test_head_checkpoint_restores_frozen_state(tiny_params, tmp_path):
    head = score_service.init_head(tiny_params, ActivityProfile.preset("vault"))
    head.siamese.blocks["head.W"].values[...] = 0.25
    meta = _meta(phase="score", score_min=0.0, score_max=20.0)
    restored = checkpoint_service.to_head(
        checkpoint_service.load_checkpoint(checkpoint_service.save_checkpoint(head.siamese, tmp_path / "s.aqac", meta))
    )
    assert restored.score_max == 20.0
    assert {b.name for b in restored.siamese.trainable()} == {"head.W", "head.b"}
    np.testing.assert_array_equal(restored.w_head, head.w_head)
    # the Siamese part of a score checkpoint can seed another head
    assert "head.W" not in checkpoint_service.to_siamese(checkpoint_service.load_checkpoint(tmp_path / "s.aqac")).blocks


def test_dml_checkpoint_has_no_head(tiny_params):
    ckpt = checkpoint_service.decode_checkpoint(checkpoint_service.encode_checkpoint(tiny_params, _meta()))
    with pytest.raises(MissingDependencyError):
        checkpoint_service.to_head(ckpt)


def test_identity_bias_free_mode_survives(tmp_path):
    config = ModelConfig(feature_dim=4, embedding_dim=3, d1_width=5, d2_width=4, activation="identity", use_bias=False)
    params = dml_service.init_siamese(config)
    meta = _meta(activation="identity", use_bias=False)
    restored = checkpoint_service.to_siamese(checkpoint_service.decode_checkpoint(checkpoint_service.encode_checkpoint(params, meta)))
    assert restored.activation == "identity" and restored.use_bias is False
