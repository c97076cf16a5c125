'''
Binary checkpoints of named float64 blocks.

Layout (little-endian):
    "AQAC" | version u32 | block count u32
    per block: name length u16 | UTF-8 name | rank u8 | dims u32 * rank | float64 payload
    metadata length u32 | canonical UTF-8 JSON
    CRC32 u32 of everything between the header and the CRC
'''

import json
import logging
import struct
import zlib
from pathlib import Path

import numpy as np

from core.errors import CheckpointError, ConfigMismatchError, MissingDependencyError
from models.checkpoint import Checkpoint, CheckpointMeta
from models.params import HEAD_BLOCKS, ParameterBlock, ParameterSet, ScoreHead, SiameseParams

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"AQAC"
CHECKPOINT_VERSION = 1
HEADER = struct.Struct("<4sII")


def encode_checkpoint(params: ParameterSet, meta: CheckpointMeta) -> bytes:
    body = bytearray()
    for block in params:
        name = block.name.encode("utf-8")
        body += struct.pack("<H", len(name)) + name
        body += struct.pack("<B", block.values.ndim)
        body += struct.pack(f"<{block.values.ndim}I", *block.shape)
        body += np.ascontiguousarray(block.values, dtype="<f8").tobytes()
    meta_bytes = json.dumps(meta.model_dump(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    body += struct.pack("<I", len(meta_bytes)) + meta_bytes
    header = HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(params.blocks))
    return header + bytes(body) + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def save_checkpoint(params: ParameterSet, path, meta: CheckpointMeta) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(params, meta))
    logger.info("wrote %s checkpoint %s (%d blocks)", meta.phase, path, len(params.blocks))
    return path


def decode_checkpoint(data: bytes, source: str = "<bytes>") -> Checkpoint:
    if len(data) < HEADER.size + 4:
        raise CheckpointError(f"{source}: file too short for a checkpoint")
    magic, version, count = HEADER.unpack_from(data, 0)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{source}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {version}")
    body = data[HEADER.size:-4]
    (stored_crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(body) & 0xFFFFFFFF != stored_crc:
        raise CheckpointError(f"{source}: CRC32 mismatch, file is corrupted")

    try:
        offset = 0
        blocks: dict[str, ParameterBlock] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", body, offset)
            offset += 2
            name = body[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", body, offset)
            offset += 1
            dims = struct.unpack_from(f"<{rank}I", body, offset)
            offset += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            values = np.frombuffer(body, dtype="<f8", count=size, offset=offset).astype(np.float64).reshape(dims)
            offset += 8 * size
            blocks[name] = ParameterBlock(name=name, values=values)
        (meta_len,) = struct.unpack_from("<I", body, offset)
        offset += 4
        meta = CheckpointMeta(**json.loads(body[offset:offset + meta_len].decode("utf-8")))
        offset += meta_len
    except (struct.error, ValueError, UnicodeDecodeError) as e:
        raise CheckpointError(f"{source}: malformed checkpoint body: {e}") from e
    if offset != len(body):
        raise CheckpointError(f"{source}: {len(body) - offset} unexpected bytes before CRC")
    return Checkpoint(blocks=blocks, meta=meta)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise MissingDependencyError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes(), source=str(path))


def check_config_hash(ckpt: Checkpoint, expected: str, source: str = "checkpoint") -> None:
    if ckpt.meta.config_hash != expected:
        raise ConfigMismatchError(
            f"{source} was trained with model config {ckpt.meta.config_hash[:12]}, current config is {expected[:12]}"
        )


def to_siamese(ckpt: Checkpoint) -> SiameseParams:
    params = SiameseParams(activation=ckpt.meta.activation, use_bias=ckpt.meta.use_bias)
    for name, block in ckpt.blocks.items():
        if name not in HEAD_BLOCKS:
            params.add(block)
    return params


def to_head(ckpt: Checkpoint) -> ScoreHead:
    if ckpt.meta.phase != "score" or not all(name in ckpt.blocks for name in HEAD_BLOCKS):
        raise MissingDependencyError("checkpoint has no trained score head")
    params = SiameseParams(activation=ckpt.meta.activation, use_bias=ckpt.meta.use_bias)
    for block in ckpt.blocks.values():
        params.add(block)
    params.freeze([n for n in params.blocks if n not in HEAD_BLOCKS])
    return ScoreHead(siamese=params, score_min=ckpt.meta.score_min, score_max=ckpt.meta.score_max)
