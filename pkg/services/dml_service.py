"""Siamese network assembly, pair-classification training and embeddings."""

import logging
import math
from typing import Optional, Sequence

import numpy as np

from core.config import DmlTrainConfig, ModelConfig
from core.errors import BalancingError, DivergenceError, OptimizerError, ShapeError
from models.params import ParameterBlock, SiameseParams
from models.report import EpochRecord, TrainingHistory
from models.video import LabeledPair, VideoRecord
from services import dataset_service
from services.numeric_service import (
    PROB_CLAMP,
    GradientTape,
    backward,
    bce_loss,
    concat_forward,
    dense_forward,
    lstm_sequence_forward,
)
from services.optimizer_service import create_optimizer, optimizer_step

logger = logging.getLogger(__name__)

EVAL_BATCH = 256


# Build seeded parameters: uniform(+-1/sqrt(fan_in)), zero biases, forget bias 1.0
def init_siamese(config: ModelConfig, seed: int = 0) -> SiameseParams:
    rng = np.random.default_rng(seed)
    D, M = config.feature_dim, config.embedding_dim
    w1, w2 = config.d1_width, config.d2_width

    def uniform(shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    lstm_bias = np.zeros(4 * M)
    lstm_bias[M:2 * M] = config.forget_bias
    params = SiameseParams(activation=config.activation, use_bias=config.use_bias)
    for name, values in (
        ("lstm.W_x", uniform((4 * M, D), D + M)),
        ("lstm.W_h", uniform((4 * M, M), D + M)),
        ("lstm.b", lstm_bias),
        ("d1.W", uniform((w1, 2 * M), 2 * M)),
        ("d1.b", np.zeros(w1)),
        ("d2.W", uniform((w2, w1), w1)),
        ("d2.b", np.zeros(w2)),
        ("out.W", uniform((1, w2), w2)),
        ("out.b", np.zeros(1)),
    ):
        params.add(ParameterBlock(name=name, values=values))
    return params


def zero_siamese(config: ModelConfig) -> SiameseParams:
    params = init_siamese(config)
    for block in params:
        block.values[...] = 0.0
    return params


def _check_pair(seq_p, seq_q) -> tuple[np.ndarray, np.ndarray]:
    a = getattr(seq_p, "clips", seq_p)
    b = getattr(seq_q, "clips", seq_q)
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"pair members must share a padded shape, got {a.shape} and {b.shape}")
    return a, b


def _bias(params: SiameseParams, name: str) -> Optional[ParameterBlock]:
    return params.blocks[name] if params.use_bias else None


def siamese_features(params: SiameseParams, seq_p, seq_q, tape: Optional[GradientTape] = None) -> np.ndarray:
    """Z = act(D2(act(D1([O_p || O_q])))) with one shared encoder."""
    a, b = _check_pair(seq_p, seq_q)
    o_p = lstm_sequence_forward(params, a, tape, dst="O_p")
    o_q = lstm_sequence_forward(params, b, tape, dst="O_q")
    x = concat_forward([o_p, o_q], tape, srcs=("O_p", "O_q"), dst="X")
    y = dense_forward(params.blocks["d1.W"], _bias(params, "d1.b"), x, params.activation, tape, "X", "Y")
    return dense_forward(params.blocks["d2.W"], _bias(params, "d2.b"), y, params.activation, tape, "Y", "Z")


def dml_forward(params: SiameseParams, seq_p, seq_q, tape: Optional[GradientTape] = None):
    """Match probability for (p, q); a scalar for one pair, a (B,) array for a batch."""
    z = siamese_features(params, seq_p, seq_q, tape)
    p = dense_forward(params.blocks["out.W"], _bias(params, "out.b"), z, "sigmoid", tape, "Z", "P")
    return np.clip(p[..., 0], PROB_CLAMP, 1.0 - PROB_CLAMP)


def embed(params: SiameseParams, seq) -> np.ndarray:
    return lstm_sequence_forward(params, getattr(seq, "clips", seq))


# Split pairs by base video id so no video appears on both sides
def split_holdout(pairs: Sequence[LabeledPair], fraction: float, rng: np.random.Generator):
    ids = sorted({vid for p in pairs for vid in (p.id_p, p.id_q)})
    n_hold = int(round(fraction * len(ids)))
    held = set(rng.permutation(ids)[:n_hold].tolist()) if n_hold else set()
    train = [p for p in pairs if p.id_p not in held and p.id_q not in held]
    holdout = [p for p in pairs if p.id_p in held and p.id_q in held and not p.is_synthetic]
    return train, holdout


def schedule_epoch(pairs: Sequence[LabeledPair], config: DmlTrainConfig,
                   rng: np.random.Generator, n_clips: int) -> list[tuple[LabeledPair, bool]]:
    """Presentation order for one epoch as (pair, swapped) tuples."""
    chosen = list(pairs)
    if config.max_pairs_per_epoch and len(chosen) > config.max_pairs_per_epoch:
        picks = np.sort(rng.choice(len(chosen), size=config.max_pairs_per_epoch, replace=False))
        chosen = [chosen[i] for i in picks]
    chosen = dataset_service.mirror_augmentation(chosen, config.augment_kinds, n_clips, rng)
    schedule = [(p, False) for p in chosen]
    if config.symmetrize:
        schedule += [(p, True) for p in chosen]
    order = rng.permutation(len(schedule))
    return [schedule[i] for i in order]


def pair_batch(batch: Sequence[tuple[LabeledPair, bool]], videos: dict[str, VideoRecord], n_clips: int):
    left, right, labels = [], [], []
    for pair, swapped in batch:
        a = dataset_service.resolve_member(videos[pair.id_p], pair.aug_p, n_clips)
        b = dataset_service.resolve_member(videos[pair.id_q], pair.aug_q, n_clips)
        if swapped:
            a, b = b, a
        left.append(a)
        right.append(b)
        labels.append(pair.label)
    return np.stack(left), np.stack(right), np.array(labels, dtype=np.float64)


def pair_probabilities(params: SiameseParams, pairs: Sequence[LabeledPair], videos: dict[str, VideoRecord],
                       n_clips: int) -> tuple[np.ndarray, np.ndarray]:
    probs, labels = [], []
    for start in range(0, len(pairs), EVAL_BATCH):
        xp, xq, y = pair_batch([(p, False) for p in pairs[start:start + EVAL_BATCH]], videos, n_clips)
        probs.append(np.atleast_1d(dml_forward(params, xp, xq)))
        labels.append(y)
    if not probs:
        return np.zeros(0), np.zeros(0)
    return np.concatenate(probs), np.concatenate(labels)


def pair_accuracy(params: SiameseParams, pairs: Sequence[LabeledPair], videos: dict[str, VideoRecord],
                  n_clips: int) -> Optional[float]:
    if not pairs:
        return None
    probs, labels = pair_probabilities(params, pairs, videos, n_clips)
    return float(np.mean((probs >= 0.5) == (labels == 1)))


def train_dml(
    pairs: Sequence[LabeledPair],
    videos: dict[str, VideoRecord],
    config: DmlTrainConfig,
    model_config: ModelConfig,
    n_clips: int,
    params: Optional[SiameseParams] = None,
) -> tuple[SiameseParams, TrainingHistory]:
    '''
    Minimize mean BCE over labeled pairs. Holds out a fraction of videos for
    early stopping on pair accuracy and returns the best parameters seen.
    '''
    if not pairs:
        raise BalancingError("no training pairs")
    if len({p.label for p in pairs}) < 2:
        raise BalancingError("training pairs must contain both labels")

    rng = np.random.default_rng(config.seed)
    params = params or init_siamese(model_config, seed=config.seed)
    train, holdout = split_holdout(pairs, config.holdout_fraction, rng)
    if not train:
        raise BalancingError("holdout split left no training pairs")
    logger.info("DML training on %d pairs, %d held-out pairs", len(train), len(holdout))

    state = create_optimizer(config.optimizer)
    tape = GradientTape(params)
    history = TrainingHistory(phase="dml")
    best = params.copy()
    best_acc = -1.0
    stale = 0

    for epoch in range(1, config.epochs + 1):
        schedule = schedule_epoch(train, config, rng, n_clips)
        total, seen = 0.0, 0
        for start in range(0, len(schedule), config.batch_size):
            batch = schedule[start:start + config.batch_size]
            xp, xq, y = pair_batch(batch, videos, n_clips)
            tape.clear()
            p = dml_forward(params, xp, xq, tape)
            loss, d_p = bce_loss(p, y)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite DML loss at epoch {epoch}", last_good=best, history=history)
            try:
                optimizer_step(state, params, backward(tape, d_p))
            except OptimizerError as e:
                raise DivergenceError(f"DML training diverged at epoch {epoch}: {e.message}", last_good=best,
                                      history=history) from e
            total += loss * len(batch)
            seen += len(batch)

        acc = pair_accuracy(params, holdout, videos, n_clips)
        history.epochs.append(EpochRecord(epoch=epoch, loss=total / seen, holdout_accuracy=acc))
        logger.info("dml epoch %d loss %.5f holdout accuracy %s", epoch, total / seen,
                    "n/a" if acc is None else f"{acc:.4f}")

        if acc is None:
            best = params.copy()
            history.best_epoch = epoch
            continue
        if acc > best_acc:
            best_acc, best, stale = acc, params.copy(), 0
            history.best_epoch = epoch
        else:
            stale += 1
            if stale >= config.patience:
                history.stopped_early = True
                logger.info("early stop after epoch %d (best %d, accuracy %.4f)", epoch, history.best_epoch, best_acc)
                break
    return best, history
