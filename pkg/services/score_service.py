"""
Score estimation relative to an expert: a regression layer on top of the
frozen Siamese dense stack, trained with squared error on (expert, video)
pairs of the same action type.
"""

import logging
from typing import Optional, Sequence

import numpy as np

from core.config import ActivityProfile, ScoreTrainConfig
from core.errors import ModeError, PairingError, RegistryError
from models.expert import ExpertRegistry
from models.params import HEAD_BLOCKS, ExpertBiasTerms, ParameterBlock, ScoreHead, SiameseParams
from models.report import EpochRecord, PredictionRow, TrainingHistory
from models.video import VideoRecord
from services.dml_service import embed, siamese_features
from services.numeric_service import GradientTape, backward, dense_forward, mse_loss
from services.optimizer_service import create_optimizer, optimizer_step

logger = logging.getLogger(__name__)

FEATURE_BATCH = 256


# Attach a zero-initialized head to a copy of the Siamese; everything else frozen
def init_head(siamese: SiameseParams, activity: ActivityProfile) -> ScoreHead:
    params = siamese.copy()
    for name in list(params.blocks):
        if name in HEAD_BLOCKS:
            del params.blocks[name]
    params.freeze(list(params.blocks))
    params.add(ParameterBlock(name="head.W", values=np.zeros((1, siamese.d2_width))))
    params.add(ParameterBlock(name="head.b", values=np.zeros(1)))
    return ScoreHead(siamese=params, score_min=activity.score_min, score_max=activity.score_max)


def _type_of(seq) -> Optional[int]:
    return getattr(seq, "action_type", None)


def head_forward(head: ScoreHead, z: np.ndarray, tape: Optional[GradientTape] = None) -> np.ndarray:
    """Normalized regression output w''.Z + b for one Z or a batch."""
    p = head.siamese
    out = dense_forward(p.blocks["head.W"], p.blocks["head.b"], z, "identity", tape, "Z", "S")
    return out[..., 0]


def score_forward(head: ScoreHead, expert_seq, test_seq, tape: Optional[GradientTape] = None,
                  enforce_type: bool = True):
    """Predicted score S' in score units; the expert always occupies the first twin slot."""
    te, tq = _type_of(expert_seq), _type_of(test_seq)
    if enforce_type and te is not None and tq is not None and te != tq:
        raise PairingError(f"expert is action type {te}, test video is type {tq}")
    z = siamese_features(head.siamese, expert_seq, test_seq, tape)
    return head.denormalize(head_forward(head, z, tape))


def expert_bias_decompose(head: ScoreHead | SiameseParams, expert_seq, test_seq) -> ExpertBiasTerms:
    '''
    Split Z into a_e = W2 W1[:, :M] O_e and zx_q = W2 W1[:, M:] O_q. Only exact
    when D1/D2 are linear and bias-free.
    '''
    params = head.siamese if isinstance(head, ScoreHead) else head
    if params.activation != "identity":
        raise ModeError(f"decomposition needs identity activations, network uses {params.activation}")
    if params.use_bias:
        raise ModeError("decomposition needs the bias-free dense stack")
    M = params.embedding_dim
    W1, W2 = params["d1.W"], params["d2.W"]
    o_e = embed(params, expert_seq)
    o_q = embed(params, test_seq)
    return ExpertBiasTerms(a_e=W2 @ (W1[:, :M] @ o_e), zx_q=W2 @ (W1[:, M:] @ o_q))


def training_pairs(registry: ExpertRegistry, videos: Sequence[VideoRecord]) -> list[tuple[str, str]]:
    """One (expert id, video id) pair per video and expert of its type."""
    pairs = []
    for v in sorted(videos, key=lambda r: r.id):
        experts = registry.for_type(v.action_type)
        pairs.extend((e, v.id) for e in experts)
    return pairs


def pair_features(head: ScoreHead, pairs: Sequence[tuple[str, str]], lookup: dict[str, VideoRecord]) -> np.ndarray:
    """Frozen Z for each (expert, video) pair, computed in batches."""
    chunks = []
    for start in range(0, len(pairs), FEATURE_BATCH):
        chunk = pairs[start:start + FEATURE_BATCH]
        xe = np.stack([lookup[e].features.clips for e, _ in chunk])
        xq = np.stack([lookup[q].features.clips for _, q in chunk])
        chunks.append(np.atleast_2d(siamese_features(head.siamese, xe, xq)))
    return np.concatenate(chunks) if chunks else np.zeros((0, head.siamese.d2_width))


def train_score_head(
    head: ScoreHead,
    registry: ExpertRegistry,
    videos: Sequence[VideoRecord],
    config: ScoreTrainConfig,
    experts: Optional[dict[str, VideoRecord]] = None,
) -> tuple[ScoreHead, TrainingHistory]:
    '''
    Fit w'' and b_head on (expert_t, video) pairs with squared error. The
    Siamese blocks are frozen, so Z is computed once up front.
    '''
    lookup = {v.id: v for v in videos}
    lookup.update(experts or {})
    pairs = training_pairs(registry, videos)
    if not pairs:
        raise RegistryError("no (expert, video) training pairs")
    missing = {e for e, _ in pairs if e not in lookup}
    if missing:
        raise RegistryError(f"expert videos not loaded: {sorted(missing)}")

    z_all = pair_features(head, pairs, lookup)
    targets = head.normalize([lookup[q].overall_score for _, q in pairs])
    logger.info("score head training on %d (expert, video) pairs", len(pairs))

    rng = np.random.default_rng(config.seed)
    state = create_optimizer(config.optimizer)
    tape = GradientTape(head.siamese)
    history = TrainingHistory(phase="score")
    history.epochs.append(EpochRecord(epoch=0, loss=mse_loss(head_forward(head, z_all), targets)[0]))

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(pairs))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            tape.clear()
            pred = head_forward(head, z_all[idx], tape)
            loss, grad = mse_loss(pred, targets[idx])
            optimizer_step(state, head.siamese, backward(tape, grad))
            total += loss * len(idx)
        history.epochs.append(EpochRecord(epoch=epoch, loss=total / len(order)))
        if epoch == 1 or epoch % 50 == 0 or epoch == config.epochs:
            logger.info("score epoch %d loss %.6f", epoch, total / len(order))
    history.best_epoch = config.epochs
    return head, history


def predict(head: ScoreHead, registry: ExpertRegistry, videos: Sequence[VideoRecord],
            experts: dict[str, VideoRecord]) -> list[PredictionRow]:
    """Mean predicted score over the registered experts of each video's type."""
    rows = []
    for v in sorted(videos, key=lambda r: r.id):
        expert_ids = registry.for_type(v.action_type)
        xe = np.stack([experts[e].features.clips for e in expert_ids])
        xq = np.repeat(v.features.clips[None], len(expert_ids), axis=0)
        scores = np.atleast_1d(score_forward(head, xe, xq))
        rows.append(PredictionRow(
            video_id=v.id,
            action_type=v.action_type,
            true_score=v.overall_score,
            predicted_score=float(np.mean(scores)),
            expert_ids=expert_ids,
        ))
    return rows
