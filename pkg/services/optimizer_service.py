import logging

import numpy as np

from core.config import OptimizerConfig
from core.errors import OptimizerError, ShapeError
from models.optimizer import OptimizerState
from models.params import ParameterSet

logger = logging.getLogger(__name__)


# Build a fresh optimizer state from config
def create_optimizer(config: OptimizerConfig) -> OptimizerState:
    return OptimizerState(
        algorithm=config.algorithm,
        learning_rate=config.learning_rate,
        beta1=config.beta1,
        beta2=config.beta2,
        eps=config.eps,
    )


# Apply one update to every trainable block that has a gradient
def optimizer_step(state: OptimizerState, params: ParameterSet, gradients: dict[str, np.ndarray]) -> ParameterSet:
    bad = [name for name, g in gradients.items() if not np.all(np.isfinite(g))]
    if bad:
        details = ", ".join(f"{name} ({int(np.sum(~np.isfinite(gradients[name])))} non-finite)" for name in bad)
        raise OptimizerError(f"aborting step {state.step + 1}: non-finite gradient in {details}")

    blocks = [b for b in params.trainable() if b.name in gradients]
    for block in blocks:
        if gradients[block.name].shape != block.shape:
            raise ShapeError(f"gradient for {block.name} has shape {gradients[block.name].shape}, block is {block.shape}")

    state.step += 1
    lr = state.learning_rate
    for block in blocks:
        g = gradients[block.name]
        if state.algorithm == "sgd":
            block.values -= lr * g
            continue
        m = state.m.setdefault(block.name, np.zeros_like(block.values))
        v = state.v.setdefault(block.name, np.zeros_like(block.values))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** state.step)
        v_hat = v / (1.0 - state.beta2 ** state.step)
        block.values -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params
