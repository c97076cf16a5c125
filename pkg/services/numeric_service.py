"""
Dense and LSTM kernels with explicit backward passes, losses and a
finite-difference gradient checker.

All kernels work on batches: a vector input is treated as a batch of one
and the result is returned as a vector again. Arrays are float64.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Union

import numpy as np
from scipy.special import expit

from core.errors import EmptyInputError, ModeError, ShapeError, StateError
from models.params import ParameterBlock, ParameterSet
from models.video import ClipFeatureSequence

logger = logging.getLogger(__name__)

ACTIVATIONS = ("identity", "relu", "sigmoid", "tanh")
PROB_CLAMP = 1e-12

SequenceLike = Union[ClipFeatureSequence, np.ndarray]


@dataclass
class TapeOp:
    kind: str
    inputs: tuple[str, ...]
    output: str
    cache: dict


class GradientTape:
    """Forward caches of one step plus gradients for every trainable block of `params`."""

    def __init__(self, params: ParameterSet, frozen: Iterable[str] = ()):
        self.params = params
        self.frozen = {b.name for b in params if b.frozen} | set(frozen)
        self.ops: list[TapeOp] = []
        self.grads: dict[str, np.ndarray] = {}
        self.clear()

    def clear(self) -> None:
        self.ops = []
        self.grads = {b.name: np.zeros_like(b.values) for b in self.params if b.name not in self.frozen}

    def record(self, kind: str, inputs: tuple[str, ...], output: str, cache: dict) -> None:
        self.ops.append(TapeOp(kind, inputs, output, cache))

    def accumulate(self, name: str, grad: np.ndarray) -> None:
        if name in self.frozen:
            return
        if grad.shape != self.grads[name].shape:
            raise ShapeError(f"gradient for {name} has shape {grad.shape}, expected {self.grads[name].shape}")
        self.grads[name] += grad

    def relu_signature(self) -> bytes:
        # which ReLU units are open; finite differences are invalid across a change
        masks = [op.cache["z"] > 0 for op in self.ops if op.kind == "dense" and op.cache["activation"] == "relu"]
        return b"".join(np.packbits(m).tobytes() for m in masks)


# Activations

def activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "identity":
        return z
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "sigmoid":
        return expit(z)
    if activation == "tanh":
        return np.tanh(z)
    raise ModeError(f"unknown activation {activation!r}")


def _activation_grad(z: np.ndarray, a: np.ndarray, activation: str) -> np.ndarray:
    if activation == "identity":
        return np.ones_like(z)
    if activation == "relu":
        return (z > 0).astype(np.float64)
    if activation == "sigmoid":
        return a * (1.0 - a)
    return 1.0 - a * a


# Dense layer

def dense_forward(
    W: ParameterBlock,
    b: Optional[ParameterBlock],
    x: np.ndarray,
    activation: str = "identity",
    tape: Optional[GradientTape] = None,
    src: str = "x",
    dst: str = "y",
) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    out_dim, in_dim = W.shape
    if x2.shape[1] != in_dim:
        raise ShapeError(f"{W.name}: input has {x2.shape[1]} features, weight expects {in_dim}")
    if b is not None and b.shape != (out_dim,):
        raise ShapeError(f"{b.name}: bias shape {b.shape} does not match {out_dim} outputs")

    z = x2 @ W.values.T
    if b is not None:
        z = z + b.values
    y = activate(z, activation)
    if tape is not None:
        tape.record("dense", (src,), dst, {"W": W, "b": b, "x": x2, "z": z, "y": y, "activation": activation})
    return y[0] if single else y


def _dense_backward(tape: GradientTape, op: TapeOp, d_out: np.ndarray) -> np.ndarray:
    c = op.cache
    dz = np.reshape(d_out, c["z"].shape) * _activation_grad(c["z"], c["y"], c["activation"])
    tape.accumulate(c["W"].name, dz.T @ c["x"])
    if c["b"] is not None:
        tape.accumulate(c["b"].name, dz.sum(axis=0))
    return dz @ c["W"].values


def concat_forward(parts: list[np.ndarray], tape: Optional[GradientTape] = None,
                   srcs: tuple[str, ...] = (), dst: str = "X") -> np.ndarray:
    out = np.concatenate([np.atleast_2d(p) for p in parts], axis=1)
    if tape is not None:
        tape.record("concat", srcs, dst, {"sizes": [np.atleast_2d(p).shape[1] for p in parts]})
    return out[0] if all(np.ndim(p) == 1 for p in parts) else out


# LSTM

def _lstm_blocks(params: ParameterSet, prefix: str) -> tuple[ParameterBlock, ParameterBlock, ParameterBlock]:
    return (params.blocks[f"{prefix}.W_x"], params.blocks[f"{prefix}.W_h"], params.blocks[f"{prefix}.b"])


def _lstm_step(Wx, Wh, b, x, h_prev, c_prev):
    M = Wh.shape[1]
    a = x @ Wx.T + h_prev @ Wh.T + b
    i = expit(a[:, :M])
    f = expit(a[:, M:2 * M])
    o = expit(a[:, 2 * M:3 * M])
    g = np.tanh(a[:, 3 * M:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (x, h_prev, c_prev, i, f, o, g, tc)


def lstm_cell_forward(params: ParameterSet, x_t: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray,
                      prefix: str = "lstm") -> tuple[np.ndarray, np.ndarray]:
    """One gated step: i, f, o = sigmoid(.), g = tanh(.), c = f*c_prev + i*g, h = o*tanh(c)."""
    Wx, Wh, b = _lstm_blocks(params, prefix)
    x_t = np.asarray(x_t, dtype=np.float64)
    single = x_t.ndim == 1
    x2, h2, c2 = (np.atleast_2d(np.asarray(v, dtype=np.float64)) for v in (x_t, h_prev, c_prev))
    M = Wh.shape[1]
    if x2.shape[1] != Wx.shape[1]:
        raise ShapeError(f"clip vector has dimension {x2.shape[1]}, encoder expects {Wx.shape[1]}")
    if h2.shape[1] != M or c2.shape[1] != M:
        raise ShapeError(f"state vectors must have length {M}")
    h, c, _ = _lstm_step(Wx.values, Wh.values, b.values, x2, h2, c2)
    return (h[0], c[0]) if single else (h, c)


def _as_batch(sequence) -> tuple[np.ndarray, bool]:
    if isinstance(sequence, ClipFeatureSequence):
        return sequence.clips[None, :, :], True
    arr = np.asarray(sequence, dtype=np.float64)
    if arr.ndim == 2:
        return arr[None, :, :], True
    if arr.ndim == 3:
        return arr, False
    raise ShapeError(f"sequence must be (n, D) or (B, n, D), got shape {arr.shape}")


def lstm_sequence_forward(params: ParameterSet, sequence, tape: Optional[GradientTape] = None,
                          dst: str = "O", prefix: str = "lstm") -> np.ndarray:
    """Fold the cell over all clips from h = c = 0; returns the final hidden state."""
    X, single = _as_batch(sequence)
    B, n, D = X.shape
    if n == 0:
        raise EmptyInputError("cannot encode an empty clip sequence")
    Wx, Wh, b = _lstm_blocks(params, prefix)
    if D != Wx.shape[1]:
        raise ShapeError(f"clips have dimension {D}, encoder expects {Wx.shape[1]}")
    M = Wh.shape[1]
    h = np.zeros((B, M))
    c = np.zeros((B, M))
    steps = []
    hs = []
    for t in range(n):
        h, c, cache = _lstm_step(Wx.values, Wh.values, b.values, X[:, t, :], h, c)
        steps.append(cache)
        hs.append(h)
    if tape is not None:
        tape.record("lstm", ("sequence",), dst, {"blocks": (Wx, Wh, b), "steps": steps, "h": hs})
    return h[0] if single else h


def _lstm_backward(tape: GradientTape, op: TapeOp, d_h: np.ndarray) -> None:
    Wx, Wh, b = op.cache["blocks"]
    if {Wx.name, Wh.name, b.name} <= tape.frozen:
        return
    steps = op.cache["steps"]
    dh = np.atleast_2d(d_h).copy()
    dc = np.zeros_like(dh)
    dWx = np.zeros_like(Wx.values)
    dWh = np.zeros_like(Wh.values)
    db = np.zeros_like(b.values)
    for x, h_prev, c_prev, i, f, o, g, tc in reversed(steps):
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        da = np.concatenate([di * i * (1 - i), df * f * (1 - f), do * o * (1 - o), dg * (1 - g * g)], axis=1)
        dWx += da.T @ x
        dWh += da.T @ h_prev
        db += da.sum(axis=0)
        dh = da @ Wh.values
        dc = dc * f
    tape.accumulate(Wx.name, dWx)
    tape.accumulate(Wh.name, dWh)
    tape.accumulate(b.name, db)


def backward(tape: GradientTape, loss_gradient, output: Optional[str] = None) -> dict[str, np.ndarray]:
    """Back-propagate d(loss)/d(output) through the recorded ops; returns per-block gradients."""
    if not tape.ops:
        raise StateError("backward called before any forward pass was recorded")
    pending: dict[str, np.ndarray] = {output or tape.ops[-1].output: np.asarray(loss_gradient, dtype=np.float64)}
    for op in reversed(tape.ops):
        d_out = pending.pop(op.output, None)
        if d_out is None:
            continue
        if op.kind == "dense":
            _add(pending, op.inputs[0], _dense_backward(tape, op, d_out))
        elif op.kind == "concat":
            d_out = np.atleast_2d(d_out)
            offsets = np.cumsum([0] + op.cache["sizes"])
            for key, lo, hi in zip(op.inputs, offsets[:-1], offsets[1:]):
                _add(pending, key, d_out[:, lo:hi])
        elif op.kind == "lstm":
            _lstm_backward(tape, op, d_out)
    return tape.grads


def _add(pending: dict[str, np.ndarray], key: str, grad: np.ndarray) -> None:
    pending[key] = pending[key] + grad if key in pending else grad


# Losses

def bce_loss(p, label) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy and its gradient with respect to p."""
    p = np.asarray(p, dtype=np.float64)
    y = np.broadcast_to(np.asarray(label, dtype=np.float64), p.shape)
    clipped = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    if np.any(clipped != p):
        logger.warning("clamped %d probabilities outside (0, 1) before BCE", int(np.sum(clipped != p)))
    n = max(p.size, 1)
    loss = -np.sum(y * np.log(clipped) + (1.0 - y) * np.log1p(-clipped)) / n
    grad = (-(y / clipped) + (1.0 - y) / (1.0 - clipped)) / n
    return float(loss), grad


def mse_loss(pred, target) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient with respect to pred."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.broadcast_to(np.asarray(target, dtype=np.float64), pred.shape)
    n = max(pred.size, 1)
    diff = pred - target
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


# Gradient checking

@dataclass
class Evaluation:
    loss: float
    grads: dict[str, np.ndarray] = field(default_factory=dict)
    signature: bytes = b""


def gradient_check(
    closure: Callable[[], Evaluation],
    params: ParameterSet,
    eps: float = 1e-5,
    samples_per_block: int = 200,
    seed: int = 0,
    floor: float = 1e-3,
) -> float:
    '''
    Compare analytic gradients with central differences on up to
    `samples_per_block` coordinates of every trainable block.

    Relative error is |a - n| / max(|a| + |n|, floor). Coordinates whose
    ReLU pattern flips between the two evaluations are skipped.
    '''
    rng = np.random.default_rng(seed)
    reference = closure()
    worst = 0.0
    skipped = 0
    for block in params.trainable():
        analytic = reference.grads[block.name]
        count = min(samples_per_block, block.size)
        coords = rng.choice(block.size, size=count, replace=False) if count < block.size else np.arange(block.size)
        for flat in coords:
            idx = np.unravel_index(int(flat), block.shape)
            original = block.values[idx]
            block.values[idx] = original + eps
            plus = closure()
            block.values[idx] = original - eps
            minus = closure()
            block.values[idx] = original
            if plus.signature != minus.signature:
                skipped += 1
                continue
            numeric = (plus.loss - minus.loss) / (2.0 * eps)
            a = analytic[idx]
            err = abs(a - numeric) / max(abs(a) + abs(numeric), floor)
            worst = max(worst, err)
    if skipped:
        logger.info("gradient check skipped %d coordinates at ReLU kinks", skipped)
    return worst
