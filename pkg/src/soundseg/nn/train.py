"""Minibatch training with per-epoch model selection on validation loss."""

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from soundseg.dataset import apply_normalization, normalize
from soundseg.errors import NumericalError
from soundseg.nn.adam import adam_init, adam_step
from soundseg.nn.layers import loss
from soundseg.nn.unet import init_params, loss_and_grads, unet_forward

log = logging.getLogger(__name__)

__all__ = ["TrainReport", "train", "prepare_batch", "evaluate_loss"]


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    selected_epoch: int = -1
    steps: int = 0
    wall_time: float = 0.0

    def to_dict(self):
        return asdict(self)


def _pairs(data):
    if hasattr(data, "mixes"):
        return data.mixes, data.vocals
    mixes, vocals = data
    return np.asarray(mixes), np.asarray(vocals)


def prepare_batch(mixes, vocals, spec, dtype=np.float32):
    """Normalize mixes by their own statistics and vocals by the mix's; add a channel axis."""
    mixes = np.asarray(mixes, dtype=dtype)
    x, params = normalize(mixes, spec)
    y = apply_normalization(np.asarray(vocals, dtype=dtype), params)
    return x[..., None], y[..., None]


def evaluate_loss(config, params, data, spec, kind, batch_size=64):
    """Element-weighted mean loss over ``data`` in normalized units."""
    mixes, vocals = _pairs(data)
    total, count = 0.0, 0
    for start in range(0, len(mixes), batch_size):
        x, y = prepare_batch(mixes[start : start + batch_size], vocals[start : start + batch_size], spec)
        value, _ = loss(kind, unet_forward(config, params, x), y)
        total += value * y.size
        count += y.size
    return total / count


def train(
    train_set,
    val_set,
    config,
    spec,
    kind,
    epochs=20,
    batch_size=64,
    seed=0,
    learning_rate=1e-3,
    params=None,
):
    """Train from a seeded init and return the epoch snapshot with the lowest validation loss.

    ``train_set`` and ``val_set`` are archives or ``(mixes, vocals)`` stacks of
    (n, H, W) magnitude patches. Each epoch reshuffles the training pairs with a
    generator derived from ``seed``.
    """
    mixes, vocals = _pairs(train_set)
    val_mixes, _ = _pairs(val_set)
    if len(mixes) == 0 or len(val_mixes) == 0:
        raise ValueError("training and validation sets must be non-empty")
    if epochs < 1 or batch_size < 1:
        raise ValueError(f"epochs and batch_size must be >= 1, got {epochs}, {batch_size}")

    started = time.perf_counter()
    if params is None:
        params = init_params(config, seed)
    state = adam_init(params, lr=learning_rate)
    shuffle_rng = np.random.default_rng([seed, 1])
    report = TrainReport()
    best = None
    batch_index = 0
    for epoch in range(epochs):
        order = shuffle_rng.permutation(len(mixes))
        total, count = 0.0, 0
        for start in range(0, len(order), batch_size):
            idx = np.sort(order[start : start + batch_size])
            x, y = prepare_batch(mixes[idx], vocals[idx], spec)
            value, grads = loss_and_grads(config, params, x, y, kind)
            if not np.isfinite(value):
                raise NumericalError(f"non-finite training loss at epoch {epoch}, batch {batch_index}")
            params, state = adam_step(params, grads, state)
            total += value * y.size
            count += y.size
            batch_index += 1
        val = evaluate_loss(config, params, val_set, spec, kind, batch_size)
        if not np.isfinite(val):
            raise NumericalError(f"non-finite validation loss after epoch {epoch} (batch {batch_index - 1})")
        report.train_loss.append(total / count)
        report.val_loss.append(val)
        if best is None or val < report.val_loss[report.selected_epoch]:
            report.selected_epoch = epoch
            best = {k: v.copy() for k, v in params.items()}
        log.info("epoch %d: train %.6f val %.6f", epoch, total / count, val)
    report.steps = state.step
    report.wall_time = time.perf_counter() - started
    return best, report
