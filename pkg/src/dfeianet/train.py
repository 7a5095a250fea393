"""Mini-batch training loop and evaluation."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import ops
from .data import Dataset, normalize
from .metrics import ConfusionCounts, MetricsReport, report
from .network import Model, forward
from .optim import SCHEDULES, AdamWState, adamw_step
from .tensor import Tape, Tensor, no_grad
from .errors import IngestionError

log = logging.getLogger(__name__)


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    test_acc: float | None

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "train_loss": self.train_loss, "test_acc": self.test_acc}


def batch_tensor(ds: Dataset, indices, input_size: int, dtype, rng=None) -> np.ndarray:
    """Stack preprocessed images; flips are drawn from ``rng`` when given (train mode)."""
    out = np.empty((len(indices), 3, input_size, input_size), dtype=dtype)
    for row, i in enumerate(indices):
        flip = bool(rng.random() < 0.5) if rng is not None else False
        out[row] = normalize(ds.load(int(i), input_size), flip, dtype)
    return out


def predict_logits(model: Model, ds: Dataset, batch_size: int = 16) -> np.ndarray:
    size = model.config.input_size
    chunks = []
    with no_grad():
        for lo in range(0, len(ds), batch_size):
            idx = range(lo, min(lo + batch_size, len(ds)))
            x = Tensor(batch_tensor(ds, idx, size, model.dtype))
            chunks.append(forward(model, x).data)
    if not chunks:
        return np.zeros((0, model.config.num_classes))
    return np.concatenate(chunks)


def evaluate(model: Model, ds: Dataset, batch_size: int = 16) -> tuple[ConfusionCounts, MetricsReport]:
    if len(ds) == 0:
        raise IngestionError(f"cannot evaluate an empty {ds.split} split of {ds.root}")
    preds = predict_logits(model, ds, batch_size).argmax(axis=1)
    cm = ConfusionCounts.from_predictions(ds.labels, preds, model.config.num_classes)
    return cm, report(cm, ds.classes)


def train(
    model: Model,
    train_set: Dataset,
    epochs: int,
    batch_size: int = 16,
    seed: int = 0,
    lr: float = 5e-4,
    weight_decay: float = 0.05,
    schedule: str = "cosine",
    test_set: Dataset | None = None,
    on_epoch=None,
) -> tuple[Model, list[EpochLog]]:
    """Train in place; returns the model and one log entry per epoch."""
    if len(train_set) == 0:
        raise IngestionError(f"training split of {train_set.root} is empty")
    if len(train_set.classes) < 2:
        raise IngestionError("training needs at least 2 classes")
    rng = np.random.default_rng(seed)
    state = AdamWState(lr=lr, weight_decay=weight_decay)
    sched = SCHEDULES[schedule]
    n = len(train_set)
    steps_per_epoch = -(-n // batch_size)
    total = epochs * steps_per_epoch
    labels = train_set.labels
    size = model.config.input_size
    params = model.parameters()
    history: list[EpochLog] = []
    step = 0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        losses = []
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            x = Tensor(batch_tensor(train_set, idx, size, model.dtype, rng))
            model.zero_grad()
            with Tape() as tape:
                loss = ops.cross_entropy(forward(model, x), labels[idx])
            tape.backward(loss)
            adamw_step(params, state, lr=sched(lr, step, total))
            step += 1
            losses.append(loss.item() * len(idx))
        test_acc = None
        if test_set is not None and len(test_set):
            test_acc = evaluate(model, test_set, batch_size)[1].accuracy
        entry = EpochLog(epoch, float(np.sum(losses) / n), test_acc)
        history.append(entry)
        log.info("epoch %d loss %.4f test_acc %s", epoch, entry.train_loss, test_acc)
        if on_epoch is not None:
            on_epoch(entry)
    return model, history
