"""Per-modality training: BCE loss, Adam, per-epoch learning-rate decay,
early stopping on validation loss and best-loss checkpointing."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import augment
from .checkpoint import Checkpoint, save_checkpoint
from .ensemble import Prediction
from .errors import InsufficientData, NonFiniteGradient, ShapeMismatch
from .metrics import roc_auc
from .modality import Modality
from .vit3d import Params, Vit3dConfig, init_params, sigmoid, vit_backward, vit_forward
from .volume import Volume

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    val_split: float = 0.2
    batch_size: int = 2
    lr: float = 1e-4
    lr_decay: float = 0.95
    early_stop_patience: int | None = 3
    seed: int = 0
    modality: Modality = Modality.FLAIR
    augment: str = "expand"  # "none", "expand" (offline 90-degree family) or "random"

    def __post_init__(self):
        object.__setattr__(self, "modality", Modality(self.modality))
        if not 0 < self.val_split < 1:
            raise ValueError("val_split must lie in (0, 1)")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.augment not in ("none", "expand", "random"):
            raise ValueError(f"unknown augment mode {self.augment!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["modality"] = self.modality.value
        return d


def bce_with_logits(logits, y) -> tuple[np.ndarray, np.ndarray]:
    """Per-item binary cross-entropy and its derivative w.r.t. the logit."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    loss = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return loss, sigmoid(z) - y


def bce_loss(p: float, y: int) -> tuple[float, float]:
    """Loss and dL/dlogit for a probability ``p``, evaluated through its logit."""
    p = float(np.clip(p, 1e-300, 1.0 - 1e-16))
    z = math.log(p) - math.log1p(-p)
    loss, _ = bce_with_logits(z, y)
    return float(loss), p - y


@dataclass
class AdamState:
    m: Params
    v: Params
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Params) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: Params, grads: Params, state: AdamState, lr: float,
              beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2, eps: float = ADAM_EPS) -> Params:
    """One bias-corrected Adam update, applied in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {name}")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t if beta1 > 0 else 1.0
    c2 = 1.0 - beta2**t if beta2 > 0 else 1.0
    for name, g in grads.items():
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        step = (lr / c1) * m / (np.sqrt(v / c2) + eps)
        params[name] -= step.astype(params[name].dtype, copy=False)
    return params


@dataclass
class EarlyStopping:
    """Tracks the best validation loss; only strict improvements count."""

    patience: int | None = 3
    best: float = math.inf
    best_epoch: int = 0
    since_improvement: int = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        if val_loss < self.best:
            self.best, self.best_epoch, self.since_improvement = val_loss, epoch, 0
            return True
        self.since_improvement += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.patience is not None and self.since_improvement >= self.patience


@dataclass(frozen=True)
class LogRow:
    epoch: int
    train_loss: float
    val_loss: float
    val_auc: float
    lr: float


LOG_HEADER = ("epoch", "train_loss", "val_loss", "val_auc", "lr")


def write_log_csv(path: str | Path, rows: list[LogRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_HEADER)
        for r in rows:
            writer.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.val_auc), repr(r.lr)])


def read_log_csv(path: str | Path) -> list[LogRow]:
    with open(path, newline="") as fh:
        return [LogRow(int(r["epoch"]), float(r["train_loss"]), float(r["val_loss"]), float(r["val_auc"]), float(r["lr"]))
                for r in csv.DictReader(fh)]


def split_subjects(subject_ids: list[str], labels: list[int], val_split: float, seed: int) -> tuple[list[str], list[str]]:
    """Stratified, seeded subject-level split into (train, validation) ids."""
    train, val = [], []
    rng = np.random.default_rng([seed, 0])
    for cls in (0, 1):
        ids = sorted(s for s, y in zip(subject_ids, labels) if y == cls)
        if len(ids) < 2:
            raise InsufficientData(f"class {cls} has {len(ids)} subject(s); need at least 2")
        shuffled = [ids[i] for i in rng.permutation(len(ids))]
        n_val = min(max(1, int(round(val_split * len(ids)))), len(ids) - 1)
        val += shuffled[:n_val]
        train += shuffled[n_val:]
    return sorted(train), sorted(val)


def validation_metrics(params: Params, config: Vit3dConfig, volumes: list[Volume], labels: np.ndarray) -> tuple[float, float]:
    """Eval-mode mean BCE and AUC (NaN when a class is absent)."""
    logits = np.array([vit_forward(params, config, v.voxels, train=False)[0][0] for v in volumes])
    loss, _ = bce_with_logits(logits, labels)
    if len(np.unique(labels)) < 2:
        return float(loss.mean()), math.nan
    auc, _ = roc_auc(sigmoid(logits), labels)
    return float(loss.mean()), auc


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    params: Params
    log: list[LogRow]
    train_ids: list[str]
    val_ids: list[str]
    stopped_early: bool = False


@dataclass
class TrainState:
    params: Params
    adam: AdamState
    stopper: EarlyStopping
    rng: np.random.Generator = field(repr=False, default=None)


def train(
    volumes: list[Volume],
    labels: dict[str, int],
    model_config: Vit3dConfig,
    config: TrainConfig,
    checkpoint_path: str | Path | None = None,
    meta: dict | None = None,
) -> TrainResult:
    """Train one modality's model; returns the best-validation checkpoint and the log."""
    by_id = {}
    for v in volumes:
        if v.shape != model_config.image_size:
            raise ShapeMismatch(f"volume {v.subject_id} has shape {v.shape}, model expects {model_config.image_size}")
        if v.subject_id in labels:
            by_id[v.subject_id] = v
    ids = sorted(by_id)
    train_ids, val_ids = split_subjects(ids, [labels[s] for s in ids], config.val_split, config.seed)

    base_train = [by_id[s] for s in train_ids]
    base_y = np.array([labels[s] for s in train_ids], dtype=np.float64)
    val_vols = [by_id[s] for s in val_ids]
    val_y = np.array([labels[s] for s in val_ids], dtype=np.float64)
    if config.augment == "expand":
        train_vols = augment.expand_training_set(base_train)
        train_y = np.tile(base_y, len(train_vols) // max(len(base_train), 1))
    else:
        train_vols, train_y = base_train, base_y

    state = TrainState(
        params=init_params(model_config, np.random.default_rng([config.seed, 1])),
        adam=None,
        stopper=EarlyStopping(config.early_stop_patience),
        rng=np.random.default_rng([config.seed, 2]),
    )
    state.adam = AdamState.zeros_like(state.params)
    policy = augment.AugmentPolicy(seed=config.seed)
    meta = {"modality": config.modality.value, "train_config": config.to_dict(), **(meta or {})}
    best = Checkpoint(model_config, {k: v.copy() for k, v in state.params.items()}, math.inf, 0, meta)
    rows: list[LogRow] = []

    for epoch in range(1, config.epochs + 1):
        lr = config.lr * config.lr_decay ** (epoch - 1)
        order = state.rng.permutation(len(train_vols))
        total, count = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = []
            for i in idx:
                voxels = train_vols[i].voxels
                if config.augment == "random":
                    rng = augment.sample_rng(config.seed, epoch, int(i))
                    voxels = augment.random_affine(train_vols[i], policy, rng).voxels
                batch.append(voxels)
            logits, cache = vit_forward(state.params, model_config, np.stack(batch), train=True, rng=state.rng)
            loss, dlogits = bce_with_logits(logits, train_y[idx])
            grads = vit_backward(state.params, model_config, cache, dlogits / len(idx))
            adam_step(state.params, grads, state.adam, lr)
            total += float(loss.sum())
            count += len(idx)

        val_loss, val_auc = validation_metrics(state.params, model_config, val_vols, val_y)
        rows.append(LogRow(epoch, total / count, val_loss, val_auc, lr))
        log.info("epoch %d train_loss %.6f val_loss %.6f val_auc %.4f lr %.3g", epoch, total / count, val_loss, val_auc, lr)
        if state.stopper.update(epoch, val_loss):
            best = Checkpoint(model_config, {k: v.copy() for k, v in state.params.items()}, val_loss, epoch, meta)
            if checkpoint_path is not None:
                save_checkpoint(best, checkpoint_path)
        if state.stopper.should_stop:
            return TrainResult(best, state.params, rows, train_ids, val_ids, stopped_early=True)
    return TrainResult(best, state.params, rows, train_ids, val_ids)


def evaluate(checkpoint: Checkpoint, volumes: list[Volume]) -> list[Prediction]:
    """Eval-mode probability per volume, one forward pass each."""
    preds = []
    for v in volumes:
        if v.shape != checkpoint.config.image_size:
            raise ShapeMismatch(f"volume {v.subject_id} has shape {v.shape}, model expects {checkpoint.config.image_size}")
        logit = vit_forward(checkpoint.params, checkpoint.config, v.voxels, train=False)[0][0]
        preds.append(Prediction(v.subject_id, {v.modality: float(sigmoid(logit))}))
    return preds
