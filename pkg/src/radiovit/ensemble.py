"""Combining per-modality probabilities: simple averaging and logistic stacking."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dicom import format_subject_id
from .errors import EmptyPrediction, MalformedPredictionsCsv, MissingModality, SingleClassLabels
from .modality import MODALITIES, Modality
from .vit3d import sigmoid

PREDICTIONS_HEADER = ("BraTS21ID", "MGMT_value")


@dataclass
class Prediction:
    subject_id: str
    per_modality: dict[Modality, float] = field(default_factory=dict)
    final: float | None = None

    def features(self) -> np.ndarray:
        missing = [m.value for m in MODALITIES if m not in self.per_modality]
        if missing:
            raise MissingModality(f"subject {self.subject_id} lacks {', '.join(missing)}")
        return np.array([self.per_modality[m] for m in MODALITIES], dtype=np.float64)


def average_ensemble(preds: list[Prediction]) -> list[Prediction]:
    """Mean of whichever modality probabilities each subject has."""
    out = []
    for p in preds:
        if not p.per_modality:
            raise EmptyPrediction(f"subject {p.subject_id} has no modality probabilities")
        # fixed summation order keeps the mean independent of dict ordering
        values = [p.per_modality[m] for m in MODALITIES if m in p.per_modality]
        out.append(replace(p, per_modality=dict(p.per_modality), final=float(np.mean(values))))
    return out


@dataclass
class StackingModel:
    """Logistic regression over (T1w, T1wCE, T2w, FLAIR) probabilities."""

    weights: np.ndarray
    bias: float = 0.0
    l2_lambda: float = 0.01
    iterations: int = 0

    def to_dict(self) -> dict:
        return {"weights": [float(w) for w in self.weights], "bias": float(self.bias),
                "l2_lambda": float(self.l2_lambda), "iterations": int(self.iterations),
                "feature_order": [m.value for m in MODALITIES]}

    @classmethod
    def from_dict(cls, d: dict) -> "StackingModel":
        return cls(np.asarray(d["weights"], dtype=np.float64), float(d["bias"]), float(d["l2_lambda"]), int(d.get("iterations", 0)))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "StackingModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def stacking_gradient(x: np.ndarray, y: np.ndarray, w: np.ndarray, b: float, l2: float) -> tuple[np.ndarray, float]:
    """Gradient of mean logistic loss + (l2 / 2) * ||w||^2 (bias unpenalized)."""
    r = sigmoid(x @ w + b) - y
    return x.T @ r / len(y) + l2 * w, float(r.mean())


def stacking_objective(x, y, w, b, l2) -> float:
    z = x @ w + b
    loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return float(loss.mean() + 0.5 * l2 * (w @ w))


def fit_stacking(
    preds: list[Prediction],
    labels: dict[str, int] | list[int],
    l2_lambda: float = 0.01,
    lr: float = 0.1,
    tol: float = 1e-6,
    max_iter: int = 100_000,
    init: tuple[np.ndarray, float] | None = None,
) -> StackingModel:
    """Full-batch gradient descent from zero (or ``init``).

    The penalty enters through its proximal map, ``w <- (w - lr * g) / (1 + lr * l2)``,
    which has the same fixed point as a plain gradient step but stays stable
    for arbitrarily large ``l2_lambda``. Stops once the max-norm of the full
    objective gradient drops below ``tol``.
    """
    x = np.stack([p.features() for p in preds]) if preds else np.zeros((0, 4))
    if isinstance(labels, dict):
        y = np.array([labels[p.subject_id] for p in preds], dtype=np.float64)
    else:
        y = np.asarray(labels, dtype=np.float64)
    if len(y) != len(x):
        raise ValueError("one label per prediction required")
    if len(np.unique(y)) < 2:
        raise SingleClassLabels("stacking needs both classes")

    w = np.zeros(x.shape[1]) if init is None else np.array(init[0], dtype=np.float64)
    b = 0.0 if init is None else float(init[1])
    shrink = 1.0 + lr * l2_lambda
    it = 0
    for it in range(1, max_iter + 1):
        gw, gb = stacking_gradient(x, y, w, b, l2_lambda)
        if max(np.abs(gw).max(), abs(gb)) < tol:
            break
        data_grad = gw - l2_lambda * w
        w = (w - lr * data_grad) / shrink
        b -= lr * gb
    return StackingModel(w, b, l2_lambda, it)


def predict_stacking(model: StackingModel, preds: list[Prediction]) -> list[Prediction]:
    if not preds:
        return []
    x = np.stack([p.features() for p in preds])
    z = np.clip(x @ model.weights + model.bias, -700.0, 700.0)
    finals = sigmoid(z)
    # keep the open interval even where the logistic saturates in float64
    tiny = np.finfo(np.float64).tiny
    finals = np.clip(finals, tiny, np.nextafter(1.0, 0.0))
    return [replace(p, per_modality=dict(p.per_modality), final=float(f)) for p, f in zip(preds, finals)]


# ---------------------------------------------------------------------------
# prediction CSV files


def write_predictions_csv(path: str | Path, rows: list[tuple[str, float]]) -> None:
    """Write ``BraTS21ID,MGMT_value`` rows with 12 decimal digits, sorted by id."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PREDICTIONS_HEADER)
        for subject_id, value in sorted(rows):
            writer.writerow([subject_id, f"{float(value):.12f}"])


def read_predictions_csv(path: str | Path) -> dict[str, float]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(c.strip() for c in rows[0]) != PREDICTIONS_HEADER:
        raise MalformedPredictionsCsv(f"{path}: header must be {','.join(PREDICTIONS_HEADER)}")
    out: dict[str, float] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            subject_id = format_subject_id(row[0])
            value = float(row[1])
        except (ValueError, IndexError) as exc:
            raise MalformedPredictionsCsv(f"{path}:{lineno}: {exc}") from exc
        if not 0.0 <= value <= 1.0:
            raise MalformedPredictionsCsv(f"{path}:{lineno}: probability {value} outside [0, 1]")
        out[subject_id] = value
    return out


def merge_modality_predictions(per_modality: dict[Modality, dict[str, float]]) -> list[Prediction]:
    """Join per-modality id -> probability maps into one Prediction per subject."""
    ids = sorted({sid for table in per_modality.values() for sid in table})
    preds = []
    for sid in ids:
        probs = {m: table[sid] for m, table in per_modality.items() if sid in table}
        preds.append(Prediction(sid, probs))
    return preds
