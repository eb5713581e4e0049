"""Independent reference implementations and shared fixtures."""

import numpy as np

from radiovit.ensemble import Prediction
from radiovit.modality import MODALITIES, Modality


def pair_auc(scores, labels) -> float:
    """O(n^2) pair counting: P(positive outscores negative), ties count 1/2."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            wins += 1.0 if p > n else 0.5 if p == n else 0.0
    return wins / (len(pos) * len(neg))


def random_auc_instance(rng):
    """Scores on a coarse grid (so ties are common) with both classes present."""
    n = int(rng.integers(2, 201))
    labels = rng.integers(0, 2, n)
    labels[rng.choice(n, 2, replace=False)] = [0, 1]
    levels = int(rng.integers(1, 30))
    scores = rng.integers(0, levels, n) / levels
    if rng.random() < 0.5:
        scores = scores + rng.normal(0, 1e-3, n) * (rng.random(n) < 0.5)
    return scores, labels


def separable_predictions(n=20, seed=0):
    """T1wCE alone separates the classes; the other modalities are noise."""
    rng = np.random.default_rng(seed)
    labels = np.array([i % 2 for i in range(n)])
    preds = []
    for i, y in enumerate(labels):
        probs = {m: float(rng.random()) for m in MODALITIES}
        probs[Modality.T1wCE] = float(rng.uniform(0.9, 1.0) if y else rng.uniform(0.0, 0.1))
        preds.append(Prediction(f"{i + 1:05d}", probs))
    return preds, labels
