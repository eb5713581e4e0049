"""ROC/AUC, confusion matrices and the derived rates, plus report files."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .errors import IoError, LengthMismatch, SingleClass


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class RocPoint:
    fpr: float
    tpr: float
    threshold: float


@dataclass
class MetricsReport:
    auc: float
    roc: list[RocPoint]
    confusion: Confusion
    precision: float | None
    sensitivity: float | None
    specificity: float | None
    accuracy: float | None
    threshold: float = 0.5
    split: str = "unspecified"
    n: int = 0
    config: dict = field(default_factory=dict)


def _check(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise LengthMismatch(f"{scores.size} scores for {labels.size} labels")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return scores, labels.astype(np.int64)


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    starts = np.flatnonzero(np.r_[True, sorted_scores[1:] != sorted_scores[:-1]])
    ends = np.r_[starts[1:], scores.size]
    # tied block [s, e) shares the mean of ranks s+1 .. e
    block_rank = (starts + 1 + ends) / 2.0
    ranks = np.empty(scores.size)
    ranks[order] = np.repeat(block_rank, ends - starts)
    return ranks


def roc_curve(scores, labels) -> list[RocPoint]:
    """Operating points for thresholds at every distinct score (``score >= t``)."""
    scores, labels = _check(scores, labels)
    pos, neg = int(labels.sum()), int(labels.size - labels.sum())
    if pos == 0 or neg == 0:
        raise SingleClass("ROC needs both classes")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    cut = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tps = np.cumsum(y)[cut]
    fps = (cut + 1) - tps
    points = [RocPoint(0.0, 0.0, math.inf)]
    points += [RocPoint(fp / neg, tp / pos, float(t)) for tp, fp, t in zip(tps.tolist(), fps.tolist(), s[cut])]
    return points


def roc_auc(scores, labels) -> tuple[float, list[RocPoint]]:
    """Mann-Whitney AUC (ties count one half) and the ROC points."""
    scores, labels = _check(scores, labels)
    pos = int(labels.sum())
    neg = labels.size - pos
    if pos == 0 or neg == 0:
        raise SingleClass("AUC needs both classes")
    ranks = _average_ranks(scores)
    u = ranks[labels == 1].sum() - pos * (pos + 1) / 2.0
    return float(u / (pos * neg)), roc_curve(scores, labels)


def trapezoid_area(points: list[RocPoint]) -> float:
    x = np.array([p.fpr for p in points])
    y = np.array([p.tpr for p in points])
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


def confusion_matrix(scores, labels, threshold: float = 0.5) -> Confusion:
    scores, labels = _check(scores, labels)
    predicted = scores >= threshold
    actual = labels == 1
    return Confusion(
        tp=int(np.sum(predicted & actual)),
        fp=int(np.sum(predicted & ~actual)),
        fn=int(np.sum(~predicted & actual)),
        tn=int(np.sum(~predicted & ~actual)),
    )


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def classification_metrics(c: Confusion) -> tuple[float | None, float | None, float | None, float | None]:
    """(precision, sensitivity, specificity, accuracy); ``None`` marks 0/0."""
    return (
        _ratio(c.tp, c.tp + c.fp),
        _ratio(c.tp, c.tp + c.fn),
        _ratio(c.tn, c.tn + c.fp),
        _ratio(c.tp + c.tn, c.total),
    )


def evaluate_scores(scores, labels, threshold: float = 0.5, split: str = "unspecified", config: dict | None = None) -> MetricsReport:
    auc, roc = roc_auc(scores, labels)
    c = confusion_matrix(scores, labels, threshold)
    precision, sensitivity, specificity, accuracy = classification_metrics(c)
    return MetricsReport(auc, roc, c, precision, sensitivity, specificity, accuracy, threshold, split, c.total, dict(config or {}))


# ---------------------------------------------------------------------------
# report files

ROC_CSV = "roc.csv"
REPORT_TXT = "report.txt"
ROC_SVG = "roc.svg"

_SCALARS = ("split", "n", "threshold", "auc", "tp", "fp", "fn", "tn", "precision", "sensitivity", "specificity", "accuracy")


def _fmt(value) -> str:
    if value is None:
        return "undefined"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_report(report: MetricsReport) -> str:
    c = report.confusion
    values = {
        "split": report.split, "n": report.n, "threshold": float(report.threshold), "auc": report.auc,
        "tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn,
        "precision": report.precision, "sensitivity": report.sensitivity,
        "specificity": report.specificity, "accuracy": report.accuracy,
    }
    lines = [f"# config: {json.dumps(report.config, sort_keys=True)}"]
    lines += [f"{key}: {_fmt(values[key])}" for key in _SCALARS]
    lines += [
        "",
        "# confusion matrix (rows = actual, columns = predicted)",
        f"#            pred_pos  pred_neg",
        f"# actual_pos {c.tp:8d}  {c.fn:8d}",
        f"# actual_neg {c.fp:8d}  {c.tn:8d}",
    ]
    return "\n".join(lines) + "\n"


def parse_report(text: str, roc: list[RocPoint] | None = None) -> MetricsReport:
    values: dict[str, str] = {}
    config: dict = {}
    for line in text.splitlines():
        if line.startswith("# config: "):
            config = json.loads(line[len("# config: "):])
        if not line or line.startswith("#") or ":" not in line:
            continue
        key, value = line.split(":", 1)
        values[key.strip()] = value.strip()

    def number(key):
        v = values[key]
        return None if v == "undefined" else float(v)

    return MetricsReport(
        auc=float(values["auc"]),
        roc=list(roc or []),
        confusion=Confusion(*(int(values[k]) for k in ("tp", "fp", "fn", "tn"))),
        precision=number("precision"),
        sensitivity=number("sensitivity"),
        specificity=number("specificity"),
        accuracy=number("accuracy"),
        threshold=float(values["threshold"]),
        split=values["split"],
        n=int(values["n"]),
        config=config,
    )


def write_roc_csv(path: Path, roc: list[RocPoint]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["fpr", "tpr", "threshold"])
        for p in roc:
            writer.writerow([repr(p.fpr), repr(p.tpr), repr(p.threshold)])


def read_roc_csv(path: Path) -> list[RocPoint]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [RocPoint(float(r["fpr"]), float(r["tpr"]), float(r["threshold"])) for r in rows]


def render_roc_svg(report: MetricsReport, size: int = 400, margin: int = 50) -> str:
    span = size - 2 * margin

    def xy(fpr, tpr):
        return f"{margin + fpr * span:.3f},{margin + (1.0 - tpr) * span:.3f}"

    curve = " ".join(xy(p.fpr, p.tpr) for p in report.roc)
    label = escape(f"AUC = {report.auc:.4f} ({report.split})")
    return "\n".join(
        [
            '<?xml version="1.0" encoding="UTF-8"?>',
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
            f'  <rect x="{margin}" y="{margin}" width="{span}" height="{span}" fill="none" stroke="black"/>',
            f'  <line x1="{margin}" y1="{margin + span}" x2="{margin + span}" y2="{margin}" stroke="gray" stroke-dasharray="4 4"/>',
            f'  <polyline points="{curve}" fill="none" stroke="darkorange" stroke-width="2"/>',
            f'  <text x="{margin + span - 10}" y="{margin + span - 10}" text-anchor="end" font-size="14">{label}</text>',
            f'  <text x="{size / 2}" y="{size - 15}" text-anchor="middle" font-size="12">False positive rate</text>',
            f'  <text x="15" y="{size / 2}" text-anchor="middle" font-size="12" transform="rotate(-90 15 {size / 2})">True positive rate</text>',
            "</svg>",
            "",
        ]
    )


def emit_report(report: MetricsReport, out_dir: str | Path) -> dict[str, Path]:
    """Write ``roc.csv``, ``report.txt`` and ``roc.svg`` into ``out_dir``."""
    out_dir = Path(out_dir)
    paths = {"roc": out_dir / ROC_CSV, "report": out_dir / REPORT_TXT, "svg": out_dir / ROC_SVG}
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_roc_csv(paths["roc"], report.roc)
        paths["report"].write_text(format_report(report))
        paths["svg"].write_text(render_roc_svg(report))
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return paths


def read_report(out_dir: str | Path) -> MetricsReport:
    out_dir = Path(out_dir)
    return parse_report((out_dir / REPORT_TXT).read_text(), read_roc_csv(out_dir / ROC_CSV))
