"""Per-class F1, macro-F1, accuracy and sliding-window smoothing of per-frame predictions."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from fusionfer._io import atomic_write_text
from fusionfer.features import CLASS_NAMES, N_CLASSES

REPORT_COLUMNS = ("Accuracy",) + CLASS_NAMES + ("MacroF1",)
DEFAULT_WINDOW = 50


class LengthMismatch(ValueError):
    pass


class EmptyInput(ValueError):
    pass


class UnorderedFrames(ValueError):
    pass


def _check_pair(pred, gt):
    pred = np.asarray(pred, dtype=np.intp).reshape(-1)
    gt = np.asarray(gt, dtype=np.intp).reshape(-1)
    if pred.shape != gt.shape:
        raise LengthMismatch(f"{pred.size} predictions vs {gt.size} ground-truth labels")
    for a in (pred, gt):
        if a.size and (a.min() < 0 or a.max() >= N_CLASSES):
            raise ValueError(f"labels must lie in 0..{N_CLASSES - 1}")
    return pred, gt


@dataclass(frozen=True)
class ConfusionCounts:
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray


def confusion_counts(pred, gt) -> ConfusionCounts:
    pred, gt = _check_pair(pred, gt)
    cm = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(cm, (gt, pred), 1)
    tp = np.diag(cm).copy()
    return ConfusionCounts(tp=tp, fp=cm.sum(axis=0) - tp, fn=cm.sum(axis=1) - tp)


def f1_per_class(cc: ConfusionCounts) -> np.ndarray:
    """2tp / (2tp + fp + fn), with 0 for classes that never occur in either list."""
    num = 2.0 * cc.tp
    den = num + cc.fp + cc.fn
    return np.divide(num, den, out=np.zeros(N_CLASSES), where=den > 0)


def macro_f1(f1s) -> float:
    f1s = np.asarray(f1s, dtype=np.float64).reshape(-1)
    if f1s.size != N_CLASSES:
        raise ValueError(f"expected {N_CLASSES} per-class scores, got {f1s.size}")
    return float(f1s.sum() / N_CLASSES)


def accuracy(pred, gt) -> float:
    pred, gt = _check_pair(pred, gt)
    if pred.size == 0:
        raise EmptyInput("accuracy of an empty prediction list")
    return float(np.count_nonzero(pred == gt) / pred.size)


@dataclass(frozen=True)
class Scores:
    accuracy: float
    f1: np.ndarray
    macro_f1: float

    def row(self) -> list[float]:
        return [self.accuracy, *self.f1.tolist(), self.macro_f1]


def score(pred, gt) -> Scores:
    f1 = f1_per_class(confusion_counts(pred, gt))
    return Scores(accuracy(pred, gt), f1, macro_f1(f1))


# ---------------------------------------------------------------------------
# smoothing


def window_bounds(n: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Inclusive ``(lo, hi)`` of the centred window of nominal size k around each index."""
    if k < 1:
        raise ValueError("window size must be >= 1")
    i = np.arange(n)
    return np.maximum(0, i - k // 2), np.minimum(n - 1, i + (k + 1) // 2 - 1)


def smooth_labels(labels, k: int = DEFAULT_WINDOW) -> np.ndarray:
    """Windowed majority vote over the original labels.

    Ties go to the frame's own label when it is among the winners, otherwise to
    the lowest class index.
    """
    labels = np.asarray(labels, dtype=np.intp).reshape(-1)
    n = labels.size
    if n == 0:
        return labels.copy()
    lo, hi = window_bounds(n, k)
    onehot = np.zeros((n + 1, N_CLASSES), dtype=np.int64)
    onehot[np.arange(1, n + 1), labels] = 1
    cum = np.cumsum(onehot, axis=0)
    counts = cum[hi + 1] - cum[lo]
    best = counts.max(axis=1)
    keep = counts[np.arange(n), labels] == best
    return np.where(keep, labels, counts.argmax(axis=1))


def smooth_logits(logits, k: int = DEFAULT_WINDOW) -> np.ndarray:
    """Average logits over the same centred window and take the argmax."""
    logits = np.asarray(logits, dtype=np.float64)
    n = logits.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.intp)
    lo, hi = window_bounds(n, k)
    cum = np.vstack([np.zeros((1, logits.shape[1])), np.cumsum(logits, axis=0)])
    mean = (cum[hi + 1] - cum[lo]) / (hi - lo + 1)[:, None]
    return mean.argmax(axis=1)


@dataclass
class PredictionSequence:
    video_id: str
    frame_index: np.ndarray
    pred: np.ndarray
    gt: np.ndarray | None = None
    logits: np.ndarray | None = None

    def __post_init__(self):
        self.frame_index = np.asarray(self.frame_index, dtype=np.int64)
        self.pred = np.asarray(self.pred, dtype=np.intp)
        if np.any(np.diff(self.frame_index) <= 0):
            raise UnorderedFrames(f"video {self.video_id!r}: frame indices must be strictly increasing")


def sliding_window_smooth(seq: PredictionSequence, k: int = DEFAULT_WINDOW, mode: str = "majority") -> PredictionSequence:
    if mode == "majority":
        new = smooth_labels(seq.pred, k)
    elif mode == "logits":
        if seq.logits is None:
            raise ValueError(f"video {seq.video_id!r}: logits smoothing needs logit columns")
        new = smooth_logits(seq.logits, k)
    else:
        raise ValueError(f"unknown smoothing mode {mode!r}")
    return PredictionSequence(seq.video_id, seq.frame_index.copy(), new, seq.gt, seq.logits)


# ---------------------------------------------------------------------------
# predictions file: video_id,frame_index,pred[,gt][,logit0..logit7]


def write_predictions(path, seqs: list[PredictionSequence]) -> None:
    has_gt = any(s.gt is not None for s in seqs)
    has_logits = any(s.logits is not None for s in seqs)
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    header = ["video_id", "frame_index", "pred"]
    header += ["gt"] if has_gt else []
    header += [f"logit{j}" for j in range(N_CLASSES)] if has_logits else []
    w.writerow(header)
    for s in seqs:
        for i in range(len(s.pred)):
            row = [s.video_id, int(s.frame_index[i]), int(s.pred[i])]
            if has_gt:
                row.append("" if s.gt is None else int(s.gt[i]))
            if has_logits:
                row += [repr(float(x)) for x in s.logits[i]]
            w.writerow(row)
    atomic_write_text(path, out.getvalue())


def read_predictions(path) -> list[PredictionSequence]:
    """Group rows by video in order of first appearance; frames must already be increasing."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"video_id", "frame_index", "pred"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: missing video_id,frame_index,pred header")
        logit_cols = [f"logit{j}" for j in range(N_CLASSES)]
        has_logits = all(c in reader.fieldnames for c in logit_cols)
        groups: dict[str, dict] = {}
        for lineno, row in enumerate(reader, 2):
            try:
                g = groups.setdefault(row["video_id"], {"f": [], "p": [], "g": [], "l": []})
                g["f"].append(int(row["frame_index"]))
                g["p"].append(int(row["pred"]))
                gt = row.get("gt")
                g["g"].append(int(gt) if gt not in (None, "") else None)
                if has_logits:
                    g["l"].append([float(row[c]) for c in logit_cols])
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    seqs = []
    for vid, g in groups.items():
        gt = None if any(x is None for x in g["g"]) else np.array(g["g"], dtype=np.intp)
        logits = np.array(g["l"]) if has_logits else None
        seqs.append(PredictionSequence(vid, g["f"], g["p"], gt, logits))
    return seqs


def format_report(s: Scores) -> str:
    lines = [f"{name:<10s} {value:.3f}" for name, value in zip(REPORT_COLUMNS, s.row())]
    return "\n".join(lines) + "\n"


def report_csv(s: Scores) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    w.writerow([repr(float(x)) for x in s.row()])
    return out.getvalue()
