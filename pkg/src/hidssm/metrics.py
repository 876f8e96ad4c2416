"""Frame-level evaluation: boundary-relaxed accuracy/precision/recall/Jaccard
and the unrelaxed micro-averaged F1.

The relaxation forgives a prediction within ``boundary_window`` frames after a
ground-truth phase transition when it equals the phase on the other side of
that transition (a lingering previous phase). Per-phase precision, recall, and
Jaccard come from the relaxation-corrected confusion counts, macro-averaged
over the phases present in the ground truth, then averaged over videos.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

DEFAULT_BOUNDARY_WINDOW = 10


def _as_labels(x, name: str) -> np.ndarray:
    arr = np.asarray(x)
    if arr.ndim != 1:
        raise ConfigError(f"{name} must be 1-D")
    return arr.astype(np.int64)


def relaxed_correct_mask(
    pred: np.ndarray, gt: np.ndarray, boundary_window: int = DEFAULT_BOUNDARY_WINDOW
) -> np.ndarray:
    """Boolean mask of frames counted correct under boundary relaxation."""
    pred = _as_labels(pred, "pred")
    gt = _as_labels(gt, "gt")
    if pred.shape != gt.shape:
        raise ConfigError(f"length mismatch: pred {pred.shape} vs gt {gt.shape}")
    ok = pred == gt
    if boundary_window <= 0:
        return ok
    transitions = np.flatnonzero(gt[1:] != gt[:-1]) + 1
    for b in transitions:
        window = slice(b, min(b + boundary_window, gt.shape[0]))
        ok[window] |= pred[window] == gt[b - 1]
    return ok


@dataclass
class VideoMetrics:
    accuracy: float
    precision: float
    recall: float
    jaccard: float
    unrelaxed_accuracy: float
    confusion: np.ndarray  # (n_phases, n_phases) corrected counts, rows = gt


def _per_phase_rates(confusion: np.ndarray) -> dict[int, tuple[float, float, float]]:
    rates = {}
    for p in range(confusion.shape[0]):
        tp = confusion[p, p]
        fn = confusion[p].sum() - tp
        fp = confusion[:, p].sum() - tp
        if tp + fn == 0:  # phase absent from ground truth
            continue
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn)
        jaccard = tp / (tp + fp + fn)
        rates[p] = (precision, recall, jaccard)
    return rates


def relaxed_metrics(
    pred: np.ndarray,
    gt: np.ndarray,
    n_phases: int,
    boundary_window: int = DEFAULT_BOUNDARY_WINDOW,
) -> VideoMetrics:
    """Single-video metrics from relaxation-corrected predictions."""
    pred = _as_labels(pred, "pred")
    gt = _as_labels(gt, "gt")
    ok = relaxed_correct_mask(pred, gt, boundary_window)
    corrected = np.where(ok, gt, pred)
    confusion = np.zeros((n_phases, n_phases), dtype=np.int64)
    np.add.at(confusion, (gt, corrected), 1)
    rates = _per_phase_rates(confusion)
    per = np.array(list(rates.values())) if rates else np.zeros((0, 3))
    return VideoMetrics(
        accuracy=float(np.mean(corrected == gt)),
        precision=float(per[:, 0].mean()) if len(per) else 0.0,
        recall=float(per[:, 1].mean()) if len(per) else 0.0,
        jaccard=float(per[:, 2].mean()) if len(per) else 0.0,
        unrelaxed_accuracy=float(np.mean(pred == gt)),
        confusion=confusion,
    )


def micro_f1(pred: np.ndarray, gt: np.ndarray) -> float:
    """Unrelaxed micro-averaged F1 over frames, aggregated across classes.

    For single-label multiclass predictions this equals frame accuracy.
    """
    pred = _as_labels(pred, "pred")
    gt = _as_labels(gt, "gt")
    if pred.shape != gt.shape:
        raise ConfigError(f"length mismatch: pred {pred.shape} vs gt {gt.shape}")
    classes = np.union1d(pred, gt)
    tp = fp = fn = 0
    for c in classes:
        tp += int(np.sum((pred == c) & (gt == c)))
        fp += int(np.sum((pred == c) & (gt != c)))
        fn += int(np.sum((pred != c) & (gt == c)))
    denom = tp + 0.5 * (fp + fn)
    return tp / denom if denom > 0 else 0.0


@dataclass
class EvalReport:
    """Dataset-level metric summary: video means and standard deviations,
    pooled per-phase rates, and the unrelaxed micro F1."""

    accuracy_mean: float
    accuracy_std: float
    precision_mean: float
    precision_std: float
    recall_mean: float
    recall_std: float
    jaccard_mean: float
    jaccard_std: float
    unrelaxed_accuracy_mean: float
    micro_f1: float
    boundary_window: int
    n_videos: int
    per_phase: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "accuracy_mean": self.accuracy_mean,
            "accuracy_std": self.accuracy_std,
            "precision_mean": self.precision_mean,
            "precision_std": self.precision_std,
            "recall_mean": self.recall_mean,
            "recall_std": self.recall_std,
            "jaccard_mean": self.jaccard_mean,
            "jaccard_std": self.jaccard_std,
            "unrelaxed_accuracy_mean": self.unrelaxed_accuracy_mean,
            "micro_f1": self.micro_f1,
            "boundary_window": self.boundary_window,
            "n_videos": self.n_videos,
            "per_phase": self.per_phase,
        }


def evaluate_videos(
    pairs: list[tuple[np.ndarray, np.ndarray]],
    n_phases: int,
    boundary_window: int = DEFAULT_BOUNDARY_WINDOW,
) -> EvalReport:
    """Aggregate (pred, gt) pairs into an :class:`EvalReport`."""
    if not pairs:
        raise ConfigError("need at least one video to evaluate")
    videos = [relaxed_metrics(p, g, n_phases, boundary_window) for p, g in pairs]
    pooled = sum(v.confusion for v in videos)
    per_phase = [
        {"phase": p, "precision": pr, "recall": rc, "jaccard": ja}
        for p, (pr, rc, ja) in sorted(_per_phase_rates(pooled).items())
    ]
    all_pred = np.concatenate([p for p, _ in pairs])
    all_gt = np.concatenate([g for _, g in pairs])

    def agg(values):
        arr = np.array(values)
        return float(arr.mean()), float(arr.std())

    acc = agg([v.accuracy for v in videos])
    pre = agg([v.precision for v in videos])
    rec = agg([v.recall for v in videos])
    jac = agg([v.jaccard for v in videos])
    return EvalReport(
        accuracy_mean=acc[0],
        accuracy_std=acc[1],
        precision_mean=pre[0],
        precision_std=pre[1],
        recall_mean=rec[0],
        recall_std=rec[1],
        jaccard_mean=jac[0],
        jaccard_std=jac[1],
        unrelaxed_accuracy_mean=float(np.mean([v.unrelaxed_accuracy for v in videos])),
        micro_f1=micro_f1(all_pred, all_gt),
        boundary_window=boundary_window,
        n_videos=len(videos),
        per_phase=per_phase,
    )


def render_table(report: EvalReport) -> str:
    """Aligned plain-text summary of an :class:`EvalReport`."""
    lines = [
        f"{'metric':<12}{'mean':>10}{'std':>10}",
        f"{'accuracy':<12}{report.accuracy_mean:>10.4f}{report.accuracy_std:>10.4f}",
        f"{'precision':<12}{report.precision_mean:>10.4f}{report.precision_std:>10.4f}",
        f"{'recall':<12}{report.recall_mean:>10.4f}{report.recall_std:>10.4f}",
        f"{'jaccard':<12}{report.jaccard_mean:>10.4f}{report.jaccard_std:>10.4f}",
        "",
        f"unrelaxed accuracy: {report.unrelaxed_accuracy_mean:.4f}",
        f"micro F1 (unrelaxed): {report.micro_f1:.4f}",
        f"videos: {report.n_videos}   boundary window: {report.boundary_window}",
        "",
        f"{'phase':<8}{'precision':>12}{'recall':>12}{'jaccard':>12}",
    ]
    for row in report.per_phase:
        lines.append(
            f"{row['phase']:<8}{row['precision']:>12.4f}{row['recall']:>12.4f}{row['jaccard']:>12.4f}"
        )
    return "\n".join(lines)
