"""Saliency evaluation: P-R curve, F-measure, MAE, S-measure and E-measure.

Predictions are maps in [0, 1]; ground truth is binary. The structure and
alignment measures follow the usual definitions:

S-measure
    ``S = alpha * S_o + (1 - alpha) * S_r`` clamped to [0, 1].
    ``S_o`` compares the prediction inside the object (``pred * gt``) and
    outside it (``(1 - pred) * (1 - gt)``) with the score
    ``2 x / (x^2 + 1 + sigma + eps)`` (``x`` the region mean, ``sigma`` its
    sample standard deviation), mixed by the foreground ratio. ``S_r`` cuts both
    maps into four blocks at the rounded foreground centroid and averages a
    per-block SSIM ``4 mx my sxy / ((mx^2 + my^2)(sx + sy) + eps)`` by block
    area; a block with zero numerator and denominator scores 1, one with only
    a zero numerator scores 0. An all-background gt scores ``1 - mean(pred)``
    and an all-foreground gt scores ``mean(pred)``.

E-measure
    The prediction is binarized at ``min(2 * mean(pred), 1)``. Both binary
    maps are centred by their means, ``phi = 2 A B / (A^2 + B^2 + eps)`` and
    the score is the mean of ``(1 + phi)^2 / 4`` over all ``H * W`` pixels. An
    all-background gt scores the fraction of predicted background and an
    all-foreground gt the fraction of predicted foreground.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imageio import list_images, read_gray, read_mask

EPS = np.finfo(np.float64).eps
N_THRESHOLDS = 256
BETA2 = 0.3
S_ALPHA = 0.5


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt)
    if p.ndim == 3 and p.shape[-1] == 1:
        p = p[..., 0]
    if g.ndim == 3 and g.shape[-1] == 1:
        g = g[..., 0]
    if p.shape != g.shape or p.ndim != 2:
        raise ValueError(f"prediction {p.shape} and ground truth {g.shape} must be matching 2-D maps")
    if g.dtype != bool:
        if not np.isin(g, (0, 1)).all():
            raise ValueError("ground truth must be binary")
        g = g.astype(bool)
    return p, g


# -- P-R and F ----------------------------------------------------------------------


def pr_curve(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    """Precision and recall at thresholds ``t/255``, ``t = 0..255`` (salient iff ``pred >= t/255``).

    ``P = 1`` when nothing is predicted salient and ``R = 1`` when gt is empty.
    """
    p, g = _pair(pred, gt)
    thresholds = np.arange(N_THRESHOLDS) / 255.0
    # the count of predictions >= t/255 is a reverse cumulative histogram
    level = np.searchsorted(thresholds, p.ravel(), side="right") - 1
    pos = np.bincount(level, minlength=N_THRESHOLDS)[::-1].cumsum()[::-1]
    tp = np.bincount(level[g.ravel()], minlength=N_THRESHOLDS)[::-1].cumsum()[::-1]
    fp = pos - tp
    fn = int(g.sum()) - tp
    precision = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1), 1.0)
    recall = np.where(tp + fn > 0, tp / np.maximum(tp + fn, 1), 1.0)
    return precision, recall


def f_measure(precision, recall, beta2: float = BETA2):
    """``(1 + b2) P R / (b2 P + R)``, 0 where the denominator vanishes. Works elementwise."""
    P = np.asarray(precision, dtype=np.float64)
    R = np.asarray(recall, dtype=np.float64)
    den = beta2 * P + R
    out = np.where(den > 0, (1.0 + beta2) * P * R / np.where(den > 0, den, 1.0), 0.0)
    return float(out) if out.ndim == 0 else out


def adaptive_threshold(pred) -> float:
    return min(2.0 * float(np.mean(pred)), 1.0)


def adaptive_f(pred, gt, beta2: float = BETA2) -> float:
    p, g = _pair(pred, gt)
    b = p >= adaptive_threshold(p)
    tp = int((b & g).sum())
    P = tp / b.sum() if b.any() else 1.0
    R = tp / g.sum() if g.any() else 1.0
    return f_measure(P, R, beta2)


def mae(pred, gt) -> float:
    p, g = _pair(pred, gt)
    return float(np.abs(p - g).mean())


# -- S-measure --------------------------------------------------------------------------


def _object_score(values: np.ndarray) -> float:
    if values.size == 0:
        return 0.0
    x = values.mean()
    sigma = values.std(ddof=1) if values.size > 1 else 0.0
    return float(2.0 * x / (x * x + 1.0 + sigma + EPS))


def s_object(pred, gt) -> float:
    p, g = _pair(pred, gt)
    u = g.mean()
    fg = _object_score((p * g)[g])
    bg = _object_score(((1.0 - p) * ~g)[~g])
    return float(u * fg + (1.0 - u) * bg)


def _ssim(p: np.ndarray, g: np.ndarray) -> float:
    n = p.size
    x, y = p.mean(), g.mean()
    if n > 1:
        sx = ((p - x) ** 2).sum() / (n - 1)
        sy = ((g - y) ** 2).sum() / (n - 1)
        sxy = ((p - x) * (g - y)).sum() / (n - 1)
    else:
        sx = sy = sxy = 0.0
    a = 4.0 * x * y * sxy
    b = (x * x + y * y) * (sx + sy)
    if a != 0:
        return float(a / (b + EPS))
    return 1.0 if b == 0 else 0.0


def centroid_split(gt) -> tuple[int, int]:
    """Split point ``(row, col)``: the rounded foreground centroid plus one."""
    g = np.asarray(gt, dtype=bool)
    H, W = g.shape
    if not g.any():
        return int(round(H / 2)), int(round(W / 2))
    r, c = np.argwhere(g).mean(axis=0)
    return int(round(r)) + 1, int(round(c)) + 1


def s_region(pred, gt) -> float:
    p, g = _pair(pred, gt)
    H, W = g.shape
    y, x = centroid_split(g)
    gf = g.astype(np.float64)
    score = 0.0
    for rows, cols in ((slice(0, y), slice(0, x)), (slice(0, y), slice(x, W)), (slice(y, H), slice(0, x)), (slice(y, H), slice(x, W))):
        pb, gb = p[rows, cols], gf[rows, cols]
        if pb.size == 0:
            continue
        score += pb.size / (H * W) * _ssim(pb, gb)
    return float(score)


def s_measure(pred, gt, alpha: float = S_ALPHA) -> float:
    p, g = _pair(pred, gt)
    y = g.mean()
    if y == 0:
        return float(1.0 - p.mean())
    if y == 1:
        return float(p.mean())
    s = alpha * s_object(p, g) + (1.0 - alpha) * s_region(p, g)
    return float(min(max(s, 0.0), 1.0))


# -- E-measure ----------------------------------------------------------------------


def enhanced_alignment(binary: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Per-pixel ``(1 + phi)^2 / 4`` for two binary maps."""
    fm = binary.astype(np.float64)
    gm = gt.astype(np.float64)
    if not gt.any():
        return 1.0 - fm
    if gt.all():
        return fm
    a = fm - fm.mean()
    b = gm - gm.mean()
    phi = 2.0 * a * b / (a * a + b * b + EPS)
    return (phi + 1.0) ** 2 / 4.0


def e_measure(pred, gt) -> float:
    p, g = _pair(pred, gt)
    return float(enhanced_alignment(p >= adaptive_threshold(p), g).mean())


# -- directory evaluation ------------------------------------------------------------

REPORT_COLUMNS = ["id", "s_measure", "e_measure", "mae", "mean_f", "max_f", "adaptive_f"]


@dataclass
class ImageRecord:
    id: str
    s_measure: float
    e_measure: float
    mae: float
    mean_f: float
    max_f: float
    adaptive_f: float
    precision: np.ndarray = field(repr=False)
    recall: np.ndarray = field(repr=False)
    f_curve: np.ndarray = field(repr=False)

    def values(self) -> list[float]:
        return [self.s_measure, self.e_measure, self.mae, self.mean_f, self.max_f, self.adaptive_f]


def evaluate_pair(image_id: str, pred, gt, beta2: float = BETA2, alpha: float = S_ALPHA) -> ImageRecord:
    p, g = _pair(pred, gt)
    P, R = pr_curve(p, g)
    F = f_measure(P, R, beta2)
    return ImageRecord(
        image_id,
        s_measure(p, g, alpha),
        e_measure(p, g),
        mae(p, g),
        float(F.mean()),
        float(F.max()),
        adaptive_f(p, g, beta2),
        P,
        R,
        F,
    )


@dataclass
class MetricReport:
    records: list[ImageRecord]

    def aggregate(self) -> list[float]:
        """Mean of each per-image measure, summed in id order."""
        return [float(np.mean([r.values()[i] for r in self.records])) for i in range(len(REPORT_COLUMNS) - 1)]

    def mean_pr(self) -> tuple[np.ndarray, np.ndarray]:
        P = np.mean([r.precision for r in self.records], axis=0)
        R = np.mean([r.recall for r in self.records], axis=0)
        return P, R

    def report_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.records:
            w.writerow([r.id] + [f"{v:.6f}" for v in r.values()])
        w.writerow(["mean"] + [f"{v:.6f}" for v in self.aggregate()])
        return buf.getvalue()

    def pr_csv(self) -> str:
        P, R = self.mean_pr()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["threshold", "precision", "recall"])
        for t in range(N_THRESHOLDS):
            w.writerow([t, f"{P[t]:.6f}", f"{R[t]:.6f}"])
        return buf.getvalue()


class PairingError(ValueError):
    pass


def evaluate_dir(pred_dir, gt_dir, beta2: float = BETA2, alpha: float = S_ALPHA) -> MetricReport:
    """Evaluate every prediction against the ground truth with the same file stem.

    Any prediction without ground truth (or the reverse) is an error, so a
    report never covers a silent subset.
    """
    preds = list_images(pred_dir)
    gts = list_images(gt_dir)
    common = sorted(set(preds) & set(gts))
    if not common:
        raise PairingError(f"no prediction in {pred_dir} has a ground truth with the same name in {gt_dir}")
    missing_gt = sorted(set(preds) - set(gts))
    missing_pred = sorted(set(gts) - set(preds))
    if missing_gt:
        raise PairingError(f"missing ground truth for: {', '.join(missing_gt)}")
    if missing_pred:
        raise PairingError(f"missing prediction for: {', '.join(missing_pred)}")
    records = []
    for key in common:
        pred = read_gray(preds[key])
        gt = read_mask(gts[key])
        if pred.shape != gt.shape:
            raise ValueError(f"{key}: prediction {pred.shape} and ground truth {gt.shape} differ in size")
        records.append(evaluate_pair(key, pred, gt, beta2, alpha))
    return MetricReport(records)


def write_report(report: MetricReport, report_path, pr_path) -> None:
    Path(report_path).write_text(report.report_csv())
    Path(pr_path).write_text(report.pr_csv())
