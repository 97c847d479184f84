"""Evaluation metrics: IoU, NoC@q%, IoU@k, and class-agnostic instance AP."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

DEFAULT_CLICK_CAP = 20
AP_THRESHOLDS = tuple(np.round(np.arange(0.50, 0.96, 0.05), 2))
NOC_QUALITIES = (80, 85, 90)


@dataclass(frozen=True)
class ClickCurve:
    """IoU after each click of one instance's session."""

    ious: tuple[float, ...]
    instance_id: int = 0
    scene_id: str = ""
    class_id: int | None = None

    def __post_init__(self):
        if len(self.ious) < 1:
            raise ValueError("click curve must have at least one entry")
        if any(v < 0.0 or v > 1.0 for v in self.ious):
            raise ValueError("IoU values must lie in [0, 1]")


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two binary masks; 1.0 when both empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def noc(curve: ClickCurve, q: float, cap: int = DEFAULT_CLICK_CAP) -> int:
    """Smallest click count reaching q% IoU, or cap if never reached."""
    if not 0 < q <= 100:
        raise ValueError(f"q must be in (0, 100], got {q}")
    target = q / 100.0
    for k, v in enumerate(curve.ious[:cap], start=1):
        if v >= target:
            return k
    return cap


def iou_at_k(curves: list[ClickCurve], k: int) -> float:
    """Mean IoU after k clicks; finished sessions hold their last value."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not curves:
        raise ValueError("no curves to average")
    return float(np.mean([c.ious[min(k, len(c.ious)) - 1] for c in curves]))


def _pr_auc(tp_flags: np.ndarray, n_gt: int) -> float:
    """Area under the recall-monotonicized precision curve."""
    tp = np.cumsum(tp_flags)
    fp = np.cumsum(~tp_flags)
    recall = tp / n_gt
    precision = tp / (tp + fp)
    # precision envelope from the right, integrated over recall steps
    prec_env = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = 0.0
    area = 0.0
    for r, p in zip(recall, prec_env):
        area += (r - prev_r) * p
        prev_r = r
    return float(area)


def _greedy_match(order: np.ndarray, iou_matrix: np.ndarray, threshold: float) -> np.ndarray:
    """TP flags in confidence order under greedy best-IoU matching."""
    n_gt = iou_matrix.shape[1]
    taken = np.zeros(n_gt, dtype=bool)
    flags = np.zeros(len(order), dtype=bool)
    for rank, pi in enumerate(order):
        row = iou_matrix[pi].copy()
        row[taken] = -1.0
        gi = int(np.argmax(row))
        if row[gi] >= threshold:
            taken[gi] = True
            flags[rank] = True
    return flags


def pairwise_iou(pred_masks: list[np.ndarray], gt_masks: list[np.ndarray]) -> np.ndarray:
    """IoU matrix between prediction and ground-truth masks on one cloud."""
    m = np.zeros((len(pred_masks), len(gt_masks)))
    for i, p in enumerate(pred_masks):
        for j, g in enumerate(gt_masks):
            m[i, j] = iou(p, g)
    return m


def instance_ap(predictions: list[tuple[np.ndarray, float]],
                gts: list[np.ndarray],
                thresholds=AP_THRESHOLDS,
                iou_matrix: np.ndarray | None = None) -> dict:
    """Class-agnostic instance AP: {'ap', 'ap50', 'ap25'}.

    ap averages over `thresholds`; ap50/ap25 use fixed 0.5/0.25. With
    zero ground truths the values are None (undefined, not zero).
    Pass a precomputed iou_matrix to match across disjoint clouds.
    """
    if not gts:
        return {"ap": None, "ap50": None, "ap25": None}
    confidences = np.array([c for _, c in predictions], dtype=np.float64)
    if not np.isfinite(confidences).all():
        raise ValueError("confidences must be finite")
    if iou_matrix is None:
        iou_matrix = pairwise_iou([m for m, _ in predictions], gts)
    if not predictions:
        return {"ap": 0.0, "ap50": 0.0, "ap25": 0.0}
    order = np.lexsort((np.arange(len(predictions)), -confidences))

    def ap_at(thr: float) -> float:
        return _pr_auc(_greedy_match(order, iou_matrix, thr), len(gts))

    return {
        "ap": float(np.mean([ap_at(t) for t in thresholds])),
        "ap50": ap_at(0.5),
        "ap25": ap_at(0.25),
    }


@dataclass
class MetricsReport:
    noc: dict[int, float]                 # q -> mean clicks
    iou_at_k: dict[int, float]            # k -> mean IoU
    ap: float | None = None
    ap50: float | None = None
    ap25: float | None = None
    n_instances: int = 0
    per_class: dict[int, "MetricsReport"] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "noc": {str(q): v for q, v in sorted(self.noc.items())},
            "iou_at_k": {str(k): v for k, v in sorted(self.iou_at_k.items())},
            "ap": self.ap, "ap50": self.ap50, "ap25": self.ap25,
            "n_instances": self.n_instances,
        }
        if self.per_class:
            out["per_class"] = {str(c): r.to_dict() for c, r in sorted(self.per_class.items())}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        """One row per (class, metric): class '' is the overall aggregate."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "metric", "value"])

        def rows(tag, rep):
            for q, v in sorted(rep.noc.items()):
                w.writerow([tag, f"noc@{q}", f"{v:.6f}"])
            for k, v in sorted(rep.iou_at_k.items()):
                w.writerow([tag, f"iou@{k}", f"{v:.6f}"])
            for name in ("ap", "ap50", "ap25"):
                v = getattr(rep, name)
                w.writerow([tag, name, "" if v is None else f"{v:.6f}"])
            w.writerow([tag, "n_instances", rep.n_instances])

        rows("", self)
        for c, rep in sorted(self.per_class.items()):
            rows(str(c), rep)
        return buf.getvalue()


def aggregate(curves: list[ClickCurve],
              qualities=NOC_QUALITIES,
              ks: tuple[int, ...] = tuple(range(1, DEFAULT_CLICK_CAP + 1)),
              cap: int = DEFAULT_CLICK_CAP,
              ap_values: dict | None = None,
              per_class: bool = False) -> MetricsReport:
    """Mean NoC and IoU@k over instances, optionally grouped by class id."""
    if not curves:
        raise ValueError("no curves to aggregate")

    def build(cs: list[ClickCurve]) -> MetricsReport:
        return MetricsReport(
            noc={q: float(np.mean([noc(c, q, cap) for c in cs])) for q in qualities},
            iou_at_k={k: iou_at_k(cs, k) for k in ks},
            n_instances=len(cs),
        )

    report = build(curves)
    if ap_values:
        report.ap = ap_values.get("ap")
        report.ap50 = ap_values.get("ap50")
        report.ap25 = ap_values.get("ap25")
    if per_class:
        classes = sorted({c.class_id for c in curves if c.class_id is not None})
        for cls in classes:
            report.per_class[cls] = build([c for c in curves if c.class_id == cls])
    return report
