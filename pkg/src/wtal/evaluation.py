"""Classification accuracy and detection mAP@IoU scoring.

Average precision follows the usual temporal-detection protocol: pool a
class's proposals across videos, sort by descending confidence (ties by
earlier start), match each greedily to its best-IoU unmatched ground-truth
instance in the same video, count it a true positive when that IoU clears
the threshold, and sum precision at each true positive divided by the
number of ground-truth instances (raw, non-interpolated). Classes with no
ground truth are excluded from the mAP mean.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dataset import Manifest
from .errors import InputError


@dataclass(frozen=True)
class Instance:
    """A scored (detection) or unscored (ground-truth) temporal interval."""

    video_id: str
    label: int
    t_start: float
    t_end: float
    confidence: float = 1.0


def tiou(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Temporal intersection over union of two (start, end) intervals."""
    (a0, a1), (b0, b1) = a, b
    if not (a0 < a1) or not (b0 < b1):
        raise InputError(f"degenerate segment: {a} vs {b}")
    inter = min(a1, b1) - max(a0, b0)
    if inter <= 0:
        return 0.0
    union = (a1 - a0) + (b1 - b0) - inter
    return inter / union


def average_precision(detections: Sequence[Instance],
                      ground_truth: Sequence[Instance],
                      iou_thr: float) -> float:
    """AP of one class's detections against its ground-truth instances."""
    n_gt = len(ground_truth)
    if n_gt == 0:
        return 0.0
    order = sorted(range(len(detections)),
                   key=lambda i: (-detections[i].confidence,
                                  detections[i].t_start))
    matched = [False] * n_gt
    ap = 0.0
    n_tp = 0
    for rank, i in enumerate(order):
        det = detections[i]
        best_j, best_iou = -1, 0.0
        for j, gt in enumerate(ground_truth):
            if matched[j] or gt.video_id != det.video_id:
                continue
            ov = tiou((det.t_start, det.t_end), (gt.t_start, gt.t_end))
            if ov > best_iou:
                best_j, best_iou = j, ov
        if best_j >= 0 and best_iou >= iou_thr:
            matched[best_j] = True
            n_tp += 1
            ap += n_tp / (rank + 1)
    return ap / n_gt


@dataclass(frozen=True)
class EvalReport:
    thresholds: tuple[float, ...]
    map_per_threshold: tuple[float, ...]
    ap: Mapping[int, tuple[float, ...]]     # class -> AP at each threshold
    evaluated_classes: tuple[int, ...]
    accuracy: Mapping[str, float | None]    # rgb / flow / fused

    @property
    def average_map(self) -> float:
        """Plain mean of mAP over the configured threshold grid."""
        return float(np.mean(self.map_per_threshold))

    def map_at(self, thr: float) -> float:
        for t, v in zip(self.thresholds, self.map_per_threshold):
            if abs(t - thr) < 1e-9:
                return v
        raise InputError(f"threshold {thr} not in the configured grid")


def map_at_iou(detections: Sequence[Instance], ground_truth: Sequence[Instance],
               thresholds: Sequence[float],
               accuracy_by_stream: Mapping[str, float | None] | None = None
               ) -> EvalReport:
    """Per-class AP and mAP at every threshold in the grid."""
    classes = sorted({gt.label for gt in ground_truth})
    det_by_class = {c: [d for d in detections if d.label == c] for c in classes}
    gt_by_class = {c: [g for g in ground_truth if g.label == c] for c in classes}
    ap = {c: tuple(average_precision(det_by_class[c], gt_by_class[c], thr)
                   for thr in thresholds) for c in classes}
    if classes:
        map_per_thr = tuple(float(np.mean([ap[c][k] for c in classes]))
                            for k in range(len(thresholds)))
    else:
        map_per_thr = tuple(0.0 for _ in thresholds)
    return EvalReport(
        thresholds=tuple(float(t) for t in thresholds),
        map_per_threshold=map_per_thr,
        ap=ap,
        evaluated_classes=tuple(classes),
        accuracy=dict(accuracy_by_stream or {"rgb": None, "flow": None, "fused": None}),
    )


def accuracy(predicted: Mapping[str, int], label_sets: Mapping[str, set]) -> float:
    """Fraction of videos whose predicted class is among the true labels."""
    if not label_sets:
        raise InputError("no videos to score")
    correct = 0
    for video_id, labels in label_sets.items():
        if video_id not in predicted:
            raise InputError(f"missing prediction for {video_id}")
        correct += int(predicted[video_id] in labels)
    return correct / len(label_sets)


def ground_truth_instances(manifest: Manifest, split: str) -> list[Instance]:
    """Flatten a split's segment annotations into evaluable instances."""
    out = []
    for rec in manifest.split(split):
        for seg in rec.segments or ():
            out.append(Instance(video_id=rec.video_id, label=seg.label,
                                t_start=seg.t_start, t_end=seg.t_end))
    return out


def instances_from_detections(detections: Sequence[Mapping]) -> list[Instance]:
    """Parse the detect command's output-schema dicts."""
    out = []
    for i, det in enumerate(detections):
        try:
            out.append(Instance(video_id=det["video_id"], label=int(det["class"]),
                                t_start=float(det["t_start"]),
                                t_end=float(det["t_end"]),
                                confidence=float(det["confidence"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed detection entry {i}: {exc}") from exc
    return out


def accuracy_from_predictions(predictions: Sequence[Mapping], manifest: Manifest,
                              split: str) -> dict[str, float]:
    """Per-stream and fused accuracy from the detect command's predictions."""
    label_sets = {rec.video_id: set(rec.labels) for rec in manifest.split(split)}
    out = {}
    for key, field_name in (("rgb", "logits_rgb"), ("flow", "logits_flow"),
                            ("fused", "probs_fused")):
        predicted = {p["video_id"]: int(np.argmax(p[field_name]))
                     for p in predictions}
        out[key] = accuracy(predicted, label_sets)
    return out


# ---------------------------------------------------------------------------
# report artifacts: JSON, CSV, SVG (all byte-deterministic)
# ---------------------------------------------------------------------------


def report_to_json(report: EvalReport, class_names: Sequence[str]) -> str:
    doc = {
        "thresholds": list(report.thresholds),
        "map_per_threshold": list(report.map_per_threshold),
        "average_map": report.average_map,
        "ap_per_class": {class_names[c]: list(report.ap[c])
                         for c in report.evaluated_classes},
        "accuracy": {k: report.accuracy.get(k) for k in ("rgb", "flow", "fused")},
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def report_to_csv(report: EvalReport, class_names: Sequence[str]) -> str:
    lines = ["iou,mAP," + ",".join(class_names[c] for c in report.evaluated_classes)]
    for k, thr in enumerate(report.thresholds):
        cells = [repr(thr), repr(report.map_per_threshold[k])]
        cells += [repr(report.ap[c][k]) for c in report.evaluated_classes]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def report_to_svg(report: EvalReport) -> str:
    """Bar chart of mAP against IoU threshold; plain hand-built SVG."""
    width, height, pad = 640, 400, 50
    inner_w, inner_h = width - 2 * pad, height - 2 * pad
    n = max(1, len(report.thresholds))
    bar_w = inner_w / n * 0.7
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width // 2}" y="{height - 10}" text-anchor="middle" font-size="14">IoU threshold</text>',
        f'<text x="15" y="{height // 2}" text-anchor="middle" font-size="14" transform="rotate(-90 15 {height // 2})">mAP</text>',
    ]
    for k, (thr, val) in enumerate(zip(report.thresholds, report.map_per_threshold)):
        x = pad + inner_w * (k + 0.15) / n
        bar_h = inner_h * val
        y = height - pad - bar_h
        parts.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{bar_w:.2f}" '
                     f'height="{bar_h:.2f}" fill="#4477aa"/>')
        parts.append(f'<text x="{x + bar_w / 2:.2f}" y="{height - pad + 16}" '
                     f'text-anchor="middle" font-size="11">{thr:.2f}</text>')
        parts.append(f'<text x="{x + bar_w / 2:.2f}" y="{max(y - 4, 12):.2f}" '
                     f'text-anchor="middle" font-size="11">{val:.3f}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(report: EvalReport, class_names: Sequence[str],
                json_path: Path) -> list[Path]:
    """Write report.json plus sibling .csv and .svg files."""
    json_path = Path(json_path)
    csv_path = json_path.with_suffix(".csv")
    svg_path = json_path.with_suffix(".svg")
    json_path.write_text(report_to_json(report, class_names))
    csv_path.write_text(report_to_csv(report, class_names))
    svg_path.write_text(report_to_svg(report))
    return [json_path, csv_path, svg_path]
