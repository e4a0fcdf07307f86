"""Detection-log evaluation: precision/recall/F1, ID switches, breakdowns.

Matching is greedy per frame: detections in descending confidence order each
take the unmatched truth box of highest IoU at or above the threshold.  This
is the standard detection-benchmark convention (not globally optimal), chosen
for simplicity and reproducibility.  Empty-set conventions, documented here
once: no detections at all gives precision 1, no truth gives recall 1.
"""

from dataclasses import dataclass, field

import yaml

from .dsp import format_float
from .errors import DataError
from .fusion import (PROVENANCE_IMAGE, PROVENANCE_RADAR, PROVENANCE_RECOVERED)
from .pipeline import DetectionLog

REPORT_SCHEMA_VERSION = 1

LIGHTING_BUCKETS = ((0.0, 0.2), (0.2, 0.4), (0.4, 0.6), (0.6, 0.8), (0.8, 1.0))

_PROVENANCES = (PROVENANCE_IMAGE, PROVENANCE_RADAR, PROVENANCE_RECOVERED)


def _bucket_label(lo: float, hi: float) -> str:
    return f"{lo:.1f}-{hi:.1f}"


def _bucket_of(lighting: float) -> str:
    for lo, hi in LIGHTING_BUCKETS:
        if lighting < hi or (hi == 1.0 and lighting <= 1.0):
            return _bucket_label(lo, hi)
    return _bucket_label(*LIGHTING_BUCKETS[-1])


@dataclass
class EvalReport:
    iou_thresh: float
    frames: int
    tp: int = 0
    fp: int = 0
    fn: int = 0
    id_switches: int = 0
    provenance_tp: dict = field(default_factory=dict)
    provenance_fp: dict = field(default_factory=dict)
    lighting_recall: dict = field(default_factory=dict)

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 1.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 1.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2.0 * p * r / (p + r) if p + r else 0.0

    def validate(self) -> None:
        for name in ("tp", "fp", "fn", "id_switches"):
            if getattr(self, name) < 0:
                raise DataError(f"{name} must be >= 0")
        for value in (self.precision, self.recall, self.f1):
            if not 0.0 <= value <= 1.0:
                raise DataError("metrics must lie in [0, 1]")


def evaluate(log: DetectionLog, iou_thresh: float = 0.5) -> EvalReport:
    log.validate()
    report = EvalReport(iou_thresh=iou_thresh, frames=len(log.frames))
    report.provenance_tp = {p: 0 for p in _PROVENANCES}
    report.provenance_fp = {p: 0 for p in _PROVENANCES}
    bucket_tp = {_bucket_label(lo, hi): 0 for lo, hi in LIGHTING_BUCKETS}
    bucket_total = dict.fromkeys(bucket_tp, 0)
    last_identity: dict[int, int] = {}

    for rec in log.frames:
        bucket = _bucket_of(rec.lighting)
        bucket_total[bucket] += len(rec.truth)
        order = sorted(range(len(rec.detections)),
                       key=lambda i: (-rec.detections[i].q, i))
        unmatched = list(range(len(rec.truth)))
        for i in order:
            det = rec.detections[i]
            best_j, best_iou = None, iou_thresh
            for j in unmatched:
                iou = det.box.iou(rec.truth[j].box)
                if iou >= best_iou:
                    best_j, best_iou = j, iou
            if best_j is None:
                report.fp += 1
                report.provenance_fp[det.provenance] = (
                    report.provenance_fp.get(det.provenance, 0) + 1)
                continue
            unmatched.remove(best_j)
            report.tp += 1
            report.provenance_tp[det.provenance] = (
                report.provenance_tp.get(det.provenance, 0) + 1)
            bucket_tp[bucket] += 1
            target = rec.truth[best_j].target_id
            if det.identity >= 0:
                prev = last_identity.get(target)
                if prev is not None and prev != det.identity:
                    report.id_switches += 1
                last_identity[target] = det.identity
        report.fn += len(unmatched)

    report.lighting_recall = {
        name: (bucket_tp[name] / bucket_total[name]) if bucket_total[name]
        else None
        for name in bucket_tp
    }
    report.validate()
    return report


# --- report files ------------------------------------------------------------


def format_report_text(report: EvalReport) -> str:
    lines = [
        f"# fusedet eval report schema_version={REPORT_SCHEMA_VERSION}",
        f"frames: {report.frames}",
        f"iou_thresh: {format_float(report.iou_thresh)}",
        f"tp: {report.tp}",
        f"fp: {report.fp}",
        f"fn: {report.fn}",
        f"precision: {report.precision:.4f}",
        f"recall: {report.recall:.4f}",
        f"f1: {report.f1:.4f}",
        f"id_switches: {report.id_switches}",
        "provenance (tp/fp):",
    ]
    for name in _PROVENANCES:
        lines.append(f"  {name}: {report.provenance_tp.get(name, 0)}"
                     f"/{report.provenance_fp.get(name, 0)}")
    lines.append("lighting recall:")
    for name, value in report.lighting_recall.items():
        shown = "n/a" if value is None else f"{value:.4f}"
        lines.append(f"  {name}: {shown}")
    return "\n".join(lines) + "\n"


def save_report_yaml(path, report: EvalReport) -> None:
    doc = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "frames": report.frames,
        "iou_thresh": float(report.iou_thresh),
        "tp": report.tp,
        "fp": report.fp,
        "fn": report.fn,
        "precision": float(report.precision),
        "recall": float(report.recall),
        "f1": float(report.f1),
        "id_switches": report.id_switches,
        "provenance_tp": dict(report.provenance_tp),
        "provenance_fp": dict(report.provenance_fp),
        "lighting_recall": dict(report.lighting_recall),
    }
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def load_report_yaml(path) -> EvalReport:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict) or doc.get(
            "schema_version") != REPORT_SCHEMA_VERSION:
        raise DataError(f"{path}: not a fusedet eval report")
    report = EvalReport(
        iou_thresh=float(doc["iou_thresh"]), frames=int(doc["frames"]),
        tp=int(doc["tp"]), fp=int(doc["fp"]), fn=int(doc["fn"]),
        id_switches=int(doc["id_switches"]),
        provenance_tp=dict(doc.get("provenance_tp", {})),
        provenance_fp=dict(doc.get("provenance_fp", {})),
        lighting_recall=dict(doc.get("lighting_recall", {})),
    )
    report.validate()
    return report
