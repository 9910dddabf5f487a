"""Type-filtered mAP evaluation for lesion instance detections.

Protocol: predictions below the minimum confidence are discarded; when the
type filter is on, each image keeps only predictions of the lesion class
its ground truth actually annotates (source_class_hint). Per image and per
IoU threshold, predictions are greedily matched to ground truth in score
order, the precision-recall curve is integrated with all-point
interpolation, and the dataset mAP at a threshold is the arithmetic mean
of per-image APs. Images with no ground truth are excluded from the mean
rather than scored zero.

Determinism: per-image predictions are put in a canonical order
(score descending, then class id, bbox, mask runs) before matching, so the
report does not depend on how the prediction list was permuted on disk.
``match_detections`` itself breaks score ties by position in the list it
receives.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, UndefinedIoUError, ValidationError
from .instances import VALID_CLASS_IDS, bbox_of, decode_rle
from .dataset import DatasetManifest


@dataclass
class DetectionRecord:
    """A predicted instance: class, confidence, and mask and/or bbox."""

    image_id: str
    class_id: int
    score: float
    bbox: tuple = None
    mask_rle: dict = None

    def validate(self) -> None:
        if self.class_id not in VALID_CLASS_IDS:
            raise ValidationError(f"prediction class_id must be one of {VALID_CLASS_IDS}, "
                                  f"got {self.class_id}")
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"prediction score must be in [0, 1], got {self.score}")
        if self.bbox is None and self.mask_rle is None:
            raise ValidationError("prediction needs a mask, a bbox, or both")
        if self.bbox is not None and self.mask_rle is not None:
            mask = decode_rle(self.mask_rle)
            if mask.any() and tuple(self.bbox) != bbox_of(mask):
                raise ValidationError(
                    f"prediction bbox {tuple(self.bbox)} is not the tight bbox "
                    f"{bbox_of(mask)} of its mask"
                )

    def decode_mask(self) -> np.ndarray:
        if self.mask_rle is None:
            raise ValidationError("prediction has no mask (needed for mask IoU)")
        return decode_rle(self.mask_rle)

    def effective_bbox(self) -> tuple:
        if self.bbox is not None:
            return tuple(self.bbox)
        mask = decode_rle(self.mask_rle)
        if not mask.any():
            return None
        return bbox_of(mask)

    def to_json_dict(self) -> dict:
        d = {"image_id": self.image_id, "class_id": self.class_id, "score": self.score}
        if self.bbox is not None:
            d["bbox"] = list(self.bbox)
        if self.mask_rle is not None:
            d["mask_rle"] = {"size": list(self.mask_rle["size"]),
                             "counts": list(self.mask_rle["counts"])}
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "DetectionRecord":
        try:
            rec = cls(
                image_id=str(d["image_id"]),
                class_id=int(d["class_id"]),
                score=float(d["score"]),
                bbox=tuple(int(v) for v in d["bbox"]) if "bbox" in d else None,
                mask_rle={"size": [int(v) for v in d["mask_rle"]["size"]],
                          "counts": [int(c) for c in d["mask_rle"]["counts"]]}
                if "mask_rle" in d else None,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad detection object: {exc}") from exc
        rec.validate()
        return rec


DEFAULT_THRESHOLDS = (0.35, 0.50, 0.75)


@dataclass(frozen=True)
class EvalConfig:
    thresholds: tuple = DEFAULT_THRESHOLDS
    iou_mode: str = "mask"
    min_score: float = 0.35
    apply_type_filter: bool = True

    def __post_init__(self):
        ts = tuple(self.thresholds)
        if not ts or any(not 0.0 < t <= 1.0 for t in ts):
            raise ValidationError(f"thresholds must lie in (0, 1], got {ts}")
        if list(ts) != sorted(ts):
            raise ValidationError(f"thresholds must be sorted ascending, got {ts}")
        if self.iou_mode not in ("mask", "bbox"):
            raise ValidationError(f"iou_mode must be 'mask' or 'bbox', got {self.iou_mode!r}")
        if not 0.0 <= self.min_score <= 1.0:
            raise ValidationError(f"min_score must be in [0, 1], got {self.min_score}")
        object.__setattr__(self, "thresholds", ts)

    def to_json_dict(self) -> dict:
        return {
            "thresholds": list(self.thresholds),
            "iou_mode": self.iou_mode,
            "min_score": self.min_score,
            "apply_type_filter": self.apply_type_filter,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "EvalConfig":
        if not isinstance(d, dict):
            raise ParseError("eval config must be a JSON object")
        known = {"thresholds", "iou_mode", "min_score", "apply_type_filter"}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown eval config fields: {sorted(unknown)}")
        kwargs = dict(d)
        if "thresholds" in kwargs:
            kwargs["thresholds"] = tuple(float(t) for t in kwargs["thresholds"])
        return cls(**kwargs)


def threshold_key(t: float) -> str:
    return f"{t:g}"


@dataclass
class EvalReport:
    """Per-image APs, dataset mAPs, per-class breakdown, and match counts."""

    per_image: dict      # image_id -> {threshold_key: AP}
    map_per_threshold: dict  # threshold_key -> mAP
    per_class: dict      # str(class_id) -> {threshold_key: mAP over images with that class}
    counts: dict         # threshold_key -> {"tp": int, "fp": int, "fn": int}

    def to_json_dict(self) -> dict:
        return {
            "per_image": self.per_image,
            "map_per_threshold": self.map_per_threshold,
            "per_class": self.per_class,
            "counts": self.counts,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "EvalReport":
        try:
            return cls(per_image=d["per_image"], map_per_threshold=d["map_per_threshold"],
                       per_class=d["per_class"], counts=d["counts"])
        except KeyError as exc:
            raise ParseError(f"bad eval report object: {exc}") from exc


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Pixel intersection over union; undefined (raises) for two empty masks."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = int(np.count_nonzero(a | b))
    if union == 0:
        raise UndefinedIoUError("IoU of two empty masks is undefined")
    inter = int(np.count_nonzero(a & b))
    return inter / union


def bbox_iou(a, b) -> float:
    """Rectangle intersection over union for (x, y, w, h) boxes."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    if aw < 1 or ah < 1 or bw < 1 or bh < 1:
        raise ValueError(f"boxes need w, h >= 1, got {a} and {b}")
    ix = max(0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    return inter / (aw * ah + bw * bh - inter)


def filter_by_annotated_type(preds, hint: int):
    """Keep only predictions of the class the image's ground truth annotates."""
    return [p for p in preds if p.class_id == hint]


@dataclass
class MatchResult:
    order: list     # prediction indices sorted by (score desc, input position)
    is_tp: list     # aligned with ``order``
    matched_gt: list  # gt index or None, aligned with ``order``
    n_gt: int

    @property
    def tp(self) -> int:
        return sum(self.is_tp)

    @property
    def fp(self) -> int:
        return len(self.is_tp) - self.tp

    @property
    def fn(self) -> int:
        return self.n_gt - self.tp


def match_detections(preds, gts, iou_threshold: float, iou_mode: str = "mask") -> MatchResult:
    """Greedy score-ordered matching of predictions to same-class ground truth.

    Each prediction claims the unmatched ground truth of its class with the
    highest IoU, provided that IoU reaches the threshold; score ties keep
    input order, IoU ties take the lowest ground-truth index.
    """
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].score, i))
    taken = [False] * len(gts)
    is_tp = []
    matched_gt = []
    if iou_mode == "mask":
        gt_masks = [gt.decode_mask() for gt in gts]
        pred_masks: dict = {}
    for i in order:
        pred = preds[i]
        if iou_mode == "mask" and i not in pred_masks:
            pred_masks[i] = pred.decode_mask()
        best_iou = 0.0
        best_j = None
        for j, gt in enumerate(gts):
            if taken[j] or gt.class_id != pred.class_id:
                continue
            if iou_mode == "bbox":
                pb = pred.effective_bbox()
                iou = bbox_iou(pb, gt.bbox) if pb is not None else 0.0
            elif not pred_masks[i].any():
                iou = 0.0
            else:
                iou = mask_iou(pred_masks[i], gt_masks[j])
            if iou > best_iou:
                best_iou = iou
                best_j = j
        if best_j is not None and best_iou >= iou_threshold:
            taken[best_j] = True
            is_tp.append(True)
            matched_gt.append(best_j)
        else:
            is_tp.append(False)
            matched_gt.append(None)
    return MatchResult(order=order, is_tp=is_tp, matched_gt=matched_gt, n_gt=len(gts))


def average_precision(preds, gts, iou_threshold: float, iou_mode: str = "mask") -> float:
    """All-point interpolated AP for one image at one IoU threshold."""
    if not gts:
        raise ValueError("average_precision needs ground truth; exclude this image upstream")
    if not preds:
        return 0.0
    match = match_detections(preds, gts, iou_threshold, iou_mode)
    return _ap_from_flags(match.is_tp, match.n_gt)


def _ap_from_flags(is_tp, n_gt: int) -> float:
    flags = np.asarray(is_tp, dtype=bool)
    if flags.size == 0:
        return 0.0
    cum_tp = np.cumsum(flags)
    precision = cum_tp / np.arange(1, flags.size + 1)
    # all-point interpolation: precision at recall r is the best precision
    # achieved at any recall >= r
    interp = np.maximum.accumulate(precision[::-1])[::-1]
    return float(interp[flags].sum() / n_gt)


def _canonical_pred_key(pred: DetectionRecord):
    bbox = pred.effective_bbox() or ()
    counts = tuple(pred.mask_rle["counts"]) if pred.mask_rle is not None else ()
    return (-pred.score, pred.class_id, bbox, counts)


def evaluate_dataset(manifest: DatasetManifest, predictions, cfg: EvalConfig = EvalConfig()) -> EvalReport:
    """Score a prediction set against a manifest; see module docstring."""
    manifest.validate()
    known_ids = {img.image_id for img in manifest.images}
    for pred in predictions:
        if pred.image_id not in known_ids:
            raise ValidationError(f"prediction references missing image id {pred.image_id!r}")

    preds_by_image: dict = {img.image_id: [] for img in manifest.images}
    for pred in predictions:
        preds_by_image[pred.image_id].append(pred)
    for image_id in preds_by_image:
        preds_by_image[image_id].sort(key=_canonical_pred_key)

    anns_by_image: dict = {img.image_id: [] for img in manifest.images}
    for ann in manifest.annotations:
        anns_by_image[ann.image_id].append(ann)

    keys = [threshold_key(t) for t in cfg.thresholds]
    per_image: dict = {}
    counts = {k: {"tp": 0, "fp": 0, "fn": 0} for k in keys}
    per_class_aps: dict = {str(c): {k: [] for k in keys} for c in VALID_CLASS_IDS}

    for img in manifest.images:
        gts = anns_by_image[img.image_id]
        if not gts:
            continue  # no ground truth: excluded, not scored zero
        preds = [p for p in preds_by_image[img.image_id] if p.score >= cfg.min_score]
        if cfg.apply_type_filter:
            preds = filter_by_annotated_type(preds, img.source_class_hint)
        image_aps = {}
        for t, k in zip(cfg.thresholds, keys):
            match = match_detections(preds, gts, t, cfg.iou_mode)
            image_aps[k] = _ap_from_flags(match.is_tp, match.n_gt)
            counts[k]["tp"] += match.tp
            counts[k]["fp"] += match.fp
            counts[k]["fn"] += match.fn
        per_image[img.image_id] = image_aps
        for c in VALID_CLASS_IDS:
            class_gts = [g for g in gts if g.class_id == c]
            if not class_gts:
                continue
            class_preds = [p for p in preds if p.class_id == c]
            for t, k in zip(cfg.thresholds, keys):
                m = match_detections(class_preds, class_gts, t, cfg.iou_mode)
                per_class_aps[str(c)][k].append(_ap_from_flags(m.is_tp, m.n_gt))

    map_per_threshold = {
        k: (float(np.mean([aps[k] for aps in per_image.values()])) if per_image else 0.0)
        for k in keys
    }
    per_class = {
        c: {k: (float(np.mean(v)) if v else 0.0) for k, v in by_thr.items()}
        for c, by_thr in per_class_aps.items()
    }
    return EvalReport(per_image=per_image, map_per_threshold=map_per_threshold,
                      per_class=per_class, counts=counts)


def read_predictions(path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON in {path}: {exc}") from exc
    if not isinstance(doc, list):
        raise ParseError(f"{path} must contain a JSON list of detections")
    return [DetectionRecord.from_json_dict(d) for d in doc]


def write_predictions(preds, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps([p.to_json_dict() for p in preds], indent=2) + "\n",
                    encoding="utf-8")


def write_report_csv(rows, thresholds, path) -> None:
    """Delimited mAP summary, one row per split: split, mAP per threshold."""
    header = "split," + ",".join(f"mAP{int(round(t * 100))}" for t in thresholds)
    lines = [header]
    for split, report in rows:
        values = [report.map_per_threshold[threshold_key(t)] for t in thresholds]
        lines.append(split + "," + ",".join(f"{v:.4f}" for v in values))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
