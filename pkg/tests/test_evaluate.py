import numpy as np
import pytest

from funduskit.dataset import DatasetManifest, ImageEntry
from funduskit.errors import UndefinedIoUError, ValidationError
from funduskit.evaluate import (DetectionRecord, EvalConfig, average_precision, bbox_iou,
                                evaluate_dataset, filter_by_annotated_type, mask_iou,
                                match_detections, read_predictions, threshold_key,
                                write_predictions)
from funduskit.instances import InstanceAnnotation, bbox_of, build_annotations, encode_rle

from oracles import ap_by_prefix_enumeration, naive_evaluate, rect_iou, set_iou


def strip_mask(h, w, x0, x1):
    mask = np.zeros((h, w), dtype=bool)
    mask[:, x0:x1] = True
    return mask


def ann_from_mask(mask, class_id=1, image_id="im", instance_id=1):
    return InstanceAnnotation(instance_id=instance_id, image_id=image_id, class_id=class_id,
                              mask_rle=encode_rle(mask), bbox=bbox_of(mask),
                              area=int(mask.sum()))


def det_from_mask(mask, score, class_id=1, image_id="im"):
    return DetectionRecord(image_id=image_id, class_id=class_id, score=score,
                           bbox=bbox_of(mask), mask_rle=encode_rle(mask))


# -------------------------------------------------------------------------- IoU

def test_identical_masks_iou_one():
    mask = strip_mask(10, 10, 2, 7)
    assert mask_iou(mask, mask) == 1.0


def test_disjoint_masks_iou_zero():
    assert mask_iou(strip_mask(10, 10, 0, 3), strip_mask(10, 10, 5, 8)) == 0.0


def test_shifted_square_iou_third():
    a = np.zeros((20, 30), dtype=bool)
    a[0:10, 0:10] = True
    b = np.zeros((20, 30), dtype=bool)
    b[0:10, 5:15] = True
    iou = mask_iou(a, b)
    assert iou == 50 / 150
    assert abs(iou - 1 / 3) < 1e-12


def test_both_empty_masks_raise():
    empty = np.zeros((5, 5), dtype=bool)
    with pytest.raises(UndefinedIoUError):
        mask_iou(empty, empty)


def test_mask_iou_shape_mismatch():
    with pytest.raises(ValueError):
        mask_iou(np.zeros((4, 4), dtype=bool), np.zeros((4, 5), dtype=bool))


def test_mask_iou_matches_set_oracle_and_is_symmetric():
    rng = np.random.default_rng(12)
    for _ in range(60):
        a = rng.random((24, 24)) < 0.3
        b = rng.random((24, 24)) < 0.3
        if not (a | b).any():
            continue
        expected = set_iou(a, b)
        assert abs(mask_iou(a, b) - expected) < 1e-12
        assert mask_iou(a, b) == mask_iou(b, a)


def test_bbox_iou_same_shapes_as_masks():
    a = (0, 0, 10, 10)
    b = (5, 0, 10, 10)
    assert abs(bbox_iou(a, b) - 50 / 150) < 1e-12
    assert bbox_iou(a, a) == 1.0
    assert bbox_iou((0, 0, 3, 3), (10, 10, 3, 3)) == 0.0
    rng = np.random.default_rng(3)
    for _ in range(30):
        ra = tuple(int(v) for v in (rng.integers(0, 10), rng.integers(0, 10),
                                    rng.integers(1, 8), rng.integers(1, 8)))
        rb = tuple(int(v) for v in (rng.integers(0, 10), rng.integers(0, 10),
                                    rng.integers(1, 8), rng.integers(1, 8)))
        assert abs(bbox_iou(ra, rb) - rect_iou(ra, rb)) < 1e-12


def test_bbox_iou_rejects_degenerate():
    with pytest.raises(ValueError):
        bbox_iou((0, 0, 0, 3), (0, 0, 2, 2))


# ------------------------------------------------------------------- type filter

def test_filter_keeps_matching_class():
    preds = [det_from_mask(strip_mask(4, 4, 0, 2), 0.9, class_id=c) for c in (1, 2, 1)]
    kept = filter_by_annotated_type(preds, 1)
    assert len(kept) == 2 and all(p.class_id == 1 for p in kept)
    assert filter_by_annotated_type(preds, 2) == [preds[1]]


def test_filter_can_empty_the_list():
    preds = [det_from_mask(strip_mask(4, 4, 0, 2), 0.9, class_id=1)]
    assert filter_by_annotated_type(preds, 2) == []


def test_filter_matches_linear_scan_oracle():
    rng = np.random.default_rng(7)
    preds = [det_from_mask(strip_mask(4, 4, 0, 2), float(rng.random()),
                           class_id=int(rng.integers(1, 3))) for _ in range(10)]
    kept = filter_by_annotated_type(preds, 2)
    assert kept == [p for p in preds if p.class_id == 2]  # order and scores preserved


# ---------------------------------------------------------------------- matching

def masks_with_iou_06():
    # |a| = |b| = 8 strips overlapping on 6 columns: 6 / 10 = 0.6
    a = strip_mask(1, 12, 0, 8)
    b = strip_mask(1, 12, 2, 10)
    assert abs(mask_iou(a, b) - 0.6) < 1e-12
    return a, b


def test_single_pair_threshold_straddle():
    gt_mask, pred_mask = masks_with_iou_06()
    gts = [ann_from_mask(gt_mask)]
    preds = [det_from_mask(pred_mask, 0.9)]
    low = match_detections(preds, gts, 0.5)
    assert (low.tp, low.fp, low.fn) == (1, 0, 0)
    high = match_detections(preds, gts, 0.75)
    assert (high.tp, high.fp, high.fn) == (0, 1, 1)


def test_one_gt_two_preds_higher_score_wins():
    mask = strip_mask(6, 6, 1, 5)
    gts = [ann_from_mask(mask)]
    preds = [det_from_mask(mask, 0.6), det_from_mask(mask, 0.8)]
    result = match_detections(preds, gts, 0.5)
    assert result.order == [1, 0]  # score 0.8 first
    assert result.is_tp == [True, False]


def test_no_preds_two_gts_all_fn():
    gts = [ann_from_mask(strip_mask(6, 6, 0, 2), instance_id=1),
           ann_from_mask(strip_mask(6, 6, 4, 6), instance_id=2)]
    result = match_detections([], gts, 0.5)
    assert (result.tp, result.fp, result.fn) == (0, 0, 2)


def test_matching_is_class_aware():
    mask = strip_mask(6, 6, 1, 5)
    gts = [ann_from_mask(mask, class_id=1)]
    preds = [det_from_mask(mask, 0.9, class_id=2)]
    result = match_detections(preds, gts, 0.5)
    assert (result.tp, result.fp, result.fn) == (0, 1, 1)


# ---------------------------------------------------------------------------- AP

def test_perfect_predictions_ap_one():
    masks = [strip_mask(8, 8, 0, 3), strip_mask(8, 8, 5, 8)]
    gts = [ann_from_mask(m, instance_id=i + 1) for i, m in enumerate(masks)]
    preds = [det_from_mask(m, 1.0) for m in masks]
    assert average_precision(preds, gts, 0.5) == 1.0


def test_no_predictions_ap_zero():
    gts = [ann_from_mask(strip_mask(8, 8, 0, 3))]
    assert average_precision([], gts, 0.5) == 0.0


def test_tp_fp_tp_sequence_ap():
    m1 = strip_mask(8, 16, 0, 4)
    m2 = strip_mask(8, 16, 10, 14)
    far = strip_mask(8, 16, 6, 8)
    gts = [ann_from_mask(m1, instance_id=1), ann_from_mask(m2, instance_id=2)]
    preds = [det_from_mask(m1, 0.9), det_from_mask(far, 0.8), det_from_mask(m2, 0.7)]
    ap = average_precision(preds, gts, 0.5)
    assert abs(ap - (1.0 * 0.5 + (2 / 3) * 0.5)) < 1e-9
    assert abs(ap - ap_by_prefix_enumeration([True, False, True], 2)) < 1e-12


def test_empty_gt_raises():
    with pytest.raises(ValueError):
        average_precision([det_from_mask(strip_mask(4, 4, 0, 2), 0.9)], [], 0.5)


def test_duplicate_tp_never_increases_ap():
    rng = np.random.default_rng(19)
    for _ in range(10):
        masks = [strip_mask(10, 30, 3 * i, 3 * i + 2) for i in range(4)]
        gts = [ann_from_mask(m, instance_id=i + 1) for i, m in enumerate(masks)]
        preds = [det_from_mask(m, float(rng.uniform(0.5, 1.0))) for m in masks[:3]]
        base = average_precision(preds, gts, 0.5)
        dup = preds + [det_from_mask(masks[0], float(rng.uniform(0.1, 0.5)))]
        assert average_precision(dup, gts, 0.5) <= base + 1e-12


def test_ap_monotone_in_threshold():
    gt_mask, pred_mask = masks_with_iou_06()
    gts = [ann_from_mask(gt_mask)]
    preds = [det_from_mask(pred_mask, 0.9)]
    aps = [average_precision(preds, gts, t) for t in (0.35, 0.5, 0.75)]
    assert aps[0] >= aps[1] >= aps[2]


# -------------------------------------------------------------- evaluate_dataset

def tiny_manifest():
    images = []
    annotations = []
    rng = np.random.default_rng(55)
    for i in range(5):
        image_id = f"im{i}"
        hint = 1 if i % 2 == 0 else 2
        images.append(ImageEntry(image_id, f"images/{image_id}.png", 32, 32, hint, "train"))
        mask = np.zeros((32, 32), dtype=bool)
        for b in range(int(rng.integers(1, 4))):
            y = int(rng.integers(2, 26))
            x = int(rng.integers(2, 26))
            mask[y:y + 3, x:x + 3] = True
        annotations.extend(build_annotations(mask, hint, image_id))
    return DatasetManifest(images=images, annotations=annotations)


def gt_as_predictions(manifest, score=1.0):
    return [DetectionRecord(image_id=a.image_id, class_id=a.class_id, score=score,
                            bbox=a.bbox, mask_rle=a.mask_rle)
            for a in manifest.annotations]


def test_gt_fed_back_gives_map_one():
    manifest = tiny_manifest()
    report = evaluate_dataset(manifest, gt_as_predictions(manifest))
    for t in (0.35, 0.5, 0.75):
        assert report.map_per_threshold[threshold_key(t)] == 1.0


def test_empty_predictions_give_map_zero():
    report = evaluate_dataset(tiny_manifest(), [])
    assert all(v == 0.0 for v in report.map_per_threshold.values())


def test_report_invariant_map_is_mean_of_per_image():
    manifest = tiny_manifest()
    preds = gt_as_predictions(manifest)[::2]  # drop half
    report = evaluate_dataset(manifest, preds)
    for key, value in report.map_per_threshold.items():
        mean = np.mean([aps[key] for aps in report.per_image.values()])
        assert abs(value - mean) < 1e-12
        assert 0.0 <= value <= 1.0


def test_dataset_eval_matches_naive_oracle():
    manifest = tiny_manifest()
    rng = np.random.default_rng(77)
    preds = []
    for ann in manifest.annotations:
        if rng.random() < 0.3:
            continue  # dropped detection
        mask = ann.decode_mask()
        if rng.random() < 0.5:  # shift to damage IoU
            mask = np.roll(mask, (int(rng.integers(0, 3)), int(rng.integers(0, 3))), (0, 1))
        preds.append(det_from_mask(mask, float(rng.uniform(0.4, 1.0)),
                                   class_id=ann.class_id, image_id=ann.image_id))
    for _ in range(3):  # spurious of both classes
        mask = np.zeros((32, 32), dtype=bool)
        y, x = int(rng.integers(0, 28)), int(rng.integers(0, 28))
        mask[y:y + 3, x:x + 3] = True
        preds.append(det_from_mask(mask, float(rng.uniform(0.4, 1.0)),
                                   class_id=int(rng.integers(1, 3)),
                                   image_id=f"im{int(rng.integers(0, 5))}"))
    cfg = EvalConfig()
    report = evaluate_dataset(manifest, preds, cfg)
    expected = naive_evaluate(manifest, preds, cfg.thresholds, cfg.min_score,
                              apply_type_filter=True)
    for t in cfg.thresholds:
        assert abs(report.map_per_threshold[threshold_key(t)] - expected[t]) < 1e-9


def test_eval_deterministic_under_prediction_permutation():
    manifest = tiny_manifest()
    rng = np.random.default_rng(88)
    preds = gt_as_predictions(manifest, score=0.8)
    # inject score ties with distinct geometry
    extra = []
    for ann in manifest.annotations[:3]:
        mask = np.roll(ann.decode_mask(), 1, axis=1)
        extra.append(det_from_mask(mask, 0.8, class_id=ann.class_id, image_id=ann.image_id))
    preds = preds + extra
    base = evaluate_dataset(manifest, preds)
    for _ in range(5):
        shuffled = list(preds)
        rng.shuffle(shuffled)
        report = evaluate_dataset(manifest, shuffled)
        assert report.map_per_threshold == base.map_per_threshold
        assert report.per_image == base.per_image
        assert report.counts == base.counts


def test_type_filter_drops_off_class_predictions():
    manifest = tiny_manifest()
    preds = gt_as_predictions(manifest, score=0.9)
    # wrong-class duplicates that outrank every true prediction; with the
    # filter on they vanish, without it they are leading false positives
    wrong = [DetectionRecord(image_id=p.image_id, class_id=3 - p.class_id, score=1.0,
                             bbox=p.bbox, mask_rle=p.mask_rle) for p in preds]
    filtered = evaluate_dataset(manifest, preds + wrong, EvalConfig(apply_type_filter=True))
    clean = evaluate_dataset(manifest, preds, EvalConfig(apply_type_filter=True))
    assert filtered.map_per_threshold == clean.map_per_threshold
    unfiltered = evaluate_dataset(manifest, preds + wrong, EvalConfig(apply_type_filter=False))
    assert unfiltered.map_per_threshold[threshold_key(0.5)] < 1.0


def test_min_score_filter_applies():
    manifest = tiny_manifest()
    preds = gt_as_predictions(manifest, score=0.2)  # below default 0.35
    report = evaluate_dataset(manifest, preds)
    assert all(v == 0.0 for v in report.map_per_threshold.values())


def test_images_without_gt_are_excluded():
    manifest = tiny_manifest()
    manifest.images.append(ImageEntry("empty", "images/empty.png", 32, 32, 1, "train"))
    report = evaluate_dataset(manifest, gt_as_predictions(manifest))
    assert "empty" not in report.per_image
    assert report.map_per_threshold[threshold_key(0.5)] == 1.0


def test_dangling_prediction_id_rejected():
    manifest = tiny_manifest()
    stray = DetectionRecord(image_id="nope", class_id=1, score=0.9, bbox=(0, 0, 2, 2))
    with pytest.raises(ValidationError, match="nope"):
        evaluate_dataset(manifest, [stray])


def test_bbox_mode_evaluation():
    manifest = tiny_manifest()
    preds = [DetectionRecord(image_id=a.image_id, class_id=a.class_id, score=1.0, bbox=a.bbox)
             for a in manifest.annotations]
    report = evaluate_dataset(manifest, preds, EvalConfig(iou_mode="bbox"))
    assert report.map_per_threshold[threshold_key(0.75)] == 1.0


def test_per_class_breakdown_keys():
    report = evaluate_dataset(tiny_manifest(), [])
    assert set(report.per_class) == {"1", "2"}
    for by_thr in report.per_class.values():
        assert set(by_thr) == {"0.35", "0.5", "0.75"}


# --------------------------------------------------------------------- I/O layer

def test_predictions_json_round_trip(tmp_path):
    manifest = tiny_manifest()
    preds = gt_as_predictions(manifest, score=0.5)
    path = tmp_path / "preds.json"
    write_predictions(preds, path)
    assert read_predictions(path) == preds


def test_detection_validation():
    with pytest.raises(ValidationError):
        DetectionRecord(image_id="x", class_id=1, score=1.5, bbox=(0, 0, 1, 1)).validate()
    with pytest.raises(ValidationError):
        DetectionRecord(image_id="x", class_id=5, score=0.5, bbox=(0, 0, 1, 1)).validate()
    with pytest.raises(ValidationError):
        DetectionRecord(image_id="x", class_id=1, score=0.5).validate()
    mask = strip_mask(4, 4, 0, 2)
    with pytest.raises(ValidationError):  # bbox not tight for the mask
        DetectionRecord(image_id="x", class_id=1, score=0.5, bbox=(0, 0, 4, 4),
                        mask_rle=encode_rle(mask)).validate()


def test_eval_config_validation():
    with pytest.raises(ValidationError):
        EvalConfig(thresholds=(0.5, 0.35))
    with pytest.raises(ValidationError):
        EvalConfig(thresholds=(0.0, 0.5))
    with pytest.raises(ValidationError):
        EvalConfig(iou_mode="perimeter")
