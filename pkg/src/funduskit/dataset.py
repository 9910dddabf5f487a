"""Dataset manifest, deterministic splitting, and a synthetic fundus generator.

The manifest follows the familiar images/annotations/categories JSON shape
so third-party trainers can consume it. One extra per-image field,
``source_class_hint``, records which lesion type that image's ground truth
covers (the source datasets annotate only one type per image); the
evaluator's type filter depends on it.

The synthetic generator renders a desk-scale stand-in for licensed fundus
data: an orange disc on black with bright irregular exudate blobs and tiny
dark microaneurysm dots, plus exact per-class ground-truth masks.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CapacityError, ParseError, ValidationError
from .instances import CLASS_EXUDATE, CLASS_MICROANEURYSM, InstanceAnnotation
from .rng import SplitMix64

CATEGORIES = ({"id": CLASS_EXUDATE, "name": "exudate"},
              {"id": CLASS_MICROANEURYSM, "name": "microaneurysm"})
SPLITS = ("train", "val", "test")


@dataclass
class ImageEntry:
    image_id: str
    file_name: str
    width: int
    height: int
    source_class_hint: int
    split: str

    def to_json_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "file_name": self.file_name,
            "width": self.width,
            "height": self.height,
            "source_class_hint": self.source_class_hint,
            "split": self.split,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ImageEntry":
        try:
            return cls(
                image_id=str(d["image_id"]),
                file_name=str(d["file_name"]),
                width=int(d["width"]),
                height=int(d["height"]),
                source_class_hint=int(d["source_class_hint"]),
                split=str(d["split"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad image entry: {exc}") from exc


@dataclass
class DatasetManifest:
    images: list
    annotations: list
    categories: tuple = CATEGORIES

    def validate(self) -> None:
        ids = [img.image_id for img in self.images]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValidationError(f"duplicate image ids: {dupes}")
        known = set(ids)
        for ann in self.annotations:
            if ann.image_id not in known:
                raise ValidationError(
                    f"annotation {ann.instance_id} references missing image id {ann.image_id!r}"
                )
            ann.validate()
        valid_categories = {c["id"] for c in CATEGORIES}
        for cat in self.categories:
            if cat["id"] not in valid_categories:
                raise ValidationError(f"unknown category id {cat['id']}")
        for img in self.images:
            if img.split not in SPLITS:
                raise ValidationError(f"image {img.image_id!r} has bad split {img.split!r}")
            if img.source_class_hint not in valid_categories:
                raise ValidationError(
                    f"image {img.image_id!r} has bad source_class_hint {img.source_class_hint}"
                )

    def annotations_for(self, image_id: str):
        return [a for a in self.annotations if a.image_id == image_id]

    def subset(self, split: str) -> "DatasetManifest":
        keep = [img for img in self.images if img.split == split]
        ids = {img.image_id for img in keep}
        return DatasetManifest(
            images=keep,
            annotations=[a for a in self.annotations if a.image_id in ids],
            categories=self.categories,
        )


def shuffle_split(image_ids, seed: int, counts) -> dict:
    """Deterministically permute ids and slice into train/val/test.

    Returns {image_id: split}. The permutation is a Fisher-Yates shuffle
    driven by the splitmix64 stream (see funduskit.rng), so identical
    (ids, seed) always give the identical assignment.
    """
    ids = list(image_ids)
    n_train, n_val, n_test = (int(c) for c in counts)
    if n_train < 0 or n_val < 0 or n_test < 0:
        raise ValueError(f"counts must be non-negative, got {counts}")
    if n_train + n_val + n_test != len(ids):
        raise ValueError(
            f"counts {counts} sum to {n_train + n_val + n_test}, expected {len(ids)} ids"
        )
    SplitMix64(seed).shuffle(ids)
    assignment = {}
    for image_id in ids[:n_train]:
        assignment[image_id] = "train"
    for image_id in ids[n_train:n_train + n_val]:
        assignment[image_id] = "val"
    for image_id in ids[n_train + n_val:]:
        assignment[image_id] = "test"
    return assignment


def write_manifest(manifest: DatasetManifest, path) -> None:
    manifest.validate()
    doc = {
        "images": [img.to_json_dict() for img in manifest.images],
        "annotations": [ann.to_json_dict() for ann in manifest.annotations],
        "categories": [dict(c) for c in manifest.categories],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def read_manifest(path) -> DatasetManifest:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON in {path}: {exc}") from exc
    if not isinstance(doc, dict) or not {"images", "annotations", "categories"} <= set(doc):
        raise ParseError(f"{path} is not a dataset manifest")
    manifest = DatasetManifest(
        images=[ImageEntry.from_json_dict(d) for d in doc["images"]],
        annotations=[InstanceAnnotation.from_json_dict(d) for d in doc["annotations"]],
        categories=tuple({"id": int(c["id"]), "name": str(c["name"])} for c in doc["categories"]),
    )
    manifest.validate()
    return manifest


def _render_disc(canvas: np.ndarray, cx: int, cy: int, radius: int, color) -> np.ndarray:
    """Paint a filled disc; returns the boolean pixel set that was painted."""
    side = canvas.shape[0]
    y0, y1 = max(cy - radius, 0), min(cy + radius + 1, side)
    x0, x1 = max(cx - radius, 0), min(cx + radius + 1, side)
    ys = np.arange(y0, y1) - cy
    xs = np.arange(x0, x1) - cx
    inside = (ys[:, None] ** 2 + xs[None, :] ** 2) <= radius * radius
    patch = np.zeros(canvas.shape[:2], dtype=bool)
    patch[y0:y1, x0:x1] = inside
    canvas[patch] = color
    return patch


def generate_synthetic_fundus(seed: int, side: int = 256, n_exudates: int = 3, n_mas: int = 5,
                              max_tries: int = 200):
    """Render a synthetic fundus image plus per-class ground-truth masks.

    Returns (image, exudate_mask, microaneurysm_mask). Lesions are placed
    fully inside the retina disc, pairwise separated so each stays its own
    connected component; placement failure after ``max_tries`` attempts per
    lesion raises CapacityError. Bit-identical output for identical inputs.
    """
    if side < 64:
        raise ValueError(f"side must be >= 64, got {side}")
    rng = SplitMix64(seed)
    image = np.zeros((side, side, 3), dtype=np.uint8)
    center = (side - 1) / 2.0
    disc_r = int(side * 0.45)

    ys = np.arange(side) - center
    xs = np.arange(side) - center
    dist2 = ys[:, None] ** 2 + xs[None, :] ** 2
    disc = dist2 <= disc_r * disc_r
    # orange retina with a mild radial falloff so normalization has texture
    falloff = 1.0 - 0.25 * (dist2 / (disc_r * disc_r))
    base = np.stack([
        np.rint(205 * falloff), np.rint(115 * falloff), np.rint(45 * falloff)
    ], axis=2).astype(np.uint8)
    image[disc] = base[disc]

    placed = []  # (cx, cy, effective_radius)

    def place(effective_r: int):
        for _ in range(max_tries):
            cx = rng.next_below(side)
            cy = rng.next_below(side)
            if (cx - center) ** 2 + (cy - center) ** 2 > (disc_r - effective_r - 4) ** 2:
                continue
            ok = True
            for px, py, pr in placed:
                min_d = effective_r + pr + 3
                if (cx - px) ** 2 + (cy - py) ** 2 < min_d * min_d:
                    ok = False
                    break
            if ok:
                placed.append((cx, cy, effective_r))
                return cx, cy
        raise CapacityError(
            f"could not place a lesion of radius {effective_r} after {max_tries} tries"
        )

    exudate_mask = np.zeros((side, side), dtype=bool)
    for _ in range(n_exudates):
        r = 3 + rng.next_below(8)  # 3..10
        cx, cy = place(r + r // 2)
        blob = _render_disc(image, cx, cy, r, (246, 233, 170))
        for _ in range(2):  # jitter lobes keep the blob irregular but connected
            off = r // 2
            jx = cx - off + rng.next_below(2 * off + 1) if off else cx
            jy = cy - off + rng.next_below(2 * off + 1) if off else cy
            jr = max(2, r // 2) + rng.next_below(max(r - max(2, r // 2) + 1, 1))
            blob |= _render_disc(image, jx, jy, min(jr, r), (246, 233, 170))
        exudate_mask |= blob

    ma_mask = np.zeros((side, side), dtype=bool)
    for _ in range(n_mas):
        r = 1 + rng.next_below(3)  # 1..3
        cx, cy = place(r)
        ma_mask |= _render_disc(image, cx, cy, r, (72, 26, 20))

    return image, exudate_mask, ma_mask
