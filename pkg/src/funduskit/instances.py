"""Per-instance ground truth from multi-lesion binary masks.

A dataset mask marks every lesion of one type in a single binary image;
training an instance detector needs one annotation per lesion. This module
splits a mask into connected components, encodes each as RLE, and wraps
them in ``InstanceAnnotation`` records.

RLE format: row-major scan, alternating run lengths starting with the
count of background pixels (possibly 0), stored as
``{"size": [H, W], "counts": [int, ...]}``. No external codec is involved,
so golden files are bit-exact.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NoForegroundError, ParseError, ValidationError

CLASS_EXUDATE = 1
CLASS_MICROANEURYSM = 2
VALID_CLASS_IDS = (CLASS_EXUDATE, CLASS_MICROANEURYSM)


def encode_rle(mask: np.ndarray) -> dict:
    """Encode a boolean mask as background-first run lengths."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    flat = mask.ravel()
    if flat.size == 0:
        return {"size": [h, w], "counts": []}
    boundaries = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    edges = np.concatenate(([0], boundaries, [flat.size]))
    counts = np.diff(edges).tolist()
    if flat[0]:
        counts.insert(0, 0)
    return {"size": [h, w], "counts": [int(c) for c in counts]}


def decode_rle(rle: dict) -> np.ndarray:
    """Decode an RLE object back to a boolean (H, W) mask."""
    try:
        h, w = (int(v) for v in rle["size"])
        counts = [int(c) for c in rle["counts"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad RLE object: {exc}") from exc
    if any(c < 0 for c in counts):
        raise ValidationError("RLE counts must be non-negative")
    if sum(counts) != h * w:
        raise ValidationError(f"RLE counts sum to {sum(counts)}, expected {h * w}")
    values = np.zeros(len(counts), dtype=bool)
    values[1::2] = True
    return np.repeat(values, counts).reshape(h, w)


def bbox_of(mask: np.ndarray) -> tuple:
    """Tight (x, y, w, h) bounding box of the foreground."""
    mask = np.asarray(mask, dtype=bool)
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        raise NoForegroundError("mask has no foreground pixels")
    cols = np.flatnonzero(mask.any(axis=0))
    return (int(cols[0]), int(rows[0]), int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1))


@dataclass
class InstanceAnnotation:
    """One lesion instance: class id, RLE mask, tight bbox, pixel area."""

    instance_id: int
    image_id: str
    class_id: int
    mask_rle: dict
    bbox: tuple
    area: int

    def decode_mask(self) -> np.ndarray:
        return decode_rle(self.mask_rle)

    def validate(self) -> None:
        if self.class_id not in VALID_CLASS_IDS:
            raise ValidationError(
                f"annotation {self.instance_id} of {self.image_id}: "
                f"class_id must be one of {VALID_CLASS_IDS}, got {self.class_id}"
            )
        if self.area < 1:
            raise ValidationError(
                f"annotation {self.instance_id} of {self.image_id}: area must be >= 1"
            )

    def to_json_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "image_id": self.image_id,
            "class_id": self.class_id,
            "mask_rle": {"size": list(self.mask_rle["size"]), "counts": list(self.mask_rle["counts"])},
            "bbox": list(self.bbox),
            "area": self.area,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "InstanceAnnotation":
        try:
            ann = cls(
                instance_id=int(d["instance_id"]),
                image_id=str(d["image_id"]),
                class_id=int(d["class_id"]),
                mask_rle={"size": [int(v) for v in d["mask_rle"]["size"]],
                          "counts": [int(c) for c in d["mask_rle"]["counts"]]},
                bbox=tuple(int(v) for v in d["bbox"]),
                area=int(d["area"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad annotation object: {exc}") from exc
        ann.validate()
        return ann


def _row_runs(mask: np.ndarray):
    """Per-row foreground runs as (start, end) half-open column intervals."""
    h, w = mask.shape
    padded = np.zeros((h, w + 2), dtype=bool)
    padded[:, 1:-1] = mask
    diffs = padded[:, 1:] != padded[:, :-1]
    runs = []
    for y in range(h):
        edges = np.flatnonzero(diffs[y])
        runs.append([(int(edges[i]), int(edges[i + 1])) for i in range(0, len(edges), 2)])
    return runs


def connected_components(mask: np.ndarray, connectivity: int = 8):
    """Split foreground into maximal connected components.

    Row runs get provisional labels; runs adjacent across consecutive rows
    are merged with union-find (two-pass). Output masks partition the
    input exactly and are ordered by (top, left) of their bounding boxes.
    """
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    runs = _row_runs(mask)

    parent: list = []

    def find(i: int) -> int:
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    def union(a: int, b: int) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    # pass 1: label runs, linking to touching runs of the previous row.
    # Runs [s, e) and [ps, pe) touch iff ps < e + reach and pe + reach > s,
    # where reach is 1 when diagonal contact counts (8-connectivity).
    labels = []  # per row, label index of each run
    reach = 0 if connectivity == 4 else 1
    for y in range(h):
        row_labels = []
        prev = runs[y - 1] if y > 0 else []
        prev_labels = labels[y - 1] if y > 0 else []
        pi = 0  # prev runs before pi end left of every remaining current run
        for start, end in runs[y]:
            while pi < len(prev) and prev[pi][1] + reach <= start:
                pi += 1
            label = None
            j = pi
            while j < len(prev) and prev[j][0] < end + reach:
                if label is None:
                    label = prev_labels[j]
                else:
                    union(label, prev_labels[j])
                j += 1
            if label is None:
                label = len(parent)
                parent.append(label)
            row_labels.append(label)
        labels.append(row_labels)

    # pass 2: resolve roots and paint one mask per component
    groups: dict = {}
    for y in range(h):
        for (start, end), label in zip(runs[y], labels[y]):
            groups.setdefault(find(label), []).append((y, start, end))

    components = []
    for spans in groups.values():
        comp = np.zeros((h, w), dtype=bool)
        for y, start, end in spans:
            comp[y, start:end] = True
        components.append(comp)
    def top_left(comp: np.ndarray) -> tuple:
        x, y, _, _ = bbox_of(comp)
        return (y, x)

    components.sort(key=top_left)
    return components


def build_annotations(mask: np.ndarray, class_id: int, image_id: str, connectivity: int = 8):
    """One InstanceAnnotation per connected component, ids sequential from 1."""
    if class_id not in VALID_CLASS_IDS:
        raise ValueError(f"class_id must be one of {VALID_CLASS_IDS}, got {class_id}")
    annotations = []
    for i, comp in enumerate(connected_components(mask, connectivity), start=1):
        annotations.append(
            InstanceAnnotation(
                instance_id=i,
                image_id=image_id,
                class_id=class_id,
                mask_rle=encode_rle(comp),
                bbox=bbox_of(comp),
                area=int(comp.sum()),
            )
        )
    return annotations
