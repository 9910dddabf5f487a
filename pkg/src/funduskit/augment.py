"""Seeded geometric augmentation applied jointly to image and instance masks.

The augmentation set is flips, exact 90-degree rotations, and axis-aligned
translation/scaling. Every parameter is drawn from the splitmix64 stream
documented in ``funduskit.rng``, so ``apply_policy(sample, policy, index)``
is a pure function of its arguments.

Draw order per sample (one sub-stream per (policy.seed, index)):

    u1            horizontal flip if u1 < p_hflip
    u2            vertical flip if u2 < p_vflip
    u3, u4        rotate if u3 < p_rot90; u4 < 0.5 picks clockwise
    u5, u6        dx = round((2*u5 - 1) * max_translate_frac * W), dy likewise
    u7, u8        sx = lo + u7*(hi - lo), sy likewise

u4..u8 are always drawn, even when their op is skipped, so the stream
position never depends on earlier outcomes.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ParseError, ValidationError
from .instances import InstanceAnnotation, bbox_of, decode_rle, encode_rle
from .rng import SplitMix64, stream_seed

HORIZONTAL = "horizontal"
VERTICAL = "vertical"
CLOCKWISE = "cw"
COUNTERCLOCKWISE = "ccw"


@dataclass
class Sample:
    """An image with its per-instance annotations."""

    image: np.ndarray
    annotations: list
    image_id: str


@dataclass(frozen=True)
class AugmentPolicy:
    p_hflip: float = 0.5
    p_vflip: float = 0.5
    p_rot90: float = 0.5
    max_translate_frac: float = 0.1
    scale_range: tuple = (0.8, 1.2)
    seed: int = 0

    def __post_init__(self):
        for name in ("p_hflip", "p_vflip", "p_rot90"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValidationError(f"{name} must be in [0, 1], got {p}")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ValidationError(f"scale_range must satisfy 0 < lo <= hi, got {self.scale_range}")
        if self.max_translate_frac < 0:
            raise ValidationError(f"max_translate_frac must be >= 0, got {self.max_translate_frac}")

    def to_json_dict(self) -> dict:
        return {
            "p_hflip": self.p_hflip,
            "p_vflip": self.p_vflip,
            "p_rot90": self.p_rot90,
            "max_translate_frac": self.max_translate_frac,
            "scale_range": list(self.scale_range),
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "AugmentPolicy":
        try:
            return cls(
                p_hflip=float(d["p_hflip"]),
                p_vflip=float(d["p_vflip"]),
                p_rot90=float(d["p_rot90"]),
                max_translate_frac=float(d["max_translate_frac"]),
                scale_range=tuple(float(v) for v in d["scale_range"]),
                seed=int(d["seed"]),
            )
        except (KeyError, TypeError) as exc:
            raise ParseError(f"bad AugmentPolicy object: {exc}") from exc


def _rebuilt_annotation(ann: InstanceAnnotation, mask: np.ndarray) -> InstanceAnnotation:
    return InstanceAnnotation(
        instance_id=ann.instance_id,
        image_id=ann.image_id,
        class_id=ann.class_id,
        mask_rle=encode_rle(mask),
        bbox=bbox_of(mask),
        area=int(mask.sum()),
    )


def _map_annotations(sample: Sample, image: np.ndarray, mask_op) -> Sample:
    """Apply mask_op to every annotation mask, dropping ones that empty out."""
    annotations = []
    for ann in sample.annotations:
        mask = mask_op(decode_rle(ann.mask_rle))
        if mask.any():
            annotations.append(_rebuilt_annotation(ann, mask))
    return Sample(image=image, annotations=annotations, image_id=sample.image_id)


def flip(sample: Sample, axis: str) -> Sample:
    """Mirror image and masks about the given axis; bboxes are recomputed."""
    if axis == HORIZONTAL:
        flip_arr = lambda a: a[:, ::-1].copy()
    elif axis == VERTICAL:
        flip_arr = lambda a: a[::-1, :].copy()
    else:
        raise ValueError(f"axis must be '{HORIZONTAL}' or '{VERTICAL}', got {axis!r}")
    return _map_annotations(sample, flip_arr(sample.image), flip_arr)


def rotate90(sample: Sample, direction: str) -> Sample:
    """Exact 90-degree rotation of a square sample; no interpolation."""
    h, w = sample.image.shape[:2]
    if h != w:
        raise ValueError(f"rotate90 requires a square image, got {w}x{h}")
    if direction == CLOCKWISE:
        k = -1  # pixel (x, y) -> (S-1-y, x)
    elif direction == COUNTERCLOCKWISE:
        k = 1
    else:
        raise ValueError(f"direction must be '{CLOCKWISE}' or '{COUNTERCLOCKWISE}', got {direction!r}")
    rot = lambda a: np.rot90(a, k).copy()
    return _map_annotations(sample, rot(sample.image), rot)


def _affine_sample(arr: np.ndarray, dx: float, dy: float, sx: float, sy: float) -> np.ndarray:
    """Resample under p' = C + S*(p - C) + t about the canvas center C.

    Intensity rasters are sampled bilinearly, masks nearest-neighbor;
    output pixels whose source location falls off-canvas become black.
    """
    h, w = arr.shape[:2]
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    src_x = cx + (np.arange(w, dtype=np.float64) - dx - cx) / sx
    src_y = cy + (np.arange(h, dtype=np.float64) - dy - cy) / sy
    nearest = arr.dtype == bool
    if nearest:
        xi = np.floor(src_x + 0.5).astype(np.int64)
        yi = np.floor(src_y + 0.5).astype(np.int64)
        valid = (yi[:, None] >= 0) & (yi[:, None] < h) & (xi[None, :] >= 0) & (xi[None, :] < w)
        out = arr[np.ix_(np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1))].copy()
        out[~valid] = False
        return out
    x0 = np.floor(src_x)
    y0 = np.floor(src_y)
    wx = (src_x - x0)[None, :, None]
    wy = (src_y - y0)[:, None, None]
    x0i = np.clip(x0.astype(np.int64), 0, w - 1)
    x1i = np.clip(x0i + 1, 0, w - 1)
    y0i = np.clip(y0.astype(np.int64), 0, h - 1)
    y1i = np.clip(y0i + 1, 0, h - 1)
    squeeze = arr.ndim == 2
    work = (arr[:, :, None] if squeeze else arr).astype(np.float64)
    top = work[np.ix_(y0i, x0i)] * (1 - wx) + work[np.ix_(y0i, x1i)] * wx
    bot = work[np.ix_(y1i, x0i)] * (1 - wx) + work[np.ix_(y1i, x1i)] * wx
    out = np.rint(top * (1 - wy) + bot * wy).astype(np.uint8)
    valid = (
        (src_y[:, None] >= -0.5) & (src_y[:, None] <= h - 0.5)
        & (src_x[None, :] >= -0.5) & (src_x[None, :] <= w - 0.5)
    )
    out[~valid] = 0
    return out[:, :, 0] if squeeze else out


def translate_scale(sample: Sample, dx: float, dy: float, sx: float, sy: float) -> Sample:
    """Shift by (dx, dy) pixels and scale by (sx, sy) about the canvas center.

    Regions pulled in from outside the canvas are black; annotations whose
    transformed mask becomes empty are dropped.
    """
    if sx <= 0 or sy <= 0:
        raise ValueError(f"scale factors must be positive, got sx={sx}, sy={sy}")
    if dx == 0 and dy == 0 and sx == 1 and sy == 1:
        return Sample(image=sample.image.copy(), annotations=list(sample.annotations),
                      image_id=sample.image_id)
    image = _affine_sample(sample.image, dx, dy, sx, sy)
    return _map_annotations(sample, image, lambda m: _affine_sample(m, dx, dy, sx, sy))


def apply_policy(sample: Sample, policy: AugmentPolicy, index: int) -> Sample:
    """Deterministic augmentation of one sample; see module docstring for draws."""
    rng = SplitMix64(stream_seed(policy.seed, index))
    h, w = sample.image.shape[:2]

    do_hflip = rng.next_float() < policy.p_hflip
    do_vflip = rng.next_float() < policy.p_vflip
    do_rot = rng.next_float() < policy.p_rot90
    direction = CLOCKWISE if rng.next_float() < 0.5 else COUNTERCLOCKWISE
    dx = round((2.0 * rng.next_float() - 1.0) * policy.max_translate_frac * w)
    dy = round((2.0 * rng.next_float() - 1.0) * policy.max_translate_frac * h)
    lo, hi = policy.scale_range
    sx = lo + rng.next_float() * (hi - lo)
    sy = lo + rng.next_float() * (hi - lo)

    out = sample
    if do_hflip:
        out = flip(out, HORIZONTAL)
    if do_vflip:
        out = flip(out, VERTICAL)
    if do_rot:
        out = rotate90(out, direction)
    if dx != 0 or dy != 0 or sx != 1.0 or sy != 1.0:
        out = translate_scale(out, dx, dy, sx, sy)
    return out
