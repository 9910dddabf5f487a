"""Fundus photograph normalization.

The pipeline turns a raw fundus photo and its lesion mask into a
geometry-consistent pair: crop away blank camera margins, rescale the
field of view to a perfect circle, apply weighted Gaussian color
normalization (image only), resize to a fixed square, and finally dilate
the mask so tiny lesions stay learnable.

Conventions used throughout:

* Rasters are uint8 arrays, (H, W) or (H, W, 3); masks are bool (H, W).
* Resampling uses the pixel-center convention: output pixel ``i`` samples
  source coordinate ``(i + 0.5) * in/out - 0.5``. Images are bilinear,
  masks nearest-neighbor (``floor(x + 0.5)``), so binary values survive.
* All operations are pure and deterministic.
"""

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .errors import NoForegroundError, ParseError, ValidationError


@dataclass(frozen=True)
class GeometricTransform:
    """Composite crop-then-scale map from source to output pixels.

    ``apply`` maps a source pixel coordinate to output coordinates using
    pixel centers: x_out = (x - crop_x + 0.5) * scale_x - 0.5.
    """

    crop_rect: tuple  # (x, y, w, h) in source pixels
    scale_x: float
    scale_y: float
    output_side: int

    def apply(self, x: float, y: float) -> tuple:
        cx, cy, _, _ = self.crop_rect
        return (
            (x - cx + 0.5) * self.scale_x - 0.5,
            (y - cy + 0.5) * self.scale_y - 0.5,
        )

    def to_json_dict(self) -> dict:
        return {
            "crop_rect": list(self.crop_rect),
            "scale_x": self.scale_x,
            "scale_y": self.scale_y,
            "output_side": self.output_side,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "GeometricTransform":
        try:
            return cls(
                crop_rect=tuple(int(v) for v in d["crop_rect"]),
                scale_x=float(d["scale_x"]),
                scale_y=float(d["scale_y"]),
                output_side=int(d["output_side"]),
            )
        except (KeyError, TypeError) as exc:
            raise ParseError(f"bad GeometricTransform object: {exc}") from exc


_CONFIG_FIELDS = (
    "blur_sigma",
    "w_orig",
    "w_blur",
    "gamma_offset",
    "output_side",
    "blank_threshold",
    "dilation_kernel",
    "dilation_iterations",
)


@dataclass(frozen=True)
class PreprocessConfig:
    blur_sigma: float = 20.0
    w_orig: float = 4.0
    w_blur: float = -4.0
    gamma_offset: float = 128.0
    output_side: int = 1024
    blank_threshold: int = 10
    dilation_kernel: int = 5
    dilation_iterations: int = 2

    def __post_init__(self):
        problems = []
        if not self.blur_sigma > 0:
            problems.append(f"blur_sigma must be > 0, got {self.blur_sigma}")
        if self.output_side < 32:
            problems.append(f"output_side must be >= 32, got {self.output_side}")
        if self.dilation_kernel < 1 or self.dilation_kernel % 2 == 0:
            problems.append(f"dilation_kernel must be odd and >= 1, got {self.dilation_kernel}")
        if self.dilation_iterations < 0:
            problems.append(f"dilation_iterations must be >= 0, got {self.dilation_iterations}")
        if problems:
            raise ValidationError("; ".join(problems))

    def to_json_dict(self) -> dict:
        return {name: getattr(self, name) for name in _CONFIG_FIELDS}

    @classmethod
    def from_json_dict(cls, d: dict) -> "PreprocessConfig":
        if not isinstance(d, dict):
            raise ParseError("preprocess config must be a JSON object")
        unknown = set(d) - set(_CONFIG_FIELDS)
        if unknown:
            raise ValidationError(f"unknown preprocess config fields: {sorted(unknown)}")
        return cls(**{k: d[k] for k in _CONFIG_FIELDS if k in d})

    @classmethod
    def load(cls, path) -> "PreprocessConfig":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed JSON in {path}: {exc}") from exc
        return cls.from_json_dict(d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n")


def _as_channels(img: np.ndarray) -> np.ndarray:
    """View (H, W) and (H, W, C) uniformly as (H, W, C)."""
    return img[:, :, np.newaxis] if img.ndim == 2 else img


def gaussian_kernel(sigma: float) -> np.ndarray:
    """1-D Gaussian taps truncated at radius ceil(3*sigma), normalized to sum 1."""
    radius = math.ceil(3.0 * sigma)
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-(xs ** 2) / (2.0 * sigma * sigma))
    return w / w.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur per channel with edge-replicate borders."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    kernel = gaussian_kernel(sigma)
    work = _as_channels(img).astype(np.float64)
    out = np.empty_like(work)
    for c in range(work.shape[2]):
        tmp = correlate1d(work[:, :, c], kernel, axis=0, mode="nearest")
        out[:, :, c] = correlate1d(tmp, kernel, axis=1, mode="nearest")
    out = np.rint(out).astype(np.uint8)
    return out[:, :, 0] if img.ndim == 2 else out


def _blend_values(img, blurred, cfg: PreprocessConfig) -> np.ndarray:
    """Weighted sum in float64 (widened signed intermediate), then clamp."""
    mixed = (
        cfg.w_orig * np.asarray(img, dtype=np.float64)
        + cfg.w_blur * np.asarray(blurred, dtype=np.float64)
        + cfg.gamma_offset
    )
    return np.clip(np.rint(mixed), 0, 255).astype(np.uint8)


def blend_normalize(img: np.ndarray, cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    """Color normalization: w_orig*img + w_blur*blur(img) + gamma_offset, clamped."""
    if img.size == 0:
        raise ValueError("image is empty")
    return _blend_values(img, gaussian_blur(img, cfg.blur_sigma), cfg)


def crop_blank_margins(img: np.ndarray, blank_threshold: int = 10):
    """Tightest crop around pixels brighter than the blank threshold.

    Returns (cropped, (x, y, w, h)). Raises NoForegroundError when nothing
    exceeds the threshold.
    """
    bright = _as_channels(img).max(axis=2) > blank_threshold
    rows = np.flatnonzero(bright.any(axis=1))
    cols = np.flatnonzero(bright.any(axis=0))
    if rows.size == 0:
        raise NoForegroundError(f"no pixel brighter than {blank_threshold}")
    y0, y1 = int(rows[0]), int(rows[-1]) + 1
    x0, x1 = int(cols[0]), int(cols[-1]) + 1
    rect = (x0, y0, x1 - x0, y1 - y0)
    return img[y0:y1, x0:x1].copy(), rect


def _resample(arr: np.ndarray, out_h: int, out_w: int, nearest: bool) -> np.ndarray:
    """Pixel-center resample; bilinear for intensity data, nearest for masks."""
    in_h, in_w = arr.shape[:2]
    if (out_h, out_w) == (in_h, in_w):
        return arr.copy()
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (in_w / out_w) - 0.5
    if nearest:
        yi = np.clip(np.floor(ys + 0.5).astype(np.int64), 0, in_h - 1)
        xi = np.clip(np.floor(xs + 0.5).astype(np.int64), 0, in_w - 1)
        return arr[np.ix_(yi, xi)]
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    wy = (ys - y0)[:, np.newaxis]
    wx = (xs - x0)[np.newaxis, :]
    y0i = np.clip(y0.astype(np.int64), 0, in_h - 1)
    y1i = np.clip(y0i + 1, 0, in_h - 1)
    x0i = np.clip(x0.astype(np.int64), 0, in_w - 1)
    x1i = np.clip(x0i + 1, 0, in_w - 1)
    work = _as_channels(arr).astype(np.float64)
    wy3 = wy[:, :, np.newaxis]
    wx3 = wx[:, :, np.newaxis]
    top = work[np.ix_(y0i, x0i)] * (1 - wx3) + work[np.ix_(y0i, x1i)] * wx3
    bot = work[np.ix_(y1i, x0i)] * (1 - wx3) + work[np.ix_(y1i, x1i)] * wx3
    out = np.rint(top * (1 - wy3) + bot * wy3).astype(np.uint8)
    return out[:, :, 0] if arr.ndim == 2 else out


def resize(img: np.ndarray, side: int) -> np.ndarray:
    """Resize to side x side: bilinear for uint8 rasters, nearest for bool masks."""
    if side < 1:
        raise ValueError(f"side must be >= 1, got {side}")
    if img.dtype == bool:
        return _resample(img, side, side, nearest=True)
    return _resample(img, side, side, nearest=False)


def _inscribed_circle(side: int) -> np.ndarray:
    c = (side - 1) / 2.0
    r = side / 2.0
    ys = np.arange(side) - c
    xs = np.arange(side) - c
    return (ys[:, np.newaxis] ** 2 + xs[np.newaxis, :] ** 2) <= r * r


def circularize(img: np.ndarray):
    """Rescale a margin-cropped raster to a square and mask the inscribed circle.

    The foreground bounding box is assumed to touch all four borders (the
    raster has been margin-cropped), so scaling anisotropically to
    side = max(W, H) makes it square; pixels outside the inscribed circle
    of that square are zeroed. Returns (raster, GeometricTransform).
    """
    h, w = img.shape[:2]
    if h < 2 or w < 2:
        raise ValueError(f"raster too small to circularize: {w}x{h}")
    side = max(w, h)
    nearest = img.dtype == bool
    out = _resample(img, side, side, nearest=nearest)
    keep = _inscribed_circle(side)
    out[~keep] = 0
    transform = GeometricTransform(
        crop_rect=(0, 0, w, h),
        scale_x=side / w,
        scale_y=side / h,
        output_side=side,
    )
    return out, transform


def dilate(mask: np.ndarray, kernel: int = 5, iterations: int = 2) -> np.ndarray:
    """Morphological dilation with a square structuring element, repeated."""
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"kernel must be odd and >= 1, got {kernel}")
    if iterations < 0:
        raise ValueError(f"iterations must be >= 0, got {iterations}")
    out = np.asarray(mask, dtype=bool).copy()
    radius = kernel // 2
    for _ in range(iterations):
        out = _dilate_once(out, radius)
    return out

def _dilate_once(mask: np.ndarray, radius: int) -> np.ndarray:
    if radius == 0:
        return mask.copy()
    horiz = mask.copy()
    for d in range(1, radius + 1):
        horiz[:, d:] |= mask[:, :-d]
        horiz[:, :-d] |= mask[:, d:]
    out = horiz.copy()
    for d in range(1, radius + 1):
        out[d:, :] |= horiz[:-d, :]
        out[:-d, :] |= horiz[d:, :]
    return out


def preprocess_pair(img: np.ndarray, mask: np.ndarray, cfg: PreprocessConfig = PreprocessConfig()):
    """Run the full pipeline on an image/mask pair with shared geometry.

    crop -> circularize -> blend_normalize (image only) -> resize, with the
    identical crop and scale applied to the mask (nearest-neighbor), then
    the mask is dilated. Returns (image, mask, GeometricTransform) where the
    transform maps raw source pixels to output pixels.
    """
    if img.shape[:2] != mask.shape[:2]:
        raise ValueError(f"image {img.shape[:2]} and mask {mask.shape[:2]} dimensions differ")
    mask = np.asarray(mask, dtype=bool)

    cropped_img, rect = crop_blank_margins(img, cfg.blank_threshold)
    x0, y0, cw, ch = rect
    cropped_mask = mask[y0:y0 + ch, x0:x0 + cw]

    circ_img, _ = circularize(cropped_img)
    circ_mask, _ = circularize(cropped_mask)

    norm_img = _blend_values(circ_img, gaussian_blur(circ_img, cfg.blur_sigma), cfg)

    out_img = resize(norm_img, cfg.output_side)
    out_mask = resize(circ_mask, cfg.output_side)
    out_mask = dilate(out_mask, cfg.dilation_kernel, cfg.dilation_iterations)

    transform = GeometricTransform(
        crop_rect=rect,
        scale_x=cfg.output_side / cw,
        scale_y=cfg.output_side / ch,
        output_side=cfg.output_side,
    )
    return out_img, out_mask, transform
