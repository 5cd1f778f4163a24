"""Zone localization, crop resampling, feather masks, and alpha blending.

Images here are numpy ``(H, W, C)`` float32 arrays in [0, 1]; PNG files
are 8-bit RGB.  All rectangles are half-open pixel intervals
``[x0, x1) x [y0, y1)`` on the full face.

Zone rectangles come either from the registry's fractional default boxes
(scaled to the image, coordinates floored) or from a landmark recipe — a
named point set plus per-side padding — fed with externally supplied
landmarks (JSON fixture files or any detector adapter; no detector is
bundled).

Blending writes ``old + alpha * (new - old)`` which is exactly the old
content where alpha == 0 and bit-exact idempotent when new == old; the
alpha == 1 plateau is special-cased to return the new crop bit-exactly.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .atlas import ZoneSpec
from .errors import GeometryError, ParseError, ShapeError

CROP_SIZE = 128


# ---------------------------------------------------------------------------
# regions and masks


@dataclass(frozen=True)
class CropRegion:
    """Half-open pixel rectangle with a feather width in face pixels."""

    x0: int
    y0: int
    x1: int
    y1: int
    feather_px: int

    def __post_init__(self):
        if self.x0 < 0 or self.y0 < 0 or self.x1 <= self.x0 or self.y1 <= self.y0:
            raise GeometryError(
                f"degenerate rect ({self.x0},{self.y0})-({self.x1},{self.y1})"
            )
        if self.feather_px < 0:
            raise GeometryError(f"feather_px must be >= 0, got {self.feather_px}")
        if self.feather_px > min(self.width, self.height) / 2:
            raise GeometryError(
                f"feather_px {self.feather_px} exceeds half the rect extent "
                f"({self.width}x{self.height})"
            )

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0


@dataclass(frozen=True)
class LandmarkRecipe:
    """Bounding box of named points, padded per side.

    Padding is in fractions of the box's larger side: (left, top, right,
    bottom).
    """

    points: tuple[str, ...]
    pad: tuple[float, float, float, float]


DEFAULT_LANDMARK_RECIPES: dict[str, LandmarkRecipe] = {
    "forehead": LandmarkRecipe(
        ("left_brow_outer", "left_brow_inner", "right_brow_inner", "right_brow_outer"),
        (0.02, 0.50, 0.02, 0.02),
    ),
    "glabellar": LandmarkRecipe(
        ("left_brow_inner", "right_brow_inner"), (0.10, 0.35, 0.10, 0.45)
    ),
    "inter_ocular": LandmarkRecipe(
        ("left_eye_inner", "right_eye_inner"), (0.08, 0.30, 0.08, 0.30)
    ),
    "under_eye": LandmarkRecipe(
        ("left_eye_outer", "left_eye_inner", "right_eye_inner", "right_eye_outer"),
        (0.03, 0.15, 0.03, 0.45),
    ),
    "crows_feet": LandmarkRecipe(
        ("left_eye_outer", "right_eye_outer"), (0.08, 0.25, 0.08, 0.25)
    ),
    "nasolabial_folds": LandmarkRecipe(
        ("left_nose_wing", "right_nose_wing", "mouth_left", "mouth_right"),
        (0.15, 0.05, 0.15, 0.05),
    ),
    "upper_lip": LandmarkRecipe(
        ("mouth_left", "mouth_right", "upper_lip_top"), (0.05, 0.30, 0.05, 0.10)
    ),
    "lip_corners": LandmarkRecipe(
        ("mouth_left", "mouth_right"), (0.12, 0.25, 0.12, 0.35)
    ),
}


def load_landmarks(path: str | Path) -> dict[str, tuple[float, float]]:
    """Read a landmark fixture: JSON object of name -> [x, y] pixels."""
    try:
        raw = json.loads(Path(path).read_text("utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(f"landmark file {path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ParseError(f"landmark file {path} must hold a JSON object")
    out: dict[str, tuple[float, float]] = {}
    for name, value in raw.items():
        if (
            not isinstance(value, (list, tuple))
            or len(value) != 2
            or not all(isinstance(v, (int, float)) for v in value)
        ):
            raise ParseError(f"landmark {name!r} must map to [x, y] numbers")
        out[name] = (float(value[0]), float(value[1]))
    return out


def _rect_from_landmarks(
    zone: ZoneSpec, landmarks: Mapping[str, tuple[float, float]], w: int, h: int
) -> tuple[int, int, int, int]:
    recipe = DEFAULT_LANDMARK_RECIPES.get(zone.zone_id)
    if recipe is None:
        raise GeometryError(f"no landmark recipe for zone {zone.zone_id!r}")
    missing = [p for p in recipe.points if p not in landmarks]
    if missing:
        raise GeometryError(
            f"landmarks missing points {missing} required by zone {zone.zone_id!r}"
        )
    xs = [landmarks[p][0] for p in recipe.points]
    ys = [landmarks[p][1] for p in recipe.points]
    side = max(max(xs) - min(xs), max(ys) - min(ys))
    if side <= 0:
        raise GeometryError(f"landmark box for zone {zone.zone_id!r} is degenerate")
    pl, pt, pr, pb = recipe.pad
    x0 = max(0, math.floor(min(xs) - pl * side))
    y0 = max(0, math.floor(min(ys) - pt * side))
    x1 = min(w, math.ceil(max(xs) + pr * side))
    y1 = min(h, math.ceil(max(ys) + pb * side))
    return x0, y0, x1, y1


def locate_zone(
    face: np.ndarray,
    zone: ZoneSpec,
    landmarks: Optional[Mapping[str, tuple[float, float]]] = None,
    crop_size: int = CROP_SIZE,
) -> CropRegion:
    """Rectangle of a zone on an aligned face.

    Without landmarks the registry's fractional default box is scaled to
    the image (coordinates floored).  The registry feather width is
    defined at crop scale and rescales with the rect so the blended seam
    keeps its relative width at any resolution.
    """
    h, w = face.shape[0], face.shape[1]
    if landmarks is not None:
        x0, y0, x1, y1 = _rect_from_landmarks(zone, landmarks, w, h)
    else:
        bx0, by0, bx1, by1 = zone.default_box
        x0 = math.floor(bx0 * w)
        y0 = math.floor(by0 * h)
        x1 = math.floor(bx1 * w)
        y1 = math.floor(by1 * h)
    if x1 <= x0 or y1 <= y0:
        raise GeometryError(
            f"zone {zone.zone_id!r} maps to a degenerate rect on a {w}x{h} image"
        )
    extent = min(x1 - x0, y1 - y0)
    feather = round(zone.feather_px * extent / crop_size)
    feather = min(feather, extent // 2)
    return CropRegion(x0, y0, x1, y1, feather)


# ---------------------------------------------------------------------------
# resampling


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample with half-pixel-centered sampling, edges clamped.

    Equal sizes return an untouched copy (no resampling pass).
    """
    if img.ndim != 3:
        raise ShapeError(f"expected (H, W, C) image, got shape {img.shape}")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"output size {out_h}x{out_w} must be positive")
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()
    src = img.astype(np.float64, copy=False)
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    top = src[y0[:, None], x0[None, :]] * (1 - fx) + src[y0[:, None], x1[None, :]] * fx
    bot = src[y1[:, None], x0[None, :]] * (1 - fx) + src[y1[:, None], x1[None, :]] * fx
    out = top * (1 - fy) + bot * fy
    return out.astype(np.float32)


def extract_crop(face: np.ndarray, region: CropRegion, out_size: int = CROP_SIZE) -> np.ndarray:
    """Cut the region and resize to ``out_size`` square."""
    h, w = face.shape[0], face.shape[1]
    if region.x1 > w or region.y1 > h:
        raise GeometryError(
            f"region ({region.x0},{region.y0})-({region.x1},{region.y1}) "
            f"exceeds {w}x{h} image"
        )
    crop = face[region.y0 : region.y1, region.x0 : region.x1]
    return bilinear_resize(crop, out_size, out_size)


# ---------------------------------------------------------------------------
# feathered compositing


def feather_mask(region: CropRegion) -> np.ndarray:
    """Linear alpha ramp: 0 on the rect's boundary ring, 1 in the interior.

    alpha(p) = clamp(dist_to_edge(p) / feather_px, 0, 1), with distance
    measured in whole pixels (the boundary pixel ring is distance 0).
    """
    h, w = region.height, region.width
    if region.feather_px == 0:
        return np.ones((h, w), dtype=np.float32)
    i = np.arange(h)
    j = np.arange(w)
    di = np.minimum(i, h - 1 - i)
    dj = np.minimum(j, w - 1 - j)
    dist = np.minimum(di[:, None], dj[None, :])
    return np.clip(dist / region.feather_px, 0.0, 1.0).astype(np.float32)


def blend_crop(
    face: np.ndarray, region: CropRegion, new_crop: np.ndarray, mask: np.ndarray
) -> np.ndarray:
    """Alpha-composite ``new_crop`` over the region; outside is untouched."""
    h, w = region.height, region.width
    if new_crop.shape[:2] != (h, w):
        raise ShapeError(
            f"crop shape {new_crop.shape[:2]} does not match region {h}x{w}"
        )
    if mask.shape != (h, w):
        raise ShapeError(f"mask shape {mask.shape} does not match region {h}x{w}")
    if region.x1 > face.shape[1] or region.y1 > face.shape[0]:
        raise GeometryError("region exceeds face bounds")
    out = face.copy()
    old = out[region.y0 : region.y1, region.x0 : region.x1]
    a = mask[:, :, None].astype(face.dtype, copy=False)
    blended = np.where(a >= 1.0, new_crop, old + a * (new_crop - old))
    out[region.y0 : region.y1, region.x0 : region.x1] = blended
    return out


# ---------------------------------------------------------------------------
# PNG I/O


def load_image(path: str | Path) -> np.ndarray:
    """PNG (or anything PIL reads) -> (H, W, 3) float32 in [0, 1]."""
    with Image.open(path) as im:
        rgb = im.convert("RGB")
        return np.asarray(rgb, dtype=np.float32) / 255.0


def save_image(path: str | Path, img: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(_to_uint8(img), "RGB").save(path, format="PNG")


def decode_png(data: bytes) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(data)) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except (UnidentifiedImageError, OSError) as e:
        raise ParseError(f"cannot decode image bytes: {e}") from e


def encode_png(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(_to_uint8(img), "RGB").save(buf, format="PNG")
    return buf.getvalue()


def _to_uint8(img: np.ndarray) -> np.ndarray:
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"expected (H, W, 3) image, got shape {img.shape}")
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
