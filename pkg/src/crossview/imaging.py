"""Image containers and the ground/satellite view transformations.

Pixels are stored as ``height x width x channels`` arrays with values in
``[0, 1]``. Panorama column ``x`` corresponds to azimuth ``360 * x / width``
degrees, clockwise from north.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import GeometryError, KindError, ParameterError

GROUND = "ground_panorama"
SATELLITE = "satellite"
KINDS = (GROUND, SATELLITE)

SATELLITE_MODES = ("outer_rotation", "inner_rotation", "discrete_rotation")

# ITU-R BT.601 luma weights
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class ViewImage:
    pixels: np.ndarray
    kind: str
    width_degrees: float = 360.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise KindError(f"unknown image kind {self.kind!r}")
        px = self.pixels
        if px.ndim != 3:
            raise GeometryError(f"pixels must be HxWxC, got shape {px.shape}")
        h, w, _ = px.shape
        if h == 0 or w == 0:
            raise GeometryError(f"empty image of shape {px.shape}")
        if self.kind == SATELLITE and h != w:
            raise GeometryError(f"satellite image must be square, got {h}x{w}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise ParameterError("pixel values must be finite and within [0, 1]")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


@dataclass
class HeatMap:
    """Nonnegative 2-D activation map aligned to a reference image."""

    values: np.ndarray
    kind: str = GROUND
    width_degrees: float = 360.0
    score: float | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.values.ndim != 2:
            raise GeometryError(f"heatmap must be 2-D, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)) or self.values.min() < 0:
            raise ParameterError("heatmap values must be finite and nonnegative")


@dataclass(frozen=True)
class GroundTransformParams:
    alpha: float = 0.0
    theta: float = 360.0
    pad_to_full: bool = False

    def __post_init__(self):
        if not 0.0 <= self.alpha < 360.0:
            raise ParameterError(f"alpha must lie in [0, 360), got {self.alpha}")
        if not 0.0 < self.theta <= 360.0:
            raise ParameterError(f"theta must lie in (0, 360], got {self.theta}")


@dataclass(frozen=True)
class SatelliteTransformParams:
    mode: str = "discrete_rotation"
    phi: float = 0.0
    p: float = 0.0

    def __post_init__(self):
        if self.mode not in SATELLITE_MODES:
            raise ParameterError(f"unknown satellite transform mode {self.mode!r}")
        if self.mode == "discrete_rotation" and not 0.0 <= self.p <= 1.0:
            raise ParameterError(f"p must lie in [0, 1], got {self.p}")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def shift_columns(width: int, alpha: float) -> int:
    """Number of columns a panorama of ``width`` is shifted left by for ``alpha`` degrees."""
    return _round_half_up(width * alpha / 360.0) % width


def crop_width(width: int, theta: float) -> int:
    return max(1, _round_half_up(width * theta / 360.0))


def _ground_geometry(array: np.ndarray, params: GroundTransformParams) -> np.ndarray:
    width = array.shape[1]
    shift = shift_columns(width, params.alpha)
    w = min(width, crop_width(width, params.theta))
    rolled = np.roll(array, -shift, axis=1)
    crop = rolled[:, :w]
    if not params.pad_to_full:
        return np.ascontiguousarray(crop)
    out = np.zeros_like(array)
    out[:, (shift + np.arange(w)) % width] = crop
    return out


def transform_ground(img: ViewImage, params: GroundTransformParams, rng=None) -> ViewImage:
    """Shift a panorama by ``alpha`` and keep a ``theta``-degree field of view.

    With ``pad_to_full`` the crop is written back at its original azimuth
    columns of an otherwise zero panorama. ``rng`` is accepted for interface
    symmetry with the satellite transform and is not consumed.
    """
    if img.kind != GROUND:
        raise KindError(f"transform_ground expects a panorama, got {img.kind}")
    out = _ground_geometry(img.pixels, params)
    width_degrees = 360.0 if params.pad_to_full else 360.0 * out.shape[1] / img.width
    return ViewImage(out, GROUND, width_degrees)


def transform_heatmap_ground(hm: HeatMap, params: GroundTransformParams) -> HeatMap:
    if hm.kind != GROUND or hm.width_degrees != 360.0:
        raise GeometryError("heatmap is not aligned to a full 360-degree panorama")
    out = _ground_geometry(hm.values, params)
    width_degrees = 360.0 if params.pad_to_full else 360.0 * out.shape[1] / hm.values.shape[1]
    return HeatMap(out, GROUND, width_degrees)


def rotate_quarter_turns(img: ViewImage, k: int) -> ViewImage:
    """Rotate clockwise by ``k * 90`` degrees as an exact pixel permutation."""
    return ViewImage(np.ascontiguousarray(np.rot90(img.pixels, -k, axes=(0, 1))), img.kind,
                     img.width_degrees)


def rotation_scale(phi: float, mode: str) -> float:
    """Side of the sampled source square relative to the image side.

    ``outer_rotation`` samples the whole rotated bounding box,
    ``inner_rotation`` the largest axis-aligned square inside the rotated image.
    """
    rad = math.radians(phi)
    extent = abs(math.cos(rad)) + abs(math.sin(rad))
    return extent if mode == "outer_rotation" else 1.0 / extent


def rotate_continuous(pixels: np.ndarray, phi: float, mode: str) -> np.ndarray:
    """Clockwise rotation by ``phi`` degrees resampled back to the input size.

    Rotation and resize are folded into a single bilinear resampling, with
    zero fill outside the source image.
    """
    size = pixels.shape[0]
    c = (size - 1) / 2.0
    scale = rotation_scale(phi, mode)
    rad = math.radians(phi)
    cos, sin = math.cos(rad), math.sin(rad)
    rows, cols = np.meshgrid(np.arange(size, dtype=np.float64), np.arange(size, dtype=np.float64),
                             indexing="ij")
    # output offsets in the enlarged/shrunk canvas, then inverse clockwise rotation
    y = (rows - c) * scale
    x = (cols - c) * scale
    src_x = x * cos + y * sin + c
    src_y = -x * sin + y * cos + c
    out = np.empty_like(pixels)
    for ch in range(pixels.shape[2]):
        out[..., ch] = ndimage.map_coordinates(pixels[..., ch].astype(np.float64), [src_y, src_x],
                                               order=1, mode="constant", cval=0.0)
    return np.clip(out, 0.0, 1.0)


def transform_satellite(img: ViewImage, params: SatelliteTransformParams,
                        rng: np.random.Generator | None = None) -> ViewImage:
    if img.kind != SATELLITE:
        raise KindError(f"transform_satellite expects a satellite image, got {img.kind}")
    if img.height != img.width:
        raise GeometryError("satellite image must be square")
    if params.mode == "discrete_rotation":
        if rng is None:
            raise ParameterError("discrete_rotation needs a random source")
        # both draws always happen so the stream does not depend on p
        u = rng.random()
        k = int(rng.integers(1, 4))
        if u < params.p:
            return rotate_quarter_turns(img, k)
        return ViewImage(img.pixels.copy(), SATELLITE)
    out = rotate_continuous(img.pixels, params.phi, params.mode).astype(img.pixels.dtype)
    return ViewImage(out, SATELLITE)


def adjust_color(img: ViewImage, brightness: float, saturation: float) -> ViewImage:
    """Scale saturation around the per-pixel gray value, then brightness."""
    px = img.pixels.astype(np.float64)
    if img.channels == 3:
        gray = (px @ _LUMA)[..., None]
        px = px * saturation + gray * (1.0 - saturation)
    px = np.clip(px * brightness, 0.0, 1.0)
    return ViewImage(px.astype(img.pixels.dtype), img.kind, img.width_degrees)


def color_augment(img: ViewImage, strength: float, rng: np.random.Generator) -> ViewImage:
    if not 0.0 <= strength <= 1.0:
        raise ParameterError(f"strength must lie in [0, 1], got {strength}")
    brightness = rng.uniform(1.0 - strength, 1.0 + strength)
    saturation = rng.uniform(1.0 - strength, 1.0 + strength)
    return adjust_color(img, brightness, saturation)


def to_float(array_u8: np.ndarray) -> np.ndarray:
    return array_u8.astype(np.float32) / np.float32(255.0)


def to_uint8(pixels: np.ndarray) -> np.ndarray:
    return np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


def read_png(path: str | Path, kind: str) -> ViewImage:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"))
    return ViewImage(to_float(arr), kind)


def write_png(img: ViewImage | np.ndarray, path: str | Path) -> None:
    px = img.pixels if isinstance(img, ViewImage) else img
    if px.ndim == 3 and px.shape[2] == 1:
        px = px[..., 0]
    Image.fromarray(to_uint8(px)).save(path)
