"""Synthetic paired ground/satellite scenes and manifest loading.

A scene is a neutral square map with coloured landmarks. The satellite view
is the map itself; the panorama is rendered by casting one ray per column
from the map centre (column 0 looks north, azimuth grows clockwise). The
upper half shows the facade of the nearest landmark hit by the ray, taller
when closer; the lower half samples the ground along the ray, with distance
growing from the bottom row up to the horizon.
"""

from __future__ import annotations

import colorsys
import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import GenerationError, GeometryError, ParseError
from .imaging import GROUND, SATELLITE, ViewImage, read_png, to_float, write_png

BACKGROUND = np.array([128, 128, 128], dtype=np.uint8)
SKY = np.array([200, 220, 245], dtype=np.uint8)


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    map_size: int = 128
    panorama_size: tuple[int, int] = (32, 128)
    landmark_count: int = 6
    landmark_count_max: int | None = 10
    landmark_size_range: tuple[int, int] = (5, 12)
    palette_size: int = 8
    clear_radius: int = 10

    def __post_init__(self):
        h, w = self.panorama_size
        if w % 4 or h % 2:
            raise GeometryError("panorama width must be divisible by 4 and height even")
        if self.landmark_count < 3:
            raise GeometryError("at least 3 landmarks are required")
        if self.palette_size < 4:
            raise GeometryError("palette needs at least 4 colours")
        lo, hi = self.landmark_size_range
        if not 1 <= lo <= hi or 2 * hi + 2 >= self.map_size:
            raise GeometryError(f"landmark size range {self.landmark_size_range} does not fit the map")


@dataclass
class ScenePair:
    satellite: ViewImage
    panorama: ViewImage
    id: str
    ground_truth_azimuth_zero: float = 0.0  # map bearing (clockwise from up) of panorama column 0


def palette(size: int) -> np.ndarray:
    """Evenly spaced saturated hues, alternating two value levels; never the background."""
    colours = []
    for i in range(size):
        value = 0.95 if i % 2 == 0 else 0.6
        r, g, b = colorsys.hsv_to_rgb(i / size, 0.85, value)
        colours.append([round(r * 255), round(g * 255), round(b * 255)])
    out = np.array(colours, dtype=np.uint8)
    assert not np.any(np.all(out == BACKGROUND, axis=1))
    return out


def _place_landmarks(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    size = spec.map_size
    if spec.landmark_count_max is not None:
        count = int(rng.integers(spec.landmark_count, spec.landmark_count_max + 1))
    else:
        count = spec.landmark_count
    colours = palette(spec.palette_size)
    canvas = np.empty((size, size, 3), dtype=np.uint8)
    canvas[:] = BACKGROUND
    occupied = np.zeros((size, size), dtype=bool)
    rows, cols = np.mgrid[0:size, 0:size]
    cy = cx = size / 2.0
    centre = (rows + 0.5 - cy) ** 2 + (cols + 0.5 - cx) ** 2 <= spec.clear_radius ** 2
    lo, hi = spec.landmark_size_range
    placed = 0
    for _ in range(count * 200):
        if placed == count:
            break
        half = int(rng.integers(lo, hi + 1))
        y = int(rng.integers(half + 1, size - half - 1))
        x = int(rng.integers(half + 1, size - half - 1))
        if rng.random() < 0.5:
            mask = (rows - y) ** 2 + (cols - x) ** 2 <= half ** 2
        else:
            half_w = int(rng.integers(max(1, half // 2), half + 1))
            mask = (np.abs(rows - y) <= half) & (np.abs(cols - x) <= half_w)
        colour = colours[int(rng.integers(len(colours)))]
        # one-pixel gap keeps landmarks separable
        grown = mask | np.roll(mask, 1, 0) | np.roll(mask, -1, 0) | np.roll(mask, 1, 1) | np.roll(mask, -1, 1)
        if np.any(grown & occupied) or np.any(mask & centre):
            continue
        canvas[mask] = colour
        occupied |= mask
        placed += 1
    if placed < count:
        raise GenerationError(f"could only place {placed} of {count} landmarks (seed {spec.seed})")
    return canvas


def render_panorama(map_u8: np.ndarray, panorama_size: tuple[int, int]) -> np.ndarray:
    """Ray-cast a north-aligned panorama (uint8) from the centre of ``map_u8``."""
    size = map_u8.shape[0]
    h, w = panorama_size
    half = h // 2
    max_r = size / 2.0
    step = 0.5
    radii = np.arange(step, max_r, step)
    az = 2.0 * np.pi * np.arange(w) / w
    c = size / 2.0
    ys = np.floor(c - np.outer(np.cos(az), radii)).astype(int)  # w x R
    xs = np.floor(c + np.outer(np.sin(az), radii)).astype(int)
    inside = (ys >= 0) & (ys < size) & (xs >= 0) & (xs < size)
    samples = map_u8[np.clip(ys, 0, size - 1), np.clip(xs, 0, size - 1)]
    samples[~inside] = BACKGROUND
    hit = np.any(samples != BACKGROUND, axis=2)

    out = np.empty((h, w, 3), dtype=np.uint8)
    out[:half] = SKY
    first = np.where(hit.any(axis=1), hit.argmax(axis=1), -1)
    for col in range(w):
        k = first[col]
        if k < 0:
            continue
        dist = radii[k]
        height = int(math.ceil(half * min(1.0, 6.0 / dist)))
        out[half - height:half, col] = samples[col, k]
    # ground: bottom row is nearest, the row just below the horizon is farthest
    ground_r = (np.arange(half)[::-1] + 0.5) * (max_r / half)  # row offset -> distance
    idx = np.minimum((ground_r / step).astype(int) - 1, len(radii) - 1).clip(0)
    out[half:] = np.transpose(samples[:, idx], (1, 0, 2))
    return out


def generate_scene(spec: SceneSpec, scene_id: str | None = None) -> ScenePair:
    rng = np.random.default_rng(spec.seed)
    map_u8 = _place_landmarks(spec, rng)
    pano_u8 = render_panorama(map_u8, spec.panorama_size)
    return ScenePair(
        satellite=ViewImage(to_float(map_u8), SATELLITE),
        panorama=ViewImage(to_float(pano_u8), GROUND),
        id=scene_id if scene_id is not None else f"seed{spec.seed}",
    )


def scene_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0])


def generate_dataset(count: int, base_seed: int, out_dir: str | Path,
                     template: SceneSpec | None = None) -> Path:
    """Write ``sat/<id>.png``, ``grd/<id>.png`` and ``manifest.csv``; return the manifest path."""
    if count < 1:
        raise ValueError("count must be >= 1")
    template = template or SceneSpec()
    out = Path(out_dir)
    rows = []
    try:
        (out / "sat").mkdir(parents=True, exist_ok=True)
        (out / "grd").mkdir(parents=True, exist_ok=True)
        for i in range(count):
            sid = f"b{base_seed}_{i:05d}"
            spec = SceneSpec(**{**template.__dict__, "seed": scene_seed(base_seed, i)})
            pair = generate_scene(spec, sid)
            sat_rel, grd_rel = f"sat/{sid}.png", f"grd/{sid}.png"
            write_png(pair.satellite, out / sat_rel)
            write_png(pair.panorama, out / grd_rel)
            rows.append((sid, sat_rel, grd_rel))
        manifest = out / "manifest.csv"
        with open(manifest, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["id", "sat_path", "grd_path"])
            writer.writerows(rows)
    except OSError as exc:
        raise OSError(f"failed writing dataset under {out}: {exc}") from exc
    return manifest


def _validated(sat_path: Path, grd_path: Path, sid: str, line: int) -> ScenePair:
    for p in (sat_path, grd_path):
        if not p.is_file():
            raise ParseError(f"line {line}: missing file {p}")
    sat = read_png(sat_path, SATELLITE)
    grd = read_png(grd_path, GROUND)
    return ScenePair(sat, grd, sid)


def load_split(path: str | Path) -> Iterator[ScenePair]:
    """Stream pairs from a manifest or a CVUSA-style split file, in file order.

    Manifests have the header ``id,sat_path,grd_path``. Split files without a
    header use the CVUSA convention: satellite path, ground path, then any
    extra columns; the id is the ground file stem. Relative paths resolve
    against the file's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"split file not found: {path}")
    root = path.parent
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return
    header = [c.strip() for c in rows[0]]
    has_header = header[:3] == ["id", "sat_path", "grd_path"]
    start = 1 if has_header else 0
    seen = set()
    for offset, row in enumerate(rows[start:]):
        line = offset + start + 1
        if not row or all(not c.strip() for c in row):
            continue
        cells = [c.strip() for c in row]
        if has_header:
            if len(cells) < 3 or not all(cells[:3]):
                raise ParseError(f"line {line}: expected id,sat_path,grd_path, got {row!r}")
            sid, sat, grd = cells[:3]
        else:
            if len(cells) < 2 or not cells[0] or not cells[1]:
                raise ParseError(f"line {line}: expected satellite and ground paths, got {row!r}")
            sat, grd = cells[:2]
            sid = Path(grd).stem
        if sid in seen:
            raise ParseError(f"line {line}: duplicate id {sid!r}")
        seen.add(sid)
        yield _validated(root / sat, root / grd, sid, line)
