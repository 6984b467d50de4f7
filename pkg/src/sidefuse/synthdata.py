"""Deterministic synthetic snowy-UAV-video generator with exact annotations.

Videos are stacks of 64x64 frames sharing one background, palette, and
domain (snow cover, contrast, blur). Vehicles are shaded rotated rectangles
4-10 px on a side, at most one per 16x16 grid cell, boxes overlapping by at
most IoU 0.1. Snow speckle covers the background and, proportionally to the
snow level, the vehicles themselves, so heavy snow makes vehicles blend in.

Random streams are split per purpose (layout vs snow vs texture), so two
videos generated from the same seed but different snow levels contain the
same vehicles in the same places — matched scene pairs for domain probes.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .detect import FRAME_SIZE, GRID, GtBox, validate_gt_box
from .imageops import gaussian_blur, quantize8, upsample_field

log = logging.getLogger(__name__)

CELL = FRAME_SIZE // GRID

# seed-stream tags
_T_BACKGROUND = 11
_T_SNOWFIELD = 12
_T_LAYOUT = 13
_T_VEHSNOW = 14
_T_PROXY = 15
_T_CAMERA = 16

# terrain is rendered larger than the frame; the camera window drifts over it
_TERRAIN = 96

# fraction of a vehicle hidden under speckle at snow_cover = 1, and the
# opacity of settled snow (semi-transparent: surfaces dust over, shapes
# remain partially visible until cover is heavy)
VEHICLE_SNOW_COVER = 0.85
SNOW_ALPHA = 0.75

PALETTES = [
    {"base": (0.30, 0.38, 0.25), "amp": 0.10},   # grass field
    {"base": (0.18, 0.24, 0.16), "amp": 0.08},   # dark forest
    {"base": (0.42, 0.40, 0.37), "amp": 0.09},   # gravel
    {"base": (0.33, 0.33, 0.36), "amp": 0.07},   # tarmac
    {"base": (0.40, 0.34, 0.24), "amp": 0.11},   # ploughed field
    {"base": (0.26, 0.33, 0.30), "amp": 0.09},   # marshland
]

VEHICLE_COLORS = np.array([
    (0.05, 0.05, 0.06),   # black
    (0.09, 0.09, 0.11),   # charcoal
    (0.13, 0.14, 0.22),   # navy
    (0.28, 0.07, 0.06),   # dark red
    (0.65, 0.10, 0.08),   # bright red
    (0.75, 0.35, 0.08),   # orange
    (0.55, 0.50, 0.14),   # yellow
    (0.70, 0.71, 0.74),   # silver
    (0.86, 0.87, 0.89),   # white
], dtype=np.float32)

# only colors that clearly contrast with a palette's base luminance are used
# on that palette, so clear scenes always show visible vehicles
_PALETTE_COLOR_POOL: list[list[int]] = []
for _pal in PALETTES:
    _bg_lum = float(np.mean(_pal["base"]))
    _pool = [i for i, c in enumerate(VEHICLE_COLORS)
             if abs(float(np.mean(c)) - _bg_lum) >= 0.18]
    _PALETTE_COLOR_POOL.append(_pool)


@dataclass(frozen=True)
class DomainParams:
    snow_cover: float
    contrast: float
    blur_sigma: float
    texture_seed: int
    palette: int

    def __post_init__(self):
        if not 0.0 <= self.snow_cover <= 1.0:
            raise ValueError(f"snow_cover out of [0,1]: {self.snow_cover}")
        if not 0.4 <= self.contrast <= 1.0:
            raise ValueError(f"contrast out of [0.4,1.0]: {self.contrast}")
        if not 0.0 <= self.blur_sigma <= 1.5:
            raise ValueError(f"blur_sigma out of [0,1.5]: {self.blur_sigma}")
        if not 0 <= self.palette < len(PALETTES):
            raise ValueError(f"palette id out of range: {self.palette}")

    def to_json(self) -> dict:
        return {"snow_cover": self.snow_cover, "contrast": self.contrast,
                "blur_sigma": self.blur_sigma, "texture_seed": self.texture_seed,
                "palette": self.palette}

    @staticmethod
    def from_json(d: dict) -> "DomainParams":
        return DomainParams(d["snow_cover"], d["contrast"], d["blur_sigma"],
                            d["texture_seed"], d["palette"])


@dataclass
class SynthVideo:
    video_id: str
    domain: DomainParams
    frames: np.ndarray                  # (F, 3, 64, 64) float32 in [0,1]
    annotations: list[list[GtBox]]
    annotated: bool


@dataclass
class Corpus:
    videos: list[SynthVideo]
    roles: dict[str, str]               # video_id -> train | val | test | unannotated
    seed: int
    gap: str = "default"

    def video(self, video_id: str) -> SynthVideo:
        for v in self.videos:
            if v.video_id == video_id:
                return v
        raise KeyError(f"no video '{video_id}' in corpus")

    @property
    def annotated_videos(self) -> list[SynthVideo]:
        return [v for v in self.videos if v.annotated]

    @property
    def unannotated_pool(self) -> list[SynthVideo]:
        return [v for v in self.videos if not v.annotated]


FrameRef = tuple[str, int]


@dataclass
class SplitPlan:
    protocol: str
    train: list[FrameRef]
    val: list[FrameRef]
    test: list[FrameRef]
    val_video: str = ""


def _rng(*entropy: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(entropy)))


def _background(domain: DomainParams, size: int = _TERRAIN) -> np.ndarray:
    rng = _rng(domain.texture_seed, _T_BACKGROUND)
    pal = PALETTES[domain.palette]
    base = np.asarray(pal["base"], dtype=np.float32)[:, None, None]
    grid = max(5, int(round(9 * size / FRAME_SIZE)))
    lum = upsample_field(rng.random((grid, grid), dtype=np.float64).astype(np.float32),
                         size, size) - 0.5
    tint = upsample_field(rng.random((5, 5), dtype=np.float64).astype(np.float32),
                          size, size) - 0.5
    tint_w = (rng.random(3).astype(np.float32) - 0.5)[:, None, None]
    img = base + np.float32(pal["amp"]) * lum[None] + np.float32(0.12) * tint_w * tint[None]
    img += np.float32(0.015) * rng.standard_normal((3, size, size)).astype(np.float32)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _camera_path(seed: int, n_frames: int, span: int) -> np.ndarray:
    """Slowly drifting integer window offsets, like a hovering drone."""
    rng = _rng(seed, _T_CAMERA)
    pos = rng.uniform(0, span, size=2)
    out = np.empty((n_frames, 2), dtype=np.int64)
    for f in range(n_frames):
        out[f] = np.clip(np.round(pos), 0, span)
        pos = np.clip(pos + rng.uniform(-2.0, 2.0, size=2), 0, span)
    return out


def _speckle_field(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    # fine-grained speckle: snow reads as dust and drifts, not vehicle-sized blobs
    coarse = upsample_field(rng.random((16, 16), dtype=np.float64).astype(np.float32), h, w)
    fine = rng.random((h, w), dtype=np.float64).astype(np.float32)
    return 0.45 * coarse + 0.55 * fine


def _snow_color(rng: np.random.Generator, shape_hw: tuple[int, int]) -> np.ndarray:
    base = np.array([0.90, 0.92, 0.95], dtype=np.float32)[:, None, None]
    return base + np.float32(0.05) * (
        rng.random((1,) + shape_hw, dtype=np.float64).astype(np.float32) - 0.5)


def _apply_field_snow(img: np.ndarray, field: np.ndarray, coverage: float,
                      color: np.ndarray) -> np.ndarray:
    """Overlay snow on the pixels where ``field`` is above its (1-coverage) quantile."""
    if coverage <= 0.0:
        return img
    thresh = np.quantile(field, max(0.0, 1.0 - coverage))
    mask = (field >= thresh).astype(np.float32)[None] * np.float32(SNOW_ALPHA)
    return img * (1.0 - mask) + color * mask


@dataclass
class _VehicleGeom:
    cx: float
    cy: float
    length: float
    width: float
    theta: float
    color_idx: int
    brightness: float

    def half_extents(self) -> tuple[float, float]:
        c, s = abs(math.cos(self.theta)), abs(math.sin(self.theta))
        return ((self.length * c + self.width * s) / 2.0,
                (self.length * s + self.width * c) / 2.0)

    def box(self) -> GtBox:
        hx, hy = self.half_extents()
        return GtBox(self.cx - hx, self.cy - hy, self.cx + hx, self.cy + hy)


def _box_iou(a: GtBox, b: GtBox) -> float:
    ix = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    iy = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = ix * iy
    if inter == 0.0:
        return 0.0
    return inter / ((a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter)


def _sample_vehicles(rng: np.random.Generator, n_vehicles: int,
                     color_pool: list[int],
                     max_tries: int = 100) -> list[_VehicleGeom] | None:
    """One placement attempt set; None if constraints cannot be met."""
    for _ in range(max_tries):
        cells = rng.choice(GRID * GRID, size=n_vehicles, replace=False)
        geoms: list[_VehicleGeom] = []
        boxes: list[GtBox] = []
        ok = True
        for cell in cells:
            length = float(rng.uniform(6.5, 10.0))
            width = float(rng.uniform(4.5, min(7.0, length - 1.5)))
            theta = float(rng.uniform(0.0, math.pi))
            g = _VehicleGeom(0.0, 0.0, length, width, theta,
                             color_pool[int(rng.integers(0, len(color_pool)))],
                             float(rng.uniform(0.9, 1.1)))
            hx, hy = g.half_extents()
            row, col = divmod(int(cell), GRID)
            xlo = max(col * CELL + 3.0, hx + 0.5)
            xhi = min(col * CELL + CELL - 3.0, FRAME_SIZE - hx - 0.5)
            ylo = max(row * CELL + 3.0, hy + 0.5)
            yhi = min(row * CELL + CELL - 3.0, FRAME_SIZE - hy - 0.5)
            if xlo > xhi or ylo > yhi:
                ok = False
                break
            g.cx = float(rng.uniform(xlo, xhi))
            g.cy = float(rng.uniform(ylo, yhi))
            box = g.box()
            if any(_box_iou(box, other) > 0.1 for other in boxes):
                ok = False
                break
            geoms.append(g)
            boxes.append(box)
        if ok:
            return geoms
    return None


def _draw_vehicle(img: np.ndarray, g: _VehicleGeom) -> None:
    hx, hy = g.half_extents()
    x_lo = max(0, int(math.floor(g.cx - hx)) - 1)
    x_hi = min(FRAME_SIZE, int(math.ceil(g.cx + hx)) + 1)
    y_lo = max(0, int(math.floor(g.cy - hy)) - 1)
    y_hi = min(FRAME_SIZE, int(math.ceil(g.cy + hy)) + 1)
    if x_lo >= x_hi or y_lo >= y_hi:
        return
    # 2x2 supersampled coverage for soft edges
    sub = np.array([0.25, 0.75], dtype=np.float32)
    ys = (np.arange(y_lo, y_hi, dtype=np.float32)[:, None] + sub[None, :]).reshape(-1)
    xs = (np.arange(x_lo, x_hi, dtype=np.float32)[:, None] + sub[None, :]).reshape(-1)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    c, s = math.cos(g.theta), math.sin(g.theta)
    u = (xx - g.cx) * c + (yy - g.cy) * s
    v = -(xx - g.cx) * s + (yy - g.cy) * c
    inside = (np.abs(u) <= g.length / 2.0) & (np.abs(v) <= g.width / 2.0)
    h_px, w_px = y_hi - y_lo, x_hi - x_lo
    alpha = inside.astype(np.float32).reshape(h_px, 2, w_px, 2).mean(axis=(1, 3))

    # pixel-center shading: lighter toward the front, darker cabin stripe
    yc = np.arange(y_lo, y_hi, dtype=np.float32)[:, None] + 0.5
    xc = np.arange(x_lo, x_hi, dtype=np.float32)[None, :] + 0.5
    uc = (xc - g.cx) * c + (yc - g.cy) * s
    shade = 1.0 + 0.20 * (uc / (g.length / 2.0))
    cabin = np.abs(uc - g.length * 0.12) < g.length * 0.16
    shade = np.where(cabin, shade * 0.78, shade)
    color = VEHICLE_COLORS[g.color_idx][:, None, None] * np.float32(g.brightness)
    patch = np.clip(color * shade[None], 0.0, 1.0)
    region = img[:, y_lo:y_hi, x_lo:x_hi]
    img[:, y_lo:y_hi, x_lo:x_hi] = region * (1.0 - alpha[None]) + patch * alpha[None]


def _snow_over_vehicle(img: np.ndarray, g: _VehicleGeom, snow_cover: float,
                       rng: np.random.Generator) -> None:
    cover = snow_cover * VEHICLE_SNOW_COVER
    if cover <= 0.0:
        return
    box = g.box()
    x_lo, x_hi = max(0, int(box.x1)), min(FRAME_SIZE, int(math.ceil(box.x2)))
    y_lo, y_hi = max(0, int(box.y1)), min(FRAME_SIZE, int(math.ceil(box.y2)))
    if x_lo >= x_hi or y_lo >= y_hi:
        return
    h_px, w_px = y_hi - y_lo, x_hi - x_lo
    fld = rng.random((h_px, w_px), dtype=np.float64).astype(np.float32)
    thresh = np.quantile(fld, max(0.0, 1.0 - cover))
    mask = (fld >= thresh).astype(np.float32)[None] * np.float32(SNOW_ALPHA)
    color = _snow_color(rng, (h_px, w_px))
    region = img[:, y_lo:y_hi, x_lo:x_hi]
    img[:, y_lo:y_hi, x_lo:x_hi] = region * (1.0 - mask) + color * mask


def generate_video(video_id: str, domain: DomainParams, n_frames: int,
                   n_vehicles_range: tuple[int, int], seed: int,
                   annotated: bool = True) -> SynthVideo:
    """Render one video; all frames share the background and snow field."""
    lo, hi = n_vehicles_range
    if not (0 <= lo <= hi):
        raise ValueError(f"bad n_vehicles_range {n_vehicles_range}")
    terrain = _background(domain)
    snow_rng = _rng(seed, _T_SNOWFIELD)
    terrain = _apply_field_snow(
        terrain, _speckle_field(snow_rng, _TERRAIN, _TERRAIN),
        domain.snow_cover, _snow_color(snow_rng, (_TERRAIN, _TERRAIN)))
    camera = _camera_path(seed, n_frames, _TERRAIN - FRAME_SIZE)

    color_pool = _PALETTE_COLOR_POOL[domain.palette]
    frames = np.empty((n_frames, 3, FRAME_SIZE, FRAME_SIZE), dtype=np.float32)
    annotations: list[list[GtBox]] = []
    for f in range(n_frames):
        layout_rng = _rng(seed, _T_LAYOUT, f)
        vehsnow_rng = _rng(seed, _T_VEHSNOW, f)
        n = int(layout_rng.integers(lo, hi + 1))
        geoms = _sample_vehicles(layout_rng, n, color_pool)
        while geoms is None and n > 0:
            n -= 1
            log.warning("video %s frame %d: placement infeasible, retrying with %d vehicles",
                        video_id, f, n)
            geoms = _sample_vehicles(layout_rng, n, color_pool)
        geoms = geoms or []
        oy, ox = camera[f]
        img = terrain[:, oy:oy + FRAME_SIZE, ox:ox + FRAME_SIZE].copy()
        boxes: list[GtBox] = []
        for g in geoms:
            _draw_vehicle(img, g)
            boxes.append(g.box())
        for g in geoms:
            _snow_over_vehicle(img, g, domain.snow_cover, vehsnow_rng)
        img = 0.5 + domain.contrast * (img - 0.5)
        img = gaussian_blur(img, domain.blur_sigma)
        frames[f] = quantize8(img)
        # unannotated videos ship without labels, like the real pool
        annotations.append(boxes if annotated else [])
    return SynthVideo(video_id, domain, frames, annotations, annotated)


# the test video shares a train video's landscape palette but is a new
# location (texture) on a different date (snow level): the held-out gap is
# chiefly the weather, like the benchmark it mirrors
_ANNOTATED_SPECS = {
    "default": [
        # (video_id, role, snow, contrast, blur, palette)
        ("v1", "train", 0.05, 0.95, 0.15, 0),
        ("v2", "train", 0.30, 0.85, 0.35, 1),
        ("v3", "train", 0.55, 0.90, 0.10, 2),
        ("v4", "val", 0.10, 0.70, 0.60, 3),
        ("v5", "test", 0.70, 0.85, 0.30, 1),
    ],
    "wide": [
        ("v1", "train", 0.00, 0.95, 0.15, 0),
        ("v2", "train", 0.10, 0.85, 0.35, 1),
        ("v3", "train", 0.20, 0.90, 0.10, 2),
        ("v4", "val", 0.05, 0.70, 0.60, 3),
        ("v5", "test", 0.85, 0.80, 0.30, 1),
    ],
}

_POOL_SNOW = [0.02, 0.10, 0.18, 0.27, 0.36, 0.45, 0.55, 0.64, 0.73, 0.82, 0.90, 0.98]
_POOL_CONTRAST = [0.95, 0.80, 0.65, 0.50]
_POOL_BLUR = [0.10, 0.50, 0.90, 1.30]


def standard_corpus(seed: int, gap: str = "default",
                    frames_per_video: int = 200) -> Corpus:
    """5 annotated videos mirroring the train/val/test roles + a 12-video pool.

    Train snow stays low-to-medium, the held-out test video is freshly
    snow-covered, and the unannotated pool spans the whole snow range
    including the test regime.
    """
    if gap not in _ANNOTATED_SPECS:
        raise ValueError(f"unknown gap variant '{gap}' (expected 'default' or 'wide')")
    videos: list[SynthVideo] = []
    roles: dict[str, str] = {}
    for idx, (vid, role, snow, contrast, blur, palette) in enumerate(_ANNOTATED_SPECS[gap]):
        domain = DomainParams(snow, contrast, blur, seed * 1000 + idx, palette)
        videos.append(generate_video(vid, domain, frames_per_video, (1, 3),
                                     seed=seed * 100 + idx, annotated=True))
        roles[vid] = role
    for j, snow in enumerate(_POOL_SNOW):
        vid = f"u{j + 1:02d}"
        domain = DomainParams(snow, _POOL_CONTRAST[j % 4], _POOL_BLUR[(j + 1) % 4],
                              seed * 1000 + 50 + j, j % len(PALETTES))
        videos.append(generate_video(vid, domain, frames_per_video, (0, 3),
                                     seed=seed * 100 + 50 + j, annotated=False))
        roles[vid] = "unannotated"
    return Corpus(videos, roles, seed, gap)


def make_split(corpus: Corpus, protocol: str) -> SplitPlan:
    annotated = corpus.annotated_videos
    by_role: dict[str, list[SynthVideo]] = {"train": [], "val": [], "test": []}
    for v in annotated:
        by_role[corpus.roles[v.video_id]].append(v)
    if protocol == "video_level":
        return SplitPlan(
            protocol,
            [(v.video_id, i) for v in by_role["train"] for i in range(len(v.frames))],
            [(v.video_id, i) for v in by_role["val"] for i in range(len(v.frames))],
            [(v.video_id, i) for v in by_role["test"] for i in range(len(v.frames))],
            val_video=by_role["val"][0].video_id if by_role["val"] else "")
    if protocol == "frame_level_80_20":
        train: list[FrameRef] = []
        val: list[FrameRef] = []
        for v in annotated:
            if corpus.roles[v.video_id] == "test":
                continue
            cut = int(len(v.frames) * 0.8)
            train += [(v.video_id, i) for i in range(cut)]
            val += [(v.video_id, i) for i in range(cut, len(v.frames))]
        test = [(v.video_id, i) for v in by_role["test"] for i in range(len(v.frames))]
        return SplitPlan(protocol, train, val, test, val_video="")
    raise ValueError(f"unknown split protocol '{protocol}'")


def make_loo_splits(corpus: Corpus) -> list[SplitPlan]:
    """Leave-one-video-out validation plans; the test video never moves."""
    annotated = corpus.annotated_videos
    test_videos = [v for v in annotated if corpus.roles[v.video_id] == "test"]
    others = [v for v in annotated if corpus.roles[v.video_id] != "test"]
    test = [(v.video_id, i) for v in test_videos for i in range(len(v.frames))]
    plans = []
    for held_out in others:
        train = [(v.video_id, i) for v in others if v is not held_out
                 for i in range(len(v.frames))]
        val = [(held_out.video_id, i) for i in range(len(held_out.frames))]
        plans.append(SplitPlan("video_level", train, val, list(test),
                               val_video=held_out.video_id))
    return plans


# ---------------------------------------------------------------------------
# proxy upstream-pretraining dataset: vehicle-count classification {0, 1, 2+}
# ---------------------------------------------------------------------------

# count labels are only supervised on scenes this clear; under heavier
# speckle the 3-way count task is unlearnable (flecks pass for vehicles)
CLS_SNOW_LIMIT = 0.15


@dataclass
class ProxyDataset:
    images: np.ndarray   # (M, 3, 64, 64)
    labels: np.ndarray   # (M,) ints in {0, 1, 2}
    boxes: list          # per-scene GtBox lists (free from the generator)
    snow: np.ndarray     # (M,) per-scene snow level
    snow_range: tuple[float, float] = (0.0, 0.6)

    @property
    def cls_mask(self) -> np.ndarray:
        return self.snow <= CLS_SNOW_LIMIT


def proxy_dataset(seed: int, n_scenes: int = 900,
                  snow_range: tuple[float, float] = (0.0, 0.6)) -> ProxyDataset:
    """Diverse frames over many backgrounds; labels are vehicle counts.

    Every background appears once per count class, so backgrounds carry no
    label information and the classifier must look at vehicles. Snow spans
    ``snow_range`` — disjoint from the held-out test regime — over far more
    palettes and textures than the three annotated train videos; clean
    scenes are over-sampled because only they carry usable count labels
    (``cls_mask``).
    """
    rng = _rng(seed, _T_PROXY)
    n_scenes = 3 * max(1, n_scenes // 3)
    images = np.empty((n_scenes, 3, FRAME_SIZE, FRAME_SIZE), dtype=np.float32)
    labels = np.empty(n_scenes, dtype=np.int64)
    snow = np.empty(n_scenes, dtype=np.float32)
    boxes: list[list[GtBox]] = []
    for bg in range(n_scenes // 3):
        # half the collection is clear-weather; the rest spans the range.
        # blur/contrast stay mild: heavy corruption of 4 px vehicles rewards
        # nothing but memorization
        if bg % 2 == 0:
            s = float(rng.uniform(snow_range[0], min(snow_range[1], CLS_SNOW_LIMIT)))
        else:
            s = float(rng.uniform(*snow_range))
        domain = DomainParams(
            s, float(rng.uniform(0.7, 1.0)),
            float(rng.uniform(0.0, 0.5)), int(rng.integers(0, 2 ** 31 - 1)),
            int(rng.integers(0, len(PALETTES))))
        for label in range(3):
            i = bg * 3 + label
            count = label if label < 2 else int(rng.integers(2, 4))
            video = generate_video(f"proxy{i}", domain, 1, (count, count),
                                   seed=int(rng.integers(0, 2 ** 31 - 1)),
                                   annotated=True)
            images[i] = video.frames[0]
            labels[i] = min(len(video.annotations[0]), 2)
            snow[i] = s
            boxes.append(video.annotations[0])
    return ProxyDataset(images, labels, boxes, snow, snow_range)


# ---------------------------------------------------------------------------
# on-disk layout: PPM frames + annotations.csv per video + manifest.json
# ---------------------------------------------------------------------------

def _write_ppm(path: Path, img: np.ndarray) -> None:
    arr = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    hwc = np.ascontiguousarray(arr.transpose(1, 2, 0))
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.shape[2]} {img.shape[1]}\n255\n".encode("ascii"))
        fh.write(hwc.tobytes())


def _read_ppm(path: Path) -> np.ndarray:
    blob = path.read_bytes()
    parts = blob.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    w, h = (int(t) for t in parts[1].split())
    if parts[2] != b"255":
        raise ValueError(f"{path}: expected 8-bit PPM")
    data = np.frombuffer(parts[3], dtype=np.uint8, count=h * w * 3).reshape(h, w, 3)
    return (data.transpose(2, 0, 1).astype(np.float32) / np.float32(255.0))


def save_corpus(corpus: Corpus, out_dir: str | Path) -> None:
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {"seed": corpus.seed, "gap": corpus.gap, "videos": []}
    for v in corpus.videos:
        vdir = root / v.video_id
        vdir.mkdir(parents=True, exist_ok=True)
        for i in range(len(v.frames)):
            _write_ppm(vdir / f"frame_{i:05d}.ppm", v.frames[i])
        if v.annotated:
            lines = ["frame_id,x1,y1,x2,y2"]
            for i, boxes in enumerate(v.annotations):
                for b in boxes:
                    lines.append(f"frame_{i:05d},{b.x1:.4f},{b.y1:.4f},{b.x2:.4f},{b.y2:.4f}")
            (vdir / "annotations.csv").write_text("\n".join(lines) + "\n")
        manifest["videos"].append({
            "video_id": v.video_id, "annotated": v.annotated,
            "role": corpus.roles[v.video_id], "n_frames": int(len(v.frames)),
            "domain": v.domain.to_json()})
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_corpus(in_dir: str | Path) -> Corpus:
    root = Path(in_dir)
    manifest = json.loads((root / "manifest.json").read_text())
    videos: list[SynthVideo] = []
    roles: dict[str, str] = {}
    for entry in manifest["videos"]:
        vid = entry["video_id"]
        vdir = root / vid
        n = entry["n_frames"]
        frames = np.stack([_read_ppm(vdir / f"frame_{i:05d}.ppm") for i in range(n)])
        annotations: list[list[GtBox]] = [[] for _ in range(n)]
        if entry["annotated"]:
            for line in (vdir / "annotations.csv").read_text().strip().splitlines()[1:]:
                frame_id, x1, y1, x2, y2 = line.split(",")
                box = GtBox(float(x1), float(y1), float(x2), float(y2))
                validate_gt_box(box)
                annotations[int(frame_id.split("_")[1])].append(box)
        videos.append(SynthVideo(vid, DomainParams.from_json(entry["domain"]),
                                 frames, annotations, entry["annotated"]))
        roles[vid] = entry["role"]
    return Corpus(videos, roles, manifest["seed"], manifest["gap"])
