"""Synthetic spine phantoms, PGM/PPM I/O, dataset splits and augmentation."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .errors import DataError

# ---------------------------------------------------------------------------
# samples
# ---------------------------------------------------------------------------


@dataclass
class Sample:
    image: np.ndarray  # float64 [H, W] in [0, 1]
    mask: np.ndarray  # uint8 [H, W] in {0, 1}
    id: str = ""

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=np.uint8)
        if self.image.shape != self.mask.shape or self.image.ndim != 2:
            raise DataError(f"image {self.image.shape} and mask {self.mask.shape} must be equal 2-D shapes")
        if np.any(self.mask > 1):
            raise DataError("mask must be binary")


def sample_rng(seed: int, *keys: int | str) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``; string keys are hashed stably."""
    words = [seed & 0xFFFFFFFF]
    for k in keys:
        words.append(zlib.crc32(k.encode()) if isinstance(k, str) else int(k) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(words))


# ---------------------------------------------------------------------------
# PGM / PPM
# ---------------------------------------------------------------------------


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        if buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif buf[pos : pos + 1].isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise DataError("malformed header: unexpected end of file")
    return buf[start:pos], pos


def _read_netpbm(path: str | Path, magic: bytes, channels: int) -> np.ndarray:
    buf = Path(path).read_bytes()
    if len(buf) < 2 or buf[:2] != magic:
        kind = buf[:2].decode("latin-1", "replace") if buf else "empty file"
        raise DataError(f"{path}: unsupported format {kind!r}, expected {magic.decode()}")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        if not tok.isdigit():
            raise DataError(f"{path}: malformed header token {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise DataError(f"{path}: maxval {maxval} unsupported, only 255")
    if width < 1 or height < 1:
        raise DataError(f"{path}: bad dimensions {width}x{height}")
    # exactly one whitespace byte separates the header from the raster
    pos += 1
    need = width * height * channels
    payload = buf[pos : pos + need]
    if len(payload) != need:
        raise DataError(f"{path}: truncated payload ({len(payload)} of {need} bytes)")
    arr = np.frombuffer(payload, dtype=np.uint8)
    return arr.reshape(height, width, channels) if channels > 1 else arr.reshape(height, width)


def to_bytes(raster: np.ndarray) -> np.ndarray:
    """Map [0, 1] to 0..255, rounding half up."""
    return np.floor(np.clip(raster, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def read_pgm(path: str | Path) -> np.ndarray:
    """Binary 8-bit PGM -> float64 raster in [0, 1]."""
    return _read_netpbm(path, b"P5", 1).astype(np.float64) / 255.0


def write_pgm(raster: np.ndarray, path: str | Path) -> None:
    raster = np.asarray(raster)
    if raster.ndim != 2:
        raise DataError(f"PGM raster must be 2-D, got shape {raster.shape}")
    data = raster if raster.dtype == np.uint8 else to_bytes(raster)
    h, w = data.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + data.tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    """Binary 8-bit PPM -> uint8 array [H, W, 3]."""
    return _read_netpbm(path, b"P6", 3)


def write_ppm(rgb: np.ndarray, path: str | Path) -> None:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise DataError(f"PPM raster must be [H, W, 3], got shape {rgb.shape}")
    data = rgb if rgb.dtype == np.uint8 else to_bytes(rgb)
    h, w, _ = data.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + data.tobytes())


def read_mask(path: str | Path) -> np.ndarray:
    return (_read_netpbm(path, b"P5", 1) >= 128).astype(np.uint8)


def write_mask(mask: np.ndarray, path: str | Path) -> None:
    write_pgm(np.where(np.asarray(mask) > 0, 255, 0).astype(np.uint8), path)


# ---------------------------------------------------------------------------
# phantoms
# ---------------------------------------------------------------------------


@dataclass
class PhantomSpec:
    """Generative description of a synthetic AP spine radiograph.

    Geometry fractions are relative to the canvas size; each ``*_jitter`` is a
    relative half-range applied per vertebra.
    """

    size: int = 128
    vertebra_count: tuple[int, int] = (8, 12)
    column_extent: float = 0.88  # fraction of the canvas height the column spans
    width_frac: tuple[float, float] = (0.12, 0.20)
    width_jitter: float = 0.08
    gap_frac: float = 0.22  # share of each vertebra slot left as disc space
    min_gap_px: float = 1.5
    corner_frac: float = 0.3  # corner radius relative to the shorter side
    max_tilt_deg: float = 8.0
    background_amplitude: float = 0.25
    noise_sigma: float = 0.03
    rib_count: int = 6
    rib_intensity: float = 0.15
    bone_intensity: tuple[float, float] = (0.55, 0.9)

    def __post_init__(self):
        lo, hi = self.vertebra_count
        if self.size < 64:
            raise DataError(f"phantom canvas must be at least 64 px, got {self.size}")
        if lo < 1 or hi < lo:
            raise DataError(f"bad vertebra count range {self.vertebra_count}")


@dataclass
class Vertebra:
    center: tuple[float, float]  # (row, col) pixel coordinates
    width: float
    height: float
    radius: float


def _rounded_rect(rows: np.ndarray, cols: np.ndarray, v: Vertebra, tilt: float) -> np.ndarray:
    cr, cc = v.center
    dr, dc = rows - cr, cols - cc
    ct, st = math.cos(tilt), math.sin(tilt)
    # coordinates in the vertebra frame: u across the column, t along it
    u = np.abs(dc * ct + dr * st)
    t = np.abs(-dc * st + dr * ct)
    hw, hh, r = v.width / 2, v.height / 2, v.radius
    inside = (u <= hw) & (t <= hh)
    corner = (u > hw - r) & (t > hh - r)
    in_corner = (u - (hw - r)) ** 2 + (t - (hh - r)) ** 2 <= r * r
    return inside & (~corner | in_corner)


def phantom_geometry(spec: PhantomSpec, rng: np.random.Generator) -> tuple[list[Vertebra], float]:
    n = int(rng.integers(spec.vertebra_count[0], spec.vertebra_count[1] + 1))
    size = spec.size
    tilt = math.radians(rng.uniform(-spec.max_tilt_deg, spec.max_tilt_deg))
    length = spec.column_extent * size
    slot = length / n
    gap = max(spec.min_gap_px, spec.gap_frac * slot)
    height = slot - gap
    if height < 3.0:
        raise DataError(f"{n} vertebrae do not fit a {size}px canvas (height {height:.2f}px)")
    base_width = rng.uniform(*spec.width_frac) * size
    axis_col = size / 2 + rng.uniform(-0.05, 0.05) * size
    axis_row = size / 2
    vertebrae = []
    for i in range(n):
        along = -length / 2 + slot * (i + 0.5)
        # widen slightly toward the bottom like the thoracic column
        w = base_width * (0.85 + 0.3 * i / max(n - 1, 1))
        w *= 1 + rng.uniform(-spec.width_jitter, spec.width_jitter)
        w = max(w, 3.0)
        r = spec.corner_frac * min(w, height)
        center = (axis_row + along * math.cos(tilt), axis_col - along * math.sin(tilt))
        vertebrae.append(Vertebra(center, w, height, r))
    return vertebrae, tilt


def generate_phantom(spec: PhantomSpec, seed: int, sample_id: str | None = None) -> Sample:
    """Deterministic synthetic radiograph and exact vertebra mask for ``(spec, seed)``."""
    rng = np.random.default_rng(seed)
    size = spec.size
    vertebrae, tilt = phantom_geometry(spec, rng)
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)

    image = np.zeros((size, size))
    if spec.background_amplitude > 0:
        tex = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma=size / 16)
        tex = (tex - tex.min()) / max(np.ptp(tex), 1e-12)
        image += spec.background_amplitude * tex
    for _ in range(spec.rib_count):
        # gently curved bright band crossing the chest
        r0 = rng.uniform(0.05, 0.95) * size
        bend = rng.uniform(-0.15, 0.15) * size
        thick = rng.uniform(0.015, 0.03) * size
        centre_line = r0 + bend * ((cols - size / 2) / (size / 2)) ** 2
        image += spec.rib_intensity * np.exp(-0.5 * ((rows - centre_line) / thick) ** 2)

    mask = np.zeros((size, size), dtype=bool)
    for v in vertebrae:
        shape = _rounded_rect(rows, cols, v, tilt)
        level = rng.uniform(*spec.bone_intensity)
        # cortical rim brighter than the body
        rim = shape & ~ndimage.binary_erosion(shape)
        image = np.where(shape, image + level * (0.85 + 0.15 * rim), image)
        mask |= shape
    if spec.noise_sigma > 0:
        image += rng.normal(0.0, spec.noise_sigma, size=image.shape)
    image = np.clip(image, 0.0, 1.0)
    return Sample(image, mask.astype(np.uint8), sample_id if sample_id is not None else f"phantom_{seed}")


def generate_dataset(count: int, spec: PhantomSpec, seed: int) -> list[Sample]:
    return [generate_phantom(spec, seed * 100_003 + i, f"phantom_{i:04d}") for i in range(count)]


# ---------------------------------------------------------------------------
# splitting + manifest
# ---------------------------------------------------------------------------


def split_dataset(samples: Sequence[Sample], train_frac: float = 0.8, seed: int = 0) -> tuple[list[Sample], list[Sample]]:
    """Seeded shuffle then cut at ``round(n * train_frac)`` (both sides non-empty)."""
    if not 0.0 < train_frac < 1.0:
        raise ValueError(f"train_frac must lie in (0, 1), got {train_frac}")
    n = len(samples)
    if n < 2:
        raise DataError("need at least two samples to split")
    n_train = min(max(int(math.floor(n * train_frac + 0.5)), 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    return [samples[i] for i in order[:n_train]], [samples[i] for i in order[n_train:]]


MANIFEST_NAME = "manifest.tsv"


@dataclass
class ManifestRow:
    id: str
    image: str
    mask: str
    split: str


def write_manifest(rows: Iterable[ManifestRow], path: str | Path) -> None:
    lines = [f"{r.id}\t{r.image}\t{r.mask}\t{r.split}\n" for r in rows]
    Path(path).write_text("".join(lines))


def read_manifest(path: str | Path) -> list[ManifestRow]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise DataError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
        rows.append(ManifestRow(*parts))
    return rows


def load_split(data_dir: str | Path, split: str | None = None) -> list[Sample]:
    """Samples listed in ``data_dir/manifest.tsv``, optionally filtered by split tag."""
    data_dir = Path(data_dir)
    out = []
    for row in read_manifest(data_dir / MANIFEST_NAME):
        if split is not None and row.split != split:
            continue
        out.append(Sample(read_pgm(data_dir / row.image), read_mask(data_dir / row.mask), row.id))
    return out


def save_dataset(samples_by_split: dict[str, Sequence[Sample]], out_dir: str | Path) -> list[ManifestRow]:
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    rows = []
    for split, samples in samples_by_split.items():
        for s in samples:
            img_rel, mask_rel = f"images/{s.id}.pgm", f"masks/{s.id}.pgm"
            write_pgm(s.image, out_dir / img_rel)
            write_mask(s.mask, out_dir / mask_rel)
            rows.append(ManifestRow(s.id, img_rel, mask_rel, split))
    rows.sort(key=lambda r: r.id)
    write_manifest(rows, out_dir / MANIFEST_NAME)
    return rows


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------


@dataclass
class AugmentationConfig:
    """Stage-2 augmentation knobs.

    Transforms run in a fixed order: crop, brightness/contrast, scale, shift,
    rotate, gaussian filter, downscale/upscale, noise, flip, blur.  Scale,
    shift and rotation are composed into one affine resampling.
    """

    crop_size: int = 512
    brightness_limit: float = 0.25
    contrast_limit: float = 0.25
    brightness_contrast_p: float = 0.5
    scale_range: tuple[float, float] = (0.85, 1.15)
    shift_limit: float = 0.325
    rotate_limit: float = 15.0
    affine_p: float = 0.5
    # applied only to images whose contrast was adjusted
    filter_p: float = 1.0
    filter_sigma: float = 0.5
    downscale_range: tuple[float, float] = (0.15, 0.25)
    downscale_p: float = 0.25
    noise_var_range: tuple[float, float] = (0.05, 0.1)
    noise_p: float = 0.5
    flip_p: float = 0.25
    blur_p: float = 0.5
    blur_sigma: float = 0.8

    def __post_init__(self):
        for name in ("brightness_contrast_p", "affine_p", "filter_p", "downscale_p", "noise_p", "flip_p", "blur_p"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be a probability, got {p}")
        for name in ("scale_range", "downscale_range", "noise_var_range"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ValueError(f"{name} must be an ordered non-negative range, got {(lo, hi)}")
        if self.crop_size < 1:
            raise ValueError("crop_size must be positive")

    @classmethod
    def disabled(cls, crop_size: int) -> "AugmentationConfig":
        """Crop/pad only; every random transform switched off."""
        return cls(
            crop_size=crop_size,
            brightness_contrast_p=0.0,
            affine_p=0.0,
            filter_p=0.0,
            downscale_p=0.0,
            noise_p=0.0,
            flip_p=0.0,
            blur_p=0.0,
            scale_range=(1.0, 1.0),
            shift_limit=0.0,
            rotate_limit=0.0,
        )


def _pad_crop(image: np.ndarray, mask: np.ndarray, size: int, rng: np.random.Generator):
    h, w = image.shape
    ph, pw = max(size - h, 0), max(size - w, 0)
    if ph or pw:
        pads = ((ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2))
        image = np.pad(image, pads)
        mask = np.pad(mask, pads)
        h, w = image.shape
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return image[top : top + size, left : left + size], mask[top : top + size, left : left + size]


def _affine(image: np.ndarray, mask: np.ndarray, scale: float, shift: tuple[float, float], angle_deg: float):
    """Scale about the centre, then shift (pixels), then rotate about the centre."""
    h, w = image.shape
    centre = np.array([(h - 1) / 2, (w - 1) / 2])
    a = math.radians(angle_deg)
    rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    # forward map: out = R (s (p - c) + t) + c ; scipy wants the inverse
    fwd = rot * scale
    inv = np.linalg.inv(fwd)
    offset = centre - inv @ (centre + rot @ np.asarray(shift))
    img = ndimage.affine_transform(image, inv, offset=offset, order=1, mode="constant", cval=0.0)
    msk = ndimage.affine_transform(mask.astype(np.float64), inv, offset=offset, order=0, mode="constant", cval=0.0)
    return img, msk


def augment(sample: Sample, cfg: AugmentationConfig, seed: int) -> Sample:
    """Random geometric + photometric augmentation, deterministic in ``seed``.

    Geometric transforms move image and mask together (bilinear / nearest);
    photometric ones touch only the image.  Output is ``crop_size`` square.
    """
    rng = sample_rng(seed, sample.id)
    # draw every random number up front so each stream has a fixed layout
    u = rng.random(8)
    brightness = rng.uniform(-cfg.brightness_limit, cfg.brightness_limit)
    contrast = rng.uniform(-cfg.contrast_limit, cfg.contrast_limit)
    scale = rng.uniform(*cfg.scale_range)
    shift_frac = rng.uniform(-cfg.shift_limit, cfg.shift_limit, size=2)
    angle = rng.uniform(-cfg.rotate_limit, cfg.rotate_limit)
    down = rng.uniform(*cfg.downscale_range)
    noise_var = rng.uniform(*cfg.noise_var_range)

    image, mask = _pad_crop(sample.image, sample.mask, cfg.crop_size, rng)
    image = image.astype(np.float64, copy=True)
    mask = mask.astype(np.float64)
    size = cfg.crop_size

    enhanced = u[0] < cfg.brightness_contrast_p
    if enhanced:
        image = np.clip(image * (1.0 + contrast) + brightness, 0.0, 1.0)
    if u[1] < cfg.affine_p:
        image, mask = _affine(image, mask, scale, (shift_frac[0] * size, shift_frac[1] * size), angle)
    mask = (mask >= 0.5).astype(np.uint8)
    if enhanced and u[2] < cfg.filter_p:
        image = ndimage.gaussian_filter(image, cfg.filter_sigma, mode="nearest")
    if u[3] < cfg.downscale_p:
        small = max(1, int(round(size * down)))
        lo = ndimage.zoom(image, small / size, order=0, mode="nearest", grid_mode=True)
        image = ndimage.zoom(lo, (size / lo.shape[0], size / lo.shape[1]), order=1, mode="nearest", grid_mode=True)
    if u[4] < cfg.noise_p:
        image = image + rng.normal(0.0, math.sqrt(noise_var), size=image.shape)
    image = np.clip(image, 0.0, 1.0)
    if u[5] < cfg.flip_p:
        image = image[:, ::-1]
        mask = mask[:, ::-1]
    if u[6] < cfg.blur_p:
        image = ndimage.gaussian_filter(image, cfg.blur_sigma, truncate=1.0 / cfg.blur_sigma, mode="nearest")
    image = np.clip(image, 0.0, 1.0)
    return Sample(np.ascontiguousarray(image), np.ascontiguousarray(mask), sample.id)


def resize_sample(sample: Sample, size: int) -> Sample:
    """Bilinear image / nearest-neighbour mask resize to ``size`` x ``size``."""
    h, w = sample.image.shape
    zoom = (size / h, size / w)
    img = ndimage.zoom(sample.image, zoom, order=1, mode="nearest", grid_mode=True)
    msk = ndimage.zoom(sample.mask, zoom, order=0, mode="nearest", grid_mode=True)
    return Sample(np.clip(img, 0.0, 1.0), (msk > 0).astype(np.uint8), sample.id)


@dataclass
class Dataset:
    train: list[Sample] = field(default_factory=list)
    val: list[Sample] = field(default_factory=list)
    test: list[Sample] = field(default_factory=list)
