"""Outer contours of binary masks by Moore boundary following.

Foreground is 8-connected, background 4-connected.  Each component yields
one closed pixel polygon of its outer boundary, starting at the component's
topmost-then-leftmost pixel and walking clockwise (rows grow downwards).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .data import to_bytes, write_pgm, write_ppm

# clockwise neighbourhood starting west: W, NW, N, NE, E, SE, S, SW
_RING = ((0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1))
_RING_INDEX = {d: i for i, d in enumerate(_RING)}
_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass
class ContourPolygon:
    id: int
    points: list[tuple[int, int]]  # (row, col), closed implicitly
    has_holes: bool = False

    def __len__(self) -> int:
        return len(self.points)


def _trace(padded: np.ndarray, start: tuple[int, int]) -> list[tuple[int, int]]:
    """Moore-neighbour trace on a zero-padded mask (coordinates in padded frame)."""

    def next_pixel(p, back):
        idx = _RING_INDEX[(back[0] - p[0], back[1] - p[1])]
        prev = back
        for k in range(1, 9):
            dr, dc = _RING[(idx + k) % 8]
            q = (p[0] + dr, p[1] + dc)
            if padded[q]:
                return q, prev
            prev = q
        return None, None

    back = (start[0], start[1] - 1)
    first, back = next_pixel(start, back)
    if first is None:
        return [start]
    path = [start]
    p = first
    while True:
        # stop when the walk is about to repeat its opening step
        nxt, nback = next_pixel(p, back)
        if p == start and nxt == first:
            break
        path.append(p)
        p, back = nxt, nback
    return path


def extract_contours(mask: np.ndarray) -> list[ContourPolygon]:
    """One outer contour per 8-connected component, ordered top-to-bottom."""
    fg = np.asarray(mask) > 0
    if fg.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {fg.shape}")
    if not fg.any():
        return []
    labels, count = ndimage.label(fg, structure=_EIGHT)
    padded = np.pad(fg, 1)
    starts = []
    for lab, sl in enumerate(ndimage.find_objects(labels), start=1):
        rows = labels[sl] == lab
        top = int(np.argmax(rows.any(axis=1)))
        left = int(np.argmax(rows[top]))
        starts.append((sl[0].start + top, sl[1].start + left, lab, sl))
    starts.sort()
    out = []
    for cid, (r, c, lab, sl) in enumerate(starts):
        path = _trace(padded, (r + 1, c + 1))
        component = labels[sl] == lab
        holes = not np.array_equal(ndimage.binary_fill_holes(component), component)
        out.append(ContourPolygon(cid, [(pr - 1, pc - 1) for pr, pc in path], holes))
    return out


def fill_polygon(poly: ContourPolygon | Sequence[tuple[int, int]], shape: tuple[int, int]) -> np.ndarray:
    """Even-odd fill on pixel centres, united with the polygon's own pixels."""
    points = poly.points if isinstance(poly, ContourPolygon) else list(poly)
    h, w = shape
    out = np.zeros((h, w), dtype=np.uint8)
    if not points:
        return out
    pts = np.asarray(points, dtype=np.int64)
    if pts.min() < 0 or np.any(pts[:, 0] >= h) or np.any(pts[:, 1] >= w):
        raise ValueError("polygon vertices fall outside the raster")
    out[pts[:, 0], pts[:, 1]] = 1
    nxt = np.roll(pts, -1, axis=0)
    r1, c1, r2, c2 = pts[:, 0], pts[:, 1], nxt[:, 0], nxt[:, 1]
    sloped = r1 != r2
    r1, c1, r2, c2 = r1[sloped], c1[sloped], r2[sloped], c2[sloped]
    lo, hi = np.minimum(r1, r2), np.maximum(r1, r2)
    for y in range(int(pts[:, 0].min()), int(pts[:, 0].max()) + 1):
        hit = (lo <= y) & (y < hi)
        if not hit.any():
            continue
        xs = np.sort(c1[hit] + (y - r1[hit]) * (c2[hit] - c1[hit]) / (r2[hit] - r1[hit]))
        for x0, x1 in zip(xs[0::2], xs[1::2]):
            a, b = int(np.floor(x0)) + 1, int(np.ceil(x1)) - 1
            if a <= b:
                out[y, a : b + 1] = 1
    return out


def fill_contours(contours: Sequence[ContourPolygon], shape: tuple[int, int]) -> np.ndarray:
    out = np.zeros(shape, dtype=np.uint8)
    for poly in contours:
        out |= fill_polygon(poly, shape)
    return out


def contour_pixels(contours: Sequence[ContourPolygon], shape: tuple[int, int]) -> np.ndarray:
    out = np.zeros(shape, dtype=bool)
    for poly in contours:
        if poly.points:
            pts = np.asarray(poly.points)
            out[pts[:, 0], pts[:, 1]] = True
    return out


def render_overlay(image: np.ndarray, contours: Sequence[ContourPolygon], path: str | Path, color: bool = False) -> None:
    """Burn contour pixels into ``image``: white in a PGM, pure green in a PPM."""
    gray = to_bytes(np.asarray(image, dtype=np.float64))
    on = contour_pixels(contours, gray.shape)
    if color:
        rgb = np.repeat(gray[:, :, None], 3, axis=2)
        rgb[on] = (0, 255, 0)
        write_ppm(rgb, path)
    else:
        gray = gray.copy()
        gray[on] = 255
        write_pgm(gray, path)


def contours_to_json(contours: Sequence[ContourPolygon]) -> str:
    return json.dumps(
        [{"id": c.id, "points": [list(p) for p in c.points], "has_holes": c.has_holes} for c in contours]
    )


def contours_from_json(text: str) -> list[ContourPolygon]:
    return [
        ContourPolygon(int(d["id"]), [(int(r), int(c)) for r, c in d["points"]], bool(d.get("has_holes", False)))
        for d in json.loads(text)
    ]
