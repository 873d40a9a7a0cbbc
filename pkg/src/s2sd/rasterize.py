"""Deterministic polygon rasterization into single-channel class masks.

A pixel (row r, col c) is covered iff its center (c + 0.5, r + 0.5) lies
inside the polygon under the even-odd rule. Edges are treated half-open in y
([ymin, ymax)) and crossings are counted strictly to the right of the point,
so two polygons sharing an edge claim each boundary pixel exactly once and
the result is independent of any graphics library.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .annotations import AnnotationSet, ClassScheme, Point2D, PolygonGeom, map_damage_class


@dataclass
class DamageMask:
    """Single-channel class raster; value = class integer or ignore label."""

    data: np.ndarray  # uint8, shape (height, width)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.uint8)
        if self.data.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {self.data.shape}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def scale_polygon(poly: PolygonGeom, src_w: float, src_h: float,
                  dst_w: float, dst_h: float) -> PolygonGeom:
    """Rescale vertices from source to destination pixel dimensions."""
    if min(src_w, src_h, dst_w, dst_h) <= 0:
        raise ValueError("image dimensions must be positive")
    sx, sy = dst_w / src_w, dst_h / src_h

    def scale_ring(ring):
        return tuple(Point2D(p.x * sx, p.y * sy) for p in ring)

    return PolygonGeom(
        exterior=scale_ring(poly.exterior),
        interiors=tuple(scale_ring(r) for r in poly.interiors),
    )


def _edges(poly: PolygonGeom):
    """Non-horizontal edges as (ylo, yhi, x_at_ylo, dx/dy), half-open in y."""
    edges = []
    for ring in poly.rings():
        n = len(ring)
        for k in range(n):
            p, q = ring[k], ring[(k + 1) % n]
            if p.y == q.y:
                continue
            if p.y < q.y:
                ylo, yhi, xlo = p.y, q.y, p.x
            else:
                ylo, yhi, xlo = q.y, p.y, q.x
            edges.append((ylo, yhi, xlo, (q.x - p.x) / (q.y - p.y)))
    return edges


def fill_polygon(poly: PolygonGeom, width: int, height: int) -> np.ndarray:
    """Boolean coverage grid (height, width) via even-odd scanline filling.

    Interior rings subtract: a center inside both the exterior and a hole
    crosses an even number of edges and stays unset.
    """
    if width <= 0 or height <= 0:
        raise ValueError("grid dimensions must be positive")
    grid = np.zeros((height, width), dtype=bool)
    edges = _edges(poly)
    if not edges:
        return grid
    ymin = max(0, math.floor(min(e[0] for e in edges) - 0.5))
    ymax = min(height, math.ceil(max(e[1] for e in edges) + 0.5))
    for r in range(ymin, ymax):
        yc = r + 0.5
        xs = sorted(
            xlo + (yc - ylo) * slope
            for (ylo, yhi, xlo, slope) in edges
            if ylo <= yc < yhi
        )
        # Crossings strictly right of the center: inside spans are
        # [xs[0], xs[1]), [xs[2], xs[3]), ...
        for k in range(0, len(xs) - 1, 2):
            c0 = max(0, math.ceil(xs[k] - 0.5))
            c1 = min(width - 1, math.ceil(xs[k + 1] - 0.5) - 1)
            if c0 <= c1:
                grid[r, c0:c1 + 1] = True
    return grid


def render_mask(annots: AnnotationSet, dst_w: int, dst_h: int,
                scheme: ClassScheme) -> DamageMask:
    """Rasterize all buildings of a scene into one class mask.

    Pixels start at class 0 (background). Overlaps resolve to the highest
    damage class regardless of draw order; the ignore label (255) dominates
    everything, so the whole render is a pointwise maximum.
    """
    data = np.zeros((dst_h, dst_w), dtype=np.uint8)
    for b in annots.buildings:
        cls = map_damage_class(b.subtype, scheme)
        poly = scale_polygon(b.geometry, annots.image_width, annots.image_height, dst_w, dst_h)
        covered = fill_polygon(poly, dst_w, dst_h)
        region = data[covered]
        data[covered] = np.maximum(region, np.uint8(cls))
    return DamageMask(data)


def save_mask_png(mask: DamageMask, path) -> None:
    """Persist as single-channel 8-bit PNG, one byte per pixel."""
    Image.fromarray(mask.data, mode="L").save(path, format="PNG")


def load_mask_png(path) -> DamageMask:
    with Image.open(path) as im:
        if im.mode != "L":
            im = im.convert("L")
        return DamageMask(np.asarray(im, dtype=np.uint8))
