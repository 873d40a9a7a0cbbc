"""Parsing of building-damage label files: WKT polygons + damage subtypes.

A label file is a JSON document with `metadata` (image dimensions, scene id)
and `features.xy`, a list of features each carrying a WKT POLYGON string and
optional `subtype` / `uid` properties. Coordinates are pixel coordinates of
the source image, origin top-left, x rightward, y downward.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

DAMAGE_SUBTYPES = (
    "no-damage",
    "minor-damage",
    "major-damage",
    "destroyed",
    "un-classified",
)

IGNORE_LABEL = 255


class AnnotationError(ValueError):
    """Base class for label-parsing failures."""


class MalformedWkt(AnnotationError):
    """WKT text does not match the POLYGON grammar."""


class DegenerateRing(MalformedWkt):
    """A polygon ring has fewer than 3 distinct vertices."""


class MalformedJson(AnnotationError):
    """Label JSON is structurally invalid or carries illegal values."""


class MissingMetadata(AnnotationError):
    """Label JSON lacks required metadata (dimensions or scene id)."""


@dataclass(frozen=True)
class Point2D:
    x: float
    y: float


@dataclass(frozen=True)
class PolygonGeom:
    """Polygon with one exterior ring and optional interior rings (holes).

    Rings are stored unclosed (no repeated closing vertex) with vertex order
    preserved from the source text.
    """

    exterior: tuple[Point2D, ...]
    interiors: tuple[tuple[Point2D, ...], ...] = ()

    def rings(self):
        yield self.exterior
        yield from self.interiors


@dataclass(frozen=True)
class BuildingAnnotation:
    uid: str
    geometry: PolygonGeom
    subtype: str


@dataclass(frozen=True)
class AnnotationSet:
    scene_id: str
    image_width: int
    image_height: int
    buildings: tuple[BuildingAnnotation, ...]


@dataclass(frozen=True)
class ClassScheme:
    """Mapping from damage subtypes (plus implicit background) to class ints.

    `mapping` sends each damage subtype to its mask value; "un-classified"
    maps to `ignore_label`, which is excluded from losses and metrics.
    Class integers are contiguous from 0; background pixels always carry 0.
    """

    name: str
    class_names: tuple[str, ...]
    mapping: dict[str, int] = field(hash=False)
    ignore_label: int = IGNORE_LABEL

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


# Paper-style scheme: background shares class 0 with intact buildings.
PAPER4 = ClassScheme(
    name="paper4",
    class_names=("no-damage", "minor-damage", "major-damage", "destroyed"),
    mapping={
        "no-damage": 0,
        "minor-damage": 1,
        "major-damage": 2,
        "destroyed": 3,
        "un-classified": IGNORE_LABEL,
    },
)

# Default scheme: explicit background class so "no-damage" scores measure
# buildings, not empty land.
BG5 = ClassScheme(
    name="bg5",
    class_names=("background", "no-damage", "minor-damage", "major-damage", "destroyed"),
    mapping={
        "no-damage": 1,
        "minor-damage": 2,
        "major-damage": 3,
        "destroyed": 4,
        "un-classified": IGNORE_LABEL,
    },
)

_SCHEMES = {s.name: s for s in (PAPER4, BG5)}


def get_scheme(name: str) -> ClassScheme:
    try:
        return _SCHEMES[name]
    except KeyError:
        raise ValueError(
            f"unknown class scheme {name!r}; choose from {sorted(_SCHEMES)}"
        ) from None


def map_damage_class(subtype: str, scheme: ClassScheme) -> int:
    """Class integer for a damage subtype under the given scheme."""
    return scheme.mapping[subtype]


def _parse_ring(text: str, ring_index: int) -> tuple[Point2D, ...]:
    pts = []
    for chunk in text.split(","):
        parts = chunk.split()
        if len(parts) != 2:
            raise MalformedWkt(
                f"ring {ring_index}: expected 'x y' pair, got {chunk.strip()!r}"
            )
        try:
            x, y = float(parts[0]), float(parts[1])
        except ValueError:
            raise MalformedWkt(
                f"ring {ring_index}: non-numeric coordinate in {chunk.strip()!r}"
            ) from None
        if not (math.isfinite(x) and math.isfinite(y)):
            raise MalformedWkt(f"ring {ring_index}: non-finite coordinate {chunk.strip()!r}")
        pts.append(Point2D(x, y))
    # Normalize away the closing vertex if present.
    if len(pts) > 1 and pts[0] == pts[-1]:
        pts = pts[:-1]
    if len({(p.x, p.y) for p in pts}) < 3:
        raise DegenerateRing(f"ring {ring_index}: fewer than 3 distinct vertices")
    return tuple(pts)


def _split_rings(body: str) -> list[str]:
    rings = []
    depth = 0
    start = 0
    for i, ch in enumerate(body):
        if ch == "(":
            if depth == 0:
                start = i + 1
            depth += 1
            if depth > 1:
                raise MalformedWkt("nested parentheses inside a ring")
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise MalformedWkt("unbalanced parentheses")
            rings.append(body[start:i])
        elif depth == 0 and ch not in ", \t\r\n":
            raise MalformedWkt(f"unexpected character {ch!r} between rings")
    if depth != 0:
        raise MalformedWkt("unbalanced parentheses")
    if not rings:
        raise MalformedWkt("polygon has no rings")
    return rings


def parse_wkt_polygon(text: str) -> PolygonGeom:
    """Parse `POLYGON ((x y, ...)[, (x y, ...)...])`.

    The first ring becomes the exterior, remaining rings the interiors.
    """
    if not isinstance(text, str):
        raise MalformedWkt(f"expected WKT string, got {type(text).__name__}")
    s = text.strip()
    if not s.startswith("POLYGON"):
        raise MalformedWkt(f"expected POLYGON, got {s[:24]!r}")
    body = s[len("POLYGON"):].strip()
    if not (body.startswith("(") and body.endswith(")")):
        raise MalformedWkt("missing outer parentheses")
    ring_texts = _split_rings(body[1:-1])
    rings = [_parse_ring(t, i) for i, t in enumerate(ring_texts)]
    return PolygonGeom(exterior=rings[0], interiors=tuple(rings[1:]))


def _fmt(v: float) -> str:
    # repr round-trips floats exactly and prints integers compactly enough
    return repr(float(v))


def polygon_to_wkt(poly: PolygonGeom) -> str:
    """Serialize a polygon back to WKT, re-adding the closing vertex."""
    parts = []
    for ring in poly.rings():
        closed = list(ring) + [ring[0]]
        parts.append("(" + ", ".join(f"{_fmt(p.x)} {_fmt(p.y)}" for p in closed) + ")")
    return "POLYGON (" + ", ".join(parts) + ")"


def _scene_id_from_metadata(meta: dict) -> str:
    sid = meta.get("scene_id")
    if isinstance(sid, str) and sid:
        return sid
    img_name = meta.get("img_name")
    if isinstance(img_name, str) and img_name:
        stem = img_name.rsplit(".", 1)[0]
        for suffix in ("_pre_disaster", "_post_disaster"):
            if stem.endswith(suffix):
                return stem[: -len(suffix)]
        return stem
    raise MissingMetadata("metadata carries neither 'scene_id' nor 'img_name'")


def _check_extent(geom: PolygonGeom, width: int, height: int, index: int) -> None:
    # Tolerate generous overhang; reject coordinates that cannot belong to
    # this image at all.
    for ring in geom.rings():
        for p in ring:
            if not (-width <= p.x <= 2 * width and -height <= p.y <= 2 * height):
                raise MalformedJson(
                    f"feature {index}: vertex ({p.x}, {p.y}) far outside "
                    f"image extent {width}x{height}"
                )


def parse_label_file(data: bytes) -> AnnotationSet:
    """Parse one label file into a validated AnnotationSet.

    Missing `subtype` defaults to "no-damage" (pre-disaster files carry no
    subtype); missing `uid` gets a generated sequential id. Any bad feature
    aborts the whole file with an index-bearing error.
    """
    try:
        obj = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MalformedJson(f"not valid UTF-8 JSON: {e}") from e
    if not isinstance(obj, dict):
        raise MalformedJson("top level is not a JSON object")

    meta = obj.get("metadata")
    if not isinstance(meta, dict):
        raise MissingMetadata("missing 'metadata' object")
    width, height = meta.get("width"), meta.get("height")
    if not isinstance(width, int) or not isinstance(height, int) or width <= 0 or height <= 0:
        raise MissingMetadata("metadata must carry positive integer 'width' and 'height'")
    scene_id = _scene_id_from_metadata(meta)

    features = obj.get("features")
    if not isinstance(features, dict) or not isinstance(features.get("xy"), list):
        raise MalformedJson("missing 'features.xy' list")

    buildings = []
    seen_uids: set[str] = set()
    for i, feat in enumerate(features["xy"]):
        if not isinstance(feat, dict):
            raise MalformedJson(f"feature {i}: not an object")
        wkt = feat.get("wkt")
        if not isinstance(wkt, str):
            raise MalformedJson(f"feature {i}: missing 'wkt' string")
        try:
            geom = parse_wkt_polygon(wkt)
        except MalformedWkt as e:
            raise type(e)(f"feature {i}: {e}") from e
        props = feat.get("properties") or {}
        if not isinstance(props, dict):
            raise MalformedJson(f"feature {i}: 'properties' is not an object")
        subtype = props.get("subtype", "no-damage")
        if subtype not in DAMAGE_SUBTYPES:
            raise MalformedJson(f"feature {i}: unknown damage subtype {subtype!r}")
        uid = props.get("uid")
        if uid is None:
            uid = f"feature-{i:04d}"
        elif not isinstance(uid, str) or not uid:
            raise MalformedJson(f"feature {i}: 'uid' must be a non-empty string")
        if uid in seen_uids:
            raise MalformedJson(f"feature {i}: duplicate uid {uid!r}")
        seen_uids.add(uid)
        _check_extent(geom, width, height, i)
        buildings.append(BuildingAnnotation(uid=uid, geometry=geom, subtype=subtype))

    return AnnotationSet(
        scene_id=scene_id,
        image_width=width,
        image_height=height,
        buildings=tuple(buildings),
    )
