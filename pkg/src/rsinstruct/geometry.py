"""Box geometry: horizontal and oriented boxes, canonical corner order,
normalization and IoU.

Coordinates follow the image convention: origin at the top-left corner, x to
the right, y downwards. Corner angles are plain ``atan2(dy, dx)`` in that
frame, so "ascending angle" walks the quad clockwise on screen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

Point = tuple[float, float]

QUANT_DECIMALS = 4
QUANT_STEP = 10.0 ** -QUANT_DECIMALS

# Relative tolerance for collinearity; scaled by the squared extent of the quad.
_DEGENERATE_RTOL = 1e-12


class GeometryError(ValueError):
    """Raised for invalid or degenerate box input."""


def _finite(*values: float) -> bool:
    return all(math.isfinite(v) for v in values)


@dataclass(frozen=True)
class ImageSize:
    width: int
    height: int

    def __post_init__(self) -> None:
        if int(self.width) != self.width or int(self.height) != self.height:
            raise GeometryError(f"image size must be integral, got {self.width}x{self.height}")
        if self.width < 1 or self.height < 1:
            raise GeometryError(f"image size must be positive, got {self.width}x{self.height}")


@dataclass(frozen=True)
class HorizontalBox:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self) -> None:
        if not _finite(self.xmin, self.ymin, self.xmax, self.ymax):
            raise GeometryError(f"non-finite box coordinates: {self.as_tuple()}")
        if self.xmin < 0 or self.ymin < 0:
            raise GeometryError(f"negative box coordinates: {self.as_tuple()}")
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise GeometryError(f"box must satisfy xmin < xmax and ymin < ymax: {self.as_tuple()}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.xmin, self.ymin, self.xmax, self.ymax)

    @property
    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    def corners(self) -> tuple[Point, Point, Point, Point]:
        return (
            (self.xmin, self.ymin),
            (self.xmax, self.ymin),
            (self.xmax, self.ymax),
            (self.xmin, self.ymax),
        )


@dataclass(frozen=True)
class OrientedBox:
    """Convex quad with corners in canonical order.

    Build instances through :func:`canonicalize_obb`; the constructor only
    checks that the stored order already is canonical.
    """

    points: tuple[Point, Point, Point, Point]

    def __post_init__(self) -> None:
        pts = tuple((float(x), float(y)) for x, y in self.points)
        if len(pts) != 4:
            raise GeometryError(f"oriented box needs 4 corners, got {len(pts)}")
        object.__setattr__(self, "points", pts)
        if _canonical_order(pts) != pts:
            raise GeometryError(f"corners are not in canonical order: {pts}")

    def as_flat(self) -> tuple[float, ...]:
        return tuple(c for p in self.points for c in p)

    @property
    def area(self) -> float:
        return obb_area(self)


Box = Union[HorizontalBox, OrientedBox]


@dataclass(frozen=True)
class NormalizedBox:
    """Box coordinates divided by image width/height and quantized to 1e-4.

    ``values`` holds 4 numbers (HBB, xmin ymin xmax ymax) or 8 (OBB corners).
    """

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        vals = tuple(float(v) for v in self.values)
        if len(vals) not in (4, 8):
            raise GeometryError(f"normalized box needs 4 or 8 values, got {len(vals)}")
        for v in vals:
            if not math.isfinite(v) or v < 0.0 or v > 1.0:
                raise GeometryError(f"normalized coordinate out of [0,1]: {v}")
        object.__setattr__(self, "values", vals)

    @property
    def kind(self) -> str:
        return "hbb" if len(self.values) == 4 else "obb"


def _cross(o: Point, a: Point, b: Point) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _signed_area(poly: Sequence[Point]) -> float:
    n = len(poly)
    s = 0.0
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        s += x1 * y2 - x2 * y1
    return 0.5 * s


def _canonical_order(points: Sequence[Point]) -> tuple[Point, Point, Point, Point]:
    # closest to origin; ties -> smaller y, then smaller x
    first = min(points, key=lambda p: (p[0] * p[0] + p[1] * p[1], p[1], p[0]))
    rest = list(points)
    rest.remove(first)

    def key(p: Point) -> tuple[float, float]:
        dx, dy = p[0] - first[0], p[1] - first[1]
        return (math.atan2(dy, dx), dx * dx + dy * dy)

    rest.sort(key=key)
    return (first, rest[0], rest[1], rest[2])


def _check_convex(quad: Sequence[Point]) -> None:
    xs = [p[0] for p in quad]
    ys = [p[1] for p in quad]
    extent = max(max(xs) - min(xs), max(ys) - min(ys))
    if extent <= 0.0:
        raise GeometryError(f"degenerate quad: {tuple(quad)}")
    tol = _DEGENERATE_RTOL * extent * extent
    signs = []
    for i in range(4):
        c = _cross(quad[i], quad[(i + 1) % 4], quad[(i + 2) % 4])
        if abs(c) <= tol:
            raise GeometryError(f"degenerate quad (collinear corners): {tuple(quad)}")
        signs.append(c > 0)
    if not all(signs) and any(signs):
        raise GeometryError(f"quad is not convex: {tuple(quad)}")


def canonicalize_obb(points: Iterable[Sequence[float]]) -> OrientedBox:
    """Order four corners: closest-to-origin first, the rest by ascending angle.

    Raises :class:`GeometryError` for repeated, collinear or non-convex input.
    """
    pts = [(float(p[0]), float(p[1])) for p in points]
    if len(pts) != 4:
        raise GeometryError(f"expected 4 corner points, got {len(pts)}")
    if not _finite(*(c for p in pts for c in p)):
        raise GeometryError(f"non-finite corner coordinates: {pts}")
    if len(set(pts)) != 4:
        raise GeometryError(f"corner points must be distinct: {pts}")
    ordered = _canonical_order(pts)
    _check_convex(ordered)
    return OrientedBox(ordered)


def obb_from_flat(values: Sequence[float]) -> OrientedBox:
    if len(values) != 8:
        raise GeometryError(f"expected 8 coordinates, got {len(values)}")
    return canonicalize_obb([(values[i], values[i + 1]) for i in range(0, 8, 2)])


def obb_area(q: OrientedBox) -> float:
    area = _signed_area(q.points)
    if area <= 0.0:
        # canonical order is counter-clockwise in (x, y); anything else is corrupt
        raise GeometryError(f"degenerate quad: {q.points}")
    return area


def hbb_iou(a: HorizontalBox, b: HorizontalBox) -> float:
    iw = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    ih = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    if a == b:
        return 1.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def hbb_intersection_union(a: HorizontalBox, b: HorizontalBox) -> tuple[float, float]:
    iw = max(0.0, min(a.xmax, b.xmax) - max(a.xmin, b.xmin))
    ih = max(0.0, min(a.ymax, b.ymax) - max(a.ymin, b.ymin))
    inter = iw * ih
    return inter, a.area + b.area - inter


def clip_convex(subject: Sequence[Point], clip: Sequence[Point]) -> list[Point]:
    """Sutherland-Hodgman clip of ``subject`` by the convex, counter-clockwise ``clip``."""
    output = list(subject)
    n = len(clip)
    for i in range(n):
        if not output:
            break
        c1, c2 = clip[i], clip[(i + 1) % n]
        inputs, output = output, []
        s = inputs[-1]
        s_in = _cross(c1, c2, s) >= 0.0
        for e in inputs:
            e_in = _cross(c1, c2, e) >= 0.0
            if e_in:
                if not s_in:
                    output.append(_line_intersection(s, e, c1, c2))
                output.append(e)
            elif s_in:
                output.append(_line_intersection(s, e, c1, c2))
            s, s_in = e, e_in
    return output


def _line_intersection(s: Point, e: Point, c1: Point, c2: Point) -> Point:
    # intersection of segment s-e with the infinite line c1-c2
    ds = _cross(c1, c2, s)
    de = _cross(c1, c2, e)
    t = ds / (ds - de)
    return (s[0] + t * (e[0] - s[0]), s[1] + t * (e[1] - s[1]))


def obb_intersection_union(a: OrientedBox, b: OrientedBox) -> tuple[float, float]:
    area_a, area_b = obb_area(a), obb_area(b)
    if a == b:
        return area_a, area_a
    poly = clip_convex(a.points, b.points)
    inter = max(0.0, _signed_area(poly)) if len(poly) >= 3 else 0.0
    inter = min(inter, area_a, area_b)
    return inter, area_a + area_b - inter


def obb_iou(a: OrientedBox, b: OrientedBox) -> float:
    inter, union = obb_intersection_union(a, b)
    if inter <= 0.0:
        return 0.0
    return min(1.0, inter / union)


def box_iou(a: Box, b: Box) -> float:
    """IoU of two boxes of the same kind; mixed kinds compare as quads."""
    if isinstance(a, HorizontalBox) and isinstance(b, HorizontalBox):
        return hbb_iou(a, b)
    return obb_iou(_as_obb(a), _as_obb(b))


def box_intersection_union(a: Box, b: Box) -> tuple[float, float]:
    if isinstance(a, HorizontalBox) and isinstance(b, HorizontalBox):
        return hbb_intersection_union(a, b)
    return obb_intersection_union(_as_obb(a), _as_obb(b))


def _as_obb(box: Box) -> OrientedBox:
    if isinstance(box, OrientedBox):
        return box
    return canonicalize_obb(box.corners())


def hbb_from_obb(q: OrientedBox) -> HorizontalBox:
    xs = [p[0] for p in q.points]
    ys = [p[1] for p in q.points]
    return HorizontalBox(min(xs), min(ys), max(xs), max(ys))


def box_within(box: Box, size: ImageSize) -> bool:
    if isinstance(box, HorizontalBox):
        return box.xmax <= size.width and box.ymax <= size.height
    return all(0 <= x <= size.width and 0 <= y <= size.height for x, y in box.points)


def clamp_box(box: Box, size: ImageSize) -> Box:
    """Clip coordinates into the image frame; may raise if the box collapses."""

    def cx(v: float) -> float:
        return min(max(v, 0.0), float(size.width))

    def cy(v: float) -> float:
        return min(max(v, 0.0), float(size.height))

    if isinstance(box, HorizontalBox):
        return HorizontalBox(cx(box.xmin), cy(box.ymin), cx(box.xmax), cy(box.ymax))
    return canonicalize_obb([(cx(x), cy(y)) for x, y in box.points])


def _q(v: float) -> float:
    r = round(v, QUANT_DECIMALS)
    return 0.0 if r == 0.0 else r  # drop negative zero


def normalize_box(box: Box, size: ImageSize, strict: bool = True) -> NormalizedBox:
    """Divide by image width/height and quantize to four decimals.

    Out-of-image boxes raise in strict mode and are clamped otherwise. Oriented
    corners are re-ordered canonically in normalized space, since non-square
    images can change which corner is closest to the origin.
    """
    if not box_within(box, size):
        if strict:
            raise GeometryError(f"box {_describe(box)} exceeds image {size.width}x{size.height}")
        box = clamp_box(box, size)
    w, h = float(size.width), float(size.height)
    if isinstance(box, HorizontalBox):
        return NormalizedBox(
            (_q(box.xmin / w), _q(box.ymin / h), _q(box.xmax / w), _q(box.ymax / h))
        )
    scaled = _canonical_order([(x / w, y / h) for x, y in box.points])
    return NormalizedBox(tuple(_q(c) for p in scaled for c in p))


def denormalize_box(nbox: NormalizedBox, size: ImageSize) -> Box:
    w, h = float(size.width), float(size.height)
    v = nbox.values
    if nbox.kind == "hbb":
        return HorizontalBox(v[0] * w, v[1] * h, v[2] * w, v[3] * h)
    return canonicalize_obb([(v[i] * w, v[i + 1] * h) for i in range(0, 8, 2)])


def box_from_normalized(nbox: NormalizedBox) -> Box:
    """Interpret normalized values directly as box coordinates (unit image)."""
    v = nbox.values
    if nbox.kind == "hbb":
        return HorizontalBox(*v)
    return obb_from_flat(v)


def _describe(box: Box) -> str:
    if isinstance(box, HorizontalBox):
        return str(list(box.as_tuple()))
    return str(list(box.as_flat()))
