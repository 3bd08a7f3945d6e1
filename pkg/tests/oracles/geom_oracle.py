"""Sampling and rasterization oracles for box overlap, independent of the package."""

from __future__ import annotations

import math

import numpy as np


def random_convex_quad(rng: np.random.Generator, center=(60.0, 60.0), max_radius=40.0) -> list[tuple[float, float]]:
    """Four points on a random ellipse (convex by construction), shuffled."""
    while True:
        angles = np.sort(rng.uniform(0.0, 2 * math.pi, 4))
        gaps = np.diff(np.concatenate([angles, [angles[0] + 2 * math.pi]]))
        if gaps.min() > 0.3:
            break
    rx, ry = rng.uniform(5.0, max_radius, 2)
    rot = rng.uniform(0.0, math.pi)
    cx, cy = center[0] + rng.uniform(-10, 10), center[1] + rng.uniform(-10, 10)
    pts = []
    for a in angles:
        x, y = rx * math.cos(a), ry * math.sin(a)
        pts.append((cx + x * math.cos(rot) - y * math.sin(rot), cy + x * math.sin(rot) + y * math.cos(rot)))
    order = rng.permutation(4)
    return [pts[i] for i in order]


def inside_convex(points: np.ndarray, quad) -> np.ndarray:
    """Mask of points inside a convex quad given in any cyclic order."""
    q = np.asarray(quad, dtype=np.float64)
    # cyclic order by angle around the centroid
    c = q.mean(axis=0)
    q = q[np.argsort(np.arctan2(q[:, 1] - c[1], q[:, 0] - c[0]))]
    inside = np.ones(len(points), dtype=bool)
    for i in range(4):
        a, b = q[i], q[(i + 1) % 4]
        cross = (b[0] - a[0]) * (points[:, 1] - a[1]) - (b[1] - a[1]) * (points[:, 0] - a[0])
        inside &= cross >= 0
    return inside


def mc_quad_iou(a, b, rng: np.random.Generator, n: int = 100_000) -> float:
    """IoU from ``n`` jittered-grid samples over the joint bounding rectangle."""
    pts = np.asarray(list(a) + list(b), dtype=np.float64)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    side = int(math.ceil(math.sqrt(n)))
    gx, gy = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    u = (gx.ravel() + rng.random(side * side)) / side
    v = (gy.ravel() + rng.random(side * side)) / side
    samples = np.stack([lo[0] + u * (hi[0] - lo[0]), lo[1] + v * (hi[1] - lo[1])], axis=1)[:n]
    ia, ib = inside_convex(samples, a), inside_convex(samples, b)
    union = np.count_nonzero(ia | ib)
    return np.count_nonzero(ia & ib) / union if union else 0.0


def pixel_hbb_iou(a, b, canvas: int = 256) -> float:
    """IoU of integer HBBs by counting covered unit cells."""
    ma = np.zeros((canvas, canvas), dtype=bool)
    mb = np.zeros((canvas, canvas), dtype=bool)
    ma[a[1]:a[3], a[0]:a[2]] = True
    mb[b[1]:b[3], b[0]:b[2]] = True
    return np.count_nonzero(ma & mb) / np.count_nonzero(ma | mb)


def random_int_hbb(rng: np.random.Generator, canvas: int = 256) -> list[int]:
    x0, y0 = rng.integers(0, canvas - 8, 2)
    w, h = rng.integers(1, min(120, canvas - x0) + 1), rng.integers(1, min(120, canvas - y0) + 1)
    return [int(x0), int(y0), int(x0 + w), int(y0 + h)]


def overlapping_quad_pair(rng: np.random.Generator):
    """A random quad and a second one near it, so IoUs spread over [0, 1]."""
    a = random_convex_quad(rng)
    b = random_convex_quad(rng, center=tuple(np.mean(a, axis=0) + rng.uniform(-8, 8, 2)))
    return a, b


def overlapping_hbb_pair(rng: np.random.Generator, canvas: int = 256):
    a = random_int_hbb(rng, canvas)
    while True:
        dx, dy = rng.integers(-40, 41, 2)
        w, h = rng.integers(1, 120, 2)
        x0, y0 = max(0, a[0] + int(dx)), max(0, a[1] + int(dy))
        b = [x0, y0, min(canvas, x0 + int(w)), min(canvas, y0 + int(h))]
        if b[0] < b[2] and b[1] < b[3]:
            return a, b
