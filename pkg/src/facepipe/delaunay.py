"""Incremental Delaunay triangulation (Bowyer-Watson).

Points are inserted one at a time into a super-triangle; each insertion
carves out the cavity of triangles whose circumcircle strictly contains
the new point and re-fans the cavity boundary.  The strict-containment
test uses a scale-relative epsilon, so exactly cocircular quads (for
example the four corners of a square) keep whichever diagonal the
insertion order produced: a deterministic, valid Delaunay choice since
on-circle points do not violate the empty-circumcircle property.

Triangles are returned in canonical form: each oriented with positive
cross product, rotated so the smallest vertex index leads, and sorted.
"""

from __future__ import annotations

import numpy as np

INCIRCLE_RELATIVE_EPS = 1e-10


def orientation(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> float:
    """Twice the signed area of (a, b, c); positive for CCW order."""
    return float((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))


def _incircle_cavity(pts: np.ndarray, tris: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Boolean mask of triangles whose circumcircle strictly contains p."""
    u = pts[tris] - p  # (T, 3, 2)
    sq = (u ** 2).sum(axis=2)
    det = (
        u[:, 0, 0] * (u[:, 1, 1] * sq[:, 2] - u[:, 2, 1] * sq[:, 1])
        - u[:, 0, 1] * (u[:, 1, 0] * sq[:, 2] - u[:, 2, 0] * sq[:, 1])
        + sq[:, 0] * (u[:, 1, 0] * u[:, 2, 1] - u[:, 2, 0] * u[:, 1, 1])
    )
    scale = np.abs(u).max(axis=(1, 2))
    return det > INCIRCLE_RELATIVE_EPS * scale ** 4


def delaunay(points: np.ndarray) -> list[tuple[int, int, int]]:
    """Triangulate 2-d points; raises on fewer than 3 points or duplicates.

    For points in general position the result is the unique Delaunay
    triangulation regardless of input order (up to canonical labeling).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"expected (N, 2) points, got {pts.shape}")
    n = len(pts)
    if n < 3:
        raise ValueError("need at least 3 points")

    lo, hi = pts.min(axis=0), pts.max(axis=0)
    c = (lo + hi) / 2
    d = max(float((hi - lo).max()), 1.0)
    super_pts = np.array([
        [c[0] - 20 * d, c[1] - d],
        [c[0] + 20 * d, c[1] - d],
        [c[0], c[1] + 20 * d],
    ])
    allp = np.vstack([pts, super_pts])
    tris = np.array([[n, n + 1, n + 2]], dtype=np.intp)

    for i in range(n):
        p = allp[i]
        if i and (np.abs(allp[:i] - p).max(axis=1) < 1e-12).any():
            raise ValueError(f"duplicate point at index {i}")
        bad = _incircle_cavity(allp, tris, p)
        if not bad.any():
            raise RuntimeError(f"point {i} fell outside every circumcircle; degenerate input")
        # Cavity boundary = edges of removed triangles that appear once.
        edge_count: dict[tuple[int, int], tuple[int, int]] = {}
        for t in tris[bad]:
            for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
                key = (min(a, b), max(a, b))
                if key in edge_count:
                    del edge_count[key]
                else:
                    edge_count[key] = (int(a), int(b))
        kept = tris[~bad]
        fresh = []
        for a, b in edge_count.values():
            tri = (i, a, b) if orientation(allp[i], allp[a], allp[b]) > 0 else (i, b, a)
            fresh.append(tri)
        tris = np.vstack([kept, np.array(fresh, dtype=np.intp)])

    out = []
    for t in tris:
        if (t >= n).any():
            continue
        a, b, c3 = (int(v) for v in t)
        # Rotate so the smallest index leads, preserving cyclic order.
        ring = (a, b, c3)
        k = ring.index(min(ring))
        out.append((ring[k], ring[(k + 1) % 3], ring[(k + 2) % 3]))
    out.sort()
    if not out:
        raise ValueError("all points collinear; no triangulation exists")
    return out


def circumcircle(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, float]:
    """Circumcenter and radius of a non-degenerate triangle."""
    m = 2.0 * np.array([[b[0] - a[0], b[1] - a[1]], [c[0] - a[0], c[1] - a[1]]])
    rhs = np.array([b @ b - a @ a, c @ c - a @ a])
    center = np.linalg.solve(m, rhs)
    return center, float(np.linalg.norm(center - a))


def barycentric(tri_pts: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of q in a triangle, each from its own
    determinant ratio so symmetric inputs give bitwise-symmetric output."""
    (x1, y1), (x2, y2), (x3, y3) = tri_pts
    det = (y2 - y3) * (x1 - x3) + (x3 - x2) * (y1 - y3)
    if det == 0.0:
        raise ValueError("degenerate triangle")
    l1 = ((y2 - y3) * (q[0] - x3) + (x3 - x2) * (q[1] - y3)) / det
    l2 = ((y3 - y1) * (q[0] - x3) + (x1 - x3) * (q[1] - y3)) / det
    l3 = ((y1 - y2) * (q[0] - x1) + (x2 - x1) * (q[1] - y1)) / det
    return np.array([l1, l2, l3])
