"""Small planar geometry helpers shared across the package."""

from __future__ import annotations

import numpy as np

# 90-degree rotation, J @ v = perp(v). Used for planar cross products.
J = np.array([[0.0, -1.0], [1.0, 0.0]])


def rot2(angle: float) -> np.ndarray:
    """2x2 rotation matrix."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def wrap_angle(theta):
    """Wrap an angle (scalar or array) to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(theta), 2.0 * np.pi)


def cross2(a, b) -> float:
    """Planar scalar cross product a x b."""
    return float(a[0] * b[1] - a[1] * b[0])


def halfspaces_from_vertices(vertices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Convex polygon vertices -> (A, b) with unit rows so the interior is A p < b.

    Vertices may be in either winding order; they must describe a convex
    polygon (checked). Unit-norm rows make inflation margins metric.
    """
    verts = np.asarray(vertices, dtype=float)
    if verts.ndim != 2 or verts.shape[1] != 2 or len(verts) < 3:
        raise ValueError("polygon needs at least 3 planar vertices")
    # enforce counter-clockwise order
    area = 0.0
    for i in range(len(verts)):
        area += cross2(verts[i], verts[(i + 1) % len(verts)])
    if area < 0:
        verts = verts[::-1]
    rows, offsets = [], []
    n = len(verts)
    for i in range(n):
        p, q = verts[i], verts[(i + 1) % n]
        edge = q - p
        norm = np.hypot(*edge)
        if norm < 1e-12:
            raise ValueError("degenerate polygon edge")
        # outward normal for CCW winding
        a = np.array([edge[1], -edge[0]]) / norm
        rows.append(a)
        offsets.append(float(a @ p))
    A, b = np.array(rows), np.array(offsets)
    if np.any(A @ verts.T > b[:, None] + 1e-9):
        raise ValueError("polygon is not convex")
    return A, b


def point_in_convex(A: np.ndarray, b: np.ndarray, p, margin: float = 0.0) -> bool:
    """Strict interior test against halfspaces (A p < b - margin)."""
    return bool(np.all(A @ np.asarray(p, dtype=float) < b - margin))
