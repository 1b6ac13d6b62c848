"""Procedural template meshes."""
from __future__ import annotations

import numpy as np
from scipy.spatial import ConvexHull

from .mesh_core import Mesh


def _orient_outward(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    a, b, c = vertices[faces[:, 0]], vertices[faces[:, 1]], vertices[faces[:, 2]]
    normals = np.cross(b - a, c - a)
    centroid = vertices.mean(axis=0)
    flip = np.einsum("ij,ij->i", normals, (a + b + c) / 3.0 - centroid) < 0
    faces = faces.copy()
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return faces


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> Mesh:
    """Subdivided icosahedron; 10 * 4**s + 2 vertices (642 at s=3)."""
    t = (1.0 + 5.0**0.5) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        midpoint = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in midpoint:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return Mesh(radius * np.array(verts), np.array(faces, dtype=np.int64))


def fibonacci_sphere(n: int, radius: float = 1.0) -> Mesh:
    """Closed triangulation of ``n`` near-uniform points on a sphere (n >= 4)."""
    if n < 4:
        raise ValueError("need at least 4 points for a closed hull")
    i = np.arange(n, dtype=np.float64)
    phi = np.arccos(1.0 - 2.0 * (i + 0.5) / n)
    theta = np.pi * (1.0 + 5.0**0.5) * i
    pts = np.stack(
        [np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1
    )
    faces = ConvexHull(pts).simplices.astype(np.int64)
    faces = _orient_outward(pts, faces)
    return Mesh(radius * pts, faces)


def random_sphere_mesh(n: int, rng: np.random.Generator, jitter: float = 0.0) -> Mesh:
    """Convex-hull triangulation of random points on the unit sphere."""
    pts = rng.standard_normal((n, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    faces = _orient_outward(pts, ConvexHull(pts).simplices.astype(np.int64))
    if jitter:
        pts = pts * (1.0 + jitter * rng.uniform(-1, 1, size=(n, 1)))
    return Mesh(pts, faces)


def grid_mesh(nx: int, ny: int, height=None) -> Mesh:
    """Planar ``nx`` by ``ny`` grid in z=0 split into triangles; row-major vertex order."""
    xs, ys = np.meshgrid(np.arange(nx, dtype=np.float64), np.arange(ny, dtype=np.float64))
    z = np.zeros_like(xs) if height is None else np.asarray(height, dtype=np.float64).reshape(ny, nx)
    verts = np.stack([xs.ravel(), ys.ravel(), z.ravel()], axis=1)
    faces = []
    for r in range(ny - 1):
        for c in range(nx - 1):
            a = r * nx + c
            b, d, e = a + 1, a + nx, a + nx + 1
            faces += [(a, b, e), (a, e, d)]
    return Mesh(verts, np.array(faces, dtype=np.int64).reshape(-1, 3))
