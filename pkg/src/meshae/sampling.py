"""Quadric-error decimation restricted to vertex subsets, plus the sparse
down-sampling (selection) and up-sampling (barycentric) operators."""
from __future__ import annotations

import heapq
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .mesh_core import Mesh, canonical, read_obj, read_sparse, write_obj, write_sparse


@dataclass(frozen=True)
class DownsampleMatrix:
    matrix: sp.csr_matrix  # target_n x source_n
    kept_indices: np.ndarray


@dataclass(frozen=True)
class UpsampleMatrix:
    matrix: sp.csr_matrix  # source_n x target_n


def face_planes(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Unit-normal plane (a, b, c, d) per face; zero for degenerate faces."""
    a, b, c = vertices[faces[:, 0]], vertices[faces[:, 1]], vertices[faces[:, 2]]
    normals = np.cross(b - a, c - a)
    norm = np.linalg.norm(normals, axis=1)
    ok = norm > 0
    normals[ok] /= norm[ok, None]
    normals[~ok] = 0.0
    d = -np.einsum("ij,ij->i", normals, a)
    return np.concatenate([normals, d[:, None]], axis=1)


def compute_vertex_quadrics(mesh: Mesh) -> np.ndarray:
    """Per-vertex 4x4 quadrics, shape (n, 4, 4)."""
    planes = face_planes(mesh.vertices, mesh.faces)
    kp = np.einsum("fi,fj->fij", planes, planes)
    q = np.zeros((mesh.n_vertices, 4, 4))
    for corner in range(3):
        np.add.at(q, mesh.faces[:, corner], kp)
    return q


def quadric_error(q: np.ndarray, point) -> float:
    h = np.append(np.asarray(point, dtype=np.float64), 1.0)
    return float(h @ q @ h)


def _edge_cost(q, pos, a, b):
    qs = q[a] + q[b]
    ha = np.append(pos[a], 1.0)
    hb = np.append(pos[b], 1.0)
    ea = float(ha @ qs @ ha)
    eb = float(hb @ qs @ hb)
    if eb < ea:
        return eb, b
    return ea, a


def decimate(mesh: Mesh, target_n: int) -> tuple[Mesh, DownsampleMatrix]:
    """Collapse edges in quadric-cost order until ``target_n`` vertices remain.

    Each contraction keeps one of the two endpoints, so the coarse vertices are
    a subset of the input. Queue order is (cost, min index, max index).
    """
    n = mesh.n_vertices
    if not 1 <= target_n < n:
        raise ValueError(f"target_n must satisfy 1 <= target_n < {n}, got {target_n}")
    pos = mesh.vertices
    q = compute_vertex_quadrics(mesh)

    faces = [list(f) for f in mesh.faces.tolist()]
    face_alive = [True] * len(faces)
    vfaces: list[set[int]] = [set() for _ in range(n)]
    nbrs: list[set[int]] = [set() for _ in range(n)]
    for fi, (a, b, c) in enumerate(faces):
        for v in (a, b, c):
            vfaces[v].add(fi)
        nbrs[a].update((b, c))
        nbrs[b].update((a, c))
        nbrs[c].update((a, b))

    alive = np.ones(n, dtype=bool)
    version = [0] * n
    heap = []

    def push(a, b):
        if a > b:
            a, b = b, a
        cost, keep = _edge_cost(q, pos, a, b)
        heap.append((cost, a, b, keep, version[a], version[b]))

    for a in range(n):
        for b in nbrs[a]:
            if a < b:
                push(a, b)
    heapq.heapify(heap)

    remaining = n
    while remaining > target_n:
        if not heap:
            # no edges left (disconnected pieces): fall back to all vertex pairs
            live = np.flatnonzero(alive).tolist()
            for i, a in enumerate(live):
                for b in live[i + 1:]:
                    push(a, b)
            heapq.heapify(heap)
        cost, a, b, keep, va, vb = heapq.heappop(heap)
        if not (alive[a] and alive[b]) or version[a] != va or version[b] != vb:
            continue
        drop = b if keep == a else a
        q[keep] = q[keep] + q[drop]
        alive[drop] = False
        remaining -= 1
        version[keep] += 1

        for fi in vfaces[drop]:
            f = faces[fi]
            if keep in f:
                face_alive[fi] = False
                for v in f:
                    if v != drop:
                        vfaces[v].discard(fi)
            else:
                f[f.index(drop)] = keep
                vfaces[keep].add(fi)
        vfaces[drop] = set()

        for u in nbrs[drop]:
            nbrs[u].discard(drop)
            if u != keep:
                nbrs[u].add(keep)
                nbrs[keep].add(u)
        nbrs[keep].discard(drop)
        nbrs[drop] = set()
        for u in nbrs[keep]:
            a2, b2 = min(keep, u), max(keep, u)
            c2, k2 = _edge_cost(q, pos, a2, b2)
            heapq.heappush(heap, (c2, a2, b2, k2, version[a2], version[b2]))

    kept = np.flatnonzero(alive)
    remap = -np.ones(n, dtype=np.int64)
    remap[kept] = np.arange(len(kept))
    seen = set()
    new_faces = []
    for fi, f in enumerate(faces):
        if not face_alive[fi]:
            continue
        key = tuple(sorted(f))
        if key in seen:
            continue
        seen.add(key)
        new_faces.append([remap[v] for v in f])
    coarse = Mesh(pos[kept], np.array(new_faces, dtype=np.int64).reshape(-1, 3))
    qd = sp.csr_matrix(
        (np.ones(len(kept)), (np.arange(len(kept)), kept)), shape=(len(kept), n)
    )
    return coarse, DownsampleMatrix(canonical(qd), kept)


def closest_point_weights(points: np.ndarray, tri: np.ndarray):
    """Clamped barycentric weights of the closest point on each triangle.

    ``points`` is (P, 3) and ``tri`` is (F, 3, 3). Returns ``(dist2, weights)``
    with shapes (P, F) and (P, F, 3). Degenerate triangles fall back to their
    edges.
    """
    p = points[:, None, :]
    a, b, c = tri[None, :, 0], tri[None, :, 1], tri[None, :, 2]
    e0, e1, ap = b - a, c - a, p - a
    d00 = np.einsum("...i,...i", e0, e0)
    d01 = np.einsum("...i,...i", e0, e1)
    d11 = np.einsum("...i,...i", e1, e1)
    d20 = np.einsum("...i,...i", ap, e0)
    d21 = np.einsum("...i,...i", ap, e1)
    denom = d00 * d11 - d01 * d01
    scale = np.maximum(d00 * d11, np.finfo(float).tiny)
    good = denom > 1e-14 * scale
    safe = np.where(good, denom, 1.0)
    v = (d11 * d20 - d01 * d21) / safe
    w = (d00 * d21 - d01 * d20) / safe
    u = 1.0 - v - w
    inside = good & (u >= 0) & (v >= 0) & (w >= 0)
    proj = u[..., None] * a + v[..., None] * b + w[..., None] * c
    best_d2 = np.where(inside, np.sum((p - proj) ** 2, axis=-1), np.inf)
    best_w = np.stack([u, v, w], axis=-1)
    best_w = np.where(inside[..., None], best_w, 0.0)

    corners = (a, b, c)
    for i, j in ((0, 1), (1, 2), (2, 0)):
        s, e = corners[i], corners[j]
        d = e - s
        dd = np.einsum("...i,...i", d, d)
        t = np.einsum("...i,...i", p - s, d) / np.where(dd > 0, dd, 1.0)
        t = np.clip(np.where(dd > 0, t, 0.0), 0.0, 1.0)
        cp = s + t[..., None] * d
        d2 = np.sum((p - cp) ** 2, axis=-1)
        better = d2 < best_d2
        wts = np.zeros(best_w.shape)
        wts[..., i] = 1.0 - t
        wts[..., j] = t
        best_d2 = np.where(better, d2, best_d2)
        best_w = np.where(better[..., None], wts, best_w)
    return best_d2, best_w


def build_upsampling(fine: Mesh, coarse: Mesh, qd: DownsampleMatrix, chunk: int = 128) -> UpsampleMatrix:
    m, n = fine.n_vertices, coarse.n_vertices
    kept = np.asarray(qd.kept_indices)
    is_kept = np.zeros(m, dtype=bool)
    is_kept[kept] = True
    rows = [kept]
    cols = [np.arange(n)]
    vals = [np.ones(n)]
    dropped = np.flatnonzero(~is_kept)
    if len(dropped):
        pts = fine.vertices[dropped]
        if len(coarse.faces) == 0:
            d2 = np.sum((pts[:, None, :] - coarse.vertices[None]) ** 2, axis=-1)
            rows.append(dropped)
            cols.append(np.argmin(d2, axis=1))
            vals.append(np.ones(len(dropped)))
        else:
            tri = coarse.vertices[coarse.faces]
            for start in range(0, len(dropped), chunk):
                sl = slice(start, start + chunk)
                d2, wts = closest_point_weights(pts[sl], tri)
                best = np.argmin(d2, axis=1)
                w = wts[np.arange(len(best)), best]
                rows.append(np.repeat(dropped[sl], 3))
                cols.append(coarse.faces[best].ravel())
                vals.append(w.ravel())
    qu = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, n)
    )
    return UpsampleMatrix(canonical(qu))


def apply_sampling(q, features: np.ndarray) -> np.ndarray:
    """Sparse product ``q @ features`` for (v, F) or vertex-major (v, B, F) features."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] != q.shape[1]:
        raise ValueError(f"operator has {q.shape[1]} columns, features have {features.shape[0]} rows")
    flat = features.reshape(features.shape[0], -1)
    out = q @ flat
    return np.asarray(out).reshape((q.shape[0],) + features.shape[1:])


def save_archive(directory, meshes, down, up) -> None:
    """Write ``level_k.obj``, ``qd_k.txt`` and ``qu_k.txt`` per level."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for k, mesh in enumerate(meshes):
        write_obj(d / f"level_{k}.obj", mesh)
    for k, (qd, qu) in enumerate(zip(down, up)):
        write_sparse(d / f"qd_{k}.txt", qd.matrix)
        write_sparse(d / f"qu_{k}.txt", qu.matrix)


def load_archive(directory):
    d = Path(directory)
    meshes = []
    k = 0
    while (d / f"level_{k}.obj").exists():
        meshes.append(read_obj(d / f"level_{k}.obj"))
        k += 1
    down, up = [], []
    for k in range(len(meshes) - 1):
        qd = read_sparse(d / f"qd_{k}.txt")
        down.append(DownsampleMatrix(qd, qd.indices.copy()))
        up.append(UpsampleMatrix(read_sparse(d / f"qu_{k}.txt")))
    return meshes, down, up
