"""Mesh container, graph operators and a small dense spectral oracle.

Sparse matrices are ``scipy.sparse.csr_matrix`` instances throughout; the
helpers here enforce the canonical form (summed duplicates, no stored zeros).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

LAMBDA_MAX_FLOOR = 2.0


class TopologyError(ValueError):
    """Raised for faces that reference missing vertices or repeat an index."""


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray
    faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"vertices must be n x 3, got {v.shape}")
        if f.size:
            if f.min() < 0 or f.max() >= len(v):
                raise TopologyError(f"face index out of range [0, {len(v)})")
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
                raise TopologyError("face repeats a vertex index")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def with_vertices(self, vertices) -> "Mesh":
        """Same topology, new positions."""
        return Mesh(vertices, self.faces)


def canonical(matrix) -> sp.csr_matrix:
    m = sp.csr_matrix(matrix, dtype=np.float64)
    m.sum_duplicates()
    m.eliminate_zeros()
    m.sort_indices()
    return m


# --------------------------------------------------------------------------
# graph operators


def build_adjacency(mesh: Mesh) -> sp.csr_matrix:
    n = mesh.n_vertices
    f = mesh.faces
    if len(f) == 0:
        return sp.csr_matrix((n, n), dtype=np.float64)
    i = np.concatenate([f[:, 0], f[:, 1], f[:, 2]])
    j = np.concatenate([f[:, 1], f[:, 2], f[:, 0]])
    rows = np.concatenate([i, j])
    cols = np.concatenate([j, i])
    a = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    a.sum_duplicates()
    # repeated edges collapse to a single binary entry
    a.data[:] = 1.0
    return canonical(a)


@dataclass(frozen=True)
class Laplacian:
    matrix: sp.csr_matrix
    degrees: np.ndarray


@dataclass(frozen=True)
class ScaledLaplacian:
    matrix: sp.csr_matrix
    lambda_max: float


def _is_symmetric(m: sp.spmatrix) -> bool:
    d = m - m.T
    return d.nnz == 0 or np.abs(d.data).max() == 0.0


def build_laplacian(adjacency) -> Laplacian:
    a = canonical(adjacency)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got {a.shape}")
    if not _is_symmetric(a):
        raise ValueError("adjacency must be symmetric")
    degrees = np.asarray(a.sum(axis=1)).ravel()
    lap = canonical(sp.diags(degrees, format="csr") - a)
    return Laplacian(lap, degrees)


def estimate_lambda_max(
    laplacian: Laplacian,
    seed: int = 0,
    tol: float = 1e-13,
    max_iter: int = 10_000,
    floor: float = LAMBDA_MAX_FLOOR,
) -> float:
    """Largest eigenvalue of a Laplacian by power iteration.

    Stops when successive Rayleigh quotients differ by less than ``tol``
    relative to the current quotient. The quotient approaches the top
    eigenvalue from below, so a loose tolerance pushes the scaled spectrum
    past 1; the default keeps it inside [-1, 1] to about 1e-10 on small meshes.
    A zero Laplacian (no edges) yields ``floor``.
    """
    lap = laplacian.matrix
    n = lap.shape[0]
    if lap.nnz == 0:
        return floor
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    rayleigh = float(v @ (lap @ v))
    for _ in range(max_iter):
        w = lap @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            # start vector in the null space; restart along a fresh direction
            v = rng.standard_normal(n)
            v /= np.linalg.norm(v)
            continue
        v = w / norm
        new = float(v @ (lap @ v))
        if abs(new - rayleigh) < tol * abs(new):
            rayleigh = new
            break
        rayleigh = new
    if rayleigh <= 0.0:
        return floor
    return rayleigh


def scale_laplacian(laplacian: Laplacian, lambda_max: float) -> ScaledLaplacian:
    if not lambda_max > 0:
        raise ValueError(f"lambda_max must be positive, got {lambda_max}")
    n = laplacian.matrix.shape[0]
    m = (2.0 / lambda_max) * laplacian.matrix - sp.identity(n, format="csr")
    m = sp.csr_matrix(m)
    m.sum_duplicates()
    m.sort_indices()
    return ScaledLaplacian(m, float(lambda_max))


def scaled_laplacian_for(mesh: Mesh, seed: int = 0) -> ScaledLaplacian:
    lap = build_laplacian(build_adjacency(mesh))
    return scale_laplacian(lap, estimate_lambda_max(lap, seed=seed))


# --------------------------------------------------------------------------
# dense spectral oracle (test scale only)


def jacobi_eigh(a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100):
    """Cyclic Jacobi eigensolver for a small dense symmetric matrix.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues ascending and
    eigenvectors as columns.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * np.sum(np.triu(a, 1) ** 2))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.hypot(theta, 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise RuntimeError("Jacobi iteration did not converge")
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


@dataclass(frozen=True)
class SpectralOracle:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    lambda_max: float

    @classmethod
    def from_laplacian(cls, laplacian: Laplacian, lambda_max: float | None = None):
        dense = laplacian.matrix.toarray()
        if dense.shape[0] > 50:
            raise ValueError("spectral oracle is limited to n <= 50")
        w, u = jacobi_eigh(dense)
        w = np.maximum(w, 0.0)
        if lambda_max is None:
            lambda_max = float(w[-1]) if w[-1] > 0 else LAMBDA_MAX_FLOOR
        return cls(w, u, float(lambda_max))

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.eigenvectors.T @ x

    def inverse(self, x_freq: np.ndarray) -> np.ndarray:
        return self.eigenvectors @ x_freq


def chebyshev_values(t: np.ndarray, k_order: int) -> np.ndarray:
    """T_0..T_{K-1} evaluated at each entry of ``t``; shape (K, len(t))."""
    out = np.empty((k_order, len(t)))
    out[0] = 1.0
    if k_order > 1:
        out[1] = t
    for k in range(2, k_order):
        out[k] = 2.0 * t * out[k - 1] - out[k - 2]
    return out


def dense_spectral_filter(oracle: SpectralOracle, x, theta) -> np.ndarray:
    """Filter features through the eigenbasis.

    ``theta`` is either a length-K vector (same filter on every column of
    ``x``) or a K x F_in x F_out tensor, in which case output column j is
    sum_i g_{theta[:, i, j]}(L) x_i.
    """
    x = np.asarray(x, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    n = len(oracle.eigenvalues)
    if x.ndim != 2 or x.shape[0] != n:
        raise ValueError(f"x must be {n} x F, got {x.shape}")
    scaled = 2.0 * oracle.eigenvalues / oracle.lambda_max - 1.0
    u = oracle.eigenvectors
    x_freq = u.T @ x
    if theta.ndim == 1:
        g = chebyshev_values(scaled, len(theta)).T @ theta
        return u @ (g[:, None] * x_freq)
    if theta.ndim != 3 or theta.shape[1] != x.shape[1]:
        raise ValueError(f"theta must be K x {x.shape[1]} x F_out, got {theta.shape}")
    tk = chebyshev_values(scaled, theta.shape[0])  # (K, n)
    # response[m, i, j] = sum_k theta[k, i, j] T_k(lambda_m)
    response = np.einsum("km,kij->mij", tk, theta)
    y_freq = np.einsum("mij,mi->mj", response, x_freq)
    return u @ y_freq


# --------------------------------------------------------------------------
# file formats


def read_obj(path) -> Mesh:
    verts = []
    faces = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                if len(idx) != 3:
                    raise TopologyError(f"only triangle faces are supported: {line.strip()}")
                faces.append([i - 1 for i in idx])
    return Mesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                np.array(faces, dtype=np.int64).reshape(-1, 3))


def write_obj(path, mesh: Mesh) -> None:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_sparse(path, matrix) -> None:
    m = canonical(matrix).tocoo()
    lines = [f"{m.shape[0]} {m.shape[1]} {m.nnz}"]
    lines += [f"{r} {c} {v!r}" for r, c, v in zip(m.row.tolist(), m.col.tolist(), m.data.tolist())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_sparse(path) -> sp.csr_matrix:
    with open(path, encoding="utf-8") as fh:
        rows, cols, nnz = (int(t) for t in fh.readline().split())
        r = np.empty(nnz, dtype=np.int64)
        c = np.empty(nnz, dtype=np.int64)
        v = np.empty(nnz, dtype=np.float64)
        for k in range(nnz):
            a, b, val = fh.readline().split()
            r[k], c[k], v[k] = int(a), int(b), float(val)
    return canonical(sp.coo_matrix((v, (r, c)), shape=(rows, cols)))
