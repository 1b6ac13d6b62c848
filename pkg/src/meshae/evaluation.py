"""Datasets, the PCA baseline, split protocols, error statistics and the benchmark driver."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mesh_core import Mesh, read_obj, write_obj

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    """Named frame sequences sharing one topology."""

    sequences: dict
    template: Mesh | None = None

    def __post_init__(self):
        faces = None
        n = None
        for name, frames in self.sequences.items():
            for m in frames:
                if n is None:
                    n, faces = m.n_vertices, m.faces
                elif m.n_vertices != n or not np.array_equal(m.faces, faces):
                    raise ValueError(f"sequence {name!r} does not share the dataset topology")
        if self.template is None and n is not None:
            first = next(iter(self.sequences.values()))[0]
            self.template = first
        if self.template is not None and n is not None:
            if self.template.n_vertices != n or not np.array_equal(self.template.faces, faces):
                raise ValueError("template topology differs from the dataset")

    @property
    def names(self) -> list[str]:
        return list(self.sequences)

    @property
    def labels(self) -> list[str]:
        return [name for name, frames in self.sequences.items() for _ in frames]

    def __len__(self) -> int:
        return sum(len(f) for f in self.sequences.values())

    def frames(self) -> list[tuple[str, int]]:
        return [(name, i) for name, frames in self.sequences.items() for i in range(len(frames))]

    def stack(self, keys=None) -> np.ndarray:
        keys = self.frames() if keys is None else keys
        n = self.template.n_vertices
        if not keys:
            return np.zeros((0, n, 3))
        return np.stack([self.sequences[name][i].vertices for name, i in keys])


def load_dataset(root) -> Dataset:
    """``<root>/<sequence>/<frame>.obj``; an optional ``<root>/template.obj`` is the template."""
    root = Path(root)
    sequences = {}
    for seq_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        files = sorted(seq_dir.glob("*.obj"))
        if files:
            sequences[seq_dir.name] = [read_obj(f) for f in files]
    if not sequences:
        raise ValueError(f"no sequences found under {root}")
    template = read_obj(root / "template.obj") if (root / "template.obj").exists() else None
    return Dataset(sequences, template)


def save_dataset(root, dataset: Dataset) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for name, frames in dataset.sequences.items():
        d = root / name
        d.mkdir(exist_ok=True)
        width = max(4, len(str(len(frames) - 1)))
        for i, m in enumerate(frames):
            write_obj(d / f"{i:0{width}d}.obj", m)
    if dataset.template is not None:
        write_obj(root / "template.obj", dataset.template)


# --------------------------------------------------------------------------
# PCA baseline


@dataclass
class PcaModel:
    mean_shape: np.ndarray  # n x 3
    components: np.ndarray  # k x 3n, orthonormal rows
    explained_variance: np.ndarray

    @property
    def k(self) -> int:
        return len(self.components)

    def parameter_count(self) -> int:
        # components only; the mean shape is not counted
        return int(self.components.size)

    def encode(self, vertices) -> np.ndarray:
        v = np.asarray(vertices, dtype=np.float64)
        return (v - self.mean_shape).reshape(*v.shape[:-2], -1) @ self.components.T

    def decode(self, coeffs) -> np.ndarray:
        c = np.asarray(coeffs, dtype=np.float64)
        flat = c @ self.components
        return flat.reshape(*c.shape[:-1], -1, 3) + self.mean_shape


def pca_fit(train, k: int) -> PcaModel:
    """Top-k principal directions of flattened vertex arrays via SVD."""
    x = np.asarray(train, dtype=np.float64)
    if len(x) < k + 1:
        raise ValueError(f"need at least {k + 1} training meshes for {k} components, got {len(x)}")
    mean = x.mean(axis=0)
    centered = (x - mean).reshape(len(x), -1)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:k].copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    var = s[:k] ** 2 / max(len(x) - 1, 1)
    return PcaModel(mean, comps, var)


def pca_reconstruct(model: PcaModel, vertices) -> np.ndarray:
    v = np.asarray(vertices, dtype=np.float64)
    if v.shape[-2:] != model.mean_shape.shape:
        raise ValueError(f"expected vertices of shape {model.mean_shape.shape}, got {v.shape}")
    return model.decode(model.encode(v))


# --------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class SplitSpec:
    mode: str = "interpolation"
    window: int = 10
    ratio: float = 0.1
    held_out: str | None = None
    seed: int = 0


def split_interpolation(dataset: Dataset, window: int = 10, ratio: float = 0.1, seed: int = 0):
    """Hold out disjoint runs of ``window`` consecutive frames chosen at random.

    The number of windows is floor(ratio * total / window). Returns
    ``(train_keys, test_keys)`` as lists of (sequence, frame) pairs.
    """
    total = len(dataset)
    n_windows = math.floor(ratio * total / window)
    if n_windows < 1:
        raise ValueError(f"{total} frames are too few for one held-out window of {window}")
    candidates = [
        (name, start)
        for name, frames in dataset.sequences.items()
        for start in range(len(frames) - window + 1)
    ]
    rng = np.random.default_rng(seed)
    taken = {name: np.zeros(len(frames), dtype=bool) for name, frames in dataset.sequences.items()}
    chosen = 0
    for idx in rng.permutation(len(candidates)):
        name, start = candidates[idx]
        if taken[name][start:start + window].any():
            continue
        taken[name][start:start + window] = True
        chosen += 1
        if chosen == n_windows:
            break
    if chosen < n_windows:
        raise ValueError("could not place enough disjoint windows")
    train, test = [], []
    for name, mask in taken.items():
        for i, t in enumerate(mask):
            (test if t else train).append((name, i))
    return train, test


def split_extrapolation(dataset: Dataset, held_out: str):
    if held_out not in dataset.sequences:
        raise ValueError(f"unknown sequence {held_out!r}; have {dataset.names}")
    train = [k for k in dataset.frames() if k[0] != held_out]
    test = [k for k in dataset.frames() if k[0] == held_out]
    return train, test


def make_split(dataset: Dataset, spec: SplitSpec):
    if spec.mode == "interpolation":
        return split_interpolation(dataset, spec.window, spec.ratio, spec.seed)
    if spec.mode == "extrapolation":
        return split_extrapolation(dataset, spec.held_out)
    raise ValueError(f"unknown split mode {spec.mode!r}")


# --------------------------------------------------------------------------
# metrics


@dataclass
class ErrorStats:
    mean: float
    std: float
    median: float
    per_vertex_errors: np.ndarray = field(repr=False)

    @property
    def max(self) -> float:
        return float(self.per_vertex_errors.max()) if self.per_vertex_errors.size else 0.0


def euclidean_error(pred, gt):
    """Per-vertex Euclidean distances, pooled over all frames, with summary stats."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.shape[-1] != 3:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    err = np.sqrt(np.sum((pred - gt) ** 2, axis=-1)).ravel()
    stats = ErrorStats(float(err.mean()), float(err.std()), float(np.median(err)), err)
    return err, stats


def cumulative_error_histogram(errors, bin_edges) -> np.ndarray:
    """Fraction of errors at or below each edge."""
    errors = np.sort(np.asarray(errors, dtype=np.float64).ravel())
    edges = np.asarray(bin_edges, dtype=np.float64)
    if np.any(np.diff(edges) < 0):
        raise ValueError("bin edges must be sorted")
    if errors.size and errors[0] < 0:
        raise ValueError("errors must be non-negative")
    if errors.size == 0:
        return np.ones(len(edges))
    return np.searchsorted(errors, edges, side="right") / errors.size


def histogram_csv(edges, fractions) -> str:
    rows = ["edge_mm,fraction"] + [f"{e:.6f},{f:.6f}" for e, f in zip(edges, fractions)]
    return "\n".join(rows) + "\n"
