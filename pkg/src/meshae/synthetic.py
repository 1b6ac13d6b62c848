"""Seeded desk-scale stand-in for registered expression sequences.

Every frame is the template deformed by two effects whose parameters move
smoothly over time: a radial bump travelling around the template while its
latitude and height oscillate, and a small twist of a local cap about its own
axis. Each sequence sweeps the bump about one full turn from its own start
angle with its own phases, so held-out sequences are new paths over a shared
nonlinear manifold.
"""
from __future__ import annotations

import numpy as np

from .evaluation import Dataset
from .mesh_core import Mesh

SEQUENCE_NAMES = (
    "bareteeth", "cheeks_in", "eyebrow", "high_smile", "lips_back", "lips_up",
    "mouth_down", "mouth_extreme", "mouth_middle", "mouth_open", "mouth_side", "mouth_up",
)


def _rotate(points, axis, angle):
    """Rodrigues rotation of each row of ``points`` about unit ``axis`` by per-row ``angle``."""
    c = np.cos(angle)[:, None]
    s = np.sin(angle)[:, None]
    k = axis[None, :]
    return points * c + np.cross(k, points) * s + k * (points @ axis)[:, None] * (1.0 - c)


def _unit(v):
    return v / np.linalg.norm(v)


def _ring_point(latitude, longitude):
    return np.array([
        np.cos(latitude) * np.cos(longitude),
        np.cos(latitude) * np.sin(longitude),
        np.sin(latitude),
    ])


def deform(template: Mesh, bump_longitude, bump_amplitude, twist_angle, *,
           bump_latitude=0.35, bump_width=0.45, twist_center=None, twist_width=0.6):
    """One deformed copy of the template (see module docstring)."""
    verts = template.vertices
    center = verts.mean(axis=0)
    rel0 = verts - center
    rel = rel0
    radius = np.linalg.norm(rel0, axis=1)
    dirs = rel0 / np.where(radius > 0, radius, 1.0)[:, None]

    if twist_center is None:
        twist_center = _unit(np.array([0.0, -0.3, -1.0]))
    ang = np.arccos(np.clip(dirs @ twist_center, -1.0, 1.0))
    rel = _rotate(rel, twist_center, twist_angle * np.exp(-(ang**2) / (2 * twist_width**2)))

    bump_dir = _ring_point(bump_latitude, bump_longitude)
    ang = np.arccos(np.clip(dirs @ bump_dir, -1.0, 1.0))
    bump = bump_amplitude * np.exp(-(ang**2) / (2 * bump_width**2))
    twisted_dirs = rel / np.maximum(np.linalg.norm(rel, axis=1), 1e-300)[:, None]
    rel = rel + bump[:, None] * twisted_dirs
    return verts + (rel - rel0)


def generate_synthetic_dataset(template: Mesh, num_sequences: int = 12, frames_per_sequence: int = 60,
                               seed: int = 0, amplitude: float = 0.5, twist: float = 0.1,
                               bump_width: float = 0.45, latitude_swing: float = 0.6,
                               sweep: float = 2 * np.pi, names=None) -> Dataset:
    """``sweep`` is the bump's nominal travel in radians per sequence; ``twist`` is the peak cap rotation."""
    rng = np.random.default_rng(seed)
    if names is None:
        names = [SEQUENCE_NAMES[i] if i < len(SEQUENCE_NAMES) else f"seq{i:02d}" for i in range(num_sequences)]
    sequences = {}
    t = np.linspace(0.0, 1.0, frames_per_sequence)
    for s in range(num_sequences):
        # start angles spread evenly; paths overlap
        lon0 = 2 * np.pi * s / num_sequences + rng.uniform(-0.2, 0.2)
        direction = sweep * rng.uniform(0.8, 1.2) * rng.choice([-1.0, 1.0])
        amp_phase = rng.uniform(0, 2 * np.pi)
        amp_freq = rng.uniform(0.8, 1.6)
        tw_phase = rng.uniform(0, 2 * np.pi)
        tw_freq = rng.uniform(0.6, 1.4)
        lat_phase = rng.uniform(0, 2 * np.pi)
        frames = []
        for tk in t:
            lon = lon0 + direction * tk
            lat = 0.35 + latitude_swing * np.sin(2 * np.pi * tk + lat_phase)
            a = amplitude * (0.55 + 0.45 * np.sin(2 * np.pi * amp_freq * tk + amp_phase))
            tw = twist * np.sin(2 * np.pi * tw_freq * tk + tw_phase)
            frames.append(template.with_vertices(
                deform(template, lon, a, tw, bump_latitude=lat, bump_width=bump_width)))
        sequences[names[s]] = frames
    return Dataset(sequences, template)
