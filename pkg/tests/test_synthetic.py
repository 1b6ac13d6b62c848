import numpy as np

from meshae.evaluation import pca_fit, pca_reconstruct
from meshae.shapes import icosphere
from meshae.synthetic import SEQUENCE_NAMES, deform, generate_synthetic_dataset

TEMPLATE = icosphere(2)


def test_seed_determinism():
    a = generate_synthetic_dataset(TEMPLATE, 3, 5, seed=7)
    b = generate_synthetic_dataset(TEMPLATE, 3, 5, seed=7)
    c = generate_synthetic_dataset(TEMPLATE, 3, 5, seed=8)
    assert np.array_equal(a.stack(), b.stack())
    assert not np.array_equal(a.stack(), c.stack())


def test_zero_deformation_gives_template():
    ds = generate_synthetic_dataset(TEMPLATE, 2, 4, amplitude=0.0, twist=0.0)
    for frame in ds.stack():
        np.testing.assert_allclose(frame, TEMPLATE.vertices, atol=1e-15)


def test_layout_and_names():
    ds = generate_synthetic_dataset(TEMPLATE, 14, 3)
    assert ds.names[:12] == list(SEQUENCE_NAMES)
    assert ds.names[12:] == ["seq12", "seq13"]
    assert len(ds) == 42
    for frames in ds.sequences.values():
        assert all(np.array_equal(f.faces, TEMPLATE.faces) for f in frames)


def test_frames_move_smoothly():
    ds = generate_synthetic_dataset(TEMPLATE, 1, 60)
    x = ds.stack()
    steps = np.abs(np.diff(x, axis=0)).max(axis=(1, 2))
    spread = np.abs(x - x.mean(axis=0)).max()
    assert steps.max() < 0.5 * spread


def test_twist_preserves_distance_to_center():
    out = deform(TEMPLATE, 0.0, 0.0, 1.0)
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), np.linalg.norm(TEMPLATE.vertices, axis=1), rtol=1e-12)
    assert np.abs(out - TEMPLATE.vertices).max() > 0.1


def test_default_data_not_linear():
    ds = generate_synthetic_dataset(icosphere(3))
    data = ds.stack()
    rec = pca_reconstruct(pca_fit(data, 8), data)
    err = np.linalg.norm(rec - data, axis=-1).mean()
    assert err > 0.01
