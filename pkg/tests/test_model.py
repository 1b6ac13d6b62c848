import numpy as np
import pytest

from conftest import central_difference, rel_error
from meshae import nn
from meshae.evaluation import pca_fit
from meshae.model import (
    HISTORY_HEADER,
    build_hierarchy,
    build_model,
    count_parameters,
    decode,
    encode,
    latent_statistics,
    latent_sweep,
    load_checkpoint,
    loss_and_gradients,
    mean_pairwise_distance,
    reconstruct,
    sample_gaussian,
    sample_latents,
    save_checkpoint,
    standard_normal_gap,
    train_autoencoder,
    write_mesh_series,
)
from meshae.shapes import fibonacci_sphere
from meshae.synthetic import deform


TEMPLATE = fibonacci_sphere(300)


@pytest.fixture(scope="module")
def small():
    """Levels 300, 75, 19, 5, 2."""
    h = build_hierarchy(TEMPLATE)
    return h, build_model(h, seed=3)


@pytest.fixture(scope="module")
def toy():
    """16-vertex sphere halved four times: levels 16, 8, 4, 2, 1."""
    h = build_hierarchy(fibonacci_sphere(16), num_levels=4, factor=2)
    return h


def test_hierarchy_counts_ceil_rule(small):
    h, _ = small
    assert h.sizes == [300, 75, 19, 5, 2]
    for k in range(h.num_levels):
        assert h.down[k].matrix.shape == (h.sizes[k + 1], h.sizes[k])
        assert h.up[k].matrix.shape == (h.sizes[k], h.sizes[k + 1])


def test_hierarchy_256_vertices():
    h = build_hierarchy(fibonacci_sphere(256))
    assert h.sizes == [256, 64, 16, 4, 1]


def test_hierarchy_too_small():
    with pytest.raises(ValueError):
        build_hierarchy(fibonacci_sphere(255))


def test_hierarchy_deterministic():
    a, b = build_hierarchy(TEMPLATE), build_hierarchy(TEMPLATE)
    for qa, qb in zip(a.up, b.up):
        assert np.array_equal(qa.matrix.toarray(), qb.matrix.toarray())
    assert [l.lambda_max for l in a.laplacians] == [l.lambda_max for l in b.laplacians]


def test_default_widths_and_parameter_count(small):
    h, model = small
    assert [c.theta.shape[1:] for c in model.encoder_convs] == [(3, 16), (16, 16), (16, 16), (16, 32)]
    assert [c.theta.shape[1:] for c in model.decoder_convs] == [(32, 32), (32, 16), (16, 16), (16, 3)]
    # convolutions contribute 17,619 in any hierarchy; the dense layers depend on the bottleneck
    conv = sum(c.theta.size + c.bias.size for c in model.encoder_convs + model.decoder_convs)
    assert conv == 17_619
    assert count_parameters(model) == conv + 2 * (64 * 8) + 8 + 64


def test_dense_count():
    layer = nn.DenseLayer(np.zeros((8, 4)), np.zeros(4))
    assert layer.weights.size + layer.bias.size == 36


def test_pca_count_uses_components_only():
    pca = pca_fit(np.random.default_rng(0).standard_normal((9, 20, 3)), 8)
    assert count_parameters(pca) == 20 * 3 * 8


def test_encode_shape_errors(small):
    h, model = small
    with pytest.raises(ValueError):
        encode(model, h, np.zeros((299, 3)))
    with pytest.raises(ValueError):
        decode(model, h, np.zeros(7))
    with pytest.raises(ValueError):
        decode(model, h, np.full(8, np.nan))


def test_zero_input_and_zero_latent_are_finite(small):
    h, model = small
    assert np.all(np.isfinite(encode(model, h, np.zeros((300, 3)))))
    face = decode(model, h, np.zeros(8))
    assert face.shape == (300, 3) and np.all(np.isfinite(face))
    np.testing.assert_array_equal(face, decode(model, h, np.zeros(8)))


def test_batch_matches_single(small, rng):
    h, model = small
    x = rng.standard_normal((3, 300, 3))
    zb = encode(model, h, x)
    for i in range(3):
        np.testing.assert_allclose(zb[i], encode(model, h, x[i]), atol=1e-12)


def test_decode_continuity(small, rng):
    h, model = small
    z = rng.standard_normal(8)
    base = decode(model, h, z)
    d = rng.standard_normal(8)
    diffs = [np.abs(decode(model, h, z + eps * d) - base).max() for eps in (1e-1, 1e-3, 1e-5, 1e-7)]
    assert all(b < a for a, b in zip(diffs, diffs[1:]))
    assert diffs[-1] < 1e-5


def test_reconstruction_is_pure(small, rng):
    h, model = small
    x = rng.standard_normal((300, 3))
    assert np.array_equal(reconstruct(model, h, x), reconstruct(model, h, x))


def test_shape_trace_on_small_hierarchy(small):
    h, model = small
    trace = []
    z = encode(model, h, TEMPLATE.vertices, trace=trace)
    decode(model, h, z, trace=trace)
    assert trace[:9] == [
        ("conv", (300, 3), (300, 16)), ("down", (300, 16), (75, 16)),
        ("conv", (75, 16), (75, 16)), ("down", (75, 16), (19, 16)),
        ("conv", (19, 16), (19, 16)), ("down", (19, 16), (5, 16)),
        ("conv", (5, 16), (5, 32)), ("down", (5, 32), (2, 32)),
        ("fc", (2, 32), (8,)),
    ]
    assert trace[9:] == [
        ("fc", (8,), (2, 32)),
        ("up", (2, 32), (5, 32)), ("conv", (5, 32), (5, 32)),
        ("up", (5, 32), (19, 32)), ("conv", (19, 32), (19, 16)),
        ("up", (19, 16), (75, 16)), ("conv", (75, 16), (75, 16)),
        ("up", (75, 16), (300, 16)), ("conv", (300, 16), (300, 3)),
    ]


# -- latent sweep and sampling --------------------------------------------------------


def test_sweep_identity_step(small, rng):
    h, model = small
    x = TEMPLATE.vertices + 0.05 * rng.standard_normal((300, 3))
    outs = latent_sweep(model, h, x, dim=2)
    assert len(outs) == 9
    assert np.array_equal(outs[4], reconstruct(model, h, x))


def test_sweep_scales_selected_dimension(small, rng):
    h, model = small
    x = rng.standard_normal((300, 3))
    z = encode(model, h, x)
    outs = latent_sweep(model, h, x, dim=5, steps=[-2, 3])
    zs = z.copy()
    zs[5] = (1 - 0.6) * z[5]
    np.testing.assert_array_equal(outs[0], decode(model, h, zs))
    zs[5] = (1 + 0.9) * z[5]
    np.testing.assert_array_equal(outs[1], decode(model, h, zs))


def test_sweep_zero_coordinate_gives_identical_outputs(small):
    h, model = small
    model = model.copy()
    model.encoder_fc.weights[:, 0] = 0.0
    model.encoder_fc.bias[0] = 0.0
    outs = latent_sweep(model, h, TEMPLATE.vertices, dim=0)
    assert all(np.array_equal(o, outs[0]) for o in outs)


def test_sweep_dim_out_of_range(small):
    h, model = small
    with pytest.raises(ValueError):
        latent_sweep(model, h, TEMPLATE.vertices, dim=8)


def test_sampling(small):
    h, model = small
    assert sample_gaussian(model, h, 0) == []
    a = sample_gaussian(model, h, 3, seed=4)
    b = sample_gaussian(model, h, 3, seed=4)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    z = sample_latents(8, 5000, 3.0, seed=1)
    assert np.abs(z).max() <= 3.0
    assert abs(z.mean()) < 0.05 and abs(z.std() - 1) < 0.05


def test_mesh_series_manifest(tmp_path, small):
    h, model = small
    outs = latent_sweep(model, h, TEMPLATE.vertices, dim=1)
    write_mesh_series(tmp_path, outs, h.meshes[0].faces, [f"1 {j}" for j in range(-4, 5)], "file dim j")
    lines = (tmp_path / "manifest.txt").read_text().splitlines()
    assert lines[0] == "file dim j" and lines[1] == "000.obj 1 -4" and len(lines) == 10
    assert (tmp_path / "008.obj").exists()


def test_latent_statistics(small, rng):
    h, model = small
    x = rng.standard_normal((5, 300, 3))
    mean, var = latent_statistics(model, h, x)
    z = encode(model, h, x)
    np.testing.assert_allclose(mean, z.mean(axis=0), atol=1e-15)
    np.testing.assert_allclose(var, z.var(axis=0), atol=1e-15)
    with pytest.raises(ValueError):
        latent_statistics(model, h, x[0])


def test_standard_normal_gap_examples():
    assert standard_normal_gap(np.zeros(4), np.ones(4)) == (0.0, 0.0)
    assert standard_normal_gap([3.0, 4.0], [1.0, 3.0]) == (5.0, 2.0)


def test_mean_pairwise_distance():
    a = np.zeros((4, 3))
    b = a + [0.0, 0.0, 2.0]
    c = a + [0.0, 3.0, 0.0]
    # pairs: a-b 2, a-c 3, b-c sqrt(13)
    assert mean_pairwise_distance([a, b, c]) == pytest.approx((2 + 3 + np.sqrt(13)) / 3)
    assert mean_pairwise_distance([a, a]) == 0.0
    with pytest.raises(ValueError):
        mean_pairwise_distance([a])


# -- gradients --------------------------------------------------------------------------


def end_to_end_instance(h, seed, variational):
    rng = np.random.default_rng(seed)
    model = build_model(h, z_dim=3, k_order=3, variational=variational,
                        encoder_filters=(4, 4, 4, 4), decoder_filters=(4, 4, 4, 3), seed=seed)
    for p in model.params().values():
        p[...] = rng.uniform(0.2, 0.6, p.shape) * rng.choice([-1, 1], p.shape)
    x = rng.standard_normal((2, h.sizes[0], 3))
    noise = rng.standard_normal((2, 3)) if variational else None
    w_kld, penalty = (0.3, 0.01) if variational else (0.0, 0.01)
    _, _, grads = loss_and_gradients(model, h, x, w_kld, penalty, noise)
    worst = 0.0
    for name, p in model.params().items():
        numeric = central_difference(lambda: loss_and_gradients(model, h, x, w_kld, penalty, noise)[0], p)
        worst = max(worst, rel_error(grads[name], numeric))
    return worst


@pytest.mark.parametrize("variational", [False, True])
def test_end_to_end_gradients(toy, variational):
    worst = max(end_to_end_instance(toy, seed, variational) for seed in range(4))
    assert worst < 1e-4


def test_loss_parts_sum(small, rng):
    h, _ = small
    model = build_model(h, variational=True, seed=1)
    x = rng.standard_normal((2, 300, 3))
    total, parts, _ = loss_and_gradients(model, h, x, 0.5, 1e-3, rng.standard_normal((2, 8)))
    assert total == pytest.approx(parts["l1"] + 0.5 * parts["kl"] + parts["penalty"], rel=1e-12)


# -- training ---------------------------------------------------------------------------


def tiny_data(n_frames=12):
    t = TEMPLATE
    return np.stack([deform(t, 0.5 * i, 0.3, 0.2 * i) for i in range(n_frames)])


def test_zero_learning_rate_leaves_parameters(small):
    h, model = small
    model = model.copy()
    before = {k: v.copy() for k, v in model.params().items()}
    cfg = nn.TrainConfig(epochs=1, learning_rate=0.0, w_kld=0.0)
    train_autoencoder(model, h, tiny_data(), cfg)
    for k, v in model.params().items():
        assert np.array_equal(v, before[k]), k


def test_history_lr_column_and_header(small):
    h, model = small
    result = train_autoencoder(model.copy(), h, tiny_data(), nn.TrainConfig(epochs=3, w_kld=0.0))
    assert [r["lr"] for r in result.history] == pytest.approx([8e-3 * 0.99**e for e in range(3)], rel=1e-12)
    lines = result.history_csv().splitlines()
    assert lines[0] == HISTORY_HEADER == "epoch,lr,train_l1,train_kl,train_total,val_l1"
    assert len(lines) == 4


def test_training_is_deterministic(small):
    h, model = small
    cfg = nn.TrainConfig(epochs=2, seed=9)
    a, b = build_model(h, variational=True, seed=2), build_model(h, variational=True, seed=2)
    train_autoencoder(a, h, tiny_data(), cfg)
    train_autoencoder(b, h, tiny_data(), cfg)
    for k, v in a.params().items():
        assert np.array_equal(v, b.params()[k])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_names_epoch(small):
    h, _ = small
    model = build_model(h, seed=0)
    cfg = nn.TrainConfig(epochs=5, learning_rate=1.0, momentum=0.9, lr_decay=1.0, w_kld=0.0)
    data = tiny_data() * 1e150
    with pytest.raises(nn.TrainingDivergenceError, match="epoch"):
        train_autoencoder(model, h, data, cfg, normalize=False)


def test_checkpoint_round_trip(tmp_path, small, rng):
    h, _ = small
    model = build_model(h, variational=True, seed=5)
    model.mean_shape = TEMPLATE.vertices.copy()
    model.scale = 0.25
    cfg = nn.TrainConfig(epochs=4)
    save_checkpoint(tmp_path / "m.bin", model, h, cfg)
    assert (tmp_path / "m.bin").read_bytes()[:8] == b"MESHAECK"
    loaded, h2, header = load_checkpoint(tmp_path / "m.bin")
    assert header["config"]["epochs"] == 4 and header["version"] == 1
    assert h2.sizes == h.sizes
    for k, v in model.params().items():
        assert np.array_equal(v, loaded.params()[k])
    x = rng.standard_normal((300, 3))
    assert np.array_equal(reconstruct(model, h, x), reconstruct(loaded, h2, x))


def test_checkpoint_rejects_other_files(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "x.bin")
