"""Convolutional mesh autoencoder over a decimation hierarchy."""
from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .mesh_core import Mesh, build_adjacency, build_laplacian, estimate_lambda_max, scale_laplacian, write_obj
from .sampling import apply_sampling, build_upsampling, decimate
from .spectral_conv import ChebConvLayer, cheb_backward, cheb_forward, relu_backward, relu_forward

log = logging.getLogger(__name__)

DEFAULT_ENCODER_FILTERS = (16, 16, 16, 32)
DEFAULT_DECODER_FILTERS = (32, 16, 16, 3)

CHECKPOINT_MAGIC = b"MESHAECK"
CHECKPOINT_VERSION = 1


@dataclass
class MeshHierarchy:
    meshes: list
    laplacians: list
    down: list
    up: list
    factor: int = 4

    def __post_init__(self):
        self.down_t = [q.matrix.T.tocsr() for q in self.down]
        self.up_t = [q.matrix.T.tocsr() for q in self.up]

    @property
    def sizes(self) -> list[int]:
        return [m.n_vertices for m in self.meshes]

    @property
    def num_levels(self) -> int:
        return len(self.down)


def build_hierarchy(template: Mesh, num_levels: int = 4, factor: int = 4, seed: int = 0) -> MeshHierarchy:
    """Decimate ``num_levels`` times, each to ceil(n / factor) vertices."""
    if num_levels < 1:
        raise ValueError("num_levels must be >= 1")
    if template.n_vertices < factor**num_levels:
        raise ValueError(
            f"template has {template.n_vertices} vertices; need at least {factor**num_levels} "
            f"for {num_levels} levels"
        )
    meshes = [template]
    down, up = [], []
    for _ in range(num_levels):
        fine = meshes[-1]
        coarse, qd = decimate(fine, math.ceil(fine.n_vertices / factor))
        up.append(build_upsampling(fine, coarse, qd))
        down.append(qd)
        meshes.append(coarse)
    laplacians = []
    for m in meshes:
        lap = build_laplacian(build_adjacency(m))
        laplacians.append(scale_laplacian(lap, estimate_lambda_max(lap, seed=seed)))
    return MeshHierarchy(meshes, laplacians, down, up, factor)


@dataclass
class AutoencoderModel:
    encoder_convs: list
    encoder_fc: nn.DenseLayer
    decoder_fc: nn.DenseLayer
    decoder_convs: list
    z_dim: int
    encoder_fc_logvar: nn.DenseLayer | None = None
    # per-vertex mean and a global scale; the network works on (x - mean) / scale
    mean_shape: np.ndarray | None = None
    scale: float = 1.0

    @property
    def variational(self) -> bool:
        return self.encoder_fc_logvar is not None

    @property
    def k_order(self) -> int:
        return self.encoder_convs[0].k_order

    def layers(self) -> list:
        out = [(f"encoder_conv{i}", c) for i, c in enumerate(self.encoder_convs)]
        out.append(("encoder_fc", self.encoder_fc))
        if self.encoder_fc_logvar is not None:
            out.append(("encoder_fc_logvar", self.encoder_fc_logvar))
        out.append(("decoder_fc", self.decoder_fc))
        out += [(f"decoder_conv{i}", c) for i, c in enumerate(self.decoder_convs)]
        return out

    def params(self) -> dict:
        """Trainable arrays by name, in declaration order (live references)."""
        out = {}
        for name, layer in self.layers():
            if isinstance(layer, ChebConvLayer):
                out[f"{name}.theta"] = layer.theta
            else:
                out[f"{name}.weights"] = layer.weights
            out[f"{name}.bias"] = layer.bias
        return out

    def weight_params(self) -> dict:
        return {k: v for k, v in self.params().items() if not k.endswith(".bias")}

    def copy(self) -> "AutoencoderModel":
        def cp(layer):
            if layer is None:
                return None
            if isinstance(layer, ChebConvLayer):
                return ChebConvLayer(layer.theta.copy(), layer.bias.copy())
            return nn.DenseLayer(layer.weights.copy(), layer.bias.copy())

        return AutoencoderModel(
            [cp(c) for c in self.encoder_convs],
            cp(self.encoder_fc),
            cp(self.decoder_fc),
            [cp(c) for c in self.decoder_convs],
            self.z_dim,
            cp(self.encoder_fc_logvar),
            None if self.mean_shape is None else self.mean_shape.copy(),
            self.scale,
        )


def build_model(
    hierarchy: MeshHierarchy,
    z_dim: int = 8,
    k_order: int = 6,
    variational: bool = False,
    encoder_filters=DEFAULT_ENCODER_FILTERS,
    decoder_filters=DEFAULT_DECODER_FILTERS,
    seed: int = 0,
) -> AutoencoderModel:
    levels = hierarchy.num_levels
    if len(encoder_filters) != levels or len(decoder_filters) != levels:
        raise ValueError(f"need {levels} encoder and decoder filter widths for this hierarchy")
    if decoder_filters[-1] != 3:
        raise ValueError("the last decoder convolution must output 3 coordinates")
    rng = np.random.default_rng(seed)
    enc = []
    f_in = 3
    for f_out in encoder_filters:
        enc.append(ChebConvLayer.glorot(k_order, f_in, f_out, rng))
        f_in = f_out
    bottleneck = hierarchy.sizes[-1] * encoder_filters[-1]
    enc_fc = nn.DenseLayer.glorot(bottleneck, z_dim, rng)
    logvar = nn.DenseLayer.glorot(bottleneck, z_dim, rng) if variational else None
    dec_fc = nn.DenseLayer.glorot(z_dim, bottleneck, rng)
    dec = []
    f_in = encoder_filters[-1]
    for f_out in decoder_filters:
        dec.append(ChebConvLayer.glorot(k_order, f_in, f_out, rng))
        f_in = f_out
    return AutoencoderModel(enc, enc_fc, dec_fc, dec, z_dim, logvar)


def count_parameters(model) -> int:
    """Scalar trainable parameters; normalization statistics are not counted."""
    if hasattr(model, "parameter_count"):
        return model.parameter_count()
    return int(sum(p.size for p in model.params().values()))


# --------------------------------------------------------------------------
# forward / backward


def _normalize(model: AutoencoderModel, vertices: np.ndarray) -> np.ndarray:
    x = np.asarray(vertices, dtype=np.float64)
    if model.mean_shape is not None:
        x = x - model.mean_shape
    return x / model.scale


def _denormalize(model: AutoencoderModel, x: np.ndarray) -> np.ndarray:
    x = x * model.scale
    if model.mean_shape is not None:
        x = x + model.mean_shape
    return x


def _batch(vertices, n0: int) -> tuple[np.ndarray, bool]:
    v = np.asarray(vertices, dtype=np.float64)
    single = v.ndim == 2
    if single:
        v = v[None]
    if v.ndim != 3 or v.shape[1:] != (n0, 3):
        raise ValueError(f"expected vertices of shape ({n0}, 3) or (B, {n0}, 3), got {np.shape(vertices)}")
    return v, single


def _encode_pass(model, hierarchy, xn, trace=None):
    """xn: (B, n0, 3) normalized. Returns mu, logvar, caches."""
    h = np.ascontiguousarray(xn.transpose(1, 0, 2))  # vertex-major
    caches = []
    for level, conv in enumerate(model.encoder_convs):
        shape_in = h.shape
        c, cc = cheb_forward(hierarchy.laplacians[level], h, conv)
        a, mask = relu_forward(c)
        if trace is not None:
            trace.append(("conv", (shape_in[0], shape_in[2]), (c.shape[0], c.shape[2])))
        h = apply_sampling(hierarchy.down[level].matrix, a)
        if trace is not None:
            trace.append(("down", (a.shape[0], a.shape[2]), (h.shape[0], h.shape[2])))
        caches.append((cc, mask))
    n_l, b, f = h.shape
    flat = h.transpose(1, 0, 2).reshape(b, n_l * f)
    mu, fc_cache = nn.dense_forward(model.encoder_fc, flat)
    if trace is not None:
        trace.append(("fc", (n_l, f), (model.z_dim,)))
    logvar = None
    if model.encoder_fc_logvar is not None:
        logvar, _ = nn.dense_forward(model.encoder_fc_logvar, flat)
    return mu, logvar, (caches, fc_cache, (n_l, b, f))


def _decode_pass(model, hierarchy, z, trace=None):
    """z: (B, z_dim). Returns normalized prediction (B, n0, 3) and caches."""
    f, fc_cache = nn.dense_forward(model.decoder_fc, z)
    b = z.shape[0]
    n_l = hierarchy.sizes[-1]
    width = model.decoder_fc.weights.shape[1] // n_l
    h = np.ascontiguousarray(f.reshape(b, n_l, width).transpose(1, 0, 2))
    if trace is not None:
        trace.append(("fc", (model.z_dim,), (n_l, width)))
    caches = []
    last = len(model.decoder_convs) - 1
    for i, conv in enumerate(model.decoder_convs):
        level = hierarchy.num_levels - 1 - i
        up = apply_sampling(hierarchy.up[level].matrix, h)
        if trace is not None:
            trace.append(("up", (h.shape[0], h.shape[2]), (up.shape[0], up.shape[2])))
        c, cc = cheb_forward(hierarchy.laplacians[level], up, conv)
        if trace is not None:
            trace.append(("conv", (up.shape[0], up.shape[2]), (c.shape[0], c.shape[2])))
        if i < last:
            h, mask = relu_forward(c)
        else:
            h, mask = c, None
        caches.append((cc, mask))
    return h.transpose(1, 0, 2), (fc_cache, caches, (n_l, b, width))


def _decode_backward(model, hierarchy, grad_pred, cache, grads):
    fc_cache, caches, (n_l, b, width) = cache
    g = np.ascontiguousarray(grad_pred.transpose(1, 0, 2))
    for i in range(len(model.decoder_convs) - 1, -1, -1):
        conv = model.decoder_convs[i]
        level = hierarchy.num_levels - 1 - i
        cc, mask = caches[i]
        if mask is not None:
            g = relu_backward(mask, g)
        g, gt, gb = cheb_backward(cc, g, conv)
        grads[f"decoder_conv{i}.theta"] = gt
        grads[f"decoder_conv{i}.bias"] = gb
        g = apply_sampling(hierarchy.up_t[level], g)
    g_flat = g.transpose(1, 0, 2).reshape(b, n_l * width)
    gz, gw, gb = nn.dense_backward(model.decoder_fc, fc_cache, g_flat)
    grads["decoder_fc.weights"] = gw
    grads["decoder_fc.bias"] = gb
    return gz


def _encode_backward(model, hierarchy, grad_mu, grad_logvar, cache, grads):
    caches, fc_cache, (n_l, b, f) = cache
    g_flat, gw, gb = nn.dense_backward(model.encoder_fc, fc_cache, grad_mu)
    grads["encoder_fc.weights"] = gw
    grads["encoder_fc.bias"] = gb
    if model.encoder_fc_logvar is not None:
        g2, gw2, gb2 = nn.dense_backward(model.encoder_fc_logvar, fc_cache, grad_logvar)
        grads["encoder_fc_logvar.weights"] = gw2
        grads["encoder_fc_logvar.bias"] = gb2
        g_flat = g_flat + g2
    g = np.ascontiguousarray(g_flat.reshape(b, n_l, f).transpose(1, 0, 2))
    for level in range(len(model.encoder_convs) - 1, -1, -1):
        cc, mask = caches[level]
        g = apply_sampling(hierarchy.down_t[level], g)
        g = relu_backward(mask, g)
        g, gt, gb = cheb_backward(cc, g, model.encoder_convs[level])
        grads[f"encoder_conv{level}.theta"] = gt
        grads[f"encoder_conv{level}.bias"] = gb
    return g


def loss_and_gradients(model, hierarchy, vertices, w_kld=0.0, penalty=0.0, noise=None):
    """Total training loss on a batch and gradients for every parameter.

    ``noise`` (B, z_dim) is the reparameterization draw; ignored for plain models.
    Returns ``(total, parts, grads)`` where parts has keys l1, kl, penalty.
    """
    v, _ = _batch(vertices, hierarchy.sizes[0])
    xn = _normalize(model, v)
    mu, logvar, enc_cache = _encode_pass(model, hierarchy, xn)
    if model.variational and noise is not None:
        sigma = np.exp(0.5 * logvar)
        z = mu + sigma * noise
    else:
        z = mu
    pred, dec_cache = _decode_pass(model, hierarchy, z)
    l1, g_pred = nn.l1_loss(pred, xn)
    grads = {}
    gz = _decode_backward(model, hierarchy, g_pred, dec_cache, grads)
    kl = 0.0
    g_mu, g_lv = gz, None
    if model.variational:
        g_lv = np.zeros_like(logvar)
        if noise is not None:
            g_lv = gz * noise * 0.5 * sigma
        if w_kld:
            kl, k_mu, k_lv = nn.kl_divergence(mu, logvar)
            g_mu = g_mu + w_kld * k_mu
            g_lv = g_lv + w_kld * k_lv
    _encode_backward(model, hierarchy, g_mu, g_lv, enc_cache, grads)
    pen, pen_grads = nn.l1_weight_penalty(model.weight_params(), penalty)
    if penalty:
        for k, g in pen_grads.items():
            grads[k] = grads[k] + g
    total = l1 + w_kld * kl + pen
    return total, {"l1": l1, "kl": kl, "penalty": pen}, grads


# --------------------------------------------------------------------------
# inference


def encode(model, hierarchy, vertices, trace=None):
    """Latent mean for one mesh (n0, 3) or a batch (B, n0, 3).

    Variational models return ``(mu, log_var)``.
    """
    v, single = _batch(vertices, hierarchy.sizes[0])
    mu, logvar, _ = _encode_pass(model, hierarchy, _normalize(model, v), trace)
    if single:
        mu = mu[0]
        logvar = None if logvar is None else logvar[0]
    return (mu, logvar) if model.variational else mu


def _latent_mean(model, hierarchy, vertices):
    out = encode(model, hierarchy, vertices)
    return out[0] if model.variational else out


def decode(model, hierarchy, z, trace=None) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    zb = z[None] if single else z
    if zb.shape[-1] != model.z_dim:
        raise ValueError(f"latent vectors must have {model.z_dim} entries, got {zb.shape[-1]}")
    if not np.all(np.isfinite(zb)):
        raise ValueError("latent vector must be finite")
    pred, _ = _decode_pass(model, hierarchy, zb, trace)
    out = _denormalize(model, pred)
    return out[0] if single else out


def reconstruct(model, hierarchy, vertices) -> np.ndarray:
    return decode(model, hierarchy, _latent_mean(model, hierarchy, vertices))


def latent_sweep(model, hierarchy, vertices, dim: int, steps=range(-4, 5), factor: float = 0.3) -> list:
    """Decode (1 + factor*j) * z_dim along one latent coordinate for each step j."""
    if not 0 <= dim < model.z_dim:
        raise ValueError(f"dim must be in [0, {model.z_dim}), got {dim}")
    z = _latent_mean(model, hierarchy, vertices)
    if z.ndim != 1:
        raise ValueError("latent_sweep takes a single mesh")
    out = []
    for j in steps:
        zj = z.copy()
        zj[dim] = (1.0 + factor * j) * z[dim]
        out.append(decode(model, hierarchy, zj))
    return out


def sample_latents(z_dim: int, count: int, sigma_range: float = 3.0, seed: int = 0) -> np.ndarray:
    """Standard normal draws truncated to [-sigma_range, sigma_range] by rejection."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((count, z_dim))
    bad = np.abs(z) > sigma_range
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > sigma_range
    return z


def sample_gaussian(model, hierarchy, count: int, sigma_range: float = 3.0, seed: int = 0) -> list:
    if count == 0:
        return []
    z = sample_latents(model.z_dim, count, sigma_range, seed)
    return [decode(model, hierarchy, zi) for zi in z]


def latent_statistics(model, hierarchy, vertices) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean and variance of the latent means over a batch of meshes."""
    z = _latent_mean(model, hierarchy, vertices)
    if z.ndim != 2:
        raise ValueError("latent_statistics takes a batch of meshes")
    return z.mean(axis=0), z.var(axis=0)


def standard_normal_gap(mean, var) -> tuple[float, float]:
    """``(|mean|, |var - 1|)``: how far per-dimension latent statistics sit from N(0, I)."""
    mean = np.asarray(mean, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    return float(np.linalg.norm(mean)), float(np.linalg.norm(var - 1.0))


def mean_pairwise_distance(meshes) -> float:
    """Mean over unordered pairs of the mean per-vertex Euclidean distance."""
    v = np.asarray(meshes, dtype=np.float64)
    if len(v) < 2:
        raise ValueError("need at least two meshes")
    total, pairs = 0.0, 0
    for i in range(len(v) - 1):
        total += float(np.linalg.norm(v[i + 1:] - v[i], axis=-1).mean(axis=-1).sum())
        pairs += len(v) - 1 - i
    return total / pairs


# --------------------------------------------------------------------------
# training


HISTORY_HEADER = "epoch,lr,train_l1,train_kl,train_total,val_l1"


@dataclass
class TrainResult:
    model: AutoencoderModel
    history: list = field(default_factory=list)

    def history_csv(self) -> str:
        rows = [HISTORY_HEADER]
        for r in self.history:
            val = "" if r["val_l1"] is None else f"{r['val_l1']:.10g}"
            rows.append(
                f"{r['epoch']},{r['lr']:.10g},{r['train_l1']:.10g},{r['train_kl']:.10g},"
                f"{r['train_total']:.10g},{val}"
            )
        return "\n".join(rows) + "\n"


def fit_normalization(model: AutoencoderModel, data: np.ndarray) -> None:
    mean = data.mean(axis=0)
    scale = float(np.sqrt(np.mean((data - mean) ** 2)))
    model.mean_shape = mean
    model.scale = scale if scale > 0 else 1.0


def train_autoencoder(model, hierarchy, data, config: nn.TrainConfig, val=None, normalize=True) -> TrainResult:
    """SGD with momentum on L1 reconstruction (+ KL, + L1 weight penalty).

    ``data`` is (N, n0, 3). History losses are in normalized units.
    """
    data = np.asarray(data, dtype=np.float64)
    _batch(data, hierarchy.sizes[0])
    if normalize:
        fit_normalization(model, data)
    rng = np.random.default_rng(config.seed)
    params = model.params()
    state = nn.OptimizerState.for_params(params, config)
    w_kld = config.w_kld if model.variational else 0.0
    history = []
    n = len(data)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        sums = np.zeros(3)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            noise = rng.standard_normal((len(idx), model.z_dim)) if model.variational else None
            total, parts, grads = loss_and_gradients(
                model, hierarchy, data[idx], w_kld, config.l1_weight_penalty, noise
            )
            if not math.isfinite(total):
                raise nn.TrainingDivergenceError(f"non-finite loss in epoch {epoch}")
            try:
                nn.sgd_momentum_step(params, grads, state)
            except nn.TrainingDivergenceError as exc:
                raise nn.TrainingDivergenceError(f"epoch {epoch}: {exc}") from None
            sums += len(idx) * np.array([parts["l1"], parts["kl"], total])
        sums /= n
        val_l1 = None
        if val is not None and len(val):
            rec = _normalize(model, reconstruct(model, hierarchy, val))
            val_l1 = float(np.abs(rec - _normalize(model, val)).mean())
        history.append(
            {"epoch": epoch, "lr": state.current_lr, "train_l1": sums[0], "train_kl": sums[1],
             "train_total": sums[2], "val_l1": val_l1}
        )
        log.debug("epoch %d lr %.3g l1 %.5f", epoch, state.current_lr, sums[0])
        nn.decay_learning_rate(state)
    return TrainResult(model, history)


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model: AutoencoderModel, hierarchy: MeshHierarchy, config: nn.TrainConfig | None = None) -> None:
    arrays = dict(model.params())
    arrays["mean_shape"] = model.mean_shape if model.mean_shape is not None else np.zeros((0, 3))
    arrays["template.vertices"] = hierarchy.meshes[0].vertices
    arrays["template.faces"] = hierarchy.meshes[0].faces.astype(np.float64)
    header = {
        "format": "meshae-checkpoint",
        "version": CHECKPOINT_VERSION,
        "z_dim": model.z_dim,
        "k_order": model.k_order,
        "variational": model.variational,
        "encoder_filters": [c.f_out for c in model.encoder_convs],
        "decoder_filters": [c.f_out for c in model.decoder_convs],
        "num_levels": hierarchy.num_levels,
        "factor": hierarchy.factor,
        "lambda_max": [lt.lambda_max for lt in hierarchy.laplacians],
        "scale": model.scale,
        "config": None if config is None else config.__dict__,
        "arrays": [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()],
    }
    blob = json.dumps(header, indent=1).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for v in arrays.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path, hierarchy: MeshHierarchy | None = None):
    """Returns ``(model, hierarchy, header)``; rebuilds the hierarchy from the stored template if needed."""
    with open(path, "rb") as fh:
        if fh.read(8) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        version, size = struct.unpack("<IQ", fh.read(12))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(size).decode("utf-8"))
        arrays = {}
        for spec in header["arrays"]:
            count = int(np.prod(spec["shape"])) if spec["shape"] else 1
            arrays[spec["name"]] = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(spec["shape"]).astype(np.float64)
    if hierarchy is None:
        template = Mesh(arrays["template.vertices"], arrays["template.faces"].astype(np.int64))
        hierarchy = build_hierarchy(template, header["num_levels"], header["factor"])
        stored = np.array(header["lambda_max"])
        if not np.allclose([lt.lambda_max for lt in hierarchy.laplacians], stored, rtol=1e-9):
            log.warning("rebuilt hierarchy eigenvalue bounds differ from the checkpoint; using stored values")
            hierarchy.laplacians = [
                scale_laplacian(build_laplacian(build_adjacency(m)), lm)
                for m, lm in zip(hierarchy.meshes, stored)
            ]
    model = build_model(
        hierarchy, header["z_dim"], header["k_order"], header["variational"],
        header["encoder_filters"], header["decoder_filters"],
    )
    for name, p in model.params().items():
        p[...] = arrays[name]
    mean = arrays["mean_shape"]
    model.mean_shape = mean if mean.size else None
    model.scale = header["scale"]
    return model, hierarchy, header


def write_mesh_series(directory, meshes, faces, labels, manifest_header: str) -> None:
    """Numbered OBJ files plus ``manifest.txt`` mapping file name to its label."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = [manifest_header]
    for i, (verts, label) in enumerate(zip(meshes, labels)):
        name = f"{i:03d}.obj"
        write_obj(d / name, Mesh(verts, faces))
        lines.append(f"{name} {label}")
    (d / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
